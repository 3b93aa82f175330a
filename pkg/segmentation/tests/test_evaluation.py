import tempfile
from pathlib import Path

import numpy as np
import pytest
import torch
from django.test import SimpleTestCase, tag

from segmentation.ablation import apply_cell, grid_cells
from segmentation.config import build_run_config
from segmentation.evaluation import (
    boundary_f,
    default_tolerance,
    evaluate_dataset,
    jaccard,
    mask_boundary,
    plot_temporal_curves,
    sequence_statistics,
    temporal_curve,
)
from segmentation.exceptions import DataValidationError
from segmentation.inference import segment_dataset
from segmentation.models import InstanceMaskSet
from segmentation.network import MultiAttentionNetwork
from segmentation.scenes import generate_split
from segmentation.tests.factories import SceneSpecFactory, VideoSequenceFactory, desk_scale_payload
from segmentation.tracking import NoisyTubeProvider
from segmentation.training import run_curriculum


def _square(y0, x0, size, shape=(32, 32)):
    mask = np.zeros(shape, dtype=bool)
    mask[y0 : y0 + size, x0 : x0 + size] = True
    return mask


def _brute_force_boundary_f(pred, gt, tolerance):
    def edge(mask):
        padded = np.pad(mask, 1, constant_values=False)
        points = []
        for y, x in zip(*np.nonzero(mask)):
            if not padded[y : y + 3, x : x + 3].all():
                points.append((y, x))
        return np.array(points, dtype=float).reshape(-1, 2)

    def matched(a, b):
        if not len(a):
            return 0
        distances = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
        return int((distances.min(axis=1) <= tolerance).sum())

    pred_edge, gt_edge = edge(pred), edge(gt)
    if not len(pred_edge) and not len(gt_edge):
        return 1.0
    if not len(pred_edge) or not len(gt_edge):
        return 0.0
    precision = matched(pred_edge, gt_edge) / len(pred_edge)
    recall = matched(gt_edge, pred_edge) / len(gt_edge)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


class JaccardTests(SimpleTestCase):
    """Test suite for the region similarity."""

    def test_examples(self):
        """Test the identical, disjoint, nested and empty cases."""
        a = _square(0, 0, 4)
        self.assertEqual(jaccard(a, a), 1.0)
        self.assertEqual(jaccard(a, _square(10, 10, 4)), 0.0)
        self.assertEqual(jaccard(_square(0, 0, 2), a), 0.25)
        self.assertEqual(jaccard(np.zeros((8, 8)), np.zeros((8, 8))), 1.0)
        self.assertEqual(jaccard(np.zeros((8, 8)), _square(0, 0, 2, (8, 8))), 0.0)

    def test_shape_mismatch_raises_error(self):
        """Test that masks must have the same shape."""
        with self.assertRaises(DataValidationError):
            jaccard(np.zeros((4, 4)), np.zeros((4, 5)))


class BoundaryFTests(SimpleTestCase):
    """Test suite for the contour accuracy."""

    def test_identical_masks_score_one(self):
        """Test that a mask matches its own boundary."""
        mask = _square(5, 5, 10)
        self.assertEqual(boundary_f(mask, mask, 1), 1.0)

    def test_empty_boundaries(self):
        """Test that two empty masks score 1 and one empty mask scores 0."""
        empty = np.zeros((32, 32), dtype=bool)
        self.assertEqual(boundary_f(empty, empty), 1.0)
        self.assertEqual(boundary_f(empty, _square(5, 5, 10)), 0.0)
        self.assertEqual(boundary_f(_square(5, 5, 10), empty), 0.0)

    def test_distant_masks_score_zero(self):
        """Test that boundaries further apart than the tolerance never match."""
        self.assertEqual(boundary_f(_square(0, 0, 5), _square(20, 20, 5), 2), 0.0)

    def test_small_shift_within_tolerance_scores_one(self):
        """Test that a one-pixel shift is forgiven by a two-pixel tolerance."""
        self.assertEqual(boundary_f(_square(5, 5, 10), _square(5, 6, 10), 2), 1.0)
        self.assertLess(boundary_f(_square(5, 5, 10), _square(5, 9, 10), 2), 1.0)

    def test_image_edge_counts_as_boundary(self):
        """Test that a mask touching the border has boundary pixels there."""
        edge = mask_boundary(np.ones((6, 6), dtype=bool))
        self.assertTrue(edge[0].all())
        self.assertFalse(edge[1:5, 1:5].any())

    def test_agrees_with_brute_force_distances(self):
        """Test that the dilation shortcut matches explicit pairwise distances."""
        rng = np.random.default_rng(0)
        for trial in range(25):
            pred = _square(*rng.integers(0, 16, 2), int(rng.integers(2, 12)), (24, 24))
            gt = _square(*rng.integers(0, 16, 2), int(rng.integers(2, 12)), (24, 24))
            tolerance = int(rng.integers(0, 4))
            with self.subTest(trial=trial):
                self.assertAlmostEqual(boundary_f(pred, gt, tolerance), _brute_force_boundary_f(pred, gt, tolerance))

    def test_default_tolerance_scales_with_diagonal(self):
        """Test that the tolerance is 0.8% of the image diagonal, rounded up."""
        self.assertEqual(default_tolerance(64, 96), 1)
        self.assertEqual(default_tolerance(480, 854), 8)


class SequenceStatisticsTests(SimpleTestCase):
    """Test suite for mean, recall and decay."""

    def test_step_curve(self):
        """Test that [1, 1, 0, 0] has mean 0.5, recall 0.5 and decay 1."""
        stats = sequence_statistics([1.0, 1.0, 0.0, 0.0])
        self.assertEqual(stats, {'mean': 0.5, 'recall': 0.5, 'decay': 1.0})

    def test_empty_values(self):
        """Test that no frames give no statistics."""
        self.assertEqual(sequence_statistics([]), {'mean': None, 'recall': None, 'decay': None})


class EvaluateDatasetTests(SimpleTestCase):
    """Test suite for dataset-level scoring."""

    def setUp(self):
        self.sequences = [VideoSequenceFactory(spec=SceneSpecFactory(seed=seed)) for seed in (41, 42, 43)]
        self.perfect = {seq.sequence_id: list(seq.gt_masks) for seq in self.sequences}

    def test_ground_truth_scores_one(self):
        """Test that ground truth against itself gives J = F = 1 and no unseen score."""
        report = evaluate_dataset(self.perfect, self.sequences)
        self.assertEqual(report.J_seen, 1.0)
        self.assertEqual(report.F_seen, 1.0)
        self.assertIsNone(report.J_unseen)
        self.assertNotIn('J_unseen', report.as_dict())
        self.assertEqual(len(report.instances), sum(seq.active_count for seq in self.sequences))

    def test_split_labels_route_instances(self):
        """Test that unseen-labelled sequences feed the unseen aggregate."""
        labels = {self.sequences[0].sequence_id: 'unseen'}
        report = evaluate_dataset(self.perfect, self.sequences, labels)
        self.assertEqual(report.J_unseen, 1.0)
        with self.assertRaises(DataValidationError):
            evaluate_dataset(self.perfect, self.sequences, {self.sequences[0].sequence_id: 'novel'})

    def test_missing_prediction_raises_error(self):
        """Test that every sequence needs predictions for every frame."""
        partial = dict(self.perfect)
        partial.pop(self.sequences[0].sequence_id)
        with self.assertRaises(DataValidationError):
            evaluate_dataset(partial, self.sequences)
        short = dict(self.perfect)
        short[self.sequences[1].sequence_id] = short[self.sequences[1].sequence_id][:-1]
        with self.assertRaises(DataValidationError):
            evaluate_dataset(short, self.sequences)

    def test_result_does_not_depend_on_sequence_order(self):
        """Test that shuffling the dataset leaves the report unchanged."""
        seq = self.sequences[0]
        predictions = dict(self.perfect)
        empty = [InstanceMaskSet(np.zeros_like(m.masks), seq.active_count, seq.instance_ids) for m in seq.gt_masks]
        predictions[seq.sequence_id] = [seq.gt_masks[0]] + empty[1:]
        forward = evaluate_dataset(predictions, self.sequences)
        backward = evaluate_dataset(predictions, list(reversed(self.sequences)), workers=2)
        self.assertEqual(forward.as_dict(), backward.as_dict())
        self.assertLess(forward.J_seen, 1.0)

    def test_frame_zero_is_not_scored(self):
        """Test that each instance is scored on frames 1..T-1."""
        report = evaluate_dataset(self.perfect, self.sequences, compute_boundary=False)
        self.assertEqual(len(report.instances[0].j_frames), self.sequences[0].num_frames - 1)
        self.assertIsNone(report.F_seen)


class TemporalCurveTests(SimpleTestCase):
    """Test suite for per-frame curves over videos of different lengths."""

    def test_survival_counts_alive_instances(self):
        """Test that half the instances survive past the shorter videos."""
        sequences = [VideoSequenceFactory(spec=SceneSpecFactory(seed=50 + i, num_frames=9 if i < 2 else 16))
                     for i in range(4)]
        perfect = {seq.sequence_id: list(seq.gt_masks) for seq in sequences}
        curve, survival = temporal_curve(perfect, sequences)
        self.assertEqual(len(curve), 16)
        np.testing.assert_array_equal(curve, np.ones(16))
        self.assertEqual(survival[0], 1.0)
        self.assertEqual(survival[12], 0.5)

    def test_curve_plot_is_written(self):
        """Test that the curve figure is saved as a PNG."""
        with tempfile.TemporaryDirectory() as tmp:
            path = plot_temporal_curves({'multi': (np.linspace(1, 0.5, 8), np.ones(8))}, Path(tmp) / 'curve.png')
            self.assertTrue(path.exists())
            self.assertEqual(path.read_bytes()[:8], b'\x89PNG\r\n\x1a\n')


class TemporalConsistencyTests(SimpleTestCase):
    """Test suite for how long trained models keep tracking."""

    @tag('slow')
    @pytest.mark.slow
    def test_long_term_attention_slows_degradation(self):
        """Test J at frame 14 under every cue, and that STA alone decays fastest."""
        with tempfile.TemporaryDirectory() as tmp:
            payload = desk_scale_payload(
                Path(tmp),
                scene={'num_frames': 16, 'height': 64, 'width': 96, 'num_channels': 4, 'instance_count': 3},
                curriculum={'phase1_epochs': 20, 'phase2_epochs': 20,
                            'horizons': [[2, 10], [4, 10], [8, 10], [14, 10]]},
            )
            config = build_run_config(payload)
        split = generate_split(config.scene, config.train_fraction, config.num_scenes)
        cells = {cell.name: cell for cell in grid_cells('attention')}
        curves = {}
        for name in ('lta_sta_uof', 'lta_uof', 'sta_uof'):
            cfg = apply_cell(config, cells[name], seed=0)
            torch.manual_seed(0)
            result = run_curriculum(split.train, MultiAttentionNetwork(cfg.network), cfg.train, cfg.curriculum,
                                    cfg.loss)
            provider = NoisyTubeProvider(cfg.curriculum.drift_rate, cfg.curriculum.dropout, cfg.seed)
            predictions = segment_dataset(split.validation, result.model, None, provider, 0.5, cfg.train.cues)
            curves[name], _ = temporal_curve(predictions, split.validation)

        self.assertGreaterEqual(curves['lta_sta_uof'][14], 0.6)
        drop = {name: curve[1] - curve[14] for name, curve in curves.items()}
        self.assertGreater(drop['sta_uof'], drop['lta_sta_uof'])
        self.assertGreater(drop['sta_uof'], drop['lta_uof'])

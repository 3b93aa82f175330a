import tempfile
from pathlib import Path

import numpy as np
import torch
from django.test import SimpleTestCase

from segmentation.evaluation import jaccard
from segmentation.exceptions import DataValidationError, PipelineError
from segmentation.inference import (
    load_predictions,
    render_overlay,
    resolve_labels,
    save_predictions,
    segment_dataset,
    segment_sequence,
    segment_sequence_single_instance,
    write_overlays,
)
from segmentation.models import InstanceMaskSet
from segmentation.network import MultiAttentionNetwork
from segmentation.tests.factories import (
    NetworkConfigFactory,
    SceneSpecFactory,
    StaticSceneSpecFactory,
    VideoSequenceFactory,
)
from segmentation.tracking import GroundTruthTubeProvider


class EchoShortTermAttention(torch.nn.Module):
    """Stands in for a perfectly trained network: it returns its STA input as confident logits."""

    def __init__(self, num_channels):
        super().__init__()
        self.num_channels = num_channels

    def forward(self, x):
        sta = x[:, 6 + self.num_channels :]
        return 40.0 * (sta - 0.5)


class ShortTubeProvider(GroundTruthTubeProvider):
    def tubes(self, seq):
        return seq.tubes.truncated(2)


class ResolveLabelsTests(SimpleTestCase):
    """Test suite for turning probabilities into disjoint labels."""

    def _probs(self, *pixels):
        probs = np.zeros((3, 16, 16), dtype=np.float32)
        for channel, value in enumerate(pixels):
            probs[channel, 0, 0] = value
        return probs

    def test_most_probable_channel_wins(self):
        """Test that the argmax above tau takes the pixel."""
        masks = resolve_labels(self._probs(0.9, 0.1), active_count=2)
        self.assertEqual(masks.masks[:, 0, 0].tolist(), [1.0, 0.0, 0.0])

    def test_tie_goes_to_lowest_channel(self):
        """Test that equal probabilities resolve to the lowest index."""
        masks = resolve_labels(self._probs(0.6, 0.6), active_count=2)
        self.assertEqual(masks.masks[:, 0, 0].tolist(), [1.0, 0.0, 0.0])

    def test_below_threshold_is_background(self):
        """Test that no channel reaching tau leaves the pixel unlabelled."""
        masks = resolve_labels(self._probs(0.4, 0.3), active_count=2)
        self.assertFalse(masks.masks[:, 0, 0].any())

    def test_threshold_one_gives_all_background(self):
        """Test that tau = 1 labels nothing even for saturated probabilities."""
        masks = resolve_labels(np.ones((3, 16, 16)), active_count=2, tau=1.0)
        self.assertFalse(masks.masks.any())

    def test_inactive_channels_never_win(self):
        """Test that channels >= M stay empty whatever their probability."""
        masks = resolve_labels(self._probs(0.2, 0.3, 0.99), active_count=2)
        self.assertFalse(masks.masks[2].any())
        self.assertEqual(masks.masks[1, 0, 0], 0.0)

    def test_output_is_binary_and_disjoint(self):
        """Test that random probabilities resolve to a valid label map."""
        probs = np.random.default_rng(0).random((3, 16, 16))
        masks = resolve_labels(probs, active_count=3)
        self.assertTrue(masks.is_binary())
        self.assertTrue(masks.is_disjoint())


class SegmentSequenceTests(SimpleTestCase):
    """Test suite for causal per-sequence inference."""

    def setUp(self):
        torch.manual_seed(0)
        self.seq = VideoSequenceFactory(spec=SceneSpecFactory(seed=21, num_frames=6))
        self.model = MultiAttentionNetwork(NetworkConfigFactory()).eval()

    def test_frame_zero_is_ground_truth(self):
        """Test that the first output is the given annotation."""
        predictions = segment_sequence(self.seq, self.model)
        self.assertEqual(len(predictions), self.seq.num_frames)
        np.testing.assert_array_equal(predictions[0].masks, self.seq.gt_masks[0].masks)

    def test_outputs_are_binary_disjoint_and_respect_active_count(self):
        """Test that every frame is a valid label map with empty inactive channels."""
        seq = VideoSequenceFactory(spec=SceneSpecFactory(seed=22, instance_count=1))
        for masks in segment_sequence(seq, self.model):
            self.assertTrue(masks.is_binary())
            self.assertTrue(masks.is_disjoint())
            self.assertFalse(masks.masks[1:].any())

    def test_prefix_outputs_do_not_depend_on_later_frames(self):
        """Test that truncating the video leaves the earlier outputs unchanged."""
        full = segment_sequence(self.seq, self.model)
        prefix = segment_sequence(self.seq.truncated(4), self.model)
        for a, b in zip(prefix, full[:4]):
            np.testing.assert_array_equal(a.masks, b.masks)

    def test_perfect_model_keeps_static_objects(self):
        """Test that a model echoing its STA holds J = 1 on a static scene."""
        seq = VideoSequenceFactory(spec=StaticSceneSpecFactory())
        predictions = segment_sequence(seq, EchoShortTermAttention(seq.num_channels))
        for t in range(seq.num_frames):
            for channel in range(seq.active_count):
                self.assertEqual(jaccard(predictions[t].masks[channel], seq.gt_masks[t].masks[channel]), 1.0)

    def test_channel_mismatch_raises_error(self):
        """Test that the model must have the sequence's N."""
        seq = VideoSequenceFactory(spec=SceneSpecFactory(num_channels=4))
        with self.assertRaises(DataValidationError):
            segment_sequence(seq, self.model)

    def test_missing_tube_frames_raise_pipeline_error(self):
        """Test that a tube shorter than the video stops inference at that frame."""
        with self.assertRaises(PipelineError) as ctx:
            segment_sequence(self.seq, self.model, tube_provider=ShortTubeProvider())
        self.assertEqual(ctx.exception.frame_index, 2)


class SingleInstanceTests(SimpleTestCase):
    """Test suite for the single-instance baseline."""

    def test_single_instance_runs_merge_into_disjoint_masks(self):
        """Test that per-instance passes of an N=1 model are merged per frame."""
        seq = VideoSequenceFactory(spec=StaticSceneSpecFactory())
        predictions = segment_sequence_single_instance(seq, EchoShortTermAttention(1))
        for t in range(seq.num_frames):
            self.assertTrue(predictions[t].is_disjoint())
            for channel in range(seq.active_count):
                self.assertEqual(jaccard(predictions[t].masks[channel], seq.gt_masks[t].masks[channel]), 1.0)

    def test_multi_channel_model_is_rejected(self):
        """Test that the baseline needs a one-channel model."""
        seq = VideoSequenceFactory(spec=StaticSceneSpecFactory())
        with self.assertRaises(DataValidationError):
            segment_sequence_single_instance(seq, EchoShortTermAttention(3))


class SegmentDatasetTests(SimpleTestCase):
    """Test suite for dataset inference and prediction storage."""

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = Path(self._tmp.name)
        torch.manual_seed(0)
        self.model = MultiAttentionNetwork(NetworkConfigFactory()).eval()
        self.sequences = [VideoSequenceFactory(spec=SceneSpecFactory(seed=seed, num_frames=4)) for seed in (1, 2, 3)]

    def tearDown(self):
        self._tmp.cleanup()

    def test_parallel_workers_match_serial_run(self):
        """Test that worker threads with cloned models give the same masks."""
        serial = segment_dataset(self.sequences, self.model)
        parallel = segment_dataset(self.sequences, self.model, workers=2)
        self.assertEqual(sorted(serial), sorted(parallel))
        for sequence_id, masks in serial.items():
            for a, b in zip(masks, parallel[sequence_id]):
                np.testing.assert_array_equal(a.masks, b.masks)

    def test_predictions_round_trip_through_mask_directories(self):
        """Test that saved predictions load back unchanged."""
        predictions = segment_dataset(self.sequences, self.model)
        save_predictions(predictions, self.root / 'predictions')
        loaded = load_predictions(self.root / 'predictions', self.sequences)
        for seq in self.sequences:
            for a, b in zip(predictions[seq.sequence_id], loaded[seq.sequence_id]):
                np.testing.assert_array_equal(a.masks, b.masks)

    def test_overlays_are_written_per_frame(self):
        """Test that one RGB overlay PNG is written per frame."""
        seq = self.sequences[0]
        write_overlays(seq, seq.gt_masks, self.root / 'overlays')
        self.assertEqual(len(list((self.root / 'overlays').glob('*.png'))), seq.num_frames)


class RenderOverlayTests(SimpleTestCase):
    """Test suite for mask overlays."""

    def test_background_pixels_are_unchanged(self):
        """Test that blending only touches labelled pixels."""
        pixels = np.full((16, 16, 3), 0.5, dtype=np.float32)
        masks = np.zeros((2, 16, 16), dtype=np.float32)
        masks[0, 4:8, 4:8] = 1
        overlay = render_overlay(pixels, InstanceMaskSet(masks, 1), alpha=0.5)
        self.assertEqual(overlay.dtype, np.uint8)
        self.assertEqual(overlay.shape, (16, 16, 3))
        self.assertEqual(overlay[0, 0].tolist(), [128, 128, 128])
        self.assertNotEqual(overlay[5, 5].tolist(), [128, 128, 128])

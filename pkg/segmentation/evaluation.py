"""
Region (J) and contour (F) metrics, seen/unseen aggregation and temporal curves.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import cv2
import numpy as np

from .exceptions import DataValidationError

logger = logging.getLogger(__name__)

SPLIT_SEEN = 'seen'
SPLIT_UNSEEN = 'unseen'
BOUNDARY_TOLERANCE_RATIO = 0.008
RECALL_THRESHOLD = 0.5
DECAY_BINS = 4


@dataclass(frozen=True)
class EvaluationConfig:
    boundary_tolerance: Optional[int] = None
    compute_boundary: bool = True
    plot_curves: bool = True

    def __post_init__(self):
        if self.boundary_tolerance is not None and self.boundary_tolerance < 0:
            raise DataValidationError('boundary_tolerance must be nonnegative.')


def _binary(mask):
    return np.asarray(mask) > 0.5


def jaccard(pred, gt):
    """Intersection over union; 1 when both masks are empty."""
    pred, gt = _binary(pred), _binary(gt)
    if pred.shape != gt.shape:
        raise DataValidationError(f'Mask shapes differ: {pred.shape} vs {gt.shape}.')
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def default_tolerance(height, width):
    return int(math.ceil(BOUNDARY_TOLERANCE_RATIO * math.hypot(height, width)))


def mask_boundary(mask):
    """One-pixel inner boundary: foreground pixels with a background 8-neighbour or the image edge."""
    mask = _binary(mask).astype(np.uint8)
    eroded = cv2.erode(mask, np.ones((3, 3), np.uint8), borderType=cv2.BORDER_CONSTANT, borderValue=0)
    return (mask - eroded).astype(bool)


def disk_kernel(radius):
    offsets = np.arange(-radius, radius + 1)
    yy, xx = np.meshgrid(offsets, offsets, indexing='ij')
    return (xx ** 2 + yy ** 2 <= radius ** 2).astype(np.uint8)


def boundary_f(pred, gt, tolerance_px=None):
    """
    Boundary F-measure.

    A boundary pixel of one mask counts as matched when a boundary pixel of
    the other lies within ``tolerance_px`` (Euclidean). Two empty boundaries
    score 1, exactly one empty boundary scores 0.
    """
    pred, gt = _binary(pred), _binary(gt)
    if pred.shape != gt.shape:
        raise DataValidationError(f'Mask shapes differ: {pred.shape} vs {gt.shape}.')
    if tolerance_px is None:
        tolerance_px = default_tolerance(*gt.shape)
    pred_edge, gt_edge = mask_boundary(pred), mask_boundary(gt)
    pred_count, gt_count = pred_edge.sum(), gt_edge.sum()
    if pred_count == 0 and gt_count == 0:
        return 1.0
    if pred_count == 0 or gt_count == 0:
        return 0.0
    kernel = disk_kernel(int(tolerance_px))
    gt_zone = cv2.dilate(gt_edge.astype(np.uint8), kernel).astype(bool)
    pred_zone = cv2.dilate(pred_edge.astype(np.uint8), kernel).astype(bool)
    precision = np.logical_and(pred_edge, gt_zone).sum() / pred_count
    recall = np.logical_and(gt_edge, pred_zone).sum() / gt_count
    if precision + recall == 0:
        return 0.0
    return float(2.0 * precision * recall / (precision + recall))


def sequence_statistics(values):
    """Mean, recall (share of frames above 0.5) and decay (first quarter minus last quarter)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return {'mean': None, 'recall': None, 'decay': None}
    bins = [b for b in np.array_split(values, DECAY_BINS) if b.size]
    return {
        'mean': float(values.mean()),
        'recall': float(np.mean(values > RECALL_THRESHOLD)),
        'decay': float(bins[0].mean() - bins[-1].mean()),
    }


@dataclass
class InstanceScore:
    sequence_id: str
    instance_id: int
    category: Optional[str]
    split: str
    j_frames: List[float]
    f_frames: Optional[List[float]] = None

    @property
    def j_mean(self):
        return float(np.mean(self.j_frames)) if self.j_frames else 1.0

    @property
    def f_mean(self):
        if self.f_frames is None:
            return None
        return float(np.mean(self.f_frames)) if self.f_frames else 1.0

    def as_dict(self):
        return {
            'sequence_id': self.sequence_id,
            'instance_id': self.instance_id,
            'category': self.category,
            'split': self.split,
            'J': self.j_mean,
            'F': self.f_mean,
        }


@dataclass
class EvalReport:
    """Per-instance scores, split aggregates and temporal curves."""

    instances: List[InstanceScore] = field(default_factory=list)
    J_seen: Optional[float] = None
    J_unseen: Optional[float] = None
    F_seen: Optional[float] = None
    F_unseen: Optional[float] = None
    temporal_j: List[float] = field(default_factory=list)
    survival: List[float] = field(default_factory=list)
    statistics: Dict[str, dict] = field(default_factory=dict)

    def as_dict(self):
        payload = {
            'instances': [score.as_dict() for score in self.instances],
            'temporal_j': list(self.temporal_j),
            'survival': list(self.survival),
            'statistics': self.statistics,
        }
        for key in ('J_seen', 'J_unseen', 'F_seen', 'F_unseen'):
            value = getattr(self, key)
            if value is not None:
                payload[key] = value
        return payload


def _score_sequence(seq, masks, split, tolerance, compute_boundary):
    scores = []
    for channel, instance_id in enumerate(seq.instance_ids):
        j_frames, f_frames = [], []
        for t in range(1, seq.num_frames):
            pred = masks[t].masks[channel]
            gt = seq.gt_masks[t].masks[channel]
            j_frames.append(jaccard(pred, gt))
            if compute_boundary:
                f_frames.append(boundary_f(pred, gt, tolerance))
        scores.append(
            InstanceScore(
                seq.sequence_id, instance_id, seq.category_labels.get(instance_id), split,
                j_frames, f_frames if compute_boundary else None,
            )
        )
    logger.debug('Scored %s (%d instances)', seq.sequence_id, len(scores))
    return scores


def _check_coverage(predictions, dataset):
    missing = sorted(seq.sequence_id for seq in dataset if seq.sequence_id not in predictions)
    if missing:
        raise DataValidationError(f'No predictions for sequences: {missing}.')
    for seq in dataset:
        if len(predictions[seq.sequence_id]) != seq.num_frames:
            raise DataValidationError(
                f'{seq.sequence_id}: {len(predictions[seq.sequence_id])} predicted frames for {seq.num_frames}.'
            )


def _mean_or_none(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def evaluate_dataset(predictions, dataset, split_labels=None, tolerance=None, compute_boundary=True, workers=1):
    """
    Score predictions against ground truth.

    ``split_labels`` maps sequence ids to ``"seen"`` / ``"unseen"``;
    unlabelled sequences count as seen. Frame 0 is given and not scored.
    """
    dataset = sorted(dataset, key=lambda seq: seq.sequence_id)
    _check_coverage(predictions, dataset)
    split_labels = split_labels or {}

    def score(seq):
        split = split_labels.get(seq.sequence_id, SPLIT_SEEN)
        if split not in (SPLIT_SEEN, SPLIT_UNSEEN):
            raise DataValidationError(f'Unknown split label {split!r} for {seq.sequence_id}.')
        return _score_sequence(seq, predictions[seq.sequence_id], split, tolerance, compute_boundary)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_sequence = list(pool.map(score, dataset))
    else:
        per_sequence = [score(seq) for seq in dataset]
    instances = [s for scores in per_sequence for s in scores]

    report = EvalReport(instances=instances)
    for split, suffix in ((SPLIT_SEEN, 'seen'), (SPLIT_UNSEEN, 'unseen')):
        members = [s for s in instances if s.split == split]
        setattr(report, f'J_{suffix}', _mean_or_none([s.j_mean for s in members]))
        if compute_boundary:
            setattr(report, f'F_{suffix}', _mean_or_none([s.f_mean for s in members]))
    temporal_j, survival = temporal_curve(predictions, dataset)
    report.temporal_j = [float(v) for v in temporal_j]
    report.survival = [float(v) for v in survival]
    report.statistics = {
        'J': sequence_statistics([v for s in instances for v in s.j_frames]),
        'F': sequence_statistics([v for s in instances for v in (s.f_frames or [])]),
    }
    logger.info(
        'Evaluated %d instances: J_seen=%s J_unseen=%s', len(instances), report.J_seen, report.J_unseen
    )
    return report


def temporal_curve(predictions, dataset):
    """
    Mean J per frame index over instances alive there, and the alive fraction.

    An instance is alive at frame n when its sequence has a frame n.
    """
    _check_coverage(predictions, dataset)
    length = max((seq.num_frames for seq in dataset), default=0)
    totals = np.zeros(length)
    alive = np.zeros(length)
    for seq in dataset:
        masks = predictions[seq.sequence_id]
        for t in range(seq.num_frames):
            for channel in range(seq.active_count):
                totals[t] += jaccard(masks[t].masks[channel], seq.gt_masks[t].masks[channel])
                alive[t] += 1
    peak = alive.max() if length else 0
    curve = np.divide(totals, alive, out=np.full(length, np.nan), where=alive > 0)
    survival = alive / peak if peak else np.zeros(length)
    return curve, survival


def plot_temporal_curves(curves, path):
    """Write a PNG with one mean-J line per configuration and the survival fraction as dots."""
    import matplotlib

    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    figure, axis = plt.subplots(figsize=(6, 4))
    survival = None
    for name, (j_curve, alive) in curves.items():
        axis.plot(np.arange(len(j_curve)), j_curve, label=name)
        survival = alive
    if survival is not None:
        axis.scatter(np.arange(len(survival)), survival, color='black', s=8, label='instances alive')
    axis.set_xlabel('frame')
    axis.set_ylabel('mean J')
    axis.set_ylim(0.0, 1.05)
    axis.legend(loc='lower left')
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    figure.savefig(path, dpi=100, bbox_inches='tight')
    plt.close(figure)
    return path

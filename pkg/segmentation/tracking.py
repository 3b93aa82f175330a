"""
Flow and box-tube providers for inference.

Providers are injected into the inference pipeline so ground-truth, noisy or
tracked sources can be swapped without touching it. Every provider is
causal: what it returns for frame t depends only on frames up to t.
"""

import logging

import cv2
import numpy as np

from .cues import box_noise
from .exceptions import DataValidationError, PipelineError
from .models import Box, BoxTube, FlowField, box_iou

logger = logging.getLogger(__name__)


class GroundTruthFlowProvider:
    """Serves the flow stored with the sequence."""

    def backward(self, seq, frame_index):
        if not 1 <= frame_index < seq.num_frames or frame_index - 1 >= len(seq.flows_bwd):
            raise PipelineError(f'{seq.sequence_id}: no backward flow for frame {frame_index}.', frame_index)
        return seq.backward_flow(frame_index)

    def forward(self, seq, frame_index):
        if not 0 <= frame_index < len(seq.flows_fwd):
            raise PipelineError(f'{seq.sequence_id}: no forward flow for frame {frame_index}.', frame_index)
        return seq.forward_flow(frame_index)


class NoisyFlowProvider(GroundTruthFlowProvider):
    """Stored flow plus i.i.d. Gaussian noise (``std`` in pixels), seeded per sequence and frame."""

    def __init__(self, std=0.5, seed=0):
        self.std = std
        self.seed = seed

    def _noisy(self, seq, field, frame_index, salt):
        key = [self.seed, salt, frame_index] + [ord(c) for c in seq.sequence_id]
        rng = np.random.default_rng(key)
        noise = rng.normal(0.0, self.std, field.vectors.shape).astype(np.float32)
        return FlowField(field.vectors + noise, field.direction)

    def backward(self, seq, frame_index):
        return self._noisy(seq, super().backward(seq, frame_index), frame_index, 0)

    def forward(self, seq, frame_index):
        return self._noisy(seq, super().forward(seq, frame_index), frame_index, 1)


class GroundTruthTubeProvider:
    """Tight boxes of the ground-truth masks."""

    def tubes(self, seq):
        if len(seq.tubes) < seq.num_frames:
            raise PipelineError(
                f'{seq.sequence_id}: tubes cover {len(seq.tubes)} of {seq.num_frames} frames.', len(seq.tubes)
            )
        return seq.tubes


class NoisyTubeProvider(GroundTruthTubeProvider):
    """Ground-truth tubes passed through the tracker drift model."""

    def __init__(self, drift_rate=0.05, dropout=0.02, seed=0):
        self.drift_rate = drift_rate
        self.dropout = dropout
        self.seed = seed

    def tubes(self, seq):
        rng = np.random.default_rng([self.seed] + [ord(c) for c in seq.sequence_id])
        return box_noise(super().tubes(seq), rng, self.drift_rate, self.dropout)


class GreedyTemplateTracker:
    """
    Template tracker seeded with the frame-0 boxes.

    Each frame it slides the template over a window of ``search_radius``
    pixels around the previous box and keeps the position with the smallest
    sum of squared differences, then blends the new crop into the template.
    Box sizes stay fixed.
    """

    def __init__(self, search_radius=6, template_lr=0.2):
        self.search_radius = search_radius
        self.template_lr = template_lr

    def tubes(self, seq):
        height, width = seq.height, seq.width
        initial = seq.tubes.boxes[0]
        boxes = [dict(initial)]
        state = {}
        for instance_id, box in initial.items():
            x0, y0 = int(round(box.x0)), int(round(box.y0))
            w, h = max(int(round(box.x1 - box.x0)), 1), max(int(round(box.y1 - box.y0)), 1)
            template = seq.frames[0].pixels[y0 : y0 + h, x0 : x0 + w].copy()
            state[instance_id] = (x0, y0, template)
        for frame_index in range(1, seq.num_frames):
            pixels = seq.frames[frame_index].pixels
            current = {}
            for instance_id, (x0, y0, template) in state.items():
                h, w = template.shape[:2]
                wx0 = max(x0 - self.search_radius, 0)
                wy0 = max(y0 - self.search_radius, 0)
                wx1 = min(x0 + w + self.search_radius, width)
                wy1 = min(y0 + h + self.search_radius, height)
                window = pixels[wy0:wy1, wx0:wx1]
                if window.shape[0] < h or window.shape[1] < w:
                    current[instance_id] = Box(float(x0), float(y0), float(x0 + w), float(y0 + h))
                    continue
                scores = cv2.matchTemplate(window, template, cv2.TM_SQDIFF)
                _, _, best, _ = cv2.minMaxLoc(scores)
                nx0, ny0 = wx0 + best[0], wy0 + best[1]
                crop = pixels[ny0 : ny0 + h, nx0 : nx0 + w]
                template = (1.0 - self.template_lr) * template + self.template_lr * crop
                state[instance_id] = (nx0, ny0, template.astype(np.float32))
                current[instance_id] = Box(float(nx0), float(ny0), float(nx0 + w), float(ny0 + h))
            boxes.append(current)
        logger.debug('Tracked %d instances through %s', len(state), seq.sequence_id)
        return BoxTube(boxes, width, height)


def build_tube_provider(name, drift_rate=0.05, dropout=0.02, seed=0):
    if name == 'gt':
        return GroundTruthTubeProvider()
    if name == 'noisy':
        return NoisyTubeProvider(drift_rate, dropout, seed)
    if name == 'tracker':
        return GreedyTemplateTracker()
    raise DataValidationError(f'Unknown tube provider {name!r}.')


def build_flow_provider(name, std=0.5, seed=0):
    if name == 'gt':
        return GroundTruthFlowProvider()
    if name == 'noisy':
        return NoisyFlowProvider(std, seed)
    raise DataValidationError(f'Unknown flow provider {name!r}.')


def tracker_overlap_curve(sequences, provider):
    """Mean box IoU against the clean tubes per frame index, over instances visible there."""
    totals, counts = {}, {}
    for seq in sequences:
        estimated = provider.tubes(seq)
        for frame_index, clean in enumerate(seq.tubes.boxes):
            for instance_id, box in clean.items():
                iou = box_iou(box, estimated.box(frame_index, instance_id))
                totals[frame_index] = totals.get(frame_index, 0.0) + iou
                counts[frame_index] = counts.get(frame_index, 0) + 1
    length = max(counts) + 1 if counts else 0
    return np.array([totals.get(n, 0.0) / counts[n] if counts.get(n) else np.nan for n in range(length)])

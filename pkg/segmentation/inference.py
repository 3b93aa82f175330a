"""
Causal per-sequence inference.

Frame 0 takes the ground-truth masks. Every later frame warps the previous
prediction along the backward flow (STA), reads the tube boxes (LTA), runs a
single forward pass and resolves the N sigmoid maps into disjoint labels.
"""

import copy
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np
import torch
from PIL import Image

from .cues import CueConfig, assemble_input, box_map, encode_flow, lta_from_boxes, sta_from_prediction
from .exceptions import DataValidationError, PipelineError
from .io import FRAME_PATTERN, MASK_PALETTE, load_masks, save_masks
from .models import InstanceMaskSet
from .network import run_forward
from .tracking import GroundTruthFlowProvider, GroundTruthTubeProvider

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InferenceConfig:
    tau: float = 0.5
    flow_provider: str = 'gt'
    tube_provider: str = 'gt'
    flow_noise_std: float = 0.5
    drift_rate: float = 0.05
    dropout: float = 0.02
    instance_mode: str = 'multi'

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise DataValidationError('tau must lie in (0, 1].')
        if self.instance_mode not in ('multi', 'single'):
            raise DataValidationError(f'Unknown instance mode {self.instance_mode!r}.')


def resolve_labels(probs, active_count, tau=0.5, instance_ids=None):
    """
    Turn N probability maps into disjoint binary masks.

    A pixel goes to the most probable active channel (lowest index on ties)
    when that probability reaches ``tau``; otherwise it is background. A
    threshold of 1 or more leaves every pixel as background.
    """
    probs = np.asarray(probs, dtype=np.float32)
    masks = np.zeros_like(probs)
    if active_count == 0 or tau >= 1.0:
        return InstanceMaskSet(masks, active_count, list(instance_ids or []))
    active = probs[:active_count]
    winner = np.argmax(active, axis=0)
    best = np.take_along_axis(active, winner[None], axis=0)[0]
    rows, cols = np.nonzero(best >= tau)
    masks[winner[rows, cols], rows, cols] = 1.0
    return InstanceMaskSet(masks, active_count, list(instance_ids or []))


def _predict(model, tensor, device):
    with torch.no_grad():
        return run_forward(model, tensor, device).probabilities.cpu().numpy()


def segment_sequence(seq, model, flow_provider=None, tube_provider=None, tau=0.5, cues=None, device=None):
    """Segment every frame of ``seq`` given its frame-0 ground truth."""
    flow_provider = flow_provider or GroundTruthFlowProvider()
    tube_provider = tube_provider or GroundTruthTubeProvider()
    cues = cues or CueConfig()
    if model.num_channels != seq.num_channels:
        raise DataValidationError(
            f'Model has {model.num_channels} channels, {seq.sequence_id} has N={seq.num_channels}.'
        )
    model.eval()
    tubes = tube_provider.tubes(seq)
    predictions = [seq.gt_masks[0].binarized()]
    for t in range(1, seq.num_frames):
        if t >= len(tubes):
            raise PipelineError(f'{seq.sequence_id}: no tube boxes for frame {t}.', t)
        backward = flow_provider.backward(seq, t)
        sta = sta_from_prediction(predictions[-1], backward)
        lta = lta_from_boxes(tubes, t, seq.num_channels, seq.instance_ids)
        model_input = assemble_input(seq.frames[t], encode_flow(backward, cues.flow_encoding), lta, sta, cues)
        probs = _predict(model, model_input.tensor, device)[0]
        predictions.append(resolve_labels(probs, seq.active_count, tau, seq.instance_ids))
    logger.debug('Segmented %s (%d frames)', seq.sequence_id, seq.num_frames)
    return predictions


def segment_sequence_single_instance(seq, model, flow_provider=None, tube_provider=None, tau=0.5,
                                     cues=None, device=None):
    """Single-instance baseline: one N=1 pass per instance, merged by :func:`resolve_labels`."""
    flow_provider = flow_provider or GroundTruthFlowProvider()
    tube_provider = tube_provider or GroundTruthTubeProvider()
    cues = cues or CueConfig()
    if model.num_channels != 1:
        raise DataValidationError('The single-instance baseline needs a one-channel model.')
    model.eval()
    tubes = tube_provider.tubes(seq)
    predictions = [seq.gt_masks[0].binarized()]
    height, width, count = seq.height, seq.width, seq.active_count
    for t in range(1, seq.num_frames):
        if t >= len(tubes):
            raise PipelineError(f'{seq.sequence_id}: no tube boxes for frame {t}.', t)
        backward = flow_provider.backward(seq, t)
        sta = sta_from_prediction(predictions[-1], backward)
        flow_cue = encode_flow(backward, cues.flow_encoding)
        probs = np.zeros((seq.num_channels, height, width), dtype=np.float32)
        if count:
            batch = np.stack([
                assemble_input(
                    seq.frames[t], flow_cue,
                    box_map(tubes.box(t, instance_id), height, width)[None],
                    sta[channel][None], cues,
                ).tensor
                for channel, instance_id in enumerate(seq.instance_ids)
            ])
            probs[:count] = _predict(model, batch, device)[:, 0]
        predictions.append(resolve_labels(probs, count, tau, seq.instance_ids))
    return predictions


def segment_dataset(sequences, model, flow_provider=None, tube_provider=None, tau=0.5, cues=None,
                    instance_mode='multi', workers=1, device=None):
    """Segment many sequences; parallel workers each get their own model clone."""
    segment = segment_sequence if instance_mode == 'multi' else segment_sequence_single_instance

    def run(seq, clone):
        return seq.sequence_id, segment(seq, clone, flow_provider, tube_provider, tau, cues, device)

    if workers <= 1:
        results = [run(seq, model) for seq in sequences]
    else:
        clones = [copy.deepcopy(model) for _ in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run, seq, clones[i % workers]) for i, seq in enumerate(sequences)]
            results = [f.result() for f in futures]
    logger.info('Segmented %d sequences', len(results))
    return dict(results)


# Prediction directories

def save_predictions(predictions, root_path):
    for sequence_id, masks in predictions.items():
        save_masks(masks, Path(root_path) / sequence_id)


def load_predictions(root_path, sequences):
    return {
        seq.sequence_id: load_masks(
            Path(root_path) / seq.sequence_id, seq.num_frames, seq.num_channels, seq.active_count, seq.instance_ids
        )
        for seq in sequences
    }


# Overlays

def render_overlay(pixels, masks, alpha=0.5):
    """Blend palette-coloured masks over an RGB frame; returns uint8 H x W x 3."""
    rgb = np.asarray(pixels, dtype=np.float32) * 255.0
    palette = np.asarray(MASK_PALETTE, dtype=np.float32).reshape(-1, 3)
    for channel in masks.active_channels:
        inside = masks.masks[channel] > 0.5
        rgb[inside] = (1.0 - alpha) * rgb[inside] + alpha * palette[channel + 1]
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def write_overlays(seq, predictions, out_dir, alpha=0.5):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for frame_index, (frame, masks) in enumerate(zip(seq.frames, predictions)):
        Image.fromarray(render_overlay(frame.pixels, masks, alpha)).save(out_dir / FRAME_PATTERN.format(frame_index))
    return out_dir


# Timing

@dataclass
class TimingTable:
    """Median forward latency (seconds) per number of active instances."""

    rows: List[tuple] = field(default_factory=list)

    @property
    def ratio(self):
        latencies = [latency for _, latency in self.rows]
        return max(latencies) / min(latencies)

    def as_dict(self):
        return {'rows': [{'active': m, 'median_seconds': s} for m, s in self.rows], 'max_min_ratio': self.ratio}


def benchmark_forward(model, num_channels=None, m_values=None, repeats=20, warmup=3, height=64, width=96,
                      seed=0, device=None):
    """
    Time one forward pass for inputs with M active instances.

    The tensor shape never depends on M, so latencies should match up to noise.
    """
    if repeats < 10:
        raise DataValidationError('benchmark_forward needs at least 10 repeats.')
    num_channels = num_channels or model.num_channels
    m_values = list(m_values or range(1, num_channels + 1))
    rng = np.random.default_rng(seed)
    model.eval()
    table = TimingTable()
    for active in m_values:
        tensor = np.zeros((1, 6 + 2 * num_channels, height, width), dtype=np.float32)
        tensor[0, :6] = rng.random((6, height, width))
        for channel in range(active):
            y0, x0 = rng.integers(0, height // 2), rng.integers(0, width // 2)
            tensor[0, 6 + channel, y0 : y0 + height // 3, x0 : x0 + width // 3] = 1.0
            tensor[0, 6 + num_channels + channel] = tensor[0, 6 + channel]
        batch = torch.from_numpy(tensor)
        if device is not None:
            batch = batch.to(device)
        samples = []
        with torch.no_grad():
            for _ in range(warmup):
                model(batch)
            for _ in range(repeats):
                start = time.perf_counter()
                model(batch)
                samples.append(time.perf_counter() - start)
        table.rows.append((active, float(np.median(samples))))
    logger.info('Forward latency max/min ratio across M: %.3f', table.ratio)
    return table

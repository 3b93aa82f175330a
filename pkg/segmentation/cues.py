"""
Attention cues and input assembly.

The model input is ``[RGB(3) | flow(3) | LTA(N) | STA(N)]``. LTA channels are
binary box maps from a box tube, STA channels are the previous per-instance
masks warped to the current frame along the backward flow.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import cv2
import numpy as np
import torch
import torch.nn.functional as F

from .exceptions import DataValidationError
from .models import Box, BoxTube, Frame, InstanceMaskSet

FLOW_EPS = 1e-8
RAW_FLOW_SCALE = 8.0
REFERENCE_SIZE = (256, 416)
REFERENCE_KERNEL_RANGE = (6, 30)


@dataclass(frozen=True)
class CueConfig:
    """Which cue groups feed the network; disabled groups are zero-filled."""

    use_flow: bool = True
    use_lta: bool = True
    use_sta: bool = True
    flow_encoding: str = 'uof'

    def __post_init__(self):
        if self.flow_encoding not in ('uof', 'raw'):
            raise DataValidationError(f'Unknown flow encoding {self.flow_encoding!r}.')

    def without_sta(self):
        return CueConfig(self.use_flow, self.use_lta, False, self.flow_encoding)


@dataclass
class AttentionStack:
    """N LTA box maps and N STA maps sharing one channel binding."""

    lta: np.ndarray
    sta: np.ndarray

    def __post_init__(self):
        self.lta = np.asarray(self.lta, dtype=np.float32)
        self.sta = np.asarray(self.sta, dtype=np.float32)
        if self.lta.ndim != 3 or self.lta.shape != self.sta.shape:
            raise DataValidationError(
                f'LTA {self.lta.shape} and STA {self.sta.shape} must both be NxHxW.'
            )

    @property
    def num_channels(self):
        return self.lta.shape[0]

    def permuted(self, permutation):
        return AttentionStack(self.lta[permutation], self.sta[permutation])


@dataclass
class ModelInput:
    """A (6 + 2N) x H x W input tensor in the fixed channel order."""

    tensor: np.ndarray

    def __post_init__(self):
        self.tensor = np.asarray(self.tensor, dtype=np.float32)
        if self.tensor.ndim != 3 or self.tensor.shape[0] < 8 or (self.tensor.shape[0] - 6) % 2:
            raise DataValidationError(f'Model input must be (6+2N)xHxW, got {self.tensor.shape}.')

    @property
    def num_channels(self):
        return (self.tensor.shape[0] - 6) // 2

    @property
    def rgb(self):
        return self.tensor[0:3]

    @property
    def flow(self):
        return self.tensor[3:6]

    @property
    def lta(self):
        return self.tensor[6 : 6 + self.num_channels]

    @property
    def sta(self):
        return self.tensor[6 + self.num_channels :]


# Optical flow encodings

def unit_optical_flow(field, eps=FLOW_EPS):
    """
    Map a flow field to (unit dx, unit dy, normalized magnitude).

    Zero vectors get direction (0, 0); the magnitude is normalized by the
    largest magnitude in the frame.
    """
    vectors = field.vectors.astype(np.float64)
    magnitude = np.hypot(vectors[..., 0], vectors[..., 1])
    moving = magnitude >= eps
    direction = np.zeros_like(vectors)
    direction[moving] = vectors[moving] / magnitude[moving][:, None]
    peak = max(float(magnitude.max()) if magnitude.size else 0.0, eps)
    normalized = np.where(moving, magnitude / peak, 0.0)
    return np.concatenate([direction, normalized[..., None]], axis=-1).astype(np.float32)


def raw_flow(field, scale=RAW_FLOW_SCALE):
    """Raw displacement divided by a fixed scale, padded to three channels."""
    vectors = field.vectors / np.float32(scale)
    return np.concatenate([vectors, np.zeros_like(vectors[..., :1])], axis=-1).astype(np.float32)


def encode_flow(field, encoding='uof'):
    if encoding == 'raw':
        return raw_flow(field)
    return unit_optical_flow(field)


# Warping

def warp_tensor(source, flow):
    """
    Backward bilinear warp of a B x C x H x W tensor by a B x 2 x H x W flow.

    ``output(x) = source(x + flow(x))``; samples outside the frame read zero.
    """
    _, _, height, width = source.shape
    ys, xs = torch.meshgrid(
        torch.arange(height, dtype=source.dtype, device=source.device),
        torch.arange(width, dtype=source.dtype, device=source.device),
        indexing='ij',
    )
    gx = xs[None] + flow[:, 0]
    gy = ys[None] + flow[:, 1]
    grid = torch.stack(
        [2.0 * gx / max(width - 1, 1) - 1.0, 2.0 * gy / max(height - 1, 1) - 1.0], dim=-1
    )
    return F.grid_sample(source, grid, mode='bilinear', padding_mode='zeros', align_corners=True)


def warp(source, backward_flow):
    """Warp an H x W (x C) map along a backward FlowField."""
    source = np.asarray(source)
    squeeze = source.ndim == 2
    if squeeze:
        source = source[..., None]
    if source.ndim != 3 or source.shape[:2] != backward_flow.vectors.shape[:2]:
        raise DataValidationError(
            f'Cannot warp a {source.shape} map with a {backward_flow.vectors.shape} flow.'
        )
    src = torch.from_numpy(np.ascontiguousarray(source, dtype=np.float64)).permute(2, 0, 1)[None]
    flow = torch.from_numpy(backward_flow.vectors.astype(np.float64)).permute(2, 0, 1)[None]
    with torch.no_grad():
        out = warp_tensor(src, flow)[0].permute(1, 2, 0).numpy()
    out = out.astype(np.float32)
    return out[..., 0] if squeeze else out


def sta_from_prediction(prev_masks, backward_flow):
    """Warp every active channel of the previous masks; inactive channels stay zero."""
    if (prev_masks.height, prev_masks.width) != backward_flow.vectors.shape[:2]:
        raise DataValidationError('Previous masks and backward flow disagree in size.')
    sta = np.zeros_like(prev_masks.masks)
    active = prev_masks.active_channels
    if active:
        warped = warp(np.moveaxis(prev_masks.masks[active], 0, -1), backward_flow)
        sta[active] = np.moveaxis(warped.reshape(prev_masks.height, prev_masks.width, -1), -1, 0)
    return np.clip(sta, 0.0, 1.0)


# Long-term attention

def box_map(box, height, width):
    """Indicator of a box under the half-open convention, tested at pixel centres."""
    canvas = np.zeros((height, width), dtype=np.float32)
    if box is None:
        return canvas
    cols = np.arange(width) + 0.5
    rows = np.arange(height) + 0.5
    inside_x = (cols >= box.x0) & (cols < box.x1)
    inside_y = (rows >= box.y0) & (rows < box.y1)
    canvas[np.ix_(inside_y, inside_x)] = 1.0
    return canvas


def lta_from_boxes(tubes, frame_index, num_channels, instance_ids=None):
    """Stack one box map per channel for a frame; absent boxes give zero channels."""
    instance_ids = instance_ids or sorted({i for frame in tubes.boxes for i in frame})
    lta = np.zeros((num_channels, tubes.height, tubes.width), dtype=np.float32)
    for instance_id in instance_ids:
        channel = instance_id - 1
        if channel >= num_channels:
            raise DataValidationError(f'Instance {instance_id} has no channel among N={num_channels}.')
        lta[channel] = box_map(tubes.box(frame_index, instance_id), tubes.height, tubes.width)
    return lta


def box_noise(tubes, rng, drift_rate=0.05, dropout=0.02):
    """
    Simulate tracker drift on a clean box tube.

    Each instance accumulates a random-walk offset whose per-frame step is at
    most ``drift_rate`` times the box diagonal; each box is also rescaled by a
    factor in ``[1 - drift_rate, 1 + drift_rate]`` and dropped with
    probability ``dropout``. Frame 0 carries no drift. One base seed is taken
    from ``rng`` and every draw is keyed on ``(base, frame, instance)``, so the
    noise on a frame never depends on which instances appear later.
    """
    if not (0.0 <= drift_rate <= 1.0 and 0.0 <= dropout <= 1.0):
        raise DataValidationError('drift_rate and dropout must lie in [0, 1].')
    base = int(rng.integers(2 ** 62))
    offsets = {}
    noisy = []
    for frame_index, frame in enumerate(tubes.boxes):
        out = {}
        for instance_id in sorted(frame):
            box = frame[instance_id]
            step_radius, step_angle, scale_draw, drop_draw = np.random.default_rng(
                [base, frame_index, instance_id]
            ).random(4)
            offset = offsets.setdefault(instance_id, np.zeros(2))
            if frame_index > 0:
                radius = drift_rate * box.diagonal * math.sqrt(step_radius)
                angle = 2.0 * math.pi * step_angle
                offset += (radius * math.cos(angle), radius * math.sin(angle))
            if drop_draw < dropout:
                continue
            factor = 1.0 + drift_rate * (2.0 * scale_draw - 1.0) if frame_index > 0 else 1.0
            cx = (box.x0 + box.x1) / 2.0 + offset[0]
            cy = (box.y0 + box.y1) / 2.0 + offset[1]
            half_w = factor * (box.x1 - box.x0) / 2.0
            half_h = factor * (box.y1 - box.y0) / 2.0
            moved = Box(cx - half_w, cy - half_h, cx + half_w, cy + half_h).clipped(tubes.width, tubes.height)
            if moved.area > 0:
                out[instance_id] = moved
        noisy.append(out)
    return BoxTube(noisy, tubes.width, tubes.height)


# Short-term attention perturbation

def scaled_kernel_range(height, width):
    """Scale the full-resolution 6..30 px kernel range to the working resolution."""
    ratio = max(height / REFERENCE_SIZE[0], width / REFERENCE_SIZE[1])
    low = max(1, math.ceil(REFERENCE_KERNEL_RANGE[0] * ratio))
    return low, max(low, math.ceil(REFERENCE_KERNEL_RANGE[1] * ratio))


@dataclass(frozen=True)
class PerturbationDraw:
    """One sampled STA perturbation."""

    source_offset: int
    kernel_size: int
    dilate: bool
    scale: float
    shift: Tuple[float, float]


def draw_perturbation(rng, height, width, kernel_range=None, scale_range=(0.8, 1.2),
                      max_shift=0.01, source_offsets=(-1, 0, 1)):
    kernel_range = kernel_range or scaled_kernel_range(height, width)
    offset = int(rng.choice(source_offsets))
    kernel = int(rng.integers(kernel_range[0], kernel_range[1] + 1))
    dilate = bool(rng.random() < 0.5)
    scale = float(rng.uniform(*scale_range))
    distance = float(rng.uniform(0.0, max_shift))
    angle = float(rng.uniform(0.0, 2.0 * math.pi))
    shift = (distance * width * math.cos(angle), distance * height * math.sin(angle))
    return PerturbationDraw(offset, kernel, dilate, scale, shift)


def morph_perturb(mask, kernel_size, dilate):
    """Dilate or erode a binary mask with a square kernel."""
    if kernel_size < 1:
        return mask.astype(np.float32)
    kernel = np.ones((kernel_size, kernel_size), dtype=np.uint8)
    op = cv2.dilate if dilate else cv2.erode
    out = op(mask.astype(np.uint8), kernel, borderType=cv2.BORDER_CONSTANT, borderValue=0)
    return out.astype(np.float32)


def affine_perturb(mask, scale, shift):
    """Scale about the mask centroid, then translate by ``shift`` pixels."""
    rows, cols = np.nonzero(mask > 0)
    if rows.size == 0:
        return np.zeros_like(mask, dtype=np.float32)
    if scale == 1.0 and shift == (0.0, 0.0):
        return mask.astype(np.float32)
    cx, cy = cols.mean(), rows.mean()
    matrix = np.array(
        [[scale, 0.0, cx * (1.0 - scale) + shift[0]], [0.0, scale, cy * (1.0 - scale) + shift[1]]],
        dtype=np.float64,
    )
    height, width = mask.shape
    out = cv2.warpAffine(
        mask.astype(np.float32), matrix, (width, height),
        flags=cv2.INTER_NEAREST, borderMode=cv2.BORDER_CONSTANT, borderValue=0,
    )
    return np.clip(out, 0.0, 1.0)


def apply_perturbation(mask, draw):
    return affine_perturb(morph_perturb(mask, draw.kernel_size, draw.dilate), draw.scale, draw.shift)


def perturb_sta(gt_mask, rng, neighbours=None, kernel_range=None, scale_range=(0.8, 1.2), max_shift=0.01):
    """
    Fake a previous-frame prediction from ground truth.

    ``neighbours`` maps frame offsets (-1, +1) to the neighbouring ground
    truth masks; one of the available masks in ``[t-1, t+1]`` is chosen, then
    dilated or eroded, rescaled about its centroid and shifted.
    """
    candidates = {0: gt_mask}
    candidates.update({k: v for k, v in (neighbours or {}).items() if v is not None})
    height, width = gt_mask.shape
    draw = draw_perturbation(
        rng, height, width, kernel_range, scale_range, max_shift, tuple(sorted(candidates))
    )
    return apply_perturbation(candidates[draw.source_offset], draw)


# Instance Shuffle

def inverse_permutation(permutation):
    return np.argsort(np.asarray(permutation))


def instance_shuffle(attn, targets, rng, permutation=None):
    """Apply one random channel permutation to LTA, STA and targets together."""
    if attn.num_channels != targets.num_channels:
        raise DataValidationError('Attention and targets disagree on the channel count.')
    if permutation is None:
        permutation = rng.permutation(attn.num_channels)
    permutation = np.asarray(permutation)
    return attn.permuted(permutation), targets.permuted(permutation), permutation


# Input assembly

def assemble_input(frame, flow, lta, sta, cues=None):
    """Concatenate ``[RGB | flow | LTA | STA]``, zero-filling disabled cue groups."""
    cues = cues or CueConfig()
    pixels = frame.pixels if isinstance(frame, Frame) else np.asarray(frame, dtype=np.float32)
    height, width = pixels.shape[:2]
    flow = np.asarray(flow, dtype=np.float32)
    lta = np.asarray(lta, dtype=np.float32)
    sta = np.asarray(sta, dtype=np.float32)
    if flow.shape != (height, width, 3):
        raise DataValidationError(f'Flow cue {flow.shape} does not match frame {height}x{width}.')
    if lta.ndim != 3 or lta.shape[1:] != (height, width) or sta.shape != lta.shape:
        raise DataValidationError(
            f'LTA {lta.shape} / STA {sta.shape} do not match frame {height}x{width}.'
        )
    parts = [
        np.moveaxis(pixels, -1, 0),
        np.moveaxis(flow, -1, 0) if cues.use_flow else np.zeros((3, height, width), np.float32),
        lta if cues.use_lta else np.zeros_like(lta),
        sta if cues.use_sta else np.zeros_like(sta),
    ]
    return ModelInput(np.concatenate(parts, axis=0))

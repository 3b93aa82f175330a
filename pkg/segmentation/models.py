"""
Core domain types for multi-instance video segmentation.

These are plain in-memory value objects, not database models. Arrays are
numpy ``float32`` and follow one channel binding everywhere: dataset instance
id ``k`` occupies channel ``k - 1`` of masks, attention cues and outputs.
"""

from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from .exceptions import DataValidationError

FLOW_DIRECTIONS = ('forward', 'backward')
SPATIAL_STRIDE = 16


def channel_of(instance_id):
    """Return the channel index bound to a dataset instance id."""
    if instance_id < 1:
        raise DataValidationError(f'Instance ids start at 1, got {instance_id}.')
    return instance_id - 1


def check_spatial_size(height, width):
    """Validate a frame size against the decoder stride requirement."""
    if height < SPATIAL_STRIDE or width < SPATIAL_STRIDE:
        raise DataValidationError(
            f'Frames must be at least {SPATIAL_STRIDE}x{SPATIAL_STRIDE}, got {height}x{width}.'
        )
    if height % SPATIAL_STRIDE or width % SPATIAL_STRIDE:
        raise DataValidationError(
            f'Frame size {height}x{width} is not divisible by {SPATIAL_STRIDE}.'
        )


@dataclass
class Frame:
    """A normalized RGB frame (H x W x 3, values in [0, 1])."""

    pixels: np.ndarray
    timestamp_index: int = 0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise DataValidationError(f'Frame pixels must be HxWx3, got {self.pixels.shape}.')
        check_spatial_size(*self.pixels.shape[:2])
        if self.timestamp_index < 0:
            raise DataValidationError('timestamp_index must be nonnegative.')
        if not np.all(np.isfinite(self.pixels)) or self.pixels.min() < 0 or self.pixels.max() > 1:
            raise DataValidationError('Frame pixels must lie in [0, 1].')

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]


@dataclass
class InstanceMaskSet:
    """
    An N x H x W stack of per-instance masks.

    ``active_count`` (M) channels carry instances, the rest must stay empty.
    After Instance Shuffle the slots no longer follow the canonical order;
    ``permutation[i]`` then names the canonical channel held by slot ``i``.
    """

    masks: np.ndarray
    active_count: int
    instance_ids: List[int] = field(default_factory=list)
    permutation: Optional[tuple] = None

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=np.float32)
        if self.masks.ndim != 3:
            raise DataValidationError(f'Masks must be NxHxW, got {self.masks.shape}.')
        n = self.masks.shape[0]
        if not 0 <= self.active_count <= n:
            raise DataValidationError(
                f'active_count {self.active_count} outside [0, {n}].'
            )
        if not self.instance_ids:
            self.instance_ids = list(range(1, self.active_count + 1))
        if len(self.instance_ids) != self.active_count:
            raise DataValidationError(
                f'Expected {self.active_count} instance ids, got {len(self.instance_ids)}.'
            )
        if not np.all(np.isfinite(self.masks)) or (
            self.masks.size and (self.masks.min() < 0 or self.masks.max() > 1)
        ):
            raise DataValidationError('Mask values must lie in [0, 1].')
        if self.permutation is not None:
            self.permutation = tuple(int(p) for p in self.permutation)
            if sorted(self.permutation) != list(range(n)):
                raise DataValidationError(f'{self.permutation} is not a permutation of {n} channels.')
        inactive = [i for i in range(n) if i not in self.active_channels]
        if inactive and np.any(self.masks[inactive] > 0):
            raise DataValidationError('Inactive channels must be all-zero.')

    @property
    def num_channels(self):
        return self.masks.shape[0]

    @property
    def height(self):
        return self.masks.shape[1]

    @property
    def width(self):
        return self.masks.shape[2]

    @property
    def active_channels(self):
        """Slots that hold an instance, in slot order."""
        if self.permutation is None:
            return list(range(self.active_count))
        return [slot for slot, canonical in enumerate(self.permutation) if canonical < self.active_count]

    def active_flags(self):
        flags = np.zeros(self.num_channels, dtype=bool)
        flags[self.active_channels] = True
        return flags

    def is_binary(self):
        return bool(np.all((self.masks == 0) | (self.masks == 1)))

    def is_disjoint(self):
        return bool(np.all(self.masks.sum(axis=0) <= 1))

    def binarized(self, threshold=0.5):
        """Return a binary copy, resolving overlaps by argmax (lowest index wins ties)."""
        winner = np.argmax(self.masks, axis=0)
        best = np.take_along_axis(self.masks, winner[None], axis=0)[0]
        binary = np.zeros_like(self.masks)
        foreground = best >= threshold
        rows, cols = np.nonzero(foreground)
        binary[winner[rows, cols], rows, cols] = 1.0
        return InstanceMaskSet(binary, self.active_count, list(self.instance_ids), self.permutation)

    def to_index_map(self):
        """Encode as an H x W index image (0 = background, k = channel k - 1)."""
        if self.permutation is not None:
            raise DataValidationError('Shuffled mask sets cannot be encoded; restore the order first.')
        if not self.is_binary():
            raise DataValidationError('Only binarized masks can be encoded as an index image.')
        if not self.is_disjoint():
            raise DataValidationError('Mask channels overlap; an index image cannot represent them.')
        index = np.zeros((self.height, self.width), dtype=np.uint8)
        for channel in range(self.num_channels):
            index[self.masks[channel] > 0] = channel + 1
        return index

    @classmethod
    def from_index_map(cls, index_map, num_channels, active_count=None, instance_ids=None):
        """Decode an index image; pixel value k > 0 maps to channel k - 1."""
        index_map = np.asarray(index_map)
        if index_map.ndim != 2:
            raise DataValidationError(f'Index images must be 2-D, got {index_map.shape}.')
        highest = int(index_map.max()) if index_map.size else 0
        if highest > num_channels:
            raise DataValidationError(
                f'Mask index {highest} exceeds the channel count N={num_channels}.'
            )
        if active_count is None:
            active_count = highest
        if highest > active_count:
            raise DataValidationError(
                f'Mask index {highest} exceeds the instance count M={active_count}.'
            )
        masks = np.zeros((num_channels,) + index_map.shape, dtype=np.float32)
        for channel in range(active_count):
            masks[channel] = index_map == channel + 1
        return cls(masks, active_count, list(instance_ids or []))

    def permuted(self, permutation):
        """Move canonical slot ``permutation[i]`` into slot ``i``."""
        permutation = np.asarray(permutation)
        if self.permutation is None:
            composed = tuple(int(p) for p in permutation)
        else:
            composed = tuple(self.permutation[p] for p in permutation)
        if composed == tuple(range(self.num_channels)):
            composed = None
        return InstanceMaskSet(self.masks[permutation], self.active_count, list(self.instance_ids), composed)


@dataclass
class FlowField:
    """An H x W x 2 displacement field (pixels per frame)."""

    vectors: np.ndarray
    direction: str = 'forward'

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 3 or self.vectors.shape[2] != 2:
            raise DataValidationError(f'Flow vectors must be HxWx2, got {self.vectors.shape}.')
        if self.direction not in FLOW_DIRECTIONS:
            raise DataValidationError(f'Unknown flow direction {self.direction!r}.')
        if not np.all(np.isfinite(self.vectors)):
            raise DataValidationError('Flow fields must contain finite values only.')

    @property
    def height(self):
        return self.vectors.shape[0]

    @property
    def width(self):
        return self.vectors.shape[1]


class Box(NamedTuple):
    """Axis-aligned box, half-open pixel convention [x0, x1) x [y0, y1)."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def area(self):
        return max(self.x1 - self.x0, 0.0) * max(self.y1 - self.y0, 0.0)

    @property
    def diagonal(self):
        return float(np.hypot(self.x1 - self.x0, self.y1 - self.y0))

    def validate(self, width, height):
        if not (0 <= self.x0 <= self.x1 <= width and 0 <= self.y0 <= self.y1 <= height):
            raise DataValidationError(f'Box {tuple(self)} does not fit a {width}x{height} frame.')
        return self

    def clipped(self, width, height):
        x0 = min(max(self.x0, 0.0), width)
        y0 = min(max(self.y0, 0.0), height)
        return Box(x0, y0, min(max(self.x1, x0), width), min(max(self.y1, y0), height))


def box_iou(a, b):
    """Intersection over union of two boxes; two absent boxes count as a match."""
    if a is None or b is None:
        return 1.0 if a is None and b is None else 0.0
    w = min(a.x1, b.x1) - max(a.x0, b.x0)
    h = min(a.y1, b.y1) - max(a.y0, b.y0)
    inter = max(w, 0.0) * max(h, 0.0)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 1.0


def tight_box(mask):
    """Exact half-open bounding box of a binary mask, or None when empty."""
    rows = np.flatnonzero(np.any(mask > 0, axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(np.any(mask > 0, axis=0))
    return Box(float(cols[0]), float(rows[0]), float(cols[-1] + 1), float(rows[-1] + 1))


@dataclass
class BoxTube:
    """Per-frame boxes keyed by instance id; a missing key means not visible."""

    boxes: List[Dict[int, Box]]
    width: int
    height: int

    def __post_init__(self):
        self.boxes = [
            {int(instance_id): Box(*box).validate(self.width, self.height) for instance_id, box in frame.items()}
            for frame in self.boxes
        ]

    def __len__(self):
        return len(self.boxes)

    def box(self, frame_index, instance_id):
        return self.boxes[frame_index].get(instance_id)

    def truncated(self, num_frames):
        return BoxTube(self.boxes[:num_frames], self.width, self.height)

    @classmethod
    def from_masks(cls, mask_sets: Sequence[InstanceMaskSet]):
        """Tight boxes of every visible mask channel."""
        first = mask_sets[0]
        boxes = []
        for masks in mask_sets:
            frame = {}
            for channel, instance_id in enumerate(masks.instance_ids):
                box = tight_box(masks.masks[channel])
                if box is not None:
                    frame[instance_id] = box
            boxes.append(frame)
        return cls(boxes, first.width, first.height)


@dataclass
class VideoSequence:
    """
    Frames with per-frame instance masks, flows and box tubes.

    ``flows_fwd[t]`` maps frame t to t + 1; ``flows_bwd[t]`` lives on the grid
    of frame t + 1 and points back to frame t.
    """

    sequence_id: str
    frames: List[Frame]
    gt_masks: List[InstanceMaskSet]
    flows_fwd: List[FlowField]
    flows_bwd: List[FlowField]
    tubes: BoxTube
    category_labels: Dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        count = len(self.frames)
        if count < 2:
            raise DataValidationError(f'Sequence {self.sequence_id} needs at least 2 frames, got {count}.')
        if len(self.gt_masks) != count:
            raise DataValidationError(
                f'Sequence {self.sequence_id}: {len(self.gt_masks)} mask frames for {count} frames.'
            )
        for name, flows in (('flows_fwd', self.flows_fwd), ('flows_bwd', self.flows_bwd)):
            if len(flows) != count - 1:
                raise DataValidationError(
                    f'Sequence {self.sequence_id}: {name} has {len(flows)} fields, expected {count - 1}.'
                )
        if len(self.tubes) != count:
            raise DataValidationError(
                f'Sequence {self.sequence_id}: tubes cover {len(self.tubes)} frames, expected {count}.'
            )
        height, width = self.frames[0].height, self.frames[0].width
        shapes = {(f.height, f.width) for f in self.frames}
        shapes |= {(m.height, m.width) for m in self.gt_masks}
        shapes |= {(f.height, f.width) for f in self.flows_fwd + self.flows_bwd}
        if shapes != {(height, width)}:
            raise DataValidationError(f'Sequence {self.sequence_id} mixes frame sizes {sorted(shapes)}.')
        if {m.num_channels for m in self.gt_masks} != {self.num_channels}:
            raise DataValidationError(f'Sequence {self.sequence_id} mixes channel counts.')

    def __len__(self):
        return len(self.frames)

    @property
    def num_frames(self):
        return len(self.frames)

    @property
    def height(self):
        return self.frames[0].height

    @property
    def width(self):
        return self.frames[0].width

    @property
    def num_channels(self):
        return self.gt_masks[0].num_channels

    @property
    def active_count(self):
        return self.gt_masks[0].active_count

    @property
    def instance_ids(self):
        return list(self.gt_masks[0].instance_ids)

    def backward_flow(self, frame_index):
        """Flow on frame t pointing back to frame t - 1."""
        return self.flows_bwd[frame_index - 1]

    def forward_flow(self, frame_index):
        """Flow on frame t pointing to frame t + 1."""
        return self.flows_fwd[frame_index]

    def truncated(self, num_frames):
        """The first ``num_frames`` frames as a sequence of their own."""
        return VideoSequence(
            self.sequence_id,
            self.frames[:num_frames],
            self.gt_masks[:num_frames],
            self.flows_fwd[: num_frames - 1],
            self.flows_bwd[: num_frames - 1],
            self.tubes.truncated(num_frames),
            dict(self.category_labels),
        )

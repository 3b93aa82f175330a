"""
Seedable moving-shape videos with exact masks, flow and box tubes.

Every object is an analytic shape in its own local frame. Its pose at frame t
is ``center + velocity * t``, ``angle + rotation_rate * t`` and
``size * (1 + scale_rate) ** t``; a pixel belongs to the front-most shape whose
inside test passes at the pixel's local coordinates. Flow is the exact
displacement of that local point to its pose at the neighbouring frame, and
the background moves with a global camera pan.
"""

import dataclasses
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import DataValidationError
from .models import (
    BoxTube,
    FlowField,
    Frame,
    InstanceMaskSet,
    VideoSequence,
    check_spatial_size,
)

logger = logging.getLogger(__name__)

# P(count = k) for k = 1..6: mean 1.71, std 0.88, mode 1, max 6.
DEFAULT_INSTANCE_DISTRIBUTION = (0.50, 0.34, 0.12, 0.03, 0.007, 0.003)


def _regular_polygon(sides, rotation=0.0):
    apothem = np.cos(np.pi / sides)
    normals = [rotation + (2 * k + 1) * np.pi / sides for k in range(sides)]

    def inside(u, v):
        result = np.ones(np.shape(u), dtype=bool)
        for angle in normals:
            result &= u * np.cos(angle) + v * np.sin(angle) <= apothem
        return result

    return inside


def _square(u, v):
    return np.maximum(np.abs(u), np.abs(v)) <= 1.0


def _rectangle(u, v):
    return (np.abs(u) <= 1.0) & (np.abs(v) <= 0.55)


def _ellipse(u, v):
    return u ** 2 + (v / 0.6) ** 2 <= 1.0


def _circle(u, v):
    return u ** 2 + v ** 2 <= 1.0


def _dumbbell(u, v):
    bells = ((u - 0.6) ** 2 + v ** 2 <= 0.16) | ((u + 0.6) ** 2 + v ** 2 <= 0.16)
    return bells | ((np.abs(u) <= 0.6) & (np.abs(v) <= 0.15))


def _star(u, v):
    radius = np.hypot(u, v)
    return radius <= 0.55 + 0.45 * np.abs(np.cos(2.5 * np.arctan2(v, u)))


def _cross(u, v):
    return ((np.abs(u) <= 0.35) & (np.abs(v) <= 1.0)) | ((np.abs(u) <= 1.0) & (np.abs(v) <= 0.35))


def _ring(u, v):
    radius_sq = u ** 2 + v ** 2
    return (radius_sq <= 1.0) & (radius_sq >= 0.3)


@dataclass(frozen=True)
class ShapeFamily:
    inside: object
    color: Tuple[float, float, float]
    texture: str


SHAPE_FAMILIES = {
    'square': ShapeFamily(_square, (0.85, 0.25, 0.2), 'solid'),
    'rectangle': ShapeFamily(_rectangle, (0.2, 0.6, 0.85), 'stripes'),
    'triangle': ShapeFamily(_regular_polygon(3, np.pi / 2), (0.9, 0.8, 0.2), 'checker'),
    'pentagon': ShapeFamily(_regular_polygon(5, np.pi / 2), (0.3, 0.8, 0.35), 'dots'),
    'hexagon': ShapeFamily(_regular_polygon(6), (0.65, 0.3, 0.8), 'stripes'),
    'ellipse': ShapeFamily(_ellipse, (0.95, 0.55, 0.15), 'rings'),
    'circle': ShapeFamily(_circle, (0.15, 0.75, 0.75), 'solid'),
    'dumbbell': ShapeFamily(_dumbbell, (0.55, 0.55, 0.6), 'checker'),
    'star': ShapeFamily(_star, (0.95, 0.35, 0.6), 'dots'),
    'cross': ShapeFamily(_cross, (0.4, 0.35, 0.9), 'rings'),
    'ring': ShapeFamily(_ring, (0.5, 0.85, 0.2), 'stripes'),
}

DEFAULT_SHAPE_CATALOG = tuple(SHAPE_FAMILIES)
DEFAULT_UNSEEN_CATEGORIES = ('star', 'cross', 'ring')


def _texture(kind, u, v):
    if kind == 'stripes':
        return 0.5 + 0.5 * np.sign(np.sin(4.0 * np.pi * u))
    if kind == 'checker':
        return ((np.floor(2.5 * u) + np.floor(2.5 * v)) % 2).astype(np.float64)
    if kind == 'dots':
        return (np.sin(6.0 * u) * np.sin(6.0 * v) > 0.3).astype(np.float64)
    if kind == 'rings':
        return 0.5 + 0.5 * np.cos(8.0 * np.hypot(u, v))
    return np.ones_like(u)


@dataclass(frozen=True)
class MotionModel:
    """Per-instance motion ranges and the global camera pan (px/frame)."""

    max_speed: float = 1.5
    max_rotation: float = 0.05
    max_scale_rate: float = 0.02
    camera_pan: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.max_speed < 0 or self.max_rotation < 0 or self.max_scale_rate < 0:
            raise DataValidationError('Motion ranges must be nonnegative.')
        if not -1.0 < self.max_scale_rate < 1.0:
            raise DataValidationError('max_scale_rate must lie in (-1, 1).')


@dataclass(frozen=True)
class InstanceSpec:
    """An explicitly placed object; ``size`` is the local unit in pixels."""

    category: str
    center: Tuple[float, float]
    size: float
    velocity: Tuple[float, float] = (0.0, 0.0)
    angle: float = 0.0
    rotation_rate: float = 0.0
    scale_rate: float = 0.0

    def pose(self, frame_index):
        center = (
            self.center[0] + self.velocity[0] * frame_index,
            self.center[1] + self.velocity[1] * frame_index,
        )
        return center, self.angle + self.rotation_rate * frame_index, self.size * (1.0 + self.scale_rate) ** frame_index


@dataclass(frozen=True)
class SceneSpec:
    """Everything that determines a synthetic video; generation is a pure function of it."""

    seed: int = 0
    num_frames: int = 16
    height: int = 64
    width: int = 96
    num_channels: int = 6
    instance_count_distribution: Tuple[float, ...] = DEFAULT_INSTANCE_DISTRIBUTION
    instance_count: Optional[int] = None
    shape_catalog: Tuple[str, ...] = DEFAULT_SHAPE_CATALOG
    unseen_categories: Tuple[str, ...] = DEFAULT_UNSEEN_CATEGORIES
    motion: MotionModel = field(default_factory=MotionModel)
    occluder_probability: float = 0.1
    size_range: Tuple[float, float] = (6.0, 13.0)
    instances: Tuple[InstanceSpec, ...] = ()

    def __post_init__(self):
        if self.num_frames < 2:
            raise DataValidationError('A scene needs at least 2 frames.')
        check_spatial_size(self.height, self.width)
        if self.num_channels < 1:
            raise DataValidationError('num_channels must be positive.')
        if self.instance_count is not None and not 1 <= self.instance_count <= self.num_channels:
            raise DataValidationError(
                f'instance_count={self.instance_count} outside [1, N={self.num_channels}].'
            )
        if len(self.instances) > self.num_channels:
            raise DataValidationError(
                f'{len(self.instances)} explicit instances exceed N={self.num_channels}.'
            )
        weights = np.asarray(self.instance_count_distribution, dtype=np.float64)
        if weights.ndim != 1 or weights.size == 0 or np.any(weights < 0) or weights[: self.num_channels].sum() <= 0:
            raise DataValidationError('instance_count_distribution must be a nonnegative, non-empty weight list.')
        unknown = set(self.shape_catalog) - set(SHAPE_FAMILIES)
        unknown |= {i.category for i in self.instances} - set(SHAPE_FAMILIES)
        if unknown:
            raise DataValidationError(f'Unknown shape categories: {sorted(unknown)}.')
        if set(self.unseen_categories) - set(self.shape_catalog):
            raise DataValidationError('unseen_categories must be a subset of shape_catalog.')
        if not 0.0 <= self.occluder_probability <= 1.0:
            raise DataValidationError('occluder_probability must lie in [0, 1].')
        low, high = self.size_range
        if not 0 < low <= high:
            raise DataValidationError('size_range must satisfy 0 < low <= high.')

    @property
    def training_categories(self):
        return tuple(c for c in self.shape_catalog if c not in self.unseen_categories)

    def count_probabilities(self):
        """Instance-count distribution over 1..N, truncated to N and renormalized."""
        weights = np.asarray(self.instance_count_distribution[: self.num_channels], dtype=np.float64)
        return weights / weights.sum()


@dataclass
class SceneSplit:
    """Train / seen-validation / unseen-validation scene sets."""

    train: List[VideoSequence]
    val_seen: List[VideoSequence]
    val_unseen: List[VideoSequence]

    def split_labels(self):
        labels = {seq.sequence_id: 'seen' for seq in self.val_seen}
        labels.update({seq.sequence_id: 'unseen' for seq in self.val_unseen})
        return labels

    @property
    def validation(self):
        return self.val_seen + self.val_unseen


def scene_id(seed):
    return f'scene{seed:06d}'


def _sample_instances(spec, rng, categories):
    if spec.instances:
        return list(spec.instances)
    if spec.instance_count is not None:
        count = spec.instance_count
    else:
        probabilities = spec.count_probabilities()
        count = int(rng.choice(np.arange(1, probabilities.size + 1), p=probabilities))
    motion = spec.motion
    instances = []
    for _ in range(count):
        size = float(rng.uniform(*spec.size_range))
        margin_x = min(size, spec.width / 2 - 1)
        margin_y = min(size, spec.height / 2 - 1)
        instances.append(
            InstanceSpec(
                category=str(rng.choice(categories)),
                center=(float(rng.uniform(margin_x, spec.width - margin_x)),
                        float(rng.uniform(margin_y, spec.height - margin_y))),
                size=size,
                velocity=tuple(float(x) for x in rng.uniform(-motion.max_speed, motion.max_speed, 2)),
                angle=float(rng.uniform(0.0, 2.0 * np.pi)),
                rotation_rate=float(rng.uniform(-motion.max_rotation, motion.max_rotation)),
                scale_rate=float(rng.uniform(-motion.max_scale_rate, motion.max_scale_rate)),
            )
        )
    return instances


def _sample_occluder(spec, rng):
    size = float(rng.uniform(*spec.size_range))
    from_left = bool(rng.random() < 0.5)
    speed = 1.2 * (spec.width + 2 * size) / max(spec.num_frames - 1, 1)
    return InstanceSpec(
        category=str(rng.choice(spec.shape_catalog)),
        center=(-size if from_left else spec.width + size, float(rng.uniform(0, spec.height))),
        size=size,
        velocity=(speed if from_left else -speed, float(rng.uniform(-0.5, 0.5))),
        angle=float(rng.uniform(0.0, 2.0 * np.pi)),
    )


def _local_coordinates(obj, frame_index, xx, yy):
    (cx, cy), angle, scale = obj.pose(frame_index)
    dx, dy = xx - cx, yy - cy
    cos, sin = np.cos(angle), np.sin(angle)
    return (cos * dx + sin * dy) / scale, (-sin * dx + cos * dy) / scale


def _world_coordinates(obj, frame_index, u, v):
    (cx, cy), angle, scale = obj.pose(frame_index)
    cos, sin = np.cos(angle), np.sin(angle)
    return cx + scale * (cos * u - sin * v), cy + scale * (sin * u + cos * v)


def _background(spec, rng):
    phases = rng.uniform(0, 2 * np.pi, 3)
    freqs = rng.uniform(0.05, 0.2, (3, 2))
    tint = rng.uniform(0.3, 0.6, 3)

    def render(xx, yy):
        image = np.empty(xx.shape + (3,), dtype=np.float64)
        for c in range(3):
            wave = np.sin(freqs[c, 0] * xx + phases[c]) * np.cos(freqs[c, 1] * yy + phases[c])
            image[..., c] = tint[c] + 0.15 * wave
        return image

    return render


def generate_scene(spec, categories=None):
    """
    Render one synthetic video.

    ``categories`` restricts the sampled shape families; by default only the
    training categories (catalog minus unseen) are used. Explicit
    ``spec.instances`` bypass sampling entirely.
    """
    rng = np.random.default_rng(spec.seed)
    categories = tuple(categories) if categories is not None else spec.training_categories
    if not categories and not spec.instances:
        raise DataValidationError('No shape categories left to sample from.')
    instances = _sample_instances(spec, rng, categories)
    if len(instances) > spec.num_channels:
        raise DataValidationError(f'{len(instances)} instances exceed N={spec.num_channels}.')
    depth = rng.permutation(len(instances))
    objects = [instances[i] for i in depth]
    owners = [int(i) for i in depth]
    if not spec.instances and rng.random() < spec.occluder_probability:
        objects.append(_sample_occluder(spec, rng))
        owners.append(-2)
    colors = [
        np.clip(np.asarray(SHAPE_FAMILIES[o.category].color) + rng.uniform(-0.08, 0.08, 3), 0.0, 1.0)
        for o in objects
    ]
    background = _background(spec, rng)
    pan = np.asarray(spec.motion.camera_pan, dtype=np.float64)

    height, width, count = spec.height, spec.width, len(instances)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    frames, masks, flows_fwd, flows_bwd = [], [], [], []
    for t in range(spec.num_frames):
        image = background(xx - pan[0] * t, yy - pan[1] * t)
        label = np.full((height, width), -1, dtype=np.int64)
        fwd = np.broadcast_to(pan, (height, width, 2)).copy()
        bwd = -fwd
        for obj, owner, color in zip(objects, owners, colors):
            u, v = _local_coordinates(obj, t, xx, yy)
            inside = SHAPE_FAMILIES[obj.category].inside(u, v)
            if not inside.any():
                continue
            shade = 0.6 + 0.4 * _texture(SHAPE_FAMILIES[obj.category].texture, u, v)
            image[inside] = (color[None, :] * shade[inside][:, None])
            label[inside] = owner
            x_next, y_next = _world_coordinates(obj, t + 1, u[inside], v[inside])
            fwd[inside] = np.stack([x_next - xx[inside], y_next - yy[inside]], axis=-1)
            x_prev, y_prev = _world_coordinates(obj, t - 1, u[inside], v[inside])
            bwd[inside] = np.stack([x_prev - xx[inside], y_prev - yy[inside]], axis=-1)
        pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0
        frames.append(Frame(pixels.astype(np.float32), t))
        channels = np.zeros((spec.num_channels, height, width), dtype=np.float32)
        for instance_index in range(count):
            channels[instance_index] = label == instance_index
        masks.append(InstanceMaskSet(channels, count, list(range(1, count + 1))))
        if t < spec.num_frames - 1:
            flows_fwd.append(FlowField(fwd, 'forward'))
        if t > 0:
            flows_bwd.append(FlowField(bwd, 'backward'))

    categories_by_id = {i + 1: instances[i].category for i in range(count)}
    logger.debug('Generated %s with %d instances', scene_id(spec.seed), count)
    return VideoSequence(
        scene_id(spec.seed),
        frames,
        masks,
        flows_fwd,
        flows_bwd,
        BoxTube.from_masks(masks),
        categories_by_id,
    )


def generate_split(spec, train_fraction, num_scenes=100, workers=1):
    """
    Generate ``num_scenes`` scenes with seeds ``spec.seed + i``.

    The first ``round(train_fraction * num_scenes)`` seeds are training
    scenes; the remaining seeds alternate between seen-category and
    unseen-category validation scenes.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataValidationError('train_fraction must lie strictly between 0 and 1.')
    if not spec.unseen_categories:
        raise DataValidationError('The unseen category catalog is empty.')
    if not spec.training_categories:
        raise DataValidationError('Every category is unseen; no trainable category remains.')
    if num_scenes < 1:
        raise DataValidationError('num_scenes must be positive.')
    num_train = int(round(train_fraction * num_scenes))
    jobs = []
    for index in range(num_scenes):
        scene_spec = dataclasses.replace(spec, seed=spec.seed + index)
        if index < num_train:
            jobs.append(('train', scene_spec, spec.training_categories))
        elif (index - num_train) % 2 == 0:
            jobs.append(('val_seen', scene_spec, spec.training_categories))
        else:
            jobs.append(('val_unseen', scene_spec, spec.unseen_categories))

    def run(job):
        return job[0], generate_scene(job[1], job[2])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    split = SceneSplit([], [], [])
    for name, seq in results:
        getattr(split, name).append(seq)
    logger.info(
        'Generated split: %d train, %d val_seen, %d val_unseen',
        len(split.train), len(split.val_seen), len(split.val_unseen),
    )
    return split

"""
Optimization loop and the three-phase cue curriculum.

Phase 1 trains on tight ground-truth boxes, phase 2 swaps them for drifting
tracker-like boxes, phase 3 walks through growing frame horizons. The short
term attention comes from perturbed ground truth, except on the final horizon
where the model's own rollouts are warped in.
"""

import json
import logging
import math
import tempfile
import threading
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional, Tuple

import cv2
import numpy as np
import torch

from .cues import (
    AttentionStack,
    CueConfig,
    assemble_input,
    box_noise,
    encode_flow,
    instance_shuffle,
    lta_from_boxes,
    perturb_sta,
    sta_from_prediction,
)
from .evaluation import evaluate_dataset
from .exceptions import DataValidationError, NonFiniteLossError
from .inference import segment_dataset, segment_sequence, segment_sequence_single_instance
from .losses import LOSS_NAMES, LossConfig, build_loss
from .models import FlowField, InstanceMaskSet, check_spatial_size
from .network import load_checkpoint, save_checkpoint
from .tracking import GroundTruthTubeProvider, NoisyTubeProvider

logger = logging.getLogger(__name__)

FULL_SCALE_ANNEAL_EVERY = 45000
DEFAULT_HORIZONS = ((2, 3), (4, 3), (8, 3), (14, 3))
STA_SOURCES = ('perturbed', 'rollout', 'none')


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    anneal_gamma: float = 0.1
    anneal_every: int = 3000
    batch_size: int = 8
    height: int = 64
    width: int = 96
    seed: int = 0
    loss: str = 'wid'
    max_iterations: int = 5000
    patience: Optional[int] = None
    validate_every: int = 1
    log_every: int = 10
    grad_clip: Optional[float] = None
    backward_flow_probability: float = 0.5
    instance_shuffle: bool = True
    instance_mode: str = 'multi'
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    scale_range: Tuple[float, float] = (1.0, 1.25)
    cues: CueConfig = field(default_factory=CueConfig)

    def __post_init__(self):
        if not self.lr0 > 0:
            raise DataValidationError('lr0 must be positive.')
        if not 0.0 < self.anneal_gamma <= 1.0:
            raise DataValidationError('anneal_gamma must lie in (0, 1].')
        if self.anneal_every < 1 or self.batch_size < 1 or self.max_iterations < 1:
            raise DataValidationError('anneal_every, batch_size and max_iterations must be positive.')
        check_spatial_size(self.height, self.width)
        if self.loss not in LOSS_NAMES:
            raise DataValidationError(f'Unknown loss {self.loss!r}; choose from {LOSS_NAMES}.')
        if self.patience is not None and self.patience < 1:
            raise DataValidationError('patience must be positive when set.')
        if not 0.0 <= self.backward_flow_probability <= 1.0:
            raise DataValidationError('backward_flow_probability must lie in [0, 1].')
        if self.instance_mode not in ('multi', 'single'):
            raise DataValidationError(f'Unknown instance mode {self.instance_mode!r}.')
        low, high = self.scale_range
        if not 0.0 < low <= high:
            raise DataValidationError('scale_range must satisfy 0 < low <= high.')
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise DataValidationError('grad_clip must be positive when set.')


@dataclass(frozen=True)
class CurriculumSchedule:
    phase1_epochs: int = 2
    phase2_epochs: int = 2
    horizons: Tuple[Tuple[int, int], ...] = DEFAULT_HORIZONS
    phase3_enabled: bool = True
    rollout_final_horizon: bool = True
    drift_rate: float = 0.05
    dropout: float = 0.02

    def __post_init__(self):
        if self.phase1_epochs < 0 or self.phase2_epochs < 0:
            raise DataValidationError('Phase epochs must be nonnegative.')
        limits = [h for h, _ in self.horizons]
        if any(h < 2 for h in limits) or any(b <= a for a, b in zip(limits, limits[1:])):
            raise DataValidationError(f'Horizons must be >= 2 and strictly increasing, got {limits}.')
        if any(e < 0 for _, e in self.horizons):
            raise DataValidationError('Horizon epochs must be nonnegative.')
        if not (0.0 <= self.drift_rate <= 1.0 and 0.0 <= self.dropout <= 1.0):
            raise DataValidationError('drift_rate and dropout must lie in [0, 1].')


@dataclass(frozen=True)
class Phase:
    name: str
    epochs: int
    horizon: Optional[int] = None
    noisy_lta: bool = False
    sta_source: str = 'perturbed'
    augment: bool = False

    def __post_init__(self):
        if self.sta_source not in STA_SOURCES:
            raise DataValidationError(f'Unknown STA source {self.sta_source!r}.')


def train_config_from_dict(data):
    data = dict(data)
    data['cues'] = CueConfig(**data.get('cues', {}))
    for key in ('betas', 'scale_range'):
        if key in data:
            data[key] = tuple(data[key])
    return TrainConfig(**data)


def lr_at(iteration, cfg):
    """``lr0 * gamma ** floor(iteration / anneal_every)``."""
    if iteration < 0:
        raise DataValidationError('iteration must be nonnegative.')
    return cfg.lr0 * cfg.anneal_gamma ** (iteration // cfg.anneal_every)


def phase_plan(schedule):
    """
    Expand a schedule into phases.

    Without phase 3 the network never sees short-term attention, which is the
    LTA-only configuration.
    """
    sta = 'perturbed' if schedule.phase3_enabled else 'none'
    phases = [
        Phase('ideal_lta', schedule.phase1_epochs, None, False, sta),
        Phase('noisy_lta', schedule.phase2_epochs, None, True, sta),
    ]
    if schedule.phase3_enabled:
        last = len(schedule.horizons) - 1
        for index, (horizon, epochs) in enumerate(schedule.horizons):
            final = index == last
            source = 'rollout' if final and schedule.rollout_final_horizon else 'perturbed'
            phases.append(Phase(f'horizon_{horizon}', epochs, horizon, True, source, final))
    return [phase for phase in phases if phase.epochs > 0]


# Samples

@dataclass
class TrainingBatch:
    inputs: np.ndarray
    targets: np.ndarray
    active: np.ndarray
    sequence_ids: List[str] = field(default_factory=list)
    frame_indices: List[int] = field(default_factory=list)

    def __len__(self):
        return self.inputs.shape[0]


def augment_scale_crop(pixels, vectors, maps, rng, scale_range=(1.0, 1.25)):
    """
    Rescale frame, flow and per-channel maps by one random factor and crop back.

    Flow vectors are stretched with the image; maps use nearest-neighbour so
    binary masks and boxes stay binary.
    """
    height, width = pixels.shape[:2]
    scale = float(rng.uniform(*scale_range))
    scaled_h, scaled_w = int(round(height * scale)), int(round(width * scale))
    if scaled_h <= height and scaled_w <= width:
        return pixels, vectors, maps
    y0 = int(rng.integers(0, scaled_h - height + 1))
    x0 = int(rng.integers(0, scaled_w - width + 1))
    crop = np.s_[y0 : y0 + height, x0 : x0 + width]
    size = (scaled_w, scaled_h)
    pixels = np.clip(cv2.resize(pixels, size, interpolation=cv2.INTER_LINEAR)[crop], 0.0, 1.0)
    vectors = cv2.resize(vectors, size, interpolation=cv2.INTER_LINEAR)[crop]
    vectors = vectors * np.array([scaled_w / width, scaled_h / height], dtype=np.float32)
    maps = np.stack([cv2.resize(m, size, interpolation=cv2.INTER_NEAREST)[crop] for m in maps])
    return pixels.astype(np.float32), vectors.astype(np.float32), maps.astype(np.float32)


def _sta_maps(seq, t, rng, phase, rollout):
    count, height, width = seq.num_channels, seq.height, seq.width
    if phase.sta_source == 'none':
        return np.zeros((count, height, width), dtype=np.float32)
    if phase.sta_source == 'rollout':
        if rollout is None:
            raise DataValidationError(f'{seq.sequence_id}: rollout STA requested without a rollout.')
        return sta_from_prediction(rollout[t - 1], seq.backward_flow(t))
    sta = np.zeros((count, height, width), dtype=np.float32)
    for channel in range(seq.active_count):
        neighbours = {-1: seq.gt_masks[t - 1].masks[channel]}
        if t + 1 < seq.num_frames:
            neighbours[1] = seq.gt_masks[t + 1].masks[channel]
        sta[channel] = perturb_sta(seq.gt_masks[t].masks[channel], rng, neighbours)
    return sta


def build_sample(seq, rng, cfg, phase=None, schedule=None, rollout=None):
    """
    One (input, target, active) triple from a random frame of ``seq``.

    Returns a ``(ModelInput, targets, active_flags)`` tuple and the frame index.
    """
    phase = phase or Phase('ideal_lta', 1)
    schedule = schedule or CurriculumSchedule()
    if (seq.height, seq.width) != (cfg.height, cfg.width):
        raise DataValidationError(
            f'{seq.sequence_id} is {seq.height}x{seq.width}, training runs at {cfg.height}x{cfg.width}.'
        )
    last = seq.num_frames - 1 if phase.horizon is None else min(phase.horizon, seq.num_frames) - 1
    t = int(rng.integers(1, last + 1))
    if t == seq.num_frames - 1 or rng.random() < cfg.backward_flow_probability:
        flow = seq.backward_flow(t)
    else:
        flow = seq.forward_flow(t)
    tubes = box_noise(seq.tubes, rng, schedule.drift_rate, schedule.dropout) if phase.noisy_lta else seq.tubes
    lta = lta_from_boxes(tubes, t, seq.num_channels, seq.instance_ids)
    sta = _sta_maps(seq, t, rng, phase, rollout)
    targets = seq.gt_masks[t].masks
    pixels, vectors = seq.frames[t].pixels, flow.vectors
    if phase.augment and cfg.scale_range[1] > 1.0:
        count = seq.num_channels
        pixels, vectors, maps = augment_scale_crop(
            pixels, vectors, np.concatenate([lta, sta, targets]), rng, cfg.scale_range
        )
        lta, sta, targets = maps[:count], maps[count : 2 * count], maps[2 * count :]
    flow_cue = encode_flow(FlowField(vectors, flow.direction), cfg.cues.flow_encoding)

    if cfg.instance_mode == 'single':
        channel = int(rng.integers(seq.active_count)) if seq.active_count else 0
        one = np.s_[channel : channel + 1]
        model_input = assemble_input(pixels, flow_cue, lta[one], sta[one], cfg.cues)
        return (model_input, targets[one].copy(), np.array([seq.active_count > 0])), t

    target_set = InstanceMaskSet(targets, seq.active_count, seq.instance_ids)
    attn = AttentionStack(lta, sta)
    if cfg.instance_shuffle:
        attn, target_set, _ = instance_shuffle(attn, target_set, rng)
    model_input = assemble_input(pixels, flow_cue, attn.lta, attn.sta, cfg.cues)
    return (model_input, target_set.masks, target_set.active_flags()), t


def build_batch(sequences, rng, cfg, phase=None, schedule=None, rollouts=None):
    rollouts = rollouts or {}
    inputs, targets, active, frame_indices = [], [], [], []
    for seq in sequences:
        (model_input, target, flags), t = build_sample(
            seq, rng, cfg, phase, schedule, rollouts.get(seq.sequence_id)
        )
        inputs.append(model_input.tensor)
        targets.append(target)
        active.append(flags)
        frame_indices.append(t)
    return TrainingBatch(
        np.stack(inputs), np.stack(targets).astype(np.float32), np.stack(active),
        [seq.sequence_id for seq in sequences], frame_indices,
    )


# Optimization

def _dump_batch(batch, dump_dir, iteration, reason):
    dump_dir = Path(dump_dir or tempfile.gettempdir())
    dump_dir.mkdir(parents=True, exist_ok=True)
    path = dump_dir / f'nonfinite_{iteration:06d}.npz'
    np.savez_compressed(
        path, inputs=batch.inputs, targets=batch.targets, active=batch.active,
        sequence_ids=np.array(batch.sequence_ids), frame_indices=np.array(batch.frame_indices),
    )
    logger.error('%s at iteration %d; batch dumped to %s', reason, iteration, path)
    return path


def train_step(batch, model, optimizer, cfg, loss_cfg=None, scheduler=None, iteration=0, dump_dir=None, device=None):
    """
    One Adam update on ``batch``; returns the loss value.

    Non-finite inputs abort before the forward pass, a non-finite loss aborts
    before the update; both dump the batch.
    """
    if not (np.all(np.isfinite(batch.inputs)) and np.all(np.isfinite(batch.targets))):
        path = _dump_batch(batch, dump_dir, iteration, 'Non-finite input')
        raise NonFiniteLossError(f'Batch at iteration {iteration} holds non-finite values.', path)
    loss_fn = build_loss(cfg.loss)
    inputs = torch.from_numpy(batch.inputs)
    targets = torch.from_numpy(batch.targets)
    active = torch.from_numpy(batch.active)
    if device is not None:
        inputs, targets, active = inputs.to(device), targets.to(device), active.to(device)
    model.train()
    optimizer.zero_grad()
    loss = loss_fn(torch.sigmoid(model(inputs)), targets, loss_cfg or LossConfig(), active)
    if not torch.isfinite(loss):
        path = _dump_batch(batch, dump_dir, iteration, 'Non-finite loss')
        raise NonFiniteLossError(f'Loss became {loss.item()} at iteration {iteration}.', path)
    loss.backward()
    if cfg.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    optimizer.step()
    if scheduler is not None:
        scheduler.step()
    return float(loss.item())


class MetricsLog:
    """Append-only newline-delimited JSON records, safe to share between threads."""

    FIELDS = ('iteration', 'phase', 'loss', 'lr', 'val_J_seen', 'val_J_unseen')

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records = []
        self._lock = threading.Lock()
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, **values):
        record = {key: values.get(key) for key in self.FIELDS}
        with self._lock:
            self.records.append(record)
            if self.path:
                with self.path.open('a') as handle:
                    handle.write(json.dumps(record) + '\n')
        return record


class Trainer:
    """Holds the model, Adam, the step schedule and the sampling rng."""

    def __init__(self, model, cfg=None, loss_cfg=None, output_dir=None, metrics=None, device=None):
        self.cfg = cfg or TrainConfig()
        self.loss_cfg = loss_cfg or LossConfig()
        self.model = model if device is None else model.to(device)
        self.device = device
        self.output_dir = Path(output_dir) if output_dir else None
        self.metrics = metrics or MetricsLog()
        self.rng = np.random.default_rng(self.cfg.seed)
        self.optimizer = torch.optim.Adam(
            self.model.parameters(), lr=self.cfg.lr0, betas=tuple(self.cfg.betas), eps=self.cfg.adam_eps
        )
        gamma, every = self.cfg.anneal_gamma, self.cfg.anneal_every
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(self.optimizer, lambda it: gamma ** (it // every))
        self.iteration = 0
        self.cursor = None

    @property
    def lr(self):
        return self.optimizer.param_groups[0]['lr']

    def step(self, batch, phase_name=''):
        loss = train_step(
            batch, self.model, self.optimizer, self.cfg, self.loss_cfg, self.scheduler,
            self.iteration, self.output_dir, self.device,
        )
        self.iteration += 1
        if self.iteration % self.cfg.log_every == 0:
            logger.info('iter %d phase %s loss %.5f lr %.2e', self.iteration, phase_name, loss, self.lr)
            self.metrics.append(iteration=self.iteration, phase=phase_name, loss=loss, lr=self.lr)
        return loss

    def save(self, path, extra=None):
        payload = {
            'rng': self.rng.bit_generator.state,
            'train': asdict(self.cfg),
            'cues': asdict(self.cfg.cues),
            'instance_mode': self.cfg.instance_mode,
        }
        payload.update(extra or {})
        return save_checkpoint(path, self.model, self.optimizer, self.scheduler, self.iteration, payload)

    @classmethod
    def resume(cls, path, cfg=None, loss_cfg=None, output_dir=None, metrics=None, device=None):
        """
        Rebuild a trainer from a checkpoint, including optimizer, schedule and rng state.

        Without ``cfg`` the stored training config is used. A curriculum
        cursor in the checkpoint is kept on ``trainer.cursor`` for
        ``run_curriculum`` to continue from.
        """
        model, payload = load_checkpoint(path)
        extra = payload.get('extra', {})
        if cfg is None and extra.get('train'):
            cfg = train_config_from_dict(extra['train'])
        trainer = cls(model, cfg, loss_cfg, output_dir, metrics, device)
        if payload.get('optimizer'):
            trainer.optimizer.load_state_dict(payload['optimizer'])
        if payload.get('scheduler'):
            trainer.scheduler.load_state_dict(payload['scheduler'])
        trainer.iteration = payload['iteration']
        if extra.get('rng'):
            trainer.rng.bit_generator.state = extra['rng']
        if extra.get('curriculum'):
            trainer.cursor = CurriculumCursor.from_state(extra['curriculum'])
        logger.info('Resumed training from %s at iteration %d', path, trainer.iteration)
        return trainer


# Curriculum

@dataclass
class CurriculumResult:
    model: torch.nn.Module
    records: List[dict]
    phase_scores: dict
    iterations: int
    stopped_early: bool = False


def _phase_cues(cfg, phase):
    return cfg.cues.without_sta() if phase.sta_source == 'none' else cfg.cues


def _tube_provider(phase, schedule, seed):
    if phase.noisy_lta:
        return NoisyTubeProvider(schedule.drift_rate, schedule.dropout, seed)
    return GroundTruthTubeProvider()


def compute_rollouts(model, sequences, horizon, cfg, schedule, device=None):
    """Model predictions over the first ``horizon`` frames of every sequence."""
    segment = segment_sequence if cfg.instance_mode == 'multi' else segment_sequence_single_instance
    provider = NoisyTubeProvider(schedule.drift_rate, schedule.dropout, cfg.seed)
    rollouts = {}
    for seq in sequences:
        clipped = seq.truncated(min(horizon, seq.num_frames))
        rollouts[seq.sequence_id] = segment(clipped, model, None, provider, 0.5, cfg.cues, device)
    return rollouts


def validate(model, sequences, split_labels, cfg, phase, schedule, device=None):
    """Validation J per split under the cues of ``phase``."""
    predictions = segment_dataset(
        sequences, model, None, _tube_provider(phase, schedule, cfg.seed), 0.5,
        _phase_cues(cfg, phase), cfg.instance_mode, device=device,
    )
    report = evaluate_dataset(predictions, sequences, split_labels, compute_boundary=False)
    return report.J_seen, report.J_unseen


def _score(j_seen, j_unseen):
    values = [v for v in (j_seen, j_unseen) if v is not None]
    return float(np.mean(values)) if values else None


@dataclass
class CurriculumCursor:
    """Where a curriculum run stands; stored in every checkpoint it writes."""

    phase_index: int = 0
    epoch: int = 0
    offset: int = 0
    order: Optional[List[int]] = None
    rollouts: Optional[dict] = None
    losses: List[float] = field(default_factory=list)
    best: Optional[float] = None
    stale: int = 0
    phase_scores: dict = field(default_factory=dict)
    train_size: Optional[int] = None

    def state_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_state(cls, state):
        return cls(**state)

    def snapshot(self):
        return replace(self, losses=list(self.losses), phase_scores=dict(self.phase_scores))

    def advanced(self, phase_epochs):
        """The cursor at the start of the next epoch, or of the next phase after the last one."""
        if self.epoch + 1 < phase_epochs:
            nxt = replace(self, epoch=self.epoch + 1)
        else:
            nxt = replace(self, phase_index=self.phase_index + 1, epoch=0)
        return replace(nxt, offset=0, order=None, rollouts=None, losses=[], phase_scores=dict(self.phase_scores))


def run_curriculum(train, model, cfg=None, schedule=None, loss_cfg=None, validation=None, split_labels=None,
                   output_dir=None, trainer=None, device=None):
    """
    Train ``model`` through every phase of ``schedule``.

    One epoch visits each training sequence once, ``batch_size`` sequences per
    step. Validation runs every ``validate_every`` epochs and at the end of
    each phase; ``patience`` validations without improvement stop training.

    A checkpoint is written after every epoch and whenever training stops. A
    trainer rebuilt with ``Trainer.resume`` carries the stored cursor and
    continues from the exact batch where the earlier run stopped.
    """
    cfg = cfg or TrainConfig()
    schedule = schedule or CurriculumSchedule()
    train = list(train)
    if not train:
        raise DataValidationError('The training set is empty.')
    expected = 1 if cfg.instance_mode == 'single' else train[0].num_channels
    if model.num_channels != expected:
        raise DataValidationError(f'Model has {model.num_channels} channels, training needs {expected}.')
    output_dir = Path(output_dir) if output_dir else None
    metrics = MetricsLog(output_dir / 'metrics.ndjson' if output_dir else None)
    trainer = trainer or Trainer(model, cfg, loss_cfg, output_dir, metrics, device)
    trainer.metrics = metrics
    validation = list(validation or [])
    plan = phase_plan(schedule)
    cursor = trainer.cursor.snapshot() if trainer.cursor else CurriculumCursor()
    if cursor.train_size not in (None, len(train)):
        raise DataValidationError(f'Checkpoint cursor covers {cursor.train_size} training sequences, got {len(train)}.')
    cursor.train_size = len(train)
    if cursor.phase_index > 0 or cursor.epoch > 0 or cursor.offset > 0:
        logger.info('Continuing curriculum at phase %d, epoch %d, offset %d',
                    cursor.phase_index, cursor.epoch, cursor.offset)
    stopped = trainer.iteration >= cfg.max_iterations
    phase_scores = dict(cursor.phase_scores)
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)

    while not stopped and cursor.phase_index < len(plan):
        phase = plan[cursor.phase_index]
        phase_cfg = replace(cfg, cues=_phase_cues(cfg, phase))
        if cursor.order is None:
            if cursor.epoch == 0:
                logger.info('Phase %s: %d epochs, horizon %s, STA %s',
                            phase.name, phase.epochs, phase.horizon, phase.sta_source)
            if phase.sta_source == 'rollout':
                cursor.rollouts = compute_rollouts(trainer.model, train, phase.horizon, cfg, schedule, device)
            cursor.order = [int(i) for i in trainer.rng.permutation(len(train))]
        while cursor.offset < len(train):
            chunk = [train[i] for i in cursor.order[cursor.offset : cursor.offset + cfg.batch_size]]
            batch = build_batch(chunk, trainer.rng, phase_cfg, phase, schedule, cursor.rollouts)
            cursor.losses.append(trainer.step(batch, phase.name))
            cursor.offset += cfg.batch_size
            if trainer.iteration >= cfg.max_iterations:
                stopped = True
                break

        finished = cursor.offset >= len(train)
        scheduled = finished and ((cursor.epoch + 1) % cfg.validate_every == 0 or cursor.epoch == phase.epochs - 1)
        # Off-schedule validations only report; the stored cursor must not see them.
        resume_at = None if scheduled else (cursor.advanced(phase.epochs) if finished else cursor.snapshot())
        if validation and (scheduled or stopped):
            j_seen, j_unseen = validate(trainer.model, validation, split_labels, cfg, phase, schedule, device)
            metrics.append(
                iteration=trainer.iteration, phase=phase.name, loss=float(np.mean(cursor.losses)),
                lr=trainer.lr, val_J_seen=j_seen, val_J_unseen=j_unseen,
            )
            cursor.phase_scores[phase.name] = {'J_seen': j_seen, 'J_unseen': j_unseen}
            phase_scores[phase.name] = cursor.phase_scores[phase.name]
            score = _score(j_seen, j_unseen)
            if score is not None and (cursor.best is None or score > cursor.best):
                cursor.best, cursor.stale = score, 0
            else:
                cursor.stale += 1
            if scheduled and cfg.patience is not None and cursor.stale >= cfg.patience:
                logger.info('No validation improvement for %d rounds; stopping', cursor.stale)
                stopped = True
        cursor = resume_at or cursor.advanced(phase.epochs)
        trainer.cursor = cursor
        if output_dir:
            trainer.save(output_dir / 'checkpoint.pt', {
                'phase': phase.name, 'cues': asdict(phase_cfg.cues), 'curriculum': cursor.state_dict(),
            })

    logger.info('Training finished after %d iterations (%d steps per epoch)', trainer.iteration, steps_per_epoch)
    return CurriculumResult(trainer.model, metrics.records, phase_scores, trainer.iteration, stopped)

"""
Multi-attention instance network.

A four-stage convolutional encoder emits side outputs at strides 2, 4, 8 and
16. Each side output goes through a feature pooling stack of separable
(dilated) convolutions, and a top-down pyramid fuses the levels by bilinear
up-sampling, a 3x3 convolution and element-wise addition. A 1x1 projection
emits one logit map per instance channel at input resolution.
"""

import copy
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import DataValidationError, SequenceIOError
from .models import SPATIAL_STRIDE

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'mainvos-checkpoint'
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    """Encoder widths, decoder width and the decoder ablation switches."""

    num_channels: int = 6
    stage_channels: Tuple[int, int, int, int] = (16, 32, 64, 128)
    fpn_width: int = 32
    dilations: Tuple[int, int, int] = (1, 2, 3)
    separable: bool = True
    dilated: bool = True
    batch_norm: bool = True
    encoder_weights: Optional[str] = None

    def __post_init__(self):
        if self.num_channels < 1:
            raise DataValidationError('num_channels must be positive.')
        if len(self.stage_channels) != 4 or min(self.stage_channels) < 1:
            raise DataValidationError('The encoder needs exactly 4 positive stage widths.')
        if self.fpn_width < 1:
            raise DataValidationError('fpn_width must be positive.')
        if len(self.dilations) != 3 or min(self.dilations) < 1:
            raise DataValidationError('dilations must be three factors >= 1.')

    @property
    def in_channels(self):
        return 6 + 2 * self.num_channels

    @property
    def effective_dilations(self):
        return tuple(self.dilations) if self.dilated else (1, 1, 1)


@dataclass
class NetworkOutput:
    logits: torch.Tensor

    @property
    def probabilities(self):
        return torch.sigmoid(self.logits)


class SeparableConv2d(nn.Module):
    """Depthwise k x k convolution (dilated) followed by a pointwise 1 x 1 convolution."""

    def __init__(self, in_channels, out_channels, kernel_size=3, dilation=1):
        super().__init__()
        if kernel_size % 2 != 1:
            raise DataValidationError(f'kernel_size must be odd, got {kernel_size}.')
        if dilation < 1:
            raise DataValidationError(f'dilation must be >= 1, got {dilation}.')
        self.in_channels = in_channels
        self.depthwise = nn.Conv2d(
            in_channels, in_channels, kernel_size,
            padding=dilation * (kernel_size // 2), dilation=dilation, groups=in_channels, bias=False,
        )
        self.pointwise = nn.Conv2d(in_channels, out_channels, 1)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise DataValidationError(f'Expected {self.in_channels} input channels, got {x.shape[1]}.')
        return self.pointwise(self.depthwise(x))


def separable_conv(in_channels, out_channels, kernel_size=3, dilation=1):
    return SeparableConv2d(in_channels, out_channels, kernel_size, dilation)


def separable_parameter_count(in_channels, out_channels, kernel_size=3):
    """Weights of a separable convolution (biases excluded)."""
    return in_channels * kernel_size ** 2 + in_channels * out_channels


def standard_parameter_count(in_channels, out_channels, kernel_size=3):
    return in_channels * out_channels * kernel_size ** 2


def _spatial_conv(in_channels, out_channels, kernel_size, dilation, separable):
    if separable:
        return SeparableConv2d(in_channels, out_channels, kernel_size, dilation)
    return nn.Conv2d(in_channels, out_channels, kernel_size, padding=dilation * (kernel_size // 2), dilation=dilation)


class FeaturePoolingStack(nn.Module):
    """A 1x1 layer then three 3x3 layers with increasing dilation, ReLU after each."""

    def __init__(self, in_channels, width, dilations=(1, 2, 3), separable=True):
        super().__init__()
        self.layers = nn.ModuleList(
            [_spatial_conv(in_channels, width, 1, 1, separable)]
            + [_spatial_conv(width, width, 3, d, separable) for d in dilations]
        )

    def forward(self, x):
        for layer in self.layers:
            x = F.relu(layer(x))
        return x


class UpsampleBlock(nn.Module):
    """Bilinear x2 up-sampling followed by a 3x3 convolution."""

    def __init__(self, width):
        super().__init__()
        self.conv = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode='bilinear', align_corners=False)
        return self.conv(x)


class EncoderStage(nn.Module):
    def __init__(self, in_channels, out_channels, batch_norm=True):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1, bias=not batch_norm)
        self.bn1 = nn.BatchNorm2d(out_channels) if batch_norm else nn.Identity()
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=not batch_norm)
        self.bn2 = nn.BatchNorm2d(out_channels) if batch_norm else nn.Identity()

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        return F.relu(self.bn2(self.conv2(x)))


class Encoder(nn.Module):
    """Four stride-2 stages; every stage output is a side output."""

    def __init__(self, in_channels, stage_channels, batch_norm=True):
        super().__init__()
        widths = (in_channels,) + tuple(stage_channels)
        self.stage1 = EncoderStage(widths[0], widths[1], batch_norm)
        self.stage2 = EncoderStage(widths[1], widths[2], batch_norm)
        self.stage3 = EncoderStage(widths[2], widths[3], batch_norm)
        self.stage4 = EncoderStage(widths[3], widths[4], batch_norm)

    @property
    def first_layer(self):
        return self.stage1.conv1

    def forward(self, x):
        side_outputs = []
        for stage in (self.stage1, self.stage2, self.stage3, self.stage4):
            x = stage(x)
            side_outputs.append(x)
        return side_outputs


class FPNDecoder(nn.Module):
    """Top-down fusion of pooled side outputs into N full-resolution logit maps."""

    def __init__(self, stage_channels, width, num_outputs, dilations=(1, 2, 3), separable=True):
        super().__init__()
        self.pools = nn.ModuleList(
            [FeaturePoolingStack(c, width, dilations, separable) for c in stage_channels]
        )
        self.upsamples = nn.ModuleList([UpsampleBlock(width) for _ in stage_channels])
        self.head = nn.Conv2d(width, num_outputs, 1)

    def forward(self, side_outputs):
        if len(side_outputs) != len(self.pools):
            raise DataValidationError(f'Expected {len(self.pools)} side outputs, got {len(side_outputs)}.')
        for finer, coarser in zip(side_outputs[:-1], side_outputs[1:]):
            if finer.shape[-2:] != tuple(2 * s for s in coarser.shape[-2:]):
                raise DataValidationError(
                    f'Side outputs {tuple(finer.shape[-2:])} and {tuple(coarser.shape[-2:])} are not a x2 pyramid.'
                )
        x = self.pools[-1](side_outputs[-1])
        for level in range(len(side_outputs) - 2, -1, -1):
            x = self.upsamples[level + 1](x) + self.pools[level](side_outputs[level])
        return self.head(self.upsamples[0](x))


def fpn_decode(decoder, side_outputs):
    return NetworkOutput(decoder(side_outputs))


class MultiAttentionNetwork(nn.Module):
    """Encoder + multi-scale separable decoder over a (6 + 2N)-channel input."""

    def __init__(self, config=None, in_channels=None):
        super().__init__()
        self.config = config or NetworkConfig()
        self.in_channels = in_channels or self.config.in_channels
        self.encoder = Encoder(self.in_channels, self.config.stage_channels, self.config.batch_norm)
        self.decoder = FPNDecoder(
            self.config.stage_channels,
            self.config.fpn_width,
            self.config.num_channels,
            self.config.effective_dilations,
            self.config.separable,
        )
        self._init_decoder()

    def _init_decoder(self):
        for module in self.decoder.modules():
            if isinstance(module, nn.Conv2d):
                nn.init.xavier_uniform_(module.weight)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)

    @property
    def num_channels(self):
        return self.config.num_channels

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise DataValidationError(
                f'Expected B x {self.in_channels} x H x W input, got {tuple(x.shape)}.'
            )
        height, width = x.shape[-2:]
        if height % SPATIAL_STRIDE or width % SPATIAL_STRIDE:
            raise DataValidationError(f'Input {height}x{width} is not divisible by {SPATIAL_STRIDE}.')
        return self.decoder(self.encoder(x))


def extend_input_layer(weight, num_instances):
    """
    Grow an RGB first-layer kernel to ``6 + 2N`` input channels.

    The flow slice and the LTA slice take the per-output mean of the three RGB
    slices; the STA slice copies the LTA slice.
    """
    weight = torch.as_tensor(weight)
    if weight.dim() != 4 or weight.shape[1] != 3:
        raise DataValidationError(f'Expected an out x 3 x k x k kernel, got {tuple(weight.shape)}.')
    mean = weight.mean(dim=1, keepdim=True)
    flow = mean.repeat(1, 3, 1, 1)
    lta = mean.repeat(1, num_instances, 1, 1)
    return torch.cat([weight, flow, lta, lta.clone()], dim=1)


def extend_rgb_network(rgb_model):
    """Build a full-input network whose first layer is extended from a 3-channel one."""
    if rgb_model.in_channels != 3:
        raise DataValidationError('extend_rgb_network expects a 3-channel network.')
    model = MultiAttentionNetwork(rgb_model.config)
    state = copy.deepcopy(rgb_model.state_dict())
    key = 'encoder.stage1.conv1.weight'
    state[key] = extend_input_layer(state[key], rgb_model.config.num_channels)
    model.load_state_dict(state)
    return model


def run_forward(model, model_input, device=None):
    """One forward pass on a single ModelInput or a B x C x H x W tensor."""
    tensor = model_input.tensor if hasattr(model_input, 'tensor') else model_input
    if not torch.is_tensor(tensor):
        tensor = torch.from_numpy(np.asarray(tensor, dtype=np.float32))
    if tensor.dim() == 3:
        tensor = tensor[None]
    if device is not None:
        tensor = tensor.to(device)
    return NetworkOutput(model(tensor))


def parameter_count(module):
    return sum(p.numel() for p in module.parameters())


# Checkpoints

def save_checkpoint(path, model, optimizer=None, scheduler=None, iteration=0, extra=None):
    """Store parameters, the network config and optional optimizer state."""
    path = Path(path)
    payload = {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'config': asdict(model.config),
        'in_channels': model.in_channels,
        'state_dict': {k: v.detach().cpu().clone() for k, v in model.state_dict().items()},
        'iteration': iteration,
        'optimizer': optimizer.state_dict() if optimizer is not None else None,
        'scheduler': scheduler.state_dict() if scheduler is not None else None,
        'extra': extra or {},
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(payload, path)
    except OSError as exc:
        raise SequenceIOError(f'Cannot write checkpoint {path}: {exc}', path=path) from exc
    logger.info('Saved checkpoint %s (iteration %d)', path, iteration)
    return path


def network_config_from_dict(data):
    data = dict(data)
    for key in ('stage_channels', 'dilations'):
        data[key] = tuple(data[key])
    return NetworkConfig(**data)


def load_checkpoint(path, map_location='cpu'):
    """Return ``(model, payload)``; the model holds bit-identical parameters."""
    path = Path(path)
    if not path.is_file():
        raise SequenceIOError(f'Missing checkpoint: {path}', path=path)
    payload = torch.load(path, map_location=map_location, weights_only=False)
    if payload.get('format') != CHECKPOINT_FORMAT:
        raise DataValidationError(f'{path} is not a {CHECKPOINT_FORMAT} file.')
    model = MultiAttentionNetwork(network_config_from_dict(payload['config']), payload['in_channels'])
    model.load_state_dict(payload['state_dict'])
    return model, payload


def load_encoder_weights(model, path):
    """Copy encoder parameters from another checkpoint (a pretrained backbone)."""
    source, _ = load_checkpoint(path)
    encoder_state = source.encoder.state_dict()
    first = 'stage1.conv1.weight'
    if encoder_state[first].shape[1] == 3 and model.in_channels != 3:
        encoder_state[first] = extend_input_layer(encoder_state[first], model.num_channels)
    model.encoder.load_state_dict(encoder_state)
    logger.info('Initialized encoder from %s', path)
    return model

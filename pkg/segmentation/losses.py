"""
Segmentation losses over N-channel instance predictions.

Predictions ``P`` and targets ``G`` are ``(B x) N x H x W`` tensors of
per-channel probabilities; ``active`` is an optional ``(B x) N`` boolean
tensor marking channels that hold an instance.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .exceptions import DataValidationError

DICE_EPS = 1e-6
BCE_CLAMP = 1e-7
LOSS_NAMES = ('wid', 'dice', 'bce')


@dataclass(frozen=True)
class LossConfig:
    eps_dice: float = DICE_EPS
    include_inactive_channels: bool = True
    overlap_term_enabled: bool = True

    def __post_init__(self):
        if not self.eps_dice > 0:
            raise DataValidationError('eps_dice must be positive.')


def soft_dice(p, g, eps=DICE_EPS, smooth_numerator=True):
    """
    Soft Dice over the last two dimensions: ``(2 sum(p g) + eps) / (sum p + sum g + eps)``.

    With ``smooth_numerator=False`` the numerator carries no ``eps``, so two
    empty maps score 0 instead of 1.
    """
    intersection = (p * g).sum(dim=(-2, -1))
    total = p.sum(dim=(-2, -1)) + g.sum(dim=(-2, -1))
    numerator = 2.0 * intersection + (eps if smooth_numerator else 0.0)
    return numerator / (total + eps)


def alpha_weight(g):
    """``1 - |g| / (W H)`` per channel; larger for smaller instances."""
    height, width = g.shape[-2:]
    return 1.0 - g.sum(dim=(-2, -1)) / float(height * width)


def _batched(P, G, active):
    if P.shape != G.shape:
        raise DataValidationError(f'Predictions {tuple(P.shape)} and targets {tuple(G.shape)} differ.')
    if P.dim() == 3:
        P, G = P[None], G[None]
        active = None if active is None else active[None]
    if P.dim() != 4:
        raise DataValidationError(f'Expected (B x) N x H x W tensors, got {tuple(P.shape)}.')
    if active is None:
        active = torch.ones(P.shape[:2], dtype=torch.bool, device=P.device)
    elif tuple(active.shape) != tuple(P.shape[:2]):
        raise DataValidationError(f'Active flags {tuple(active.shape)} do not match {tuple(P.shape[:2])}.')
    return P, G, active.to(torch.bool)


def _channel_sum(values):
    """Sum over dim 1 in sorted order, so any channel permutation gives the same bits."""
    return values.sort(dim=1).values.sum(dim=1)


def overlap_term(P, eps=DICE_EPS):
    """Sum over ordered pairs i != j of D(p_i, p_j), per batch element."""
    flat = P.flatten(start_dim=2)
    intersection = (flat[:, :, None, :] * flat[:, None, :, :]).sum(dim=-1)
    sizes = flat.sum(dim=2)
    dice = 2.0 * intersection / (sizes[:, :, None] + sizes[:, None, :] + eps)
    count = P.shape[1]
    off_diagonal = ~torch.eye(count, dtype=torch.bool, device=P.device)
    return _channel_sum(dice[:, off_diagonal])


def wid_loss(P, G, cfg=None, active=None):
    """
    Weighted Instance Dice loss, averaged over the batch.

    Fit term: ``sum_i alpha(g_i) (1 - D(p_i, g_i))`` over active channels, plus
    inactive channels against their empty targets when configured. Overlap
    term: ``sum_{i != j} D(p_i, p_j)`` over all prediction channels.
    """
    cfg = cfg or LossConfig()
    P, G, active = _batched(P, G, active)
    weights = alpha_weight(G) * (1.0 - soft_dice(P, G, cfg.eps_dice))
    if not cfg.include_inactive_channels:
        weights = weights * active.to(weights.dtype)
    loss = _channel_sum(weights)
    if cfg.overlap_term_enabled:
        loss = loss + overlap_term(P, cfg.eps_dice)
    return loss.mean()


def dice_loss(P, G, cfg=None, active=None):
    """Unweighted per-channel Dice deficit, no overlap penalty."""
    cfg = cfg or LossConfig()
    P, G, active = _batched(P, G, active)
    deficit = 1.0 - soft_dice(P, G, cfg.eps_dice)
    if not cfg.include_inactive_channels:
        deficit = deficit * active.to(deficit.dtype)
    return _channel_sum(deficit).mean()


def bce_loss(P, G, cfg=None, active=None, clamp=BCE_CLAMP):
    """Per-pixel binary cross entropy averaged over the pixels of active channels."""
    P, G, active = _batched(P, G, active)
    p = P.clamp(clamp, 1.0 - clamp)
    per_pixel = -(G * torch.log(p) + (1.0 - G) * torch.log(1.0 - p))
    per_channel = per_pixel.mean(dim=(-2, -1))
    weights = active.to(per_channel.dtype)
    count = weights.sum()
    if count == 0:
        return per_channel.sum() * 0.0
    return (per_channel * weights).sum() / count


LOSSES = {'wid': wid_loss, 'dice': dice_loss, 'bce': bce_loss}


def build_loss(name):
    try:
        return LOSSES[name]
    except KeyError:
        raise DataValidationError(f'Unknown loss {name!r}; choose from {LOSS_NAMES}.') from None


def dice_jaccard(d):
    """Map a Dice coefficient to the Jaccard index, ``J = D / (2 - D)``."""
    if not 0.0 <= d <= 1.0:
        raise DataValidationError(f'Dice coefficient {d} outside [0, 1].')
    return d / (2.0 - d)


def wid_gradient(P, G, cfg=None, active=None):
    """Analytic gradient of :func:`wid_loss` with respect to every prediction pixel."""
    P = torch.as_tensor(np.asarray(P), dtype=torch.float64).clone().requires_grad_(True)
    G = torch.as_tensor(np.asarray(G), dtype=torch.float64)
    wid_loss(P, G, cfg, active).backward()
    return P.grad.numpy()


def wid_gradient_check(P, G, cfg=None, h=1e-4, active=None):
    """Largest relative error between the analytic gradient and central differences."""
    if not h > 0:
        raise DataValidationError('The finite-difference step must be positive.')
    P = np.asarray(P, dtype=np.float64)
    G_t = torch.as_tensor(np.asarray(G), dtype=torch.float64)
    analytic = wid_gradient(P, G, cfg, active)
    numeric = np.zeros_like(P)
    with torch.no_grad():
        for index in np.ndindex(P.shape):
            plus, minus = P.copy(), P.copy()
            plus[index] += h
            minus[index] -= h
            f_plus = wid_loss(torch.from_numpy(plus), G_t, cfg, active).item()
            f_minus = wid_loss(torch.from_numpy(minus), G_t, cfg, active).item()
            numeric[index] = (f_plus - f_minus) / (2.0 * h)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / scale))

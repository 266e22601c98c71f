"""Supervision losses in normalized depth units.

Both terms are sums over pixels, not means. Invalid ground-truth pixels are
excluded; for the gradient term a pixel pair contributes only when both
endpoints are valid.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch

SCALES = (1, 2, 4, 8, 16)


class EmptyMaskWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LossConfig:
    alpha_warmup: float = 0.1
    alpha_main: float = 1.0
    warmup_epochs: int = 1
    scales: tuple = SCALES

    def __post_init__(self):
        if self.alpha_warmup < 0 or self.alpha_main < 0:
            raise ValueError("alpha must be non-negative")

    def alpha(self, epoch: int) -> float:
        """Gradient-loss weight for a 1-indexed epoch."""
        return self.alpha_warmup if epoch <= self.warmup_epochs else self.alpha_main


def _as_mask(mask, like):
    if mask is None:
        return torch.ones_like(like, dtype=torch.bool)
    return torch.as_tensor(mask, device=like.device).bool().expand_as(like)


def l1_loss(pred: torch.Tensor, gt: torch.Tensor, mask=None) -> torch.Tensor:
    """Sum of ``|pred - gt|`` over valid pixels."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(gt.shape)}")
    mask = _as_mask(mask, pred)
    if not mask.any():
        warnings.warn("l1_loss called with an empty validity mask", EmptyMaskWarning, stacklevel=2)
    return torch.where(mask, (pred - gt).abs(), torch.zeros_like(pred)).sum()


def _safe_norm(sq):
    pos = sq > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def gradient_loss_at_scale(pred, gt, mask, h: int) -> torch.Tensor:
    """Gradient matching term at one pixel offset ``h``.

    Each pixel contributes the Euclidean norm of the residual gradient
    vector; a component whose pair leaves the image or touches an invalid
    pixel is treated as zero.
    """
    r = pred - gt
    H, W = r.shape[-2:]
    dx = torch.zeros_like(r)
    dy = torch.zeros_like(r)
    if h < W:
        ok = mask[..., :, h:] & mask[..., :, :-h]
        dx[..., :, :-h] = torch.where(ok, r[..., :, h:] - r[..., :, :-h], torch.zeros_like(dx[..., :, :-h]))
    if h < H:
        ok = mask[..., h:, :] & mask[..., :-h, :]
        dy[..., :-h, :] = torch.where(ok, r[..., h:, :] - r[..., :-h, :], torch.zeros_like(dy[..., :-h, :]))
    return _safe_norm(dx * dx + dy * dy).sum()


def multiscale_gradient_loss(pred, gt, mask=None, scales=SCALES) -> torch.Tensor:
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(gt.shape)}")
    mask = _as_mask(mask, pred)
    total = pred.new_zeros(())
    for h in scales:
        total = total + gradient_loss_at_scale(pred, gt, mask, h)
    return total


def total_loss(preds, gts_begin, gts_end, alpha: float, masks_begin=None, masks_end=None,
               scales=SCALES):
    """Sequence loss summed over steps and over the before/after maps.

    ``preds`` is a sequence of (N, 2, H, W) tensors (channel 0 before,
    channel 1 after); ``gts_*`` are matching (N, H, W) tensors. The result
    is divided by the batch size N. Returns ``(total, l_pw, l_msg)`` where
    the last two are the unweighted sums, useful for logging.
    """
    if not (len(preds) == len(gts_begin) == len(gts_end)):
        raise ValueError("predictions and ground truth lists are misaligned")
    if masks_begin is None:
        masks_begin = [None] * len(preds)
    if masks_end is None:
        masks_end = [None] * len(preds)
    if not (len(masks_begin) == len(masks_end) == len(preds)):
        raise ValueError("mask lists are misaligned")
    l_pw = preds[0].new_zeros(())
    l_msg = preds[0].new_zeros(())
    for pred, gb, ge, mb, me in zip(preds, gts_begin, gts_end, masks_begin, masks_end):
        for ch, gt, m in ((0, gb, mb), (1, ge, me)):
            p = pred[:, ch] if pred.dim() == 4 else pred[ch]
            gt = torch.as_tensor(gt, dtype=p.dtype, device=p.device)
            m = _as_mask(m, p)
            l_pw = l_pw + l1_loss(p, gt, m)
            if alpha != 0:
                l_msg = l_msg + multiscale_gradient_loss(p, gt, m, scales)
    batch = preds[0].shape[0] if preds[0].dim() == 4 else 1
    return (l_pw + alpha * l_msg) / batch, l_pw.detach() / batch, l_msg.detach() / batch

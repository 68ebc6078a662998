"""Adversarial, age-scaled pixel and masked indicator losses, plus the weighted generator total."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .age import ASP_MODES, AgeCode, cosine_scale
from .errors import NumericError, ShapeError

EPS = 1e-7
TARGET_MODES = ("target", "paper_literal")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 100.0
    gamma: float = 1.2

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")


def _same_shape(a: torch.Tensor, b: torch.Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")


def adv_loss_d(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    _same_shape(d_real, d_fake, "adv_loss_d")
    real = d_real.clamp(EPS, 1 - EPS)
    fake = d_fake.clamp(EPS, 1 - EPS)
    return (-torch.log(real) - torch.log(1 - fake)).mean()


def adv_loss_g(d_fake: torch.Tensor) -> torch.Tensor:
    return (-torch.log(d_fake.clamp(EPS, 1 - EPS))).mean()


def asp_loss(y_hat: torch.Tensor, target: torch.Tensor, scale) -> torch.Tensor:
    """Mean per-pixel L1 times the age scale; ``scale`` is a float or a per-sample tensor (N,)."""
    _same_shape(y_hat, target, "asp_loss")
    per_sample = (y_hat - target).abs().flatten(1).mean(dim=1) if y_hat.dim() > 1 else (y_hat - target).abs().mean()
    if not torch.is_tensor(scale):
        scale = torch.tensor(scale, dtype=y_hat.dtype)
    return (per_sample * scale.to(y_hat.dtype)).mean()


def asp_loss_codes(y_hat: torch.Tensor, x_i: torch.Tensor, y_j: torch.Tensor, a_i: AgeCode, a_j: AgeCode,
                   asp_mode: str = "complement", target_mode: str = "target") -> torch.Tensor:
    """Age-scaled pixel loss for a single pair, choosing the comparison image by ``target_mode``."""
    if target_mode not in TARGET_MODES:
        raise ValueError(f"unknown target mode {target_mode!r}; expected one of {TARGET_MODES}")
    if asp_mode not in ASP_MODES:
        raise ValueError(f"unknown asp mode {asp_mode!r}; expected one of {ASP_MODES}")
    ref = y_j if target_mode == "target" else x_i
    return asp_loss(y_hat, ref, cosine_scale(a_i, a_j, asp_mode))


def _masked_l1_sum(a: torch.Tensor, b: torch.Tensor, mask: torch.Tensor, what: str) -> torch.Tensor:
    _same_shape(a, b, what)
    if mask.shape != a.shape:
        raise ShapeError(f"{what}: mask shape {tuple(mask.shape)} vs {tuple(a.shape)}")
    mask = mask.to(torch.bool)
    # torch.where keeps NaN sentinels in masked slots out of both value and gradient
    diff = torch.where(mask, a - torch.where(mask, b, torch.zeros_like(b)), torch.zeros_like(a)).abs()
    # left-to-right accumulation: masked zeros are exact no-ops, so the result is
    # bitwise identical to summing only the observed slots
    total = torch.zeros_like(diff[..., 0])
    for p in range(diff.shape[-1]):
        total = total + diff[..., p]
    return total


def dm_loss_d(predicted: torch.Tensor, c: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Sum over observed indicators of |prediction - recorded value|; batches average the per-sample sums."""
    per = _masked_l1_sum(predicted, c, mask, "dm_loss_d")
    return per.mean() if per.dim() else per


def dm_loss_g(pred_fake: torch.Tensor, pred_real: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    per = _masked_l1_sum(pred_fake, pred_real.detach(), mask, "dm_loss_g")
    return per.mean() if per.dim() else per


def total_generator_loss(adv, asp, dm, w: LossWeights = LossWeights()):
    for name, val in (("adv", adv), ("asp", asp), ("dm", dm)):
        v = float(val.detach()) if torch.is_tensor(val) else float(val)
        if not math.isfinite(v):
            raise NumericError(f"generator loss component {name} is {v}")
    return w.alpha * adv + w.beta * asp + w.gamma * dm

"""Contrastive loss, ranking-consistency losses and their weighted total."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import tensor as T
from .ranking import RankLossConfig, rank_loss
from .tensor import Tensor

ABLATIONS = ("full", "cross_only", "in_only", "clip_only")
LAMBDA_MODES = ("scheduled", "fixed")
MAX_LOGIT_SCALE = 100.0
UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class LossConfig:
    temperature_tau: float = 0.07
    lambda_mode: str = "scheduled"
    fixed_lambda1: float = 1 / 16
    fixed_lambda2: float = 1 / 16
    ablation: str = "full"
    rank_cfg: RankLossConfig = field(default_factory=RankLossConfig)

    def __post_init__(self):
        if not self.temperature_tau > 0:
            raise ValueError("temperature_tau must be > 0")
        if self.lambda_mode not in LAMBDA_MODES:
            raise ValueError(f"lambda_mode must be one of {LAMBDA_MODES}")
        if self.fixed_lambda1 < 0 or self.fixed_lambda2 < 0:
            raise ValueError("fixed lambdas must be >= 0")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")


@dataclass
class LossBreakdown:
    l_clip: float
    l_cross: float
    l_in: float
    lambda1: float
    lambda2: float
    total: float
    total_tensor: Tensor | None = field(default=None, repr=False, compare=False)

    def as_record(self) -> dict[str, float]:
        return {
            "l_clip": self.l_clip,
            "l_in": self.l_in,
            "l_cross": self.l_cross,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "total": self.total,
        }


def _check_unit_rows(name: str, x: Tensor) -> None:
    norms = np.sqrt(np.sum(x.data**2, axis=1))
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        raise ValueError(f"{name}: rows must be unit-norm (max deviation {np.max(np.abs(norms - 1)):.3g})")


def _check_pair(v_hat: Tensor, t_hat: Tensor) -> None:
    if v_hat.data.ndim != 2 or v_hat.shape != t_hat.shape:
        raise T.ShapeError(f"embedding batches must share an N x d shape, got {v_hat.shape} and {t_hat.shape}")


def clip_logits_infonce(logits: Tensor) -> Tensor:
    """Symmetric cross-entropy with the diagonal as targets."""
    n = logits.shape[0]
    diag_idx = np.arange(n)[:, None]
    diag = T.gather_last_axis(logits, diag_idx)
    image_term = T.sub(T.logsumexp_row(logits), diag)
    text_term = T.sub(T.logsumexp_row(T.transpose(logits)), diag)
    return T.scalar_mul(T.add(T.mean_all(image_term), T.mean_all(text_term)), 0.5)


def clip_infonce(v_hat, t_hat, tau: float = 1.0, *, log_scale: Tensor | None = None) -> Tensor:
    """CLIP InfoNCE loss on unit-norm batches.

    With ``log_scale`` (log of 1/tau, learnable) the logit scale is
    ``min(exp(log_scale), 100)`` and ``tau`` is ignored.
    """
    v_hat, t_hat = T.as_tensor(v_hat), T.as_tensor(t_hat)
    _check_pair(v_hat, t_hat)
    if v_hat.shape[0] < 1:
        raise ValueError("clip_infonce: empty batch")
    _check_unit_rows("clip_infonce", v_hat)
    _check_unit_rows("clip_infonce", t_hat)
    sims = T.matmul(v_hat, T.transpose(t_hat))
    if log_scale is not None:
        scale = T.clamp(T.exp(log_scale), hi=MAX_LOGIT_SCALE)
        logits = T.mul(sims, scale)
    else:
        if not tau > 0:
            raise ValueError("tau must be > 0")
        logits = T.scalar_mul(sims, 1.0 / tau)
    return clip_logits_infonce(logits)


def cross_modal_loss(v_hat, t_hat, rank_cfg: RankLossConfig | None = None) -> Tensor:
    v_hat, t_hat = T.as_tensor(v_hat), T.as_tensor(t_hat)
    _check_pair(v_hat, t_hat)
    rank_cfg = rank_cfg or RankLossConfig()
    text_per_image = T.matmul(v_hat, T.transpose(t_hat))
    image_per_text = T.transpose(text_per_image)
    return T.add(
        rank_loss(text_per_image, image_per_text.data, rank_cfg),
        rank_loss(image_per_text, text_per_image.data, rank_cfg),
    )


def in_modal_loss(v_hat, t_hat, rank_cfg: RankLossConfig | None = None) -> Tensor:
    v_hat, t_hat = T.as_tensor(v_hat), T.as_tensor(t_hat)
    _check_pair(v_hat, t_hat)
    rank_cfg = rank_cfg or RankLossConfig()
    image_sims = T.matmul(v_hat, T.transpose(v_hat))
    text_sims = T.matmul(t_hat, T.transpose(t_hat))
    return T.add(
        rank_loss(image_sims, text_sims.data, rank_cfg),
        rank_loss(text_sims, image_sims.data, rank_cfg),
    )


def rankclip_total(
    v_hat,
    t_hat,
    cfg: LossConfig,
    lambda1: float,
    lambda2: float,
    *,
    log_scale: Tensor | None = None,
) -> LossBreakdown:
    """Contrastive loss plus lambda-weighted in-modal and cross-modal terms."""
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError(f"lambdas must be >= 0, got ({lambda1}, {lambda2})")
    v_hat, t_hat = T.as_tensor(v_hat), T.as_tensor(t_hat)
    l_clip = clip_infonce(v_hat, t_hat, cfg.temperature_tau, log_scale=log_scale)
    total = l_clip
    l_in = l_cross = 0.0

    if cfg.ablation in ("full", "in_only"):
        in_t = in_modal_loss(v_hat, t_hat, cfg.rank_cfg)
        l_in = in_t.item()
        if lambda1 != 0:
            total = T.add(total, T.scalar_mul(in_t, lambda1))
    if cfg.ablation in ("full", "cross_only"):
        cross_t = cross_modal_loss(v_hat, t_hat, cfg.rank_cfg)
        l_cross = cross_t.item()
        if lambda2 != 0:
            total = T.add(total, T.scalar_mul(cross_t, lambda2))

    return LossBreakdown(
        l_clip=l_clip.item(),
        l_cross=l_cross,
        l_in=l_in,
        lambda1=float(lambda1),
        lambda2=float(lambda2),
        total=total.item(),
        total_tensor=total,
    )


def schedule_fraction(epoch_i: int, total_epochs_n: int) -> Fraction:
    if total_epochs_n < 2:
        raise ValueError("scheduled lambda needs total_epochs_n >= 2")
    if not 1 <= epoch_i <= total_epochs_n:
        raise ValueError(f"epoch {epoch_i} outside 1..{total_epochs_n}")
    value = Fraction(3 * epoch_i - 1, total_epochs_n - 1)
    return min(max(value, Fraction(0)), Fraction(2))


def lambda_schedule(
    epoch_i: int,
    total_epochs_n: int,
    mode: str = "scheduled",
    fixed: tuple[float, float] = (1 / 16, 1 / 16),
) -> tuple[float, float]:
    """Ranking-loss weights for 1-based epoch ``epoch_i``.

    Scheduled mode ramps both weights as clip((3i - 1)/(n - 1), 0, 2).
    """
    if mode == "fixed":
        if not 1 <= epoch_i <= max(total_epochs_n, 1):
            raise ValueError(f"epoch {epoch_i} outside 1..{total_epochs_n}")
        return float(fixed[0]), float(fixed[1])
    if mode != "scheduled":
        raise ValueError(f"unknown lambda mode {mode!r}")
    lam = float(schedule_fraction(epoch_i, total_epochs_n))
    return lam, lam


def default_log_scale(tau: float = 0.07) -> float:
    return math.log(1.0 / tau)

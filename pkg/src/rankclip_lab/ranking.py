"""Plackett-Luce ranking model and the list-wise rank loss built on it."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

ORACLE_MAX_K = 8


@dataclass(frozen=True)
class RankingList:
    scores: np.ndarray
    order: np.ndarray

    def __post_init__(self):
        if len(self.scores) < 1:
            raise ValueError("a ranking list needs at least one item")
        _check_permutation(self.order, len(self.scores))

    @property
    def K(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class RankLossConfig:
    scale_factor: float = 1.0
    shuffle_seed: int = 0
    reduction: str = "mean_of_row_sums"

    def __post_init__(self):
        if not self.scale_factor > 0:
            raise ValueError("scale_factor must be > 0")
        if self.reduction != "mean_of_row_sums":
            raise ValueError("reduction is fixed to 'mean_of_row_sums'")


def _check_permutation(order, k: int) -> None:
    order = np.asarray(order)
    if order.shape != (k,) or sorted(order.tolist()) != list(range(k)):
        raise ValueError(f"invalid permutation of 0..{k - 1}: {order.tolist()}")


def pl_placement_prob(scores, placed, candidate: int) -> float:
    """Probability of placing ``candidate`` next, given the already placed items."""
    scores = np.asarray(scores, dtype=np.float64)
    placed = set(int(p) for p in placed)
    if candidate in placed:
        raise ValueError(f"candidate {candidate} is already placed")
    remaining = [i for i in range(len(scores)) if i not in placed]
    if not remaining:
        raise ValueError("no unplaced items remain")
    if candidate not in remaining:
        raise ValueError(f"candidate {candidate} out of range")
    s = scores[remaining]
    m = s.max()
    return float(math.exp(scores[candidate] - m) / np.exp(s - m).sum())


def pl_ranking_prob(scores, order) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    _check_permutation(order, len(scores))
    p = 1.0
    for k, item in enumerate(order):
        p *= pl_placement_prob(scores, order[:k], int(item))
    return p


def brute_force_rank_nll(pred_row, reference_row) -> float:
    """Negative log PL likelihood of ``pred_row`` under the descending order of
    ``reference_row``, evaluated as a direct product.

    Tied reference entries: every tie-consistent order is enumerated and the
    NLLs are averaged.
    """
    pred = [float(x) for x in pred_row]
    ref = [float(x) for x in reference_row]
    if len(pred) != len(ref):
        raise ValueError("pred and reference rows differ in length")
    if len(pred) > ORACLE_MAX_K:
        raise ValueError(f"oracle size limit: K={len(pred)} > {ORACLE_MAX_K}")

    groups = [
        [i for i in range(len(ref)) if ref[i] == v] for v in sorted(set(ref), reverse=True)
    ]
    nlls = []
    for combo in itertools.product(*(itertools.permutations(g) for g in groups)):
        order = [i for grp in combo for i in grp]
        prob = 1.0
        for k, item in enumerate(order):
            denom = sum(math.exp(pred[j]) for j in order[k:])
            prob *= math.exp(pred[item]) / denom
        nlls.append(-math.log(prob))
    return sum(nlls) / len(nlls)


def shuffle_permutation(n: int, seed: int) -> np.ndarray:
    return np.random.default_rng(seed).permutation(n)


def rank_loss_rows(pred: Tensor, reference, cfg: RankLossConfig) -> Tensor:
    """Per-row PL negative log-likelihood, shape (N, 1).

    Columns of both matrices get one shared random permutation (tie
    resolution), each reference row is stably sorted descending, and the pred
    entries are read off in that order. Reference and indices carry no grad.
    """
    pred = T.as_tensor(pred)
    ref = reference.data if isinstance(reference, Tensor) else np.asarray(reference, np.float64)
    if pred.data.ndim != 2 or pred.shape[0] != pred.shape[1]:
        raise T.ShapeError(f"rank_loss: pred must be square, got {pred.shape}")
    if ref.shape != pred.shape:
        raise T.ShapeError(f"rank_loss: pred {pred.shape} and reference {ref.shape} differ")
    n = pred.shape[0]
    if n == 0:
        raise ValueError("rank_loss: empty score matrix")

    perm = np.broadcast_to(shuffle_permutation(n, cfg.shuffle_seed), (n, n))
    pred_shuf = T.gather_last_axis(pred, perm)
    ref_shuf = np.take_along_axis(ref, perm, axis=1)
    _, indices = T.sort_desc_stable(Tensor(ref_shuf))
    preds_sorted = T.gather_last_axis(pred_shuf, indices)

    shifted = T.sub(preds_sorted, T.row_max(preds_sorted))
    tail_sums = T.flip_last_axis(T.cumsum_last_axis(T.flip_last_axis(T.exp(shifted))))
    # keep log finite when exp underflows for very spread rows
    tail_sums = T.clamp(tail_sums, lo=np.finfo(np.float64).tiny)
    terms = T.scalar_mul(T.sub(T.log(tail_sums), shifted), cfg.scale_factor)
    return T.row_sum(terms)


def rank_loss(pred: Tensor, reference, cfg: RankLossConfig | None = None) -> Tensor:
    """Mean over rows of the per-row list-wise rank loss."""
    return T.mean_all(rank_loss_rows(pred, reference, cfg or RankLossConfig()))

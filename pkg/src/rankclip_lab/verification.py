"""Self-check suites run by ``rankclip-lab verify``.

Each suite returns a list of ``Check`` results; nothing here raises on a
failed check.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import tensor as T
from .encoders import EncoderConfig, EncoderParams, encode_batch, init_params
from .losses import (
    LossConfig,
    clip_infonce,
    cross_modal_loss,
    in_modal_loss,
    lambda_schedule,
    rankclip_total,
    schedule_fraction,
)
from .ranking import RankLossConfig, brute_force_rank_nll, pl_ranking_prob, rank_loss_rows

GRAD_TOL = 1e-5
ORACLE_TOL = 1e-8
NORMALIZATION_TOL = 1e-10


@dataclass
class Check:
    name: str
    value: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name}: {self.value:.3e}{extra}"


def _split_normalized(x: T.Tensor, n: int) -> tuple[T.Tensor, T.Tensor]:
    # rows [0, n) are images, [n, 2n) texts
    sel_v = T.matmul(T.Tensor(np.eye(2 * n)[:n]), x)
    sel_t = T.matmul(T.Tensor(np.eye(2 * n)[n:]), x)
    return T.l2_normalize_rows(sel_v), T.l2_normalize_rows(sel_t)


def loss_family_functions(n: int, seed: int):
    """Scalar functions of a raw (2n, d) embedding block."""
    rank_cfg = RankLossConfig(shuffle_seed=seed)
    cfg = LossConfig(temperature_tau=0.5, rank_cfg=rank_cfg)

    def clip_f(x):
        v, t = _split_normalized(x, n)
        return clip_infonce(v, t, 0.5)

    def cross_f(x):
        v, t = _split_normalized(x, n)
        return cross_modal_loss(v, t, rank_cfg)

    def in_f(x):
        v, t = _split_normalized(x, n)
        return in_modal_loss(v, t, rank_cfg)

    def total_f(x):
        v, t = _split_normalized(x, n)
        return rankclip_total(v, t, cfg, 0.7, 1.3).total_tensor

    return {"clip_infonce": clip_f, "cross_modal_loss": cross_f, "in_modal_loss": in_f, "rankclip_total": total_f}


def encoder_total_check(seed: int, n: int = 5) -> float:
    """Gradient of the full objective through small encoders, per parameter."""
    rng = np.random.default_rng(seed)
    enc_cfg = EncoderConfig(5, 4, (6,), (5,), shared_dim=3, init_seed=seed)
    base = init_params(enc_cfg)
    images = rng.standard_normal((n, 5))
    texts = rng.standard_normal((n, 4))
    cfg = LossConfig(rank_cfg=RankLossConfig(shuffle_seed=seed))
    worst = 0.0
    for name, _ in base.named():
        arrays = base.arrays()

        def f(p, name=name, arrays=arrays):
            params = EncoderParams.from_arrays(arrays, base.activation)
            setattr_param(params, name, p)
            v = encode_batch(params, images, "image")
            t_ = encode_batch(params, texts, "text")
            return rankclip_total(v, t_, cfg, 0.4, 0.9, log_scale=params.log_tau).total_tensor

        worst = max(worst, T.finite_diff_check(f, arrays[name]))
    return worst


def setattr_param(params: EncoderParams, name: str, value: T.Tensor) -> None:
    """Swap one named parameter tensor in place."""
    if name == "image.proj":
        params.image_proj = value
    elif name == "text.proj":
        params.text_proj = value
    elif name == "log_tau":
        params.log_tau = value
    else:
        tower, idx, kind = name.split(".")
        layers = params.image_layers if tower == "image" else params.text_layers
        w, b = layers[int(idx)]
        layers[int(idx)] = (value, b) if kind == "weight" else (w, value)


def gradcheck_suite(trials: int = 10, seed: int = 0) -> list[Check]:
    checks = []
    rng = np.random.default_rng(seed)
    worst = {name: 0.0 for name in ("clip_infonce", "cross_modal_loss", "in_modal_loss", "rankclip_total")}
    for trial in range(trials):
        n = int(rng.integers(2, 7))
        d = int(rng.integers(2, 9))
        x = rng.standard_normal((2 * n, d))
        for name, f in loss_family_functions(n, seed * 1000 + trial).items():
            worst[name] = max(worst[name], T.finite_diff_check(f, x))
    for name, err in worst.items():
        checks.append(Check(f"gradcheck {name}", err, err < GRAD_TOL, f"{trials} batches, tol {GRAD_TOL}"))

    enc_err = max(encoder_total_check(seed * 1000 + k) for k in range(max(1, trials // 5)))
    checks.append(Check("gradcheck rankclip_total through encoders", enc_err, enc_err < GRAD_TOL))

    op_err = operator_gradcheck(trials, seed)
    for name, err in op_err.items():
        checks.append(Check(f"gradcheck op {name}", err, err < GRAD_TOL))
    return checks


def operator_gradcheck(trials: int = 10, seed: int = 0) -> dict[str, float]:
    """Per-operator tape gradients against central differences."""
    rng = np.random.default_rng(seed + 7)
    worst: dict[str, float] = {}

    def record(name, f, x):
        worst[name] = max(worst.get(name, 0.0), T.finite_diff_check(f, x))

    for _ in range(trials):
        r, c = (int(v) for v in rng.integers(2, 9, size=2))
        x = rng.standard_normal((r, c))
        w = rng.standard_normal((r, c))
        m = T.Tensor(rng.standard_normal((c, 3)))
        weights = T.Tensor(w)
        idx = np.argsort(rng.random((r, c)), axis=1)

        def wsum(t):
            return T.mean_all(T.mul(t, T.Tensor(rng_fixed(t.shape))))

        record("matmul", lambda t: wsum(T.matmul(t, m)), x)
        record("transpose", lambda t: wsum(T.transpose(t)), x)
        record("add", lambda t: wsum(T.add(t, weights)), x)
        record("sub", lambda t: wsum(T.sub(weights, t)), x)
        record("mul_elementwise", lambda t: wsum(T.mul(t, t)), x)
        record("scalar_mul", lambda t: wsum(T.scalar_mul(t, -2.5)), x)
        record("exp", lambda t: wsum(T.exp(t)), x)
        record("log", lambda t: wsum(T.log(t)), np.abs(x) + 0.5)
        record("tanh", lambda t: wsum(T.tanh(t)), x)
        record("relu", lambda t: wsum(T.relu(t)), _away_from(x, (0.0,)))
        record("row_max", lambda t: wsum(T.row_max(t)), x)
        record("row_sum", lambda t: wsum(T.row_sum(t)), x)
        record("row_mean", lambda t: wsum(T.row_mean(t)), x)
        record("mean_all", lambda t: T.mean_all(T.mul(t, t)), x)
        record("cumsum_last_axis", lambda t: wsum(T.cumsum_last_axis(t)), x)
        record("flip_last_axis", lambda t: wsum(T.flip_last_axis(t)), x)
        record("gather_last_axis", lambda t: wsum(T.gather_last_axis(t, idx)), x)
        record("sort_desc_stable", lambda t: wsum(T.sort_desc_stable(t)[0]), x)
        record("l2_normalize_rows", lambda t: wsum(T.l2_normalize_rows(t)), x)
        record("logsumexp_row", lambda t: wsum(T.logsumexp_row(t)), x)
        record("clamp", lambda t: wsum(T.clamp(t, -0.5, 0.5)), _away_from(x, (-0.5, 0.5)))
    return worst


def rng_fixed(shape) -> np.ndarray:
    """Deterministic non-trivial weights used to contract op outputs to a scalar."""
    n = int(np.prod(shape))
    return np.cos(np.arange(1, n + 1) * 0.7).reshape(shape)


def _away_from(x: np.ndarray, points, margin: float = 1e-3) -> np.ndarray:
    y = x.copy()
    for p in points:
        close = np.abs(y - p) < margin
        y[close] = p + 2 * margin
    return y


def pl_normalization_suite(ks=range(2, 7), per_k: int = 20, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in ks:
        for _ in range(per_k):
            s = rng.standard_normal(k) * 2
            total = sum(pl_ranking_prob(s, list(p)) for p in itertools.permutations(range(k)))
            worst = max(worst, abs(total - 1.0))
    return Check("PL normalization over all permutations", worst, worst < NORMALIZATION_TOL)


def oracle_equivalence_suite(instances: int = 50, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for inst in range(instances):
        n = int(rng.integers(2, 8))
        pred = rng.standard_normal((n, n))
        ref = rng.standard_normal((n, n))
        rows = rank_loss_rows(T.Tensor(pred), ref, RankLossConfig(shuffle_seed=inst)).data[:, 0]
        for j in range(n):
            worst = max(worst, abs(rows[j] - brute_force_rank_nll(pred[j], ref[j])))
    return Check("rank_loss rows vs brute-force oracle", worst, worst < ORACLE_TOL)


def worked_example_check() -> Check:
    rows = rank_loss_rows(T.Tensor([[2.0, 1.0, 0.0]] * 3), np.array([[9.0, 5.0, 1.0]] * 3), RankLossConfig())
    value = float(rows.data[0, 0])
    return Check("worked value for scores [2, 1, 0]", value, abs(value - 0.72087) < 1e-5, "expected 0.72087")


def oracle_suite(seed: int = 0) -> list[Check]:
    return [pl_normalization_suite(seed=seed), oracle_equivalence_suite(seed=seed), worked_example_check()]


def schedule_table(n: int = 64) -> list[tuple[int, Fraction]]:
    return [(i, schedule_fraction(i, n)) for i in range(1, n + 1)]


def schedule_suite(n: int = 64) -> list[Check]:
    table = schedule_table(n)
    vals = [v for _, v in table]
    checks = [
        Check("lambda(1, 64) == 2/63", float(vals[0]), vals[0] == Fraction(2, 63)),
        Check(
            "lambda(i, 64) == 2 for i >= 43",
            float(min(vals[42:])),
            all(v == 2 for v in vals[42:]) and vals[41] < 2,
        ),
        Check("schedule nondecreasing", float(min(b - a for a, b in zip(vals, vals[1:]))),
              all(a <= b for a, b in zip(vals, vals[1:]))),
        Check("schedule within [0, 2]", float(max(vals)), all(0 <= v <= 2 for v in vals)),
    ]
    fixed = lambda_schedule(1, n, "fixed", (1 / 16, 1 / 16))
    checks.append(Check("fixed mode (1/16, 1/16)", fixed[0], fixed == (0.0625, 0.0625)))
    return checks


SUITES = {"gradcheck": gradcheck_suite, "oracle": oracle_suite, "schedule": schedule_suite}


def run_suite(mode: str) -> list[Check]:
    if mode not in SUITES:
        raise ValueError(f"unknown verify mode {mode!r}")
    return SUITES[mode]()


def all_passed(checks: list[Check]) -> bool:
    return all(c.passed and math.isfinite(c.value) for c in checks)

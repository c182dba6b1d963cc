"""Deterministic training loop with per-epoch lambda scheduling and checkpoints.

Checkpoint layout (little-endian)::

    b"RCLC" | version u16 | step u64 | adam_t u64 | activation (u16 len + utf8)
    entry count u32
    per entry: name (u16 len + utf8) | ndim u8 | dims u64 * ndim
    blobs: f64 row-major, in directory order

Entries are prefixed ``param/``, ``adam_m/`` and ``adam_v/``.
"""

from __future__ import annotations

import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import PairedDataset, batch_indices
from .encoders import EncoderParams, encode_batch
from .losses import LossBreakdown, LossConfig, lambda_schedule, rankclip_total
from .ranking import RankLossConfig

log = logging.getLogger(__name__)

CKPT_MAGIC = b"RCLC"
CKPT_VERSION = 1

# RNG purpose tags
TAG_BATCH = 0xBA7C
TAG_TIES = 0x71E5


class DivergenceError(RuntimeError):
    pass


class CheckpointFormatError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    name: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.name not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 1e-3
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    seed: int = 0
    checkpoint_every: int = 0
    history_path: str | None = None
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")


@dataclass
class StepRecord:
    epoch: int
    step: int
    breakdown: LossBreakdown
    wall_time: float

    @property
    def lambda1(self) -> float:
        return self.breakdown.lambda1

    @property
    def lambda2(self) -> float:
        return self.breakdown.lambda2

    def as_json(self) -> str:
        rec = {"epoch": self.epoch, "step": self.step, **self.breakdown.as_record()}
        return json.dumps(rec, sort_keys=False)


@dataclass
class TrainHistory:
    records: list[StepRecord] = field(default_factory=list)

    def append(self, rec: StepRecord) -> None:
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("history steps must be strictly increasing")
        self.records.append(rec)

    def epoch_mean(self, epoch: int, key: str = "total") -> float:
        vals = [getattr(r.breakdown, key) for r in self.records if r.epoch == epoch]
        return float(np.mean(vals))

    def to_jsonl(self) -> str:
        return "".join(r.as_json() + "\n" for r in self.records)

    def write(self, path) -> None:
        Path(path).write_text(self.to_jsonl())


@dataclass
class OptimizerState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    cfg: OptimizerConfig,
    lr: float,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One sgd or bias-corrected adam update; returns new arrays and state."""
    for name, p in params.items():
        g = grads.get(name)
        if g is not None and np.shape(g) != np.shape(p):
            raise T.ShapeError(f"optimizer: grad shape {np.shape(g)} != param shape {np.shape(p)} for {name}")
    new_state = OptimizerState(t=state.t + 1, m=dict(state.m), v=dict(state.v))
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if cfg.name == "sgd":
            out[name] = p - lr * g
            continue
        m = cfg.beta1 * new_state.m.get(name, np.zeros_like(p)) + (1 - cfg.beta1) * g
        v = cfg.beta2 * new_state.v.get(name, np.zeros_like(p)) + (1 - cfg.beta2) * g * g
        new_state.m[name], new_state.v[name] = m, v
        m_hat = m / (1 - cfg.beta1**new_state.t)
        v_hat = v / (1 - cfg.beta2**new_state.t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return out, new_state


def _seed(seed: int, tag: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, tag, *keys])


def tie_seed(seed: int, epoch: int, step: int) -> int:
    return int(_seed(seed, TAG_TIES, epoch, step).generate_state(1, np.uint64)[0])


def epoch_batches(ds: PairedDataset, cfg: TrainConfig, epoch: int) -> list[np.ndarray]:
    return batch_indices(ds, cfg.batch_size, _seed(cfg.seed, TAG_BATCH, epoch))


def compute_step_loss(
    params: EncoderParams,
    images: np.ndarray,
    texts: np.ndarray,
    loss_cfg: LossConfig,
    lambdas: tuple[float, float],
    shuffle_seed: int,
) -> LossBreakdown:
    rank_cfg = RankLossConfig(scale_factor=loss_cfg.rank_cfg.scale_factor, shuffle_seed=shuffle_seed)
    cfg = LossConfig(
        temperature_tau=loss_cfg.temperature_tau,
        lambda_mode=loss_cfg.lambda_mode,
        fixed_lambda1=loss_cfg.fixed_lambda1,
        fixed_lambda2=loss_cfg.fixed_lambda2,
        ablation=loss_cfg.ablation,
        rank_cfg=rank_cfg,
    )
    v_hat = encode_batch(params, images, "image")
    t_hat = encode_batch(params, texts, "text")
    return rankclip_total(v_hat, t_hat, cfg, lambdas[0], lambdas[1], log_scale=params.log_tau)


@dataclass
class TrainResult:
    params: EncoderParams
    history: TrainHistory
    state: OptimizerState
    step: int


def train(cfg: TrainConfig, ds: PairedDataset, init: EncoderParams) -> tuple[EncoderParams, TrainHistory]:
    res = run_training(cfg, ds, init)
    return res.params, res.history


def run_training(
    cfg: TrainConfig,
    ds: PairedDataset,
    init: EncoderParams | None = None,
    *,
    resume: tuple[EncoderParams, OptimizerState, int] | None = None,
    max_steps: int | None = None,
) -> TrainResult:
    """Train for ``cfg.epochs`` epochs, or until global step ``max_steps``.

    Every random stream is keyed by (seed, tag, epoch[, step]), so resuming
    from a checkpoint continues the exact same trajectory.
    """
    if len(ds.indices(0)) == 0:
        raise ValueError("empty dataset: no training rows")
    if resume is not None:
        params, state, start_step = resume
    else:
        params, state, start_step = init, OptimizerState(), 0
    params = EncoderParams.from_arrays(params.arrays(), params.activation)

    n_batches = len(epoch_batches(ds, cfg, 1))
    if n_batches == 0:
        raise ValueError("training split yields no batch of size >= 2")
    total_steps = cfg.epochs * n_batches
    stop = total_steps if max_steps is None else min(max_steps, total_steps)
    history = TrainHistory()

    step = start_step
    while step < stop:
        epoch = step // n_batches + 1
        batches = epoch_batches(ds, cfg, epoch)
        lam = lambda_schedule(
            epoch,
            cfg.epochs,
            cfg.loss_cfg.lambda_mode,
            (cfg.loss_cfg.fixed_lambda1, cfg.loss_cfg.fixed_lambda2),
        )
        if cfg.loss_cfg.lambda_mode == "scheduled" and cfg.epochs < 2:
            raise ValueError("scheduled lambda mode needs epochs >= 2")
        for b in range(step % n_batches, n_batches):
            if step >= stop:
                break
            t0 = time.perf_counter()
            idx = batches[b]
            params.zero_grad()
            bd = compute_step_loss(
                params,
                ds.image_raw[idx],
                ds.text_raw[idx],
                cfg.loss_cfg,
                lam,
                tie_seed(cfg.seed, epoch, step),
            )
            if not all(math.isfinite(x) for x in (bd.total, bd.l_clip, bd.l_in, bd.l_cross)):
                raise DivergenceError(f"divergence at step {step}")
            T.backward(bd.total_tensor)
            bd.total_tensor = None

            named = params.named()
            arrays = {n: t.data for n, t in named}
            grads = {n: t.grad for n, t in named if t.grad is not None}
            new_arrays, state = optimizer_step(arrays, grads, state, cfg.optimizer, cfg.learning_rate)
            if not all(np.all(np.isfinite(a)) for a in new_arrays.values()):
                raise DivergenceError(f"divergence at step {step}: non-finite parameters")
            for n, t in named:
                t.data = new_arrays[n]

            history.append(StepRecord(epoch, step, bd, time.perf_counter() - t0))
            step += 1
            if cfg.checkpoint_every and cfg.checkpoint_path and step % cfg.checkpoint_every == 0:
                save_checkpoint(params, state, step, cfg.checkpoint_path)
        log.debug("epoch %d done: mean total %.5f", epoch, history.epoch_mean(epoch) if history.records else float("nan"))

    if cfg.history_path:
        history.write(cfg.history_path)
    return TrainResult(params, history, state, step)


# ---------------------------------------------------------------- checkpoints


def _pack_str(s: str) -> bytes:
    b = s.encode()
    return struct.pack("<H", len(b)) + b


def save_checkpoint(params: EncoderParams, state: OptimizerState, step: int, path) -> None:
    entries = [(f"param/{n}", a) for n, a in params.arrays().items()]
    entries += [(f"adam_m/{n}", a) for n, a in state.m.items()]
    entries += [(f"adam_v/{n}", a) for n, a in state.v.items()]

    head = [CKPT_MAGIC, struct.pack("<HQQ", CKPT_VERSION, step, state.t), _pack_str(params.activation)]
    head.append(struct.pack("<I", len(entries)))
    for name, arr in entries:
        head.append(_pack_str(name))
        head.append(struct.pack("<B", arr.ndim))
        head.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    blobs = [np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in entries]
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(head + blobs))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[EncoderParams, OptimizerState, int]:
    raw = Path(path).read_bytes()
    off = 0

    def need(n):
        if off + n > len(raw):
            raise CheckpointFormatError("truncated checkpoint")

    def unpack(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        need(size)
        vals = struct.unpack_from(fmt, raw, off)
        off += size
        return vals

    def read_str():
        nonlocal off
        (n,) = unpack("<H")
        need(n)
        s = raw[off : off + n].decode()
        off += n
        return s

    need(4)
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointFormatError(f"bad magic {raw[:4]!r}, expected {CKPT_MAGIC!r}")
    off = 4
    version, step, adam_t = unpack("<HQQ")
    if version != CKPT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    activation = read_str()
    (count,) = unpack("<I")
    directory = []
    for _ in range(count):
        name = read_str()
        (ndim,) = unpack("<B")
        shape = unpack(f"<{ndim}Q") if ndim else ()
        directory.append((name, tuple(int(s) for s in shape)))

    arrays: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for name, shape in directory:
        n = int(np.prod(shape)) if shape else 1
        need(8 * n)
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
        kind, _, key = name.partition("/")
        if kind not in arrays:
            raise CheckpointFormatError(f"unknown checkpoint entry {name!r}")
        arrays[kind][key] = arr
    if off != len(raw):
        raise CheckpointFormatError(f"trailing data in checkpoint: {len(raw) - off} bytes")

    params = EncoderParams.from_arrays(arrays["param"], activation)
    state = OptimizerState(t=adam_t, m=arrays["adam_m"], v=arrays["adam_v"])
    return params, state, step

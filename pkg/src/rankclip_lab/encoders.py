"""Toy dual encoder: two feed-forward towers projecting onto a shared unit sphere."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

ACTIVATIONS = {"tanh": T.tanh, "relu": T.relu}
MODALITIES = ("image", "text")


@dataclass(frozen=True)
class EncoderConfig:
    image_input_dim: int
    text_input_dim: int
    image_hidden_dims: tuple[int, ...] = (64, 64)
    text_hidden_dims: tuple[int, ...] = (64, 64)
    shared_dim: int = 16
    activation: str = "tanh"
    init_seed: int = 0
    tau_init: float = 0.07

    def __post_init__(self):
        dims = [self.image_input_dim, self.text_input_dim, self.shared_dim]
        dims += list(self.image_hidden_dims) + list(self.text_hidden_dims)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all encoder dims must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}")
        if not self.tau_init > 0:
            raise ValueError("tau_init must be > 0")


@dataclass
class EncoderParams:
    """``log_tau`` holds log(1/tau), i.e. CLIP's log logit scale."""

    image_layers: list[tuple[Tensor, Tensor]]
    text_layers: list[tuple[Tensor, Tensor]]
    image_proj: Tensor
    text_proj: Tensor
    log_tau: Tensor
    activation: str = "tanh"

    def named(self) -> list[tuple[str, Tensor]]:
        out = []
        for tower, layers in (("image", self.image_layers), ("text", self.text_layers)):
            for i, (w, b) in enumerate(layers):
                out.append((f"{tower}.{i}.weight", w))
                out.append((f"{tower}.{i}.bias", b))
        out.append(("image.proj", self.image_proj))
        out.append(("text.proj", self.text_proj))
        out.append(("log_tau", self.log_tau))
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named()}

    def zero_grad(self) -> None:
        for _, t in self.named():
            t.grad = None

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], activation: str = "tanh") -> "EncoderParams":
        def tower(prefix):
            layers = []
            i = 0
            while f"{prefix}.{i}.weight" in arrays:
                layers.append(
                    (
                        Tensor(arrays[f"{prefix}.{i}.weight"], requires_grad=True),
                        Tensor(arrays[f"{prefix}.{i}.bias"], requires_grad=True),
                    )
                )
                i += 1
            return layers

        return cls(
            image_layers=tower("image"),
            text_layers=tower("text"),
            image_proj=Tensor(arrays["image.proj"], requires_grad=True),
            text_proj=Tensor(arrays["text.proj"], requires_grad=True),
            log_tau=Tensor(arrays["log_tau"], requires_grad=True),
            activation=activation,
        )


def _uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)


def init_params(cfg: EncoderConfig) -> EncoderParams:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.init_seed, 0x1A17]))

    def tower(in_dim, hidden):
        layers = []
        for width in hidden:
            layers.append((_uniform(rng, in_dim, width), Tensor(np.zeros(width), requires_grad=True)))
            in_dim = width
        return layers, in_dim

    image_layers, m = tower(cfg.image_input_dim, cfg.image_hidden_dims)
    text_layers, n = tower(cfg.text_input_dim, cfg.text_hidden_dims)
    return EncoderParams(
        image_layers=image_layers,
        text_layers=text_layers,
        image_proj=_uniform(rng, m, cfg.shared_dim),
        text_proj=_uniform(rng, n, cfg.shared_dim),
        log_tau=Tensor(np.array(math.log(1.0 / cfg.tau_init)), requires_grad=True),
        activation=cfg.activation,
    )


def encode_batch(params: EncoderParams, inputs, modality: str) -> Tensor:
    """Run one tower and L2-normalize its projected rows."""
    if modality == "image":
        layers, proj = params.image_layers, params.image_proj
    elif modality == "text":
        layers, proj = params.text_layers, params.text_proj
    else:
        raise ValueError(f"modality must be one of {MODALITIES}, got {modality!r}")
    x = T.as_tensor(inputs)
    if x.data.ndim != 2:
        raise T.ShapeError(f"encode_batch: inputs must be N x input_dim, got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise ValueError("encode_batch: non-finite input")
    act = ACTIVATIONS[params.activation]
    for w, b in layers:
        x = act(T.add(T.matmul(x, w), b))
    z = T.matmul(x, proj)
    try:
        return T.l2_normalize_rows(z)
    except ValueError as exc:
        raise ValueError("degenerate embedding: zero-norm row before normalization") from exc

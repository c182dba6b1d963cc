"""Run-config files: YAML with fixed sections, strict keys and type checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import DatasetSpec
from .encoders import EncoderConfig
from .losses import LossConfig
from .ranking import RankLossConfig
from .trainer import OptimizerConfig, TrainConfig

REQUIRED = object()


class ConfigError(ValueError):
    pass


# section -> key -> (type, default); REQUIRED marks mandatory keys
SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "dataset": {
        "num_superclasses": (int, REQUIRED),
        "subclasses_per_superclass": (int, REQUIRED),
        "latent_dim": (int, REQUIRED),
        "image_dim": (int, REQUIRED),
        "text_dim": (int, REQUIRED),
        "within_super_corr": (float, REQUIRED),
        "noise_std": (float, REQUIRED),
        "pairs_per_class": (int, REQUIRED),
        "eval_pairs": (int, REQUIRED),
        "seed": (int, REQUIRED),
    },
    "encoder": {
        "hidden_dims": (list, [64, 64]),
        "shared_dim": (int, 16),
        "activation": (str, "tanh"),
    },
    "loss": {
        "lambda_mode": (str, "scheduled"),
        "fixed_lambda1": (float, 1 / 16),
        "fixed_lambda2": (float, 1 / 16),
        "ablation": (str, "full"),
        "scale_factor": (float, 1.0),
        "tau_init": (float, 0.07),
    },
    "train": {
        "epochs": (int, 30),
        "batch_size": (int, 256),
        "learning_rate": (float, 1e-3),
        "optimizer": (str, "adam"),
        "beta1": (float, 0.9),
        "beta2": (float, 0.999),
        "eps": (float, 1e-8),
        "checkpoint_every": (int, 0),
    },
    "eval": {
        "top_ks": (list, [1, 3, 5]),
        "recall_ks": (list, [1, 5, 10]),
        "probe_iters": (int, 500),
        "probe_l2": (float, 1e-4),
    },
    "compare": {
        "seeds": (list, [0, 1, 2, 3, 4]),
        "variants": (list, ["clip_only", "full", "cross_only", "in_only"]),
    },
}
TOP_LEVEL = {"seed": (int, REQUIRED)}


@dataclass
class RunConfig:
    dataset: DatasetSpec
    seed: int
    sections: dict[str, dict] = field(default_factory=dict)

    def encoder_config(self) -> EncoderConfig:
        enc = self.sections["encoder"]
        hidden = tuple(int(h) for h in enc["hidden_dims"])
        return EncoderConfig(
            image_input_dim=self.dataset.image_dim,
            text_input_dim=self.dataset.text_dim,
            image_hidden_dims=hidden,
            text_hidden_dims=hidden,
            shared_dim=enc["shared_dim"],
            activation=enc["activation"],
            init_seed=self.seed,
            tau_init=self.sections["loss"]["tau_init"],
        )

    def loss_config(self, ablation: str | None = None) -> LossConfig:
        loss = self.sections["loss"]
        return LossConfig(
            temperature_tau=loss["tau_init"],
            lambda_mode=loss["lambda_mode"],
            fixed_lambda1=loss["fixed_lambda1"],
            fixed_lambda2=loss["fixed_lambda2"],
            ablation=ablation or loss["ablation"],
            rank_cfg=RankLossConfig(scale_factor=loss["scale_factor"]),
        )

    def train_config(self, ablation: str | None = None, seed: int | None = None, **paths) -> TrainConfig:
        tr = self.sections["train"]
        return TrainConfig(
            epochs=tr["epochs"],
            batch_size=tr["batch_size"],
            learning_rate=tr["learning_rate"],
            optimizer=OptimizerConfig(tr["optimizer"], tr["beta1"], tr["beta2"], tr["eps"]),
            loss_cfg=self.loss_config(ablation),
            seed=self.seed if seed is None else seed,
            checkpoint_every=tr["checkpoint_every"],
            **paths,
        )

    @property
    def eval(self) -> dict:
        return self.sections["eval"]

    @property
    def compare(self) -> dict:
        return self.sections["compare"]


def _check_type(key: str, value, typ: type):
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, bool):
        raise ConfigError(f"bad type for {key}: expected int, got bool")
    if not isinstance(value, typ):
        raise ConfigError(f"bad type for {key}: expected {typ.__name__}, got {type(value).__name__}")
    return value


def _section(name: str, raw: dict | None, need_required: bool) -> dict:
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name} must be a mapping")
    schema = SCHEMA[name]
    for key in raw:
        if key not in schema:
            raise ConfigError(f"unknown key: {name}.{key}")
    out = {}
    for key, (typ, default) in schema.items():
        if key in raw:
            out[key] = _check_type(f"{name}.{key}", raw[key], typ)
        elif default is REQUIRED:
            if need_required:
                raise ConfigError(f"missing key: {name}.{key}")
        else:
            out[key] = list(default) if isinstance(default, list) else default
    return out


def parse_config(raw: dict, seed_override: int | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    for key in raw:
        if key not in SCHEMA and key not in TOP_LEVEL:
            raise ConfigError(f"unknown key: {key}")
    if "dataset" not in raw:
        raise ConfigError("missing key: dataset")
    sections = {name: _section(name, raw.get(name), True) for name in SCHEMA}
    if seed_override is not None:
        seed = int(seed_override)
    elif "seed" in raw:
        seed = _check_type("seed", raw["seed"], int)
    else:
        raise ConfigError("missing key: seed")
    try:
        spec = DatasetSpec(**sections["dataset"])
        spec.validate()
        cfg = RunConfig(dataset=spec, seed=seed, sections=sections)
        cfg.encoder_config()
        cfg.train_config()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config: {exc}") from exc
    return cfg


def load_config(path, seed_override: int | None = None) -> RunConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return parse_config(raw, seed_override)

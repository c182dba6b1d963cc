"""Hierarchical synthetic image/text pairs with a known class-similarity structure.

Binary dataset layout (little-endian)::

    b"RCLD" | version u16 | image_dim u32 | text_dim u32 | M u64 | C u32
    image_raw  M*image_dim f64
    text_raw   M*text_dim f64
    labels     M u32
    class_prototype_sim  C*C f64
    split      M u8   (0 train, 1 eval)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

MAGIC = b"RCLD"
VERSION = 1
_HEADER = struct.Struct("<4sHIIQI")

TRAIN, EVAL = 0, 1


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    num_superclasses: int = 4
    subclasses_per_superclass: int = 4
    latent_dim: int = 32
    image_dim: int = 64
    text_dim: int = 48
    within_super_corr: float = 0.6
    noise_std: float = 0.1
    pairs_per_class: int = 500
    eval_pairs: int = 1000
    seed: int = 0

    @property
    def num_classes(self) -> int:
        return self.num_superclasses * self.subclasses_per_superclass

    def validate(self) -> None:
        if self.num_superclasses < 1 or self.subclasses_per_superclass < 1:
            raise ValueError("class counts must be >= 1")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if not 0 <= self.within_super_corr < 1:
            raise ValueError("within_super_corr must lie in [0, 1)")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.pairs_per_class < 1 or self.eval_pairs < 0:
            raise ValueError("pairs_per_class must be >= 1 and eval_pairs >= 0")
        if min(self.image_dim, self.text_dim) < 1:
            raise ValueError("image_dim and text_dim must be >= 1")
        needed = self.num_superclasses + self.num_classes
        if self.latent_dim < needed:
            raise ValueError(
                f"latent_dim={self.latent_dim} too small to host {needed} orthogonal prototype directions"
            )


@dataclass
class PairedDataset:
    image_raw: np.ndarray
    text_raw: np.ndarray
    labels: np.ndarray
    class_prototype_sim: np.ndarray
    split: np.ndarray

    def __post_init__(self):
        m = len(self.labels)
        if self.image_raw.shape[0] != m or self.text_raw.shape[0] != m or self.split.shape[0] != m:
            raise ValueError("image_raw, text_raw, labels and split must share M")

    @property
    def num_classes(self) -> int:
        return self.class_prototype_sim.shape[0]

    def indices(self, which: int) -> np.ndarray:
        return np.flatnonzero(self.split == which)

    def subset(self, which: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        idx = self.indices(which)
        return self.image_raw[idx], self.text_raw[idx], self.labels[idx]

    def class_text_inputs(self) -> np.ndarray:
        """One canonical text input per class: the mean train text row.

        Text rows are linear in the latent sample, so this is the class
        prototype pushed through the text map plus averaged noise (exact at
        zero noise).
        """
        train = self.indices(TRAIN)
        out = np.zeros((self.num_classes, self.text_raw.shape[1]))
        for c in range(self.num_classes):
            rows = train[self.labels[train] == c]
            if len(rows) == 0:
                raise ValueError(f"class {c} has no training rows")
            out[c] = self.text_raw[rows].mean(axis=0)
        return out

    def equals(self, other: "PairedDataset") -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            and getattr(self, f).dtype == getattr(other, f).dtype
            for f in ("image_raw", "text_raw", "labels", "class_prototype_sim", "split")
        )


def _prototypes(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    s, c = spec.num_superclasses, spec.num_classes
    q, _ = np.linalg.qr(rng.standard_normal((spec.latent_dim, s + c)))
    super_dirs, fresh_dirs = q[:, :s].T, q[:, s:].T
    a = np.sqrt(spec.within_super_corr)
    b = np.sqrt(1.0 - spec.within_super_corr)
    protos = np.empty((c, spec.latent_dim))
    for k in range(c):
        v = a * super_dirs[k // spec.subclasses_per_superclass] + b * fresh_dirs[k]
        protos[k] = v / np.linalg.norm(v)
    return protos


def sample_latents(spec: DatasetSpec) -> dict[str, np.ndarray]:
    """Draw everything behind a dataset, including the hidden latents."""
    spec.validate()
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xDA7A]))
    c = spec.num_classes
    protos = _prototypes(spec, rng)
    w_img = rng.standard_normal((spec.image_dim, spec.latent_dim)) / np.sqrt(spec.latent_dim)
    w_txt = rng.standard_normal((spec.text_dim, spec.latent_dim)) / np.sqrt(spec.latent_dim)

    train_labels = np.repeat(np.arange(c), spec.pairs_per_class)
    eval_labels = np.arange(spec.eval_pairs) % c
    labels = np.concatenate([train_labels, rng.permutation(eval_labels)]).astype(np.uint32)
    split = np.concatenate(
        [np.full(len(train_labels), TRAIN), np.full(spec.eval_pairs, EVAL)]
    ).astype(np.uint8)

    m = len(labels)
    image_latent = protos[labels] + spec.noise_std * rng.standard_normal((m, spec.latent_dim))
    text_latent = protos[labels] + spec.noise_std * rng.standard_normal((m, spec.latent_dim))
    sim = protos @ protos.T
    sim = 0.5 * (sim + sim.T)
    np.fill_diagonal(sim, 1.0)
    return {
        "prototypes": protos,
        "w_img": w_img,
        "w_txt": w_txt,
        "image_latent": image_latent,
        "text_latent": text_latent,
        "labels": labels,
        "split": split,
        "class_prototype_sim": sim,
    }


def generate_dataset(spec: DatasetSpec) -> PairedDataset:
    draw = sample_latents(spec)
    return PairedDataset(
        image_raw=draw["image_latent"] @ draw["w_img"].T,
        text_raw=draw["text_latent"] @ draw["w_txt"].T,
        labels=draw["labels"],
        class_prototype_sim=draw["class_prototype_sim"],
        split=draw["split"],
    )


def batch_iter(
    ds: PairedDataset, batch_size: int, epoch_seed
) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Seeded shuffle of the train split in fixed-size batches.

    A trailing remainder smaller than 2 is dropped.
    """
    for idx in batch_indices(ds, batch_size, epoch_seed):
        yield ds.image_raw[idx], ds.text_raw[idx], ds.labels[idx]


def batch_indices(ds: PairedDataset, batch_size: int, epoch_seed) -> list[np.ndarray]:
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    train = ds.indices(TRAIN)
    if len(train) == 0:
        raise ValueError("empty dataset: no training rows")
    seed = epoch_seed if isinstance(epoch_seed, np.random.SeedSequence) else int(epoch_seed)
    order = train[np.random.default_rng(seed).permutation(len(train))]
    batches = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    return [b for b in batches if len(b) >= 2]


def save_dataset(ds: PairedDataset, path) -> None:
    m, c = len(ds.labels), ds.num_classes
    blob = [
        _HEADER.pack(MAGIC, VERSION, ds.image_raw.shape[1], ds.text_raw.shape[1], m, c),
        np.ascontiguousarray(ds.image_raw, dtype="<f8").tobytes(),
        np.ascontiguousarray(ds.text_raw, dtype="<f8").tobytes(),
        np.ascontiguousarray(ds.labels, dtype="<u4").tobytes(),
        np.ascontiguousarray(ds.class_prototype_sim, dtype="<f8").tobytes(),
        np.ascontiguousarray(ds.split, dtype="u1").tobytes(),
    ]
    Path(path).write_bytes(b"".join(blob))


def load_dataset(path) -> PairedDataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError("truncated dataset file: header incomplete")
    magic, version, image_dim, text_dim, m, c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version}, expected {VERSION}")

    sizes = [m * image_dim * 8, m * text_dim * 8, m * 4, c * c * 8, m]
    expected = _HEADER.size + sum(sizes)
    if len(raw) < expected:
        raise DatasetFormatError(f"truncated dataset file: {len(raw)} of {expected} bytes")
    if len(raw) > expected:
        raise DatasetFormatError(f"trailing data in dataset file: {len(raw) - expected} extra bytes")

    off = _HEADER.size

    def take(n_bytes, dtype, shape):
        nonlocal off
        arr = np.frombuffer(raw, dtype=dtype, count=n_bytes // np.dtype(dtype).itemsize, offset=off)
        off += n_bytes
        return arr.reshape(shape).astype(np.dtype(dtype).newbyteorder("="), copy=True)

    return PairedDataset(
        image_raw=take(sizes[0], "<f8", (m, image_dim)),
        text_raw=take(sizes[1], "<f8", (m, text_dim)),
        labels=take(sizes[2], "<u4", (m,)).astype(np.uint32),
        class_prototype_sim=take(sizes[3], "<f8", (c, c)),
        split=take(sizes[4], "u1", (m,)).astype(np.uint8),
    )

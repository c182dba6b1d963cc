"""Evaluation: zero-shot accuracy, retrieval recall, embedding geometry, linear probe."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .data import EVAL, TRAIN, PairedDataset
from .encoders import EncoderParams, encode_batch

TOP_KS = (1, 3, 5)
RECALL_KS = (1, 5, 10)


@dataclass
class MetricsReport:
    top_k_accuracy: dict[int, float]
    recall_i2t: dict[int, float]
    recall_t2i: dict[int, float]
    alignment: float
    uniformity: float
    modality_gap: float
    mean_pair_gap: float
    consistency_spearman: float
    linear_probe_accuracy: float
    N: int

    def check_invariants(self) -> None:
        for name, vals in (("top_k", self.top_k_accuracy), ("i2t", self.recall_i2t), ("t2i", self.recall_t2i)):
            for k, v in vals.items():
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"{name}@{k}={v} outside [0, 1]")
        if not 0.0 <= self.linear_probe_accuracy <= 1.0:
            raise ValueError("linear probe accuracy outside [0, 1]")
        if not -1.0 - 1e-12 <= self.alignment <= 1.0 + 1e-12:
            raise ValueError(f"alignment {self.alignment} outside [-1, 1]")
        if not 0.0 <= self.modality_gap <= 2.0 + 1e-12:
            raise ValueError(f"modality gap {self.modality_gap} outside [0, 2]")
        if not -1.0 - 1e-12 <= self.consistency_spearman <= 1.0 + 1e-12:
            raise ValueError("consistency_spearman outside [-1, 1]")

    def flat(self) -> dict[str, float]:
        row: dict[str, float] = {"N": self.N}
        for k, v in sorted(self.top_k_accuracy.items()):
            row[f"top{k}"] = v
        for k, v in sorted(self.recall_i2t.items()):
            row[f"i2t_r{k}"] = v
        for k, v in sorted(self.recall_t2i.items()):
            row[f"t2i_r{k}"] = v
        row.update(
            alignment=self.alignment,
            uniformity=self.uniformity,
            modality_gap=self.modality_gap,
            mean_pair_gap=self.mean_pair_gap,
            consistency_spearman=self.consistency_spearman,
            linear_probe_accuracy=self.linear_probe_accuracy,
        )
        return row

    def to_json(self) -> str:
        d = asdict(self)
        for key in ("top_k_accuracy", "recall_i2t", "recall_t2i"):
            d[key] = {str(k): v for k, v in d[key].items()}
        return json.dumps(d, indent=2) + "\n"

    def csv_header(self) -> list[str]:
        return list(self.flat())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.csv_header(), lineterminator="\n")
        w.writeheader()
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in self.flat().items()})
        return buf.getvalue()


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def ranked_columns(sim: np.ndarray) -> np.ndarray:
    """Column indices per row by descending similarity; ties go to the lower index."""
    return np.argsort(-sim, axis=1, kind="stable")


def topk_hits(sim: np.ndarray, targets: np.ndarray, ks) -> dict[int, float]:
    sim = _as_array(sim)
    if sim.shape[0] == 0:
        raise ValueError("no queries")
    order = ranked_columns(sim)
    rank = np.argmax(order == np.asarray(targets)[:, None], axis=1)
    out = {}
    for k in ks:
        if not 1 <= k <= sim.shape[1]:
            raise ValueError(f"k={k} outside 1..{sim.shape[1]}")
        out[int(k)] = float(np.mean(rank < k))
    return out


def recall_at_k(sim, ks=RECALL_KS) -> dict[int, float]:
    """Recall@k for a square query-by-target similarity matrix whose true
    partners sit on the diagonal."""
    sim = _as_array(sim)
    return topk_hits(sim, np.arange(sim.shape[0]), ks)


def embed(params: EncoderParams, inputs: np.ndarray, modality: str) -> np.ndarray:
    return encode_batch(params, inputs, modality).data


def zero_shot_accuracy(params: EncoderParams, ds: PairedDataset, ks=TOP_KS) -> dict[int, float]:
    images, _, labels = ds.subset(EVAL)
    if len(labels) == 0:
        raise ValueError("empty eval split")
    v = embed(params, images, "image")
    c = embed(params, ds.class_text_inputs(), "text")
    return topk_hits(v @ c.T, labels.astype(np.intp), ks)


def retrieval_recall(params: EncoderParams, ds: PairedDataset, ks=RECALL_KS, direction: str = "i2t") -> dict[int, float]:
    images, texts, _ = ds.subset(EVAL)
    v = embed(params, images, "image")
    t = embed(params, texts, "text")
    if direction == "i2t":
        return recall_at_k(v @ t.T, ks)
    if direction == "t2i":
        return recall_at_k(t @ v.T, ks)
    raise ValueError("direction must be 'i2t' or 't2i'")


def alignment_uniformity(v_hat, t_hat) -> tuple[float, float]:
    """Mean matched-pair similarity, and log-mean of exp(-similarity) over
    mismatched image/text pairs."""
    v, t = _as_array(v_hat), _as_array(t_hat)
    n = v.shape[0]
    if n < 2:
        raise ValueError("alignment_uniformity needs N >= 2")
    sims = v @ t.T
    s_a = float(np.mean(np.diag(sims)))
    off = ~np.eye(n, dtype=bool)
    s_u = float(np.log(np.sum(np.exp(-sims[off])) / (n * (n - 1))))
    return s_a, s_u


def modality_gap(v_hat, t_hat) -> float:
    v, t = _as_array(v_hat), _as_array(t_hat)
    if v.shape[0] == 0 or t.shape[0] == 0:
        raise ValueError("modality_gap: empty batch")
    return float(np.linalg.norm(v.mean(axis=0) - t.mean(axis=0)))


def mean_pair_gap(v_hat, t_hat) -> float:
    v, t = _as_array(v_hat), _as_array(t_hat)
    if v.shape[0] == 0:
        raise ValueError("mean_pair_gap: empty batch")
    return float(np.mean(np.linalg.norm(v - t, axis=1)))


def spearman_rows(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over rows of Spearman's rho between a[j] and b[j] with the
    diagonal entry removed; ties get average ranks."""
    n = a.shape[0]
    off = ~np.eye(n, dtype=bool)
    ra = rankdata(a[off].reshape(n, n - 1), axis=1)
    rb = rankdata(b[off].reshape(n, n - 1), axis=1)
    ra -= ra.mean(axis=1, keepdims=True)
    rb -= rb.mean(axis=1, keepdims=True)
    denom = np.sqrt(np.sum(ra * ra, axis=1) * np.sum(rb * rb, axis=1))
    rho = np.where(denom > 0, np.sum(ra * rb, axis=1) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(np.mean(rho))


def consistency_spearman(v_hat, t_hat) -> float:
    v, t = _as_array(v_hat), _as_array(t_hat)
    if v.shape[0] < 3:
        raise ValueError("consistency_spearman needs N >= 3")
    return spearman_rows(v @ v.T, t @ t.T)


def fit_linear_probe(
    train_x: np.ndarray,
    train_y: np.ndarray,
    eval_x: np.ndarray,
    eval_y: np.ndarray,
    l2_reg: float = 1e-4,
    iters: int = 500,
    lr: float = 1.0,
    num_classes: int | None = None,
) -> float:
    """Multinomial logistic regression by full-batch gradient descent."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    train_y = np.asarray(train_y, dtype=np.intp)
    if len(np.unique(train_y)) < 2:
        raise ValueError("linear probe needs at least two classes in the training split")
    c = num_classes or int(max(train_y.max(), np.max(eval_y)) + 1)
    mu = train_x.mean(axis=0)
    sd = train_x.std(axis=0)
    sd[sd == 0] = 1.0
    x = (train_x - mu) / sd
    xe = (eval_x - mu) / sd
    n, d = x.shape
    w = np.zeros((d, c))
    b = np.zeros(c)
    onehot = np.eye(c)[train_y]
    for _ in range(iters):
        z = x @ w + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        w -= lr * (x.T @ g + l2_reg * w)
        b -= lr * g.sum(axis=0)
    pred = np.argmax(xe @ w + b, axis=1)
    return float(np.mean(pred == np.asarray(eval_y)))


def linear_probe(
    params: EncoderParams,
    ds: PairedDataset,
    modality: str = "image",
    l2_reg: float = 1e-4,
    iters: int = 500,
) -> float:
    """Probe accuracy of a logistic-regression head on frozen embeddings."""
    which = 0 if modality == "image" else 1
    tr = ds.subset(TRAIN)
    ev = ds.subset(EVAL)
    train_x = embed(params, tr[which], modality)
    eval_x = embed(params, ev[which], modality)
    return fit_linear_probe(train_x, tr[2], eval_x, ev[2], l2_reg, iters, num_classes=ds.num_classes)


def evaluate(params: EncoderParams, ds: PairedDataset, top_ks=TOP_KS, recall_ks=RECALL_KS,
             probe_iters: int = 500, probe_l2: float = 1e-4) -> MetricsReport:
    images, texts, _ = ds.subset(EVAL)
    if len(images) == 0:
        raise ValueError("empty eval split")
    v = embed(params, images, "image")
    t = embed(params, texts, "text")
    s_a, s_u = alignment_uniformity(v, t)
    report = MetricsReport(
        top_k_accuracy=zero_shot_accuracy(params, ds, top_ks),
        recall_i2t=recall_at_k(v @ t.T, recall_ks),
        recall_t2i=recall_at_k(t @ v.T, recall_ks),
        alignment=s_a,
        uniformity=s_u,
        modality_gap=modality_gap(v, t),
        mean_pair_gap=mean_pair_gap(v, t),
        consistency_spearman=consistency_spearman(v, t),
        linear_probe_accuracy=linear_probe(params, ds, "image", probe_l2, probe_iters),
        N=len(images),
    )
    report.check_invariants()
    return report

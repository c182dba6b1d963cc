import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import unit_rows
from rankclip_lab.data import DatasetSpec, PairedDataset, generate_dataset, sample_latents
from rankclip_lab.encoders import EncoderConfig, init_params
from rankclip_lab.metrics import (
    alignment_uniformity,
    consistency_spearman,
    evaluate,
    fit_linear_probe,
    linear_probe,
    mean_pair_gap,
    modality_gap,
    recall_at_k,
    retrieval_recall,
    topk_hits,
    zero_shot_accuracy,
)


@pytest.fixture(scope="module")
def chance_ds():
    return generate_dataset(DatasetSpec(pairs_per_class=20, eval_pairs=1000, seed=0))


# -- zero-shot / retrieval


def test_zero_shot_all_classes_is_one(small_ds):
    acc = zero_shot_accuracy(init_params(EncoderConfig(64, 48)), small_ds, (1, 16))
    assert acc[16] == 1.0


def test_zero_shot_untrained_is_chance(chance_ds):
    top1 = [zero_shot_accuracy(init_params(EncoderConfig(64, 48, init_seed=s)), chance_ds, (1,))[1] for s in range(5)]
    assert abs(np.mean(top1) - 1 / 16) <= 0.05


def test_topk_ties_go_to_lower_index():
    sim = np.array([[0.5, 0.5, 0.1]])
    assert topk_hits(sim, np.array([1]), (1,))[1] == 0.0
    assert topk_hits(sim, np.array([0]), (1,))[1] == 1.0


def test_recall_identity_and_exhaustive_k():
    eye = np.eye(6)
    assert recall_at_k(eye, (1,))[1] == 1.0
    sim = np.random.default_rng(0).standard_normal((6, 6))
    assert recall_at_k(sim, (6,))[6] == 1.0


def test_recall_k_too_large():
    with pytest.raises(ValueError):
        recall_at_k(np.eye(3), (4,))


def test_recall_random_is_chance():
    r1 = []
    for s in range(5):
        rng = np.random.default_rng(s)
        v, t = unit_rows(rng, 500, 16), unit_rows(rng, 500, 16)
        r1.append(recall_at_k(v @ t.T, (1,))[1])
    assert abs(np.mean(r1) - 1 / 500) <= 0.01


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**31))
def test_recall_monotone_in_k(n, seed):
    sim = np.random.default_rng(seed).standard_normal((n, n))
    rec = recall_at_k(sim, range(1, n + 1))
    vals = [rec[k] for k in range(1, n + 1)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_retrieval_recall_directions(small_ds):
    p = init_params(EncoderConfig(64, 48))
    for d in ("i2t", "t2i"):
        rec = retrieval_recall(p, small_ds, (1, 5), d)
        assert 0 <= rec[1] <= rec[5] <= 1
    with pytest.raises(ValueError):
        retrieval_recall(p, small_ds, (1,), "x")


# -- geometry


def test_alignment_identical_pairs(rng):
    v = unit_rows(rng, 7, 4)
    s_a, s_u = alignment_uniformity(v, v)
    assert s_a == pytest.approx(1.0, abs=1e-12)
    off = ~np.eye(7, dtype=bool)
    assert s_u == pytest.approx(math.log(np.mean(np.exp(-(v @ v.T)[off]))), abs=1e-12)


def test_uniformity_orthogonal_pairs():
    assert alignment_uniformity(np.eye(2), np.eye(2))[1] == pytest.approx(0.0, abs=1e-15)


def test_uniformity_all_ones():
    v = np.tile([0.0, 1.0], (3, 1))
    assert alignment_uniformity(v, v)[1] == pytest.approx(-1.0, abs=1e-12)


def test_alignment_needs_two():
    with pytest.raises(ValueError):
        alignment_uniformity(np.eye(1), np.eye(1))


def test_modality_gap_values(rng):
    v = unit_rows(rng, 5, 3)
    assert modality_gap(v, v) == 0.0
    e1, e2 = np.tile([1.0, 0.0], (4, 1)), np.tile([0.0, 1.0], (4, 1))
    assert modality_gap(e1, -e1) == pytest.approx(2.0)
    assert modality_gap(e1, e2) == pytest.approx(math.sqrt(2), abs=1e-12)
    assert mean_pair_gap(e1, e2) == pytest.approx(math.sqrt(2), abs=1e-12)
    with pytest.raises(ValueError):
        modality_gap(np.zeros((0, 2)), np.zeros((0, 2)))


# -- consistency


def test_spearman_identical(rng):
    v = unit_rows(rng, 12, 5)
    assert consistency_spearman(v, v) == pytest.approx(1.0, abs=1e-12)


def test_spearman_reversed_rows():
    from rankclip_lab.metrics import spearman_rows

    rng = np.random.default_rng(3)
    a = rng.standard_normal((6, 6))
    assert spearman_rows(a, -a) == pytest.approx(-1.0, abs=1e-12)


def test_spearman_null():
    vals = []
    for s in range(5):
        rng = np.random.default_rng(s)
        vals.append(consistency_spearman(unit_rows(rng, 200, 16), unit_rows(rng, 200, 16)))
    assert np.mean(np.abs(vals)) < 0.1


def test_spearman_rank_invariance(rng):
    from rankclip_lab.metrics import spearman_rows

    a, b = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
    assert spearman_rows(a, b) == pytest.approx(spearman_rows(np.exp(3 * a) - 1, b), abs=1e-12)


def test_spearman_needs_three():
    with pytest.raises(ValueError):
        consistency_spearman(np.eye(2), np.eye(2))


# -- linear probe


def test_probe_separable():
    x = np.repeat(np.eye(4), 10, axis=0)
    y = np.repeat(np.arange(4), 10)
    assert fit_linear_probe(x, y, x, y, iters=200) == 1.0


def test_probe_on_prototype_latents():
    spec = DatasetSpec(pairs_per_class=5, eval_pairs=32, noise_std=0.0, seed=4)
    draw = sample_latents(spec)
    tr, ev = draw["split"] == 0, draw["split"] == 1
    acc = fit_linear_probe(draw["image_latent"][tr], draw["labels"][tr], draw["image_latent"][ev], draw["labels"][ev], iters=300)
    assert acc == 1.0


def test_probe_zero_noise_embeddings():
    ds = generate_dataset(DatasetSpec(pairs_per_class=5, eval_pairs=32, noise_std=0.0, seed=4))
    assert linear_probe(init_params(EncoderConfig(64, 48)), ds, iters=500) == 1.0


def test_probe_permuted_labels_is_chance():
    ds = generate_dataset(DatasetSpec(pairs_per_class=60, eval_pairs=1000, seed=1))
    accs = []
    for s in range(5):
        shuffled = PairedDataset(ds.image_raw, ds.text_raw, np.random.default_rng(s).permutation(ds.labels),
                                 ds.class_prototype_sim, ds.split)
        accs.append(linear_probe(init_params(EncoderConfig(64, 48, init_seed=s)), shuffled, iters=200))
    assert abs(np.mean(accs) - 1 / 16) <= 0.05


def test_probe_single_class():
    with pytest.raises(ValueError):
        fit_linear_probe(np.ones((4, 2)), np.zeros(4), np.ones((2, 2)), np.zeros(2))


# -- report


def test_report_invariants_and_determinism(small_ds):
    p = init_params(EncoderConfig(64, 48))
    a, b = evaluate(p, small_ds), evaluate(p, small_ds)
    a.check_invariants()
    assert a.to_json() == b.to_json() and a.to_csv() == b.to_csv()
    header = a.to_csv().splitlines()[0].split(",")
    assert header[:4] == ["N", "top1", "top3", "top5"]
    assert header[-1] == "linear_probe_accuracy"

import numpy as np
import pytest

from rankclip_lab.data import (
    EVAL,
    TRAIN,
    DatasetFormatError,
    DatasetSpec,
    batch_iter,
    batch_indices,
    generate_dataset,
    load_dataset,
    sample_latents,
    save_dataset,
)


def test_zero_noise_classes_identical():
    ds = generate_dataset(DatasetSpec(noise_std=0.0, pairs_per_class=5, eval_pairs=16, seed=1))
    for c in range(ds.num_classes):
        rows = ds.labels == c
        assert np.ptp(ds.image_raw[rows], axis=0).max() == 0.0
        assert np.ptp(ds.text_raw[rows], axis=0).max() == 0.0


def test_orthogonal_prototypes_at_zero_corr():
    ds = generate_dataset(DatasetSpec(within_super_corr=0.0, pairs_per_class=2, eval_pairs=0))
    np.testing.assert_allclose(ds.class_prototype_sim, np.eye(16), atol=1e-9)


def test_hierarchical_similarity():
    spec = DatasetSpec(within_super_corr=0.6, pairs_per_class=2, eval_pairs=0)
    sim = generate_dataset(spec).class_prototype_sim
    sup = np.arange(16) // 4
    same = (sup[:, None] == sup[None, :]) & ~np.eye(16, dtype=bool)
    np.testing.assert_allclose(sim[same], 0.6, atol=1e-9)
    np.testing.assert_allclose(sim[sup[:, None] != sup[None, :]], 0.0, atol=1e-9)
    assert np.array_equal(sim, sim.T) and np.all(np.diag(sim) == 1.0)


def test_latent_dim_too_small():
    with pytest.raises(ValueError, match="too small"):
        generate_dataset(DatasetSpec(latent_dim=4))


def test_empirical_class_means_match_ground_truth():
    spec = DatasetSpec(noise_std=0.05, pairs_per_class=200, eval_pairs=0, seed=11)
    draw = sample_latents(spec)
    means = np.stack([draw["image_latent"][draw["labels"] == c].mean(axis=0) for c in range(16)])
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    assert np.max(np.abs(means @ means.T - draw["class_prototype_sim"])) <= 0.05


def test_generation_deterministic(small_spec, small_ds):
    assert generate_dataset(small_spec).equals(small_ds)


def test_splits(small_ds, small_spec):
    assert len(small_ds.indices(TRAIN)) == 16 * small_spec.pairs_per_class
    assert len(small_ds.indices(EVAL)) == small_spec.eval_pairs


def test_batches_deterministic(small_ds):
    a = [b[2].tolist() for b in batch_iter(small_ds, 10, 5)]
    b = [b[2].tolist() for b in batch_iter(small_ds, 10, 5)]
    assert a == b
    assert a != [b[2].tolist() for b in batch_iter(small_ds, 10, 6)]


@pytest.mark.parametrize("bs", [2, 7, 10, 191])
def test_batches_partition_train(small_ds, bs):
    train = small_ds.indices(TRAIN)
    batches = batch_indices(small_ds, bs, 0)
    seen = np.concatenate(batches)
    assert len(seen) == len(set(seen.tolist()))
    dropped = len(train) % bs if len(train) % bs < 2 else 0
    assert len(seen) == len(train) - dropped
    assert set(seen.tolist()) <= set(train.tolist())


def test_batch_size_larger_than_dataset(small_ds):
    batches = batch_indices(small_ds, 10_000, 0)
    assert len(batches) == 1 and len(batches[0]) == len(small_ds.indices(TRAIN))


def test_batch_size_too_small(small_ds):
    with pytest.raises(ValueError):
        batch_indices(small_ds, 1, 0)


def test_round_trip(tmp_path, small_ds):
    path = tmp_path / "d.rcld"
    save_dataset(small_ds, path)
    back = load_dataset(path)
    assert back.equals(small_ds)
    save_dataset(back, tmp_path / "e.rcld")
    assert path.read_bytes() == (tmp_path / "e.rcld").read_bytes()


def test_header_layout(tmp_path, small_ds):
    path = tmp_path / "d.rcld"
    save_dataset(small_ds, path)
    raw = path.read_bytes()
    assert raw[:4] == b"RCLD"
    assert int.from_bytes(raw[4:6], "little") == 1
    assert int.from_bytes(raw[6:10], "little") == 64
    assert int.from_bytes(raw[10:14], "little") == 48
    assert int.from_bytes(raw[14:22], "little") == len(small_ds.labels)
    assert int.from_bytes(raw[22:26], "little") == 16


def test_bad_magic(tmp_path, small_ds):
    path = tmp_path / "d.rcld"
    save_dataset(small_ds, path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match="bad magic"):
        load_dataset(path)


def test_version_bump(tmp_path, small_ds):
    path = tmp_path / "d.rcld"
    save_dataset(small_ds, path)
    raw = bytearray(path.read_bytes())
    raw[4] = 2
    path.write_bytes(bytes(raw))
    with pytest.raises(DatasetFormatError, match="unsupported version"):
        load_dataset(path)


def test_truncated(tmp_path, small_ds):
    path = tmp_path / "d.rcld"
    save_dataset(small_ds, path)
    path.write_bytes(path.read_bytes()[:-9])
    with pytest.raises(DatasetFormatError, match="truncated"):
        load_dataset(path)


def test_class_text_inputs_exact_at_zero_noise():
    spec = DatasetSpec(noise_std=0.0, pairs_per_class=3, eval_pairs=16, seed=2)
    ds = generate_dataset(spec)
    draw = sample_latents(spec)
    np.testing.assert_allclose(ds.class_text_inputs(), draw["prototypes"] @ draw["w_txt"].T, atol=1e-12)

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import unit_rows
from rankclip_lab import tensor as T
from rankclip_lab.losses import (
    LossConfig,
    clip_infonce,
    cross_modal_loss,
    in_modal_loss,
    lambda_schedule,
    rankclip_total,
    schedule_fraction,
)
from rankclip_lab.ranking import RankLossConfig, brute_force_rank_nll

IDENTITY_N2 = -math.log(math.e / (math.e + 1))  # 0.31326...


def test_clip_uniform_similarity():
    v = np.tile([1.0, 0.0, 0.0], (4, 1))
    assert clip_infonce(v, v, 1.0).item() == pytest.approx(math.log(4), abs=1e-12)


def test_clip_identity_similarity():
    e = np.eye(2)
    assert clip_infonce(e, e, 1.0).item() == pytest.approx(IDENTITY_N2, abs=1e-9)
    assert IDENTITY_N2 == pytest.approx(0.31326, abs=1e-5)


def test_clip_sharper_temperature_lowers_identity_loss():
    e = np.eye(3)
    losses = [clip_infonce(e, e, tau).item() for tau in (1.0, 0.5, 0.2, 0.07)]
    assert all(a > b for a, b in zip(losses, losses[1:]))


def test_clip_learnable_scale_matches_fixed_tau(rng):
    v, t = unit_rows(rng, 5, 4), unit_rows(rng, 5, 4)
    fixed = clip_infonce(v, t, 0.07).item()
    learned = clip_infonce(v, t, log_scale=T.Tensor(math.log(1 / 0.07))).item()
    assert learned == pytest.approx(fixed, rel=1e-13)


def test_clip_scale_is_clamped(rng):
    v, t = unit_rows(rng, 4, 3), unit_rows(rng, 4, 3)
    s = T.Tensor(math.log(1000.0), requires_grad=True)
    loss = clip_infonce(v, t, log_scale=s)
    assert loss.item() == pytest.approx(clip_infonce(v, t, 0.01).item(), rel=1e-12)
    T.backward(loss)
    assert s.grad == 0.0


def test_clip_errors(rng):
    with pytest.raises(ValueError, match="unit-norm"):
        clip_infonce(np.ones((2, 2)), np.eye(2), 1.0)
    with pytest.raises(ValueError):
        clip_infonce(np.eye(2), np.eye(2), 0.0)


def test_cross_modal_single_pair():
    assert cross_modal_loss([[1.0, 0.0]], [[0.0, 1.0]]).item() == 0.0


def test_cross_modal_aligned_matches_oracle(rng):
    v = unit_rows(rng, 5, 3)
    a = v @ v.T
    oracle = np.mean([brute_force_rank_nll(a[j], a[j]) for j in range(5)])
    assert cross_modal_loss(v, v).item() == pytest.approx(2 * oracle, abs=1e-8)


def test_in_modal_orthonormal_n2_matches_oracle():
    e = np.eye(2)
    expected = 2 * brute_force_rank_nll([1.0, 0.0], [1.0, 0.0])
    assert in_modal_loss(e, e).item() == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(2 * IDENTITY_N2, abs=1e-12)


def test_in_modal_single_pair():
    assert in_modal_loss([[1.0, 0.0]], [[0.0, 1.0]]).item() == 0.0


def test_in_modal_identical_inputs_is_twice_one_term(rng):
    from rankclip_lab.ranking import rank_loss

    v = unit_rows(rng, 5, 3)
    cfg = RankLossConfig(shuffle_seed=4)
    one = rank_loss(T.Tensor(v @ v.T), v @ v.T, cfg).item()
    assert in_modal_loss(v, v, cfg).item() == pytest.approx(2 * one, abs=1e-12)


def test_shape_mismatch(rng):
    with pytest.raises(T.ShapeError):
        cross_modal_loss(unit_rows(rng, 3, 2), unit_rows(rng, 4, 2))
    with pytest.raises(T.ShapeError):
        in_modal_loss(unit_rows(rng, 3, 2), unit_rows(rng, 3, 3))


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 7), st.integers(2, 6), st.integers(0, 2**31))
def test_argument_symmetry(n, d, seed):
    rng = np.random.default_rng(seed)
    v, t = unit_rows(rng, n, d), unit_rows(rng, n, d)
    cfg = RankLossConfig(shuffle_seed=seed)
    assert abs(cross_modal_loss(v, t, cfg).item() - cross_modal_loss(t, v, cfg).item()) <= 1e-12
    assert abs(in_modal_loss(v, t, cfg).item() - in_modal_loss(t, v, cfg).item()) <= 1e-12


def test_total_zero_lambdas_is_clip(rng):
    v, t = unit_rows(rng, 4, 3), unit_rows(rng, 4, 3)
    bd = rankclip_total(v, t, LossConfig(temperature_tau=0.3), 0.0, 0.0)
    assert bd.total == clip_infonce(v, t, 0.3).item()


def test_total_clip_only_zeroes_rank_terms(rng):
    v, t = unit_rows(rng, 4, 3), unit_rows(rng, 4, 3)
    bd = rankclip_total(v, t, LossConfig(ablation="clip_only"), 2.0, 2.0)
    assert bd.l_in == 0.0 and bd.l_cross == 0.0
    assert bd.total == bd.l_clip


@pytest.mark.parametrize("ablation,zero", [("cross_only", "l_in"), ("in_only", "l_cross")])
def test_total_single_term_ablations(ablation, zero, rng):
    v, t = unit_rows(rng, 4, 3), unit_rows(rng, 4, 3)
    bd = rankclip_total(v, t, LossConfig(ablation=ablation), 1.0, 1.0)
    assert getattr(bd, zero) == 0.0
    assert bd.total == pytest.approx(bd.l_clip + bd.l_in + bd.l_cross, abs=1e-12)


def test_total_fixed_lambdas_additivity(rng):
    v, t = unit_rows(rng, 4, 5), unit_rows(rng, 4, 5)
    cfg = LossConfig(temperature_tau=0.07, rank_cfg=RankLossConfig(shuffle_seed=2))
    bd = rankclip_total(v, t, cfg, 1 / 16, 1 / 16)
    recomputed = (
        clip_infonce(v, t, 0.07).item()
        + in_modal_loss(v, t, cfg.rank_cfg).item() / 16
        + cross_modal_loss(v, t, cfg.rank_cfg).item() / 16
    )
    assert abs(bd.total - recomputed) <= 1e-12


def test_total_negative_lambda(rng):
    v = unit_rows(rng, 3, 3)
    with pytest.raises(ValueError):
        rankclip_total(v, v, LossConfig(), -0.1, 0.0)


def test_temperature_isolation(rng):
    v, t = unit_rows(rng, 6, 4), unit_rows(rng, 6, 4)
    a = rankclip_total(v, t, LossConfig(temperature_tau=0.07), 1.0, 1.0)
    b = rankclip_total(v, t, LossConfig(temperature_tau=0.9), 1.0, 1.0)
    assert a.l_clip != b.l_clip
    assert a.l_in == b.l_in and a.l_cross == b.l_cross


def test_total_gradient_through_normalization(rng):
    n = 5
    cfg = LossConfig(temperature_tau=0.2, rank_cfg=RankLossConfig(shuffle_seed=8))

    def f(x):
        v = T.l2_normalize_rows(T.matmul(T.Tensor(np.eye(2 * n)[:n]), x))
        t = T.l2_normalize_rows(T.matmul(T.Tensor(np.eye(2 * n)[n:]), x))
        return rankclip_total(v, t, cfg, 0.5, 1.5).total_tensor

    assert T.finite_diff_check(f, rng.standard_normal((2 * n, 4))) < 1e-5


# -- schedule


def test_schedule_first_epoch():
    assert lambda_schedule(1, 64) == (2 / 63, 2 / 63)
    assert schedule_fraction(1, 64) == Fraction(2, 63)


def test_schedule_upper_clamp():
    assert lambda_schedule(43, 64) == (2.0, 2.0)
    assert schedule_fraction(42, 64) < 2


def test_schedule_fixed_mode():
    assert lambda_schedule(5, 64, "fixed", (1 / 16, 1 / 16)) == (0.0625, 0.0625)


def test_schedule_errors():
    with pytest.raises(ValueError):
        lambda_schedule(1, 1)
    with pytest.raises(ValueError):
        lambda_schedule(0, 10)
    with pytest.raises(ValueError):
        lambda_schedule(11, 10)


@given(st.integers(2, 500))
def test_schedule_monotone_and_bounded(n):
    vals = [schedule_fraction(i, n) for i in range(1, n + 1)]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert all(0 <= v <= 2 for v in vals)

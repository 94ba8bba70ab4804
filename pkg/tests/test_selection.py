import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curing.errors import DimensionMismatch, MissingActivations, MissingSeed, SingularSubsystem
from curing.selection import STRATEGIES, deim_indices, select_indices, top_k, wanda_importance


def deim_oracle(V):
    """Straight DEIM recurrence with explicit projections (lowest-index ties)."""
    m, r = V.shape
    chosen = []
    for j in range(r):
        u = V[:, j].copy()
        if chosen:
            B = V[:, :j]
            Pt = np.zeros((m, j))
            Pt[chosen, range(j)] = 1.0
            u = u - B @ np.linalg.inv(Pt.T @ B) @ (Pt.T @ u)
        mags = np.abs(u)
        chosen.append(int(np.flatnonzero(mags == mags.max())[0]))
    return chosen


def test_wanda_unit_norms_give_abs_w():
    S = wanda_importance(np.array([[1.0, -2.0], [3.0, 4.0]]), [1.0, 1.0]).S
    np.testing.assert_array_equal(S, [[1, 2], [3, 4]])


def test_wanda_zero_activations(rng):
    assert not wanda_importance(rng.standard_normal((4, 3)), np.zeros(4)).S.any()


def test_wanda_scalar():
    np.testing.assert_array_equal(wanda_importance([[2.0]], [3.0]).S, [[6.0]])


def test_wanda_scales_rows_not_columns():
    S = wanda_importance(np.ones((2, 3)), [2.0, 5.0]).S
    np.testing.assert_array_equal(S, [[2, 2, 2], [5, 5, 5]])


def test_wanda_dimension_mismatch(rng):
    with pytest.raises(DimensionMismatch):
        wanda_importance(rng.standard_normal((4, 3)), np.ones(3))


def test_wanda_negative_norms_rejected():
    with pytest.raises(ValueError):
        wanda_importance(np.eye(2), [1.0, -1.0])


def test_deim_canonical_basis():
    np.testing.assert_array_equal(deim_indices(np.eye(4)[:, :2], 2), [0, 1])


def test_deim_single_column():
    np.testing.assert_array_equal(deim_indices(np.array([[0.1], [0.9], [0.3]]), 1), [1])


def test_deim_tie_goes_to_lowest_index():
    np.testing.assert_array_equal(deim_indices(np.array([[0.5], [-0.5], [0.5]]), 1), [0])


@pytest.mark.parametrize("seed", range(5))
def test_deim_matches_recurrence_oracle(seed):
    V, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((6, 3)))
    assert deim_indices(V, 3).tolist() == deim_oracle(V)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 30), st.integers(1, 8))
def test_deim_distinct_and_interpolating(seed, m, r):
    r = min(r, m)
    V, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((m, r)))
    idx = deim_indices(V, r)
    assert len(set(idx.tolist())) == r
    assert idx.tolist() == deim_oracle(V)
    assert np.linalg.cond(V[idx, :]) < 1e12


def test_deim_singular_subsystem():
    V = np.array([[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
    with pytest.raises(SingularSubsystem):
        deim_indices(V, 2)


def test_deim_rank_too_large():
    with pytest.raises(DimensionMismatch):
        deim_indices(np.eye(3)[:, :2], 3)


def test_weight_norm_diagonal():
    sel = select_indices(np.diag([5.0, 3.0, 1.0]), "weight-norm", 2)
    assert sel.p.tolist() == [0, 1] and sel.q.tolist() == [0, 1] and sel.r == 2


def test_random_is_seed_deterministic(rng):
    W = rng.standard_normal((10, 7))
    a = select_indices(W, "random", 2, seed=5)
    b = select_indices(W, "random", 2, seed=5)
    assert a.p.tolist() == b.p.tolist() and a.q.tolist() == b.q.tolist()
    assert len(set(a.p.tolist())) == 2


def test_wanda_deim_matches_independent_deim_over_s():
    rng = np.random.default_rng(11)
    W = rng.standard_normal((8, 8))
    act = np.full(8, 0.05)
    act[[2, 5]] = 20.0
    sel = select_indices(W, "wanda-deim", 2, act_norms=act)
    U, _, Vt = np.linalg.svd(np.abs(W) * act[:, None])
    assert sel.p.tolist() == deim_oracle(U[:, :2])
    assert sel.q.tolist() == deim_oracle(Vt.T[:, :2])
    assert set(sel.p.tolist()) <= {2, 5}


def test_wanda_only_picks_largest_norms(rng):
    W = rng.standard_normal((6, 5))
    act = rng.random(6)
    S = np.abs(W) * act[:, None]
    sel = select_indices(W, "wanda-only", 3, act_norms=act)
    assert set(sel.p.tolist()) == set(np.argsort(-np.linalg.norm(S, axis=1))[:3].tolist())
    assert set(sel.q.tolist()) == set(np.argsort(-np.linalg.norm(S, axis=0))[:3].tolist())


def test_activation_scaling_leaves_deim_unchanged(rng):
    W = rng.standard_normal((9, 7))
    act = rng.random(9) + 0.1
    a = select_indices(W, "wanda-deim", 4, act_norms=act)
    b = select_indices(W, "wanda-deim", 4, act_norms=7.5 * act)
    assert a.p.tolist() == b.p.tolist() and a.q.tolist() == b.q.tolist()
    np.testing.assert_allclose(wanda_importance(W, 7.5 * act).S, 7.5 * wanda_importance(W, act).S)


@pytest.mark.parametrize("strategy", ["wanda-deim", "wanda-only"])
def test_missing_activations(rng, strategy):
    with pytest.raises(MissingActivations):
        select_indices(rng.standard_normal((4, 4)), strategy, 2)


def test_missing_seed(rng):
    with pytest.raises(MissingSeed):
        select_indices(rng.standard_normal((4, 4)), "random", 2)


def test_bad_rank_and_strategy(rng):
    W = rng.standard_normal((4, 3))
    with pytest.raises(DimensionMismatch):
        select_indices(W, "deim-only", 4)
    with pytest.raises(ValueError):
        select_indices(W, "magic", 2)


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_every_strategy_returns_valid_selection(rng, strategy):
    W = rng.standard_normal((12, 9))
    sel = select_indices(W, strategy, 5, act_norms=rng.random(12), seed=0)
    assert len(sel.p) == len(sel.q) == 5
    assert len(set(sel.p.tolist())) == 5 and len(set(sel.q.tolist())) == 5
    assert sel.p.max() < 12 and sel.q.max() < 9 and min(sel.p.min(), sel.q.min()) >= 0


def test_top_k_stable():
    assert top_k(np.array([1.0, 3.0, 3.0, 2.0]), 2).tolist() == [1, 2]

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curing.cur import (
    CurFactors, compute_core, cur_decompose, error_bound_check, eta_limits, param_count, select_rank,
)
from curing.errors import DimensionMismatch, RankExceedsSpectrum
from curing.selection import wanda_importance


def lstsq_core_residual(W, C, R):
    """min_U ||W - C U R||_F by vectorisation: vec(CUR) = (R^T kron C) vec(U)."""
    K = np.kron(R.T, C)
    u, *_ = np.linalg.lstsq(K, W.flatten(order="F"), rcond=None)
    return np.linalg.norm(W.flatten(order="F") - K @ u)


def test_select_rank_llama_gate_capped():
    assert select_rank(4096, 14336, 256) == 256


def test_select_rank_unbounded():
    # sqrt(4096^2 + 6*4096*14336 + 14336^2) = 23971.2..., (23971.2 - 18432)/2 = 2769.6 -> 2^11
    assert select_rank(4096, 14336) == 2048


def test_select_rank_tiny():
    assert select_rank(4, 4, 256) == 1


def test_select_rank_argument_below_one():
    assert select_rank(1, 1) == 1


def test_select_rank_rejects_bad_input():
    with pytest.raises(ValueError):
        select_rank(0, 3)
    with pytest.raises(ValueError):
        select_rank(3, 3, 0)


@settings(max_examples=200, deadline=None)
@given(st.integers(5, 5000), st.integers(5, 5000), st.one_of(st.none(), st.integers(1, 512)))
def test_selected_rank_always_reduces(m, n, r_max):
    r = select_rank(m, n, r_max)
    assert r & (r - 1) == 0 or r == r_max
    assert param_count(m, n, r).reduces
    if r_max is None:
        assert not param_count(m, n, min(2 * r, m, n)).reduces or 2 * r > min(m, n) or \
            m * n <= m * 2 * r + 4 * r * r + 2 * r * n


def test_param_count_llama_gate():
    pc = param_count(4096, 14336, 256)
    assert pc.original == 58_720_256 and pc.compressed == 4_784_128
    assert pc.saved == 58_720_256 - 4_784_128 and pc.reduces


def test_param_count_full_rank_inflates():
    pc = param_count(4, 4, 4)
    assert pc.compressed == 48 and pc.original == 16 and not pc.reduces


def test_param_count_small_rank():
    pc = param_count(10, 10, 2)
    assert pc.compressed == 44 and pc.reduces


def test_param_count_rank_too_large():
    with pytest.raises(DimensionMismatch):
        param_count(3, 5, 4)


def test_identity_full_rank():
    f = cur_decompose(np.eye(4), 4, "deim-only")
    np.testing.assert_allclose(f.reconstruct(), np.eye(4), atol=1e-10)


def test_rank_two_recovered(rng):
    W = np.outer(rng.standard_normal(7), rng.standard_normal(5)) + np.outer(rng.standard_normal(7), rng.standard_normal(5))
    f = cur_decompose(W, 2, "deim-only")
    assert np.linalg.norm(W - f.reconstruct()) < 1e-8


@pytest.mark.parametrize("k", [1, 3, 6])
def test_rank_k_exact_at_r_equals_k(rng, k):
    W = rng.standard_normal((20, k)) @ rng.standard_normal((k, 15))
    for strategy in ("deim-only", "wanda-deim"):
        f = cur_decompose(W, k, strategy, act_norms=rng.random(20) + 0.1)
        assert np.linalg.norm(W - f.reconstruct()) < 1e-8 * np.linalg.norm(W)


def test_factors_are_copies_of_w(rng):
    W = rng.standard_normal((9, 6))
    f = cur_decompose(W, 3, "random", seed=2)
    np.testing.assert_array_equal(f.C, W[:, f.q])
    np.testing.assert_array_equal(f.R, W[f.p, :])
    assert not f.dU.any() and f.shape == (9, 6) and f.r == 3
    assert f.n_params == 9 * 3 + 9 + 3 * 6


def test_factors_validate_shapes(rng):
    with pytest.raises(DimensionMismatch):
        CurFactors(C=np.zeros((4, 2)), U0=np.zeros((2, 2)), dU=np.zeros((3, 3)), R=np.zeros((2, 5)),
                   p=np.array([0, 1]), q=np.array([0, 1]))


def test_apply_uses_thin_products(rng):
    W = rng.standard_normal((8, 6))
    f = cur_decompose(W, 3, "deim-only")
    f.dU = rng.standard_normal((3, 3))
    x = rng.standard_normal((4, 8))
    np.testing.assert_allclose(f.apply(x), x @ (f.C @ (f.U0 + f.dU) @ f.R), atol=1e-12)
    np.testing.assert_allclose(f.core, f.U0 + f.dU)


def test_compute_core_identity():
    np.testing.assert_allclose(compute_core(np.eye(3), np.eye(3), np.eye(3)), np.eye(3), atol=1e-14)


def test_compute_core_full_rank_exact(rng):
    W = rng.standard_normal((7, 5))
    f = cur_decompose(W, 5, "random", seed=1)
    assert np.linalg.norm(W - f.reconstruct()) < 1e-8


def test_compute_core_rejects_nonconforming(rng):
    with pytest.raises(DimensionMismatch):
        compute_core(np.zeros((4, 3)), np.zeros((5, 2)), np.zeros((2, 3)))


@pytest.mark.parametrize("seed", range(10))
def test_core_matches_vectorised_least_squares(seed):
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((12, 10))
    f = cur_decompose(W, 3, "deim-only")
    ours = np.linalg.norm(W - f.reconstruct())
    best = lstsq_core_residual(W, f.C, f.R)
    assert abs(ours - best) <= 1e-8 * best


def test_core_is_stationary(rng):
    W = rng.standard_normal((12, 10))
    f = cur_decompose(W, 4, "deim-only")
    grad = 2 * f.C.T @ (f.reconstruct() - W) @ f.R.T
    assert np.linalg.norm(grad) < 1e-6 * np.linalg.norm(W)


def test_bound_rank_two_exact(rng):
    W = rng.standard_normal((8, 2)) @ rng.standard_normal((2, 6))
    rep = error_bound_check(W, cur_decompose(W, 2, "deim-only"))
    assert rep.lhs < 1e-10 and rep.holds


@pytest.mark.parametrize("r", [4, 8, 16])
def test_bound_holds_with_w_vectors(r):
    rng = np.random.default_rng(r)
    for _ in range(5):
        W = rng.standard_normal((64, 48))
        f = cur_decompose(W, r, "deim-only")
        rep = error_bound_check(W, f)
        sig = np.linalg.svd(W, compute_uv=False)
        assert rep.sigma_next == pytest.approx(sig[r], rel=1e-10)
        assert rep.lhs == pytest.approx(np.linalg.norm(W - f.reconstruct(), 2), rel=1e-10)
        assert rep.holds and rep.lhs <= rep.rhs * (1 + 1e-8)
        lp, lq = eta_limits(64, 48, r)
        assert rep.eta_p < lp and rep.eta_q < lq


def test_bound_eta_matches_inverse_norm(rng):
    W = rng.standard_normal((20, 15))
    f = cur_decompose(W, 5, "deim-only")
    rep = error_bound_check(W, f)
    U, _, Vt = np.linalg.svd(W)
    eta_p = np.linalg.norm(np.linalg.inv(U[f.p, :5]), 2)
    eta_q = np.linalg.norm(np.linalg.inv(Vt.T[f.q, :5]), 2)
    assert rep.eta_p == pytest.approx(eta_p, rel=1e-8)
    assert rep.eta_q == pytest.approx(eta_q, rel=1e-8)


def test_bound_report_s_source(rng):
    W = rng.standard_normal((30, 20))
    act = rng.random(30) + 0.1
    f = cur_decompose(W, 6, "wanda-deim", act_norms=act)
    rep = error_bound_check(W, f, "S", S=wanda_importance(W, act))
    assert rep.vector_source == "S" and math.isfinite(rep.rhs) and rep.rhs > 0
    assert rep.as_dict()["vector_source"] == "S"


def test_bound_full_rank_reports_zero_rhs(rng):
    W = rng.standard_normal((6, 4))
    rep = error_bound_check(W, cur_decompose(W, 4, "deim-only"))
    assert rep.rhs == 0 and rep.sigma_next == 0 and rep.holds


def test_bound_errors(rng):
    W = rng.standard_normal((6, 4))
    f = cur_decompose(W, 2, "deim-only")
    with pytest.raises(ValueError):
        error_bound_check(W, f, "S")
    with pytest.raises(ValueError):
        error_bound_check(W, f, "X")
    big = CurFactors(C=np.zeros((3, 3)), U0=np.zeros((3, 3)), dU=np.zeros((3, 3)), R=np.zeros((3, 2)),
                     p=np.arange(3), q=np.array([0, 1, 0]))
    with pytest.raises(RankExceedsSpectrum):
        error_bound_check(np.zeros((3, 2)), big)


def test_copy_is_independent(rng):
    f = cur_decompose(rng.standard_normal((5, 5)), 2, "deim-only")
    g = f.copy()
    g.dU[0, 0] = 1.0
    assert f.dU[0, 0] == 0.0

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdml.core import Kernel
from cdml.errors import InvalidArgumentError, NoValidBandwidthError
from cdml.llreg import (
    LocalLinearCurve,
    default_bandwidth_grid,
    default_grid,
    fit_local_linear,
    loo_cv_scores,
    pick_bandwidth,
    select_bandwidth,
)

EPA = Kernel("epanechnikov")


def test_recovers_linear_function_exactly(rng):
    V = rng.uniform(size=300)
    S = 2.0 + 3.0 * V
    grid = np.linspace(0.1, 0.9, 9)
    c = fit_local_linear(S, V, grid, 0.2)
    assert np.max(np.abs(c.theta_hat - (2 + 3 * grid))) < 1e-10
    assert np.allclose(c.beta_hat[:, 0], 3.0, atol=1e-9)
    assert np.max(c.se) < 1e-10


def test_constant_outcome(rng):
    V = rng.uniform(size=100)
    c = fit_local_linear(np.full(100, -1.25), V, [0.5], 0.3)
    assert c.theta_hat[0] == pytest.approx(-1.25, abs=1e-12)


def test_small_sample_normal_equations():
    rng = np.random.default_rng(4)
    V = rng.uniform(size=12)
    S = rng.standard_normal(12)
    v0, h = 0.5, 10.0
    c = fit_local_linear(S, V, [v0], h)
    # independent oracle: raw-scale design solved by weighted lstsq
    w = 0.75 * (1 - ((V - v0) / h) ** 2) / h
    X = np.column_stack([np.ones(12), V - v0])
    sw = np.sqrt(w)
    coef = np.linalg.lstsq(X * sw[:, None], S * sw, rcond=None)[0]
    assert c.theta_hat[0] == pytest.approx(coef[0], abs=1e-10)
    assert c.beta_hat[0, 0] == pytest.approx(coef[1], abs=1e-10)
    e = S - X @ coef
    A = X.T @ (X * w[:, None])
    B = (X * (w * e)[:, None]).T @ (X * (w * e)[:, None])
    Ai = np.linalg.inv(A)
    assert c.se[0] == pytest.approx(np.sqrt((Ai @ B @ Ai)[0, 0]), abs=1e-10)


def test_tie_break_prefers_largest_bandwidth():
    assert pick_bandwidth([0.1, 0.2, 0.3], [1.0, 0.5, 0.5]) == 0.3
    assert pick_bandwidth([0.3, 0.1, 0.2], [0.5, 0.5 * (1 + 1e-12), 2.0]) == 0.3
    V = np.linspace(0, 1, 60)
    assert np.all(loo_cv_scores(1 + V, V, "epanechnikov", [0.2, 0.3, 0.4]) <= 1e-16)
    assert select_bandwidth(1 + V, V, "epanechnikov", [0.2, 0.3, 0.4]) == 0.4


def test_singleton_grid_skips_cv():
    assert select_bandwidth(np.zeros(3), np.zeros(3), "epanechnikov", [0.5], undersmooth=0.8) == pytest.approx(0.4)
    with pytest.raises(InvalidArgumentError):
        select_bandwidth(np.zeros(3), np.zeros(3), "epanechnikov", [])


def test_pure_noise_prefers_wide_bandwidths():
    upper = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        V = rng.uniform(size=200)
        S = rng.standard_normal(200)
        cands = default_bandwidth_grid(V)
        h = select_bandwidth(S, V, "epanechnikov", cands)
        upper += h >= cands[6]
    assert upper >= 80


def test_se_scales_with_noise_level():
    se1, se2 = [], []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        V = rng.uniform(size=500)
        se1.append(fit_local_linear(V + rng.standard_normal(500), V, [0.5], 0.2).se[0])
        se2.append(fit_local_linear(V + 2 * rng.standard_normal(500), V, [0.5], 0.2).se[0])
    assert 1.7 <= np.median(se2) / np.median(se1) <= 2.3


def test_homoskedastic_coverage_with_undersmoothing():
    hits = 0
    n, v0 = 1000, 0.5
    h = 0.8 * 0.5 * n ** (-1 / 5)
    for seed in range(500):
        rng = np.random.default_rng(seed)
        V = rng.uniform(size=n)
        S = np.sin(2 * V) + 0.5 * rng.standard_normal(n)
        c = fit_local_linear(S, V, [v0], h)
        hits += abs(c.theta_hat[0] - np.sin(2 * v0)) <= 1.959963984540054 * c.se[0]
    assert 0.90 <= hits / 500 <= 0.98


@given(a=st.floats(-5, 5).filter(lambda t: abs(t) > 1e-3), b=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_affine_equivariance_in_outcome(a, b, seed):
    rng = np.random.default_rng(seed)
    V = rng.uniform(size=80)
    S = np.sin(6 * V) + rng.standard_normal(80)
    grid = [0.3, 0.5, 0.7]
    c1 = fit_local_linear(S, V, grid, 0.3)
    c2 = fit_local_linear(a * S + b, V, grid, 0.3)
    assert np.allclose(c2.theta_hat, a * c1.theta_hat + b, atol=1e-9)
    assert np.allclose(c2.se, abs(a) * c1.se, rtol=1e-7, atol=1e-12)


@given(shift=st.floats(-10, 10), scale=st.floats(0.1, 10), seed=st.integers(0, 1000))
def test_invariance_to_rescaling_v(shift, scale, seed):
    rng = np.random.default_rng(seed)
    V = rng.uniform(size=80)
    S = V**2 + rng.standard_normal(80)
    grid = np.array([0.3, 0.5, 0.7])
    c1 = fit_local_linear(S, V, grid, 0.3)
    c2 = fit_local_linear(S, scale * V + shift, scale * grid + shift, 0.3 * scale)
    assert np.allclose(c2.theta_hat, c1.theta_hat, atol=1e-8)


@given(seed=st.integers(0, 1000))
def test_reproduces_linear_functions(seed):
    rng = np.random.default_rng(seed)
    V = rng.uniform(-1, 1, size=(50, 2))
    coef = rng.standard_normal(3)
    S = coef[0] + V @ coef[1:]
    grid = rng.uniform(-0.3, 0.3, size=(4, 2))
    c = fit_local_linear(S, V, grid, 1.0)
    assert np.allclose(c.theta_hat, coef[0] + grid @ coef[1:], atol=1e-9)


def test_far_observations_do_not_touch_estimate(rng):
    V = rng.uniform(size=200)
    S = rng.standard_normal(200)
    grid = [0.3]
    h = 0.1
    c1 = fit_local_linear(S, V, grid, h)
    S2 = S.copy()
    S2[np.abs(V - 0.3) >= h] = 1e12
    c2 = fit_local_linear(S2, V, grid, h)
    assert c1.theta_hat[0] == c2.theta_hat[0] and c1.se[0] == c2.se[0]


def test_vectorized_loo_matches_pointwise_fits(rng):
    from cdml.llreg import OK, local_linear_at

    V = rng.uniform(size=(80, 1))
    S = np.cos(3 * V[:, 0]) + rng.standard_normal(80)
    score = loo_cv_scores(S, V, EPA, [0.4])[0]
    ref = []
    for i in range(80):
        th, *_, flag = local_linear_at(S, V, V[i], 0.4, EPA, exclude=i)
        assert flag == OK
        ref.append((S[i] - th) ** 2)
    assert score == pytest.approx(np.mean(ref), rel=1e-10)


def test_selected_bandwidth_is_cv_argmin(rng):
    V = rng.uniform(size=150)
    S = np.sin(4 * V) + 0.3 * rng.standard_normal(150)
    cands = np.geomspace(0.05, 0.8, 7)
    scores = loo_cv_scores(S, V, "epanechnikov", cands)
    h = select_bandwidth(S, V, "epanechnikov", cands, undersmooth=0.8)
    assert h == pytest.approx(0.8 * cands[int(np.argmin(scores))])


def test_flags():
    V = np.r_[np.linspace(0, 1, 201), np.full(15, 3.0)]
    S = np.zeros(216)
    c = fit_local_linear(S, V, [10.0, -0.045, 3.0, 0.5], 0.05)
    assert c.flags == ("empty", "low_mass", "ill_conditioned", "ok")
    assert np.isnan(c.theta_hat[:3]).all() and np.isfinite(c.theta_hat[3])
    assert c.n_local[0] == 0 and c.n_local[2] == 15


def test_no_valid_bandwidth():
    V = np.linspace(0, 1, 20)
    with pytest.raises(NoValidBandwidthError):
        select_bandwidth(V, V, "epanechnikov", [0.01, 0.02])


def test_curve_dict_round_trip(rng):
    V = rng.uniform(size=100)
    c = fit_local_linear(V, V, [0.2, 0.5, 2.0], 0.2)
    back = LocalLinearCurve.from_dict(c.to_dict())
    assert back.flags == c.flags and np.array_equal(back.theta_hat, c.theta_hat, equal_nan=True)


def test_default_grids(rng):
    V = rng.uniform(size=(500, 2))
    g = default_grid(V, points=5)
    assert g.shape == (25, 2)
    b = default_bandwidth_grid(V[:, :1])
    assert b.shape == (12,) and np.all(np.diff(b) > 0)
    with pytest.raises(InvalidArgumentError):
        fit_local_linear(V[:, 0], V[:, 0], [0.5], 0.0)

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdml.core import Dataset
from cdml.errors import InvalidArgumentError
from cdml.moments import (
    MomentFunctional,
    m_cate_binary,
    m_cate_continuous,
    m_ev_bound,
    rho_mean,
    rho_quantile,
    simpson_weights,
)


def _data(d, z, y=None, aux=None):
    d = np.asarray(d, float)
    z = np.atleast_2d(np.asarray(z, float).T).T
    y = np.zeros(len(d)) if y is None else y
    return Dataset(y=y, d=d, z=z, v=z[:, :1], aux=aux or {})


def test_cate_binary_examples():
    x = np.array([[0.0, 3.0]])
    assert m_cate_binary(x, lambda r: r[:, 0])[0] == 1.0
    assert m_cate_binary(x, lambda r: r[:, 1])[0] == 0.0
    assert m_cate_binary(x, lambda r: r[:, 0] * r[:, 1])[0] == 3.0


def test_cate_binary_linear_effect():
    x = np.array([[0.0, 1.0], [1.0, -2.0]])
    out = m_cate_binary(x, lambda r: 3 * r[:, 0] + r[:, 0] * r[:, 1] + 5)
    assert out.tolist() == [4.0, 1.0]


def test_cate_binary_ignores_observed_treatment():
    g = lambda r: r[:, 0] * r[:, 1] ** 2
    a = m_cate_binary(np.array([[0.0, 2.0]]), g)
    b = m_cate_binary(np.array([[1.0, 2.0]]), g)
    assert a.tolist() == b.tolist() == [4.0]


def test_cate_continuous_linear_is_exact():
    x = np.array([[0.3, 1.0], [-2.0, 4.0]])
    out = m_cate_continuous(x, lambda r: 1.7 * r[:, 0] + r[:, 1], step=1e-3)
    assert np.allclose(out, 1.7, atol=1e-10)


def test_cate_continuous_quadratic():
    out = m_cate_continuous(np.array([[1.0, 0.0]]), lambda r: r[:, 0] ** 2, step=1e-4)
    assert out[0] == pytest.approx(2.0, abs=1e-8)


def test_central_difference_is_second_order():
    x = np.array([[0.7, 0.0]])
    steps = np.array([0.2, 0.1, 0.05, 0.025])
    cubic = lambda r: r[:, 0] ** 3 - 2 * r[:, 0]
    errs = [abs(m_cate_continuous(x, cubic, step=h)[0] - (3 * 0.49 - 2)) for h in steps]
    slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.2)


def test_ev_bound_constant_demand():
    # Z1 = 2, gamma = 1: int_1^e 2 / u du = 2
    x = np.array([[1.5, 2.0]])
    out = m_ev_bound(x, lambda r: np.ones(len(r)), 1.0, np.e)
    assert out[0] == pytest.approx(2.0, abs=1e-8)


def test_ev_bound_linear_demand_cancels_price():
    x = np.array([[1.0, 1.0]])
    out = m_ev_bound(x, lambda r: r[:, 0], 1.0, 3.0)
    assert out[0] == pytest.approx(2.0, abs=1e-12)


def test_ev_bound_against_fine_trapezoid():
    z1, kappa, lo, hi = 1.3, 0.5, 1.0, 2.5
    x = np.array([[0.0, z1]])
    out = m_ev_bound(x, lambda r: r[:, 0], lo, hi, kappa=kappa)[0]
    u = np.linspace(lo, hi, 100_000)
    f = (z1 / u) * u * np.exp(-kappa * (u - lo))
    ref = np.trapezoid(f, u) if hasattr(np, "trapezoid") else np.trapz(f, u)
    assert out == pytest.approx(ref, abs=1e-7)


def test_ev_bound_per_row_bounds_and_weights():
    x = np.array([[0.0, 1.0], [0.0, 1.0]])
    out = m_ev_bound(x, lambda r: r[:, 0], np.array([1.0, 2.0]), np.array([2.0, 5.0]), weight=np.array([1.0, 0.5]))
    assert np.allclose(out, [1.0, 1.5])


def test_ev_bound_vector_valued_gamma():
    x = np.array([[0.0, 1.0]])
    out = m_ev_bound(x, lambda r: np.column_stack([r[:, 0], 2 * r[:, 0]]), 1.0, 2.0)
    assert out.shape == (1, 2) and np.allclose(out, [[1.0, 2.0]])


def test_ev_bound_rejects_bad_bounds():
    with pytest.raises(InvalidArgumentError):
        m_ev_bound(np.array([[0.0, 1.0]]), lambda r: r[:, 0], 2.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        MomentFunctional("ev_bound", lower=2.0, upper=1.0)


def test_simpson_weights_integrate_cubics():
    t = np.linspace(0, 1, 11)
    w = simpson_weights(11) * 0.1
    assert w @ t**3 == pytest.approx(0.25, abs=1e-14)
    with pytest.raises(InvalidArgumentError):
        simpson_weights(10)


def test_rho_examples():
    assert rho_quantile([1.0, 3.0], [2.0, 2.0], 0.3).tolist() == pytest.approx([0.7, -0.3])
    assert rho_quantile([2.0], [2.0], 0.3).tolist() == pytest.approx([0.7])
    assert rho_mean([3.0], [1.0]).tolist() == [2.0]


def test_rho_quantile_mean_zero_at_true_quantile(rng):
    y = rng.uniform(size=100_000)
    assert abs(np.mean(rho_quantile(y, np.full_like(y, 0.3), 0.3))) < 0.01


def test_functional_dispatch_and_signs():
    data = _data([0.0, 1.0], [1.0, 2.0])
    m = MomentFunctional("cate_binary")
    assert m.m(data, lambda r: 2 * r[:, 0]).tolist() == [2.0, 2.0]
    assert m.vrho_sign == -1.0 and m.target == "mean"
    q = MomentFunctional("quantile_derivative", nu=0.25)
    assert q.vrho_sign == 1.0 and q.target == "quantile"
    assert MomentFunctional("identity").m(data, lambda r: r[:, 1]).tolist() == [1.0, 2.0]


def test_resolve_fixes_step_from_full_sample(rng):
    data = _data(rng.standard_normal(50), rng.standard_normal(50))
    m = MomentFunctional("cate_continuous").resolved(data)
    assert m.step == pytest.approx(max(1e-4, 1e-4 * np.std(data.d)))


def test_binary_check_rejects_continuous_treatment():
    with pytest.raises(InvalidArgumentError):
        MomentFunctional("cate_binary").check_data(_data([0.0, 0.5], [1.0, 2.0]))


def test_ev_bound_missing_aux_column():
    with pytest.raises(InvalidArgumentError, match="missing column"):
        MomentFunctional("ev_bound", lower="p0").check_data(_data([1.0], [1.0]))


def test_unknown_kind():
    with pytest.raises(InvalidArgumentError):
        MomentFunctional("ate")


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 1000))
def test_functionals_are_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x = np.column_stack([rng.uniform(1, 2, 5), rng.uniform(0, 1, 5)])
    g1 = lambda r: r[:, 0] ** 2 + r[:, 1]
    g2 = lambda r: np.sin(r[:, 0] * r[:, 1])
    comb = lambda r: a * g1(r) + b * g2(r)
    for fn in (
        m_cate_binary,
        lambda x_, g: m_cate_continuous(x_, g, step=1e-3),
        lambda x_, g: m_ev_bound(x_, g, 1.0, 2.0, kappa=0.3),
    ):
        assert np.allclose(fn(x, comb), a * fn(x, g1) + b * fn(x, g2), atol=1e-9)


@given(shift=st.floats(0.0, 5.0), seed=st.integers(0, 1000))
def test_ev_bound_monotone_in_demand(shift, seed):
    rng = np.random.default_rng(seed)
    x = np.column_stack([rng.uniform(1, 2, 4), rng.uniform(0.1, 1, 4)])
    g = lambda r: r[:, 1] + 1.0
    lo = m_ev_bound(x, g, 1.0, 2.0, kappa=0.2)
    hi = m_ev_bound(x, lambda r: g(r) + shift, 1.0, 2.0, kappa=0.2)
    assert np.all(hi >= lo - 1e-12)

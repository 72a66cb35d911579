import numpy as np
import pytest

from cdml.config import DictionaryConfig, EstimateConfig, LearnerConfig, LLRConfig, RieszConfig
from cdml.core import Dataset, make_folds
from cdml.engine import construct_debiased_outcomes, estimate_theta, oracle_theta
from cdml.errors import SingularSystemError, StageError
from cdml.learners import fit_ridge
from cdml.llreg import fit_local_linear
from cdml.moments import MomentFunctional
from cdml.riesz import RieszEstimate
from cdml.sim import DgpSpec, dgp_by_name, generate

BINARY = MomentFunctional("cate_binary")
CELL = LearnerConfig(kind="ridge", degree=0, treatment="split", lam=0.0)
CELL_RIESZ = RieszConfig(method="auto", lam=0.0, dictionary=DictionaryConfig(degree=0, treatment="split"))


def test_zero_representer_gives_plugin_outcome():
    data = generate(dgp_by_name("a"), 400, 5)
    folds = make_folds(data.n, 5, 0)
    learner = LearnerConfig(degree=2, lam=1e-6)
    out = construct_debiased_outcomes(data, BINARY, folds, learner, RieszConfig(method="none"))
    assert np.all(out.correction == 0.0)
    assert np.array_equal(out.s_hat, out.m_part)


def test_noiseless_correction_vanishes():
    spec = DgpSpec("cate_binary", sigma=0.0, nonlinear=False)
    data = generate(spec, 600, 2)
    folds = make_folds(data.n, 5, 1)
    learner = LearnerConfig(degree=1, treatment="interact", lam=0.0)
    riesz = RieszConfig(method="auto", dictionary=DictionaryConfig(degree=3, treatment="split", columns=[0]))
    out = construct_debiased_outcomes(data, BINARY, folds, learner, riesz)
    assert np.max(np.abs(out.correction)) < 1e-8
    assert np.max(np.abs(out.s_hat - (1 + data.z[:, 0]))) < 1e-8


def test_six_observation_hand_oracle():
    d = np.array([1, 0, 1, 0, 1, 0.0])
    y = np.array([3.0, 1.0, 4.0, 1.5, 5.0, 2.0])
    z = np.arange(6.0)[:, None]
    data = Dataset(y=y, d=d, z=z, v=z)
    folds = make_folds(6, 2, 3)
    out = construct_debiased_outcomes(data, BINARY, folds, CELL, CELL_RIESZ)
    expect = np.empty(6)
    for ell in (1, 2):
        te, tr = folds.indices(ell), folds.complement(ell)
        dt, yt = d[tr], y[tr]
        mu1, mu0, p = yt[dt == 1].mean(), yt[dt == 0].mean(), dt.mean()
        for i in te:
            mu = mu1 if d[i] == 1 else mu0
            expect[i] = mu1 - mu0 + (d[i] / p - (1 - d[i]) / (1 - p)) * (y[i] - mu)
    assert np.max(np.abs(out.s_hat - expect)) < 1e-10


def test_estimate_is_deterministic():
    data = generate(dgp_by_name("a"), 500, 9)
    cfg = EstimateConfig(learner=LearnerConfig(degree=2, lam=1e-6), llr=LLRConfig(h=0.2, grid_points=11), seed=4)
    a, b = estimate_theta(data, BINARY, cfg), estimate_theta(data, BINARY, cfg)
    assert np.array_equal(a.outcomes.s_hat, b.outcomes.s_hat)
    assert a.to_dict() == b.to_dict()


def test_recovers_cate_curve_at_n4000():
    data = generate(dgp_by_name("a"), 4000, 21)
    cfg = EstimateConfig(
        learner=LearnerConfig(degree=3, knots=[0.25, 0.5, 0.75], lam=1e-6),
        riesz=RieszConfig(dictionary=DictionaryConfig(degree=3, treatment="split", columns=[0])),
        llr=LLRConfig(grid=list(np.linspace(0.1, 0.9, 9))),
        seed=1,
    )
    rep = estimate_theta(data, BINARY, cfg)
    v = rep.curve.grid[:, 0]
    err = np.abs(rep.curve.theta_hat - (1 + v))
    assert rep.curve.valid.all()
    assert np.max(err) < 0.3
    assert np.mean(err <= 3 * rep.curve.se) >= 0.8


def test_constant_effect_design():
    rng = np.random.default_rng(3)
    n = 3000
    z = rng.uniform(size=(n, 2))
    d = (rng.uniform(size=n) < 0.5).astype(float)
    y = 2 * d + z[:, 1] + rng.standard_normal(n)
    data = Dataset(y=y, d=d, z=z, v=z[:, :1])
    cfg = EstimateConfig(
        learner=LearnerConfig(degree=1, lam=0.0),
        riesz=RieszConfig(dictionary=DictionaryConfig(degree=0, treatment="split")),
        llr=LLRConfig(h=0.3, grid=[0.3, 0.5, 0.7]),
    )
    rep = estimate_theta(data, BINARY, cfg)
    assert np.all(np.abs(rep.curve.theta_hat - 2.0) < 4 * rep.curve.se)


class _Fixed:
    def __init__(self, fn):
        self.predict = fn


def test_true_nuisances_reproduce_oracle_curve():
    spec = dgp_by_name("a")
    data = generate(spec, 800, 13)
    grid = [0.25, 0.5, 0.75]
    cfg = EstimateConfig(llr=LLRConfig(h=0.2, grid=grid))
    truth_alpha = RieszEstimate(spec.alpha0_data, "plugin")
    rep = estimate_theta(
        data, BINARY, cfg, gamma_fitter=lambda tr: _Fixed(spec.gamma0), alpha_fitter=lambda tr, g: truth_alpha
    )
    oracle = oracle_theta(data, BINARY, spec.gamma0, spec.alpha0_data, grid, 0.2)
    assert np.allclose(rep.curve.theta_hat, oracle.theta_hat, atol=1e-12, rtol=0)


def test_zero_oracle_representer_gives_plugin_on_truth():
    spec = dgp_by_name("a")
    data = generate(spec, 800, 14)
    grid = [0.25, 0.5, 0.75]
    oracle = oracle_theta(data, BINARY, spec.gamma0, lambda d: np.zeros(d.n), grid, 0.2)
    plug = fit_local_linear(BINARY.m(data, spec.gamma0), data.v, grid, 0.2)
    assert np.array_equal(oracle.theta_hat, plug.theta_hat)


def test_fold_outcome_ignores_its_own_labels():
    data = generate(dgp_by_name("a"), 300, 17)
    folds = make_folds(data.n, 3, 2)
    learner = LearnerConfig(degree=2, lam=1e-3)
    base = construct_debiased_outcomes(data, BINARY, folds, learner)
    idx = folds.indices(1)
    y2 = data.y.copy()
    y2[idx] += 100.0
    moved = construct_debiased_outcomes(data.with_y(y2), BINARY, folds, learner)
    assert np.array_equal(base.m_part[idx], moved.m_part[idx])
    assert not np.array_equal(base.m_part[folds.indices(2)], moved.m_part[folds.indices(2)])


def test_stage_error_names_fold():
    data = generate(dgp_by_name("a"), 200, 1)
    folds = make_folds(data.n, 4, 0)
    calls = []

    def gamma_fitter(train):
        calls.append(train.n)
        if len(calls) == 3:
            raise SingularSystemError("boom")
        c = fit_ridge(np.ones((train.n, 1)), train.y, 0.0).coef[0]
        return _Fixed(lambda x: np.full(np.atleast_2d(x).shape[0], c))

    with pytest.raises(StageError) as info:
        construct_debiased_outcomes(data, BINARY, folds, gamma_fitter=gamma_fitter)
    assert info.value.stage == "crossfit" and info.value.fold == 3
    assert "fold 3" in str(info.value)


def test_fold_diagnostics_recorded():
    data = generate(dgp_by_name("a"), 300, 4)
    out = construct_debiased_outcomes(data, BINARY, make_folds(300, 3, 0), LearnerConfig(degree=1, lam=0.1))
    assert [dg["fold"] for dg in out.diagnostics] == [1, 2, 3]
    assert sum(dg["n_test"] for dg in out.diagnostics) == 300

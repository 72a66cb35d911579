"""Cross-fitted debiased outcomes and the end-to-end conditional estimator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import __version__
from .config import EstimateConfig, LearnerConfig, LLRConfig, RieszConfig
from .core import Dataset, FoldAssignment, Kernel, make_folds
from .errors import CdmlError, StageError
from .learners import (
    Dictionary,
    FittedFunction,
    _lasso_standardize,
    check_loss,
    cv_lambda,
    fit_lasso,
    fit_logistic,
    fit_quantile,
    fit_ridge,
)
from .llreg import LocalLinearCurve, default_bandwidth_grid, default_grid, fit_local_linear, loo_cv_scores, pick_bandwidth
from .moments import MomentFunctional
from .riesz import (
    RieszEstimate,
    cv_riesz_lambda,
    fit_auto_riesz,
    fit_auto_riesz_weighted,
    plugin_alpha,
    residual_density,
    riesz_moments,
)

__all__ = [
    "DebiasedOutcomes",
    "EstimationReport",
    "construct_debiased_outcomes",
    "make_gamma_fitter",
    "make_alpha_fitter",
    "choose_bandwidth",
    "estimate_theta",
    "oracle_theta",
]

GammaFitter = Callable[[Dataset], object]
AlphaFitter = Callable[[Dataset, object], RieszEstimate]


@dataclass(frozen=True)
class DebiasedOutcomes:
    s_hat: np.ndarray
    m_part: np.ndarray
    correction: np.ndarray
    folds: FoldAssignment
    diagnostics: tuple = ()


# ---------------------------------------------------------------- first step


def _mean_lambda_grid(kind, X, y):
    n = X.shape[0]
    if kind == "ridge":
        return [0.0] + list(n * np.geomspace(1e-6, 1.0, 13))
    _, _, _, _, _, Xs, yc = _lasso_standardize(X, y)
    top = float(np.max(np.abs(Xs.T @ yc)) / n) if Xs.size else 1.0
    return list(max(top, 1e-12) * np.geomspace(1e-4, 1.0, 15))


def _fit_gamma(cfg: LearnerConfig, m: MomentFunctional, X, y, lam, dictionary):
    if cfg.kind == "quantile":
        return fit_quantile(X, y, m.nu, lam, dictionary)
    if cfg.kind == "lasso":
        return fit_lasso(X, y, lam, dictionary)
    if cfg.kind == "logistic":
        return fit_logistic(X, y, lam, dictionary)
    return fit_ridge(X, y, lam, dictionary)


def make_gamma_fitter(cfg: LearnerConfig, m: MomentFunctional, seed: int = 0) -> GammaFitter:
    """Return ``train -> gamma_hat`` honouring the learner configuration."""
    dictionary = cfg.dictionary()

    def fitter(train: Dataset):
        X = dictionary.features(train.x)
        y = train.y
        lam = cfg.lam
        if cfg.use_cv:
            if cfg.kind == "quantile":
                q75, q25 = np.percentile(y, [75, 25])
                grid = [0.0] + list(max(q75 - q25, 1e-12) * np.geomspace(1e-4, 1e-1, 7))

                def loss(a, b):
                    return float(np.mean(check_loss(a - b, m.nu)))

            else:
                grid = _mean_lambda_grid(cfg.kind, X, y)

                def loss(a, b):
                    return float(np.mean((a - b) ** 2))

            lam = cv_lambda(
                lambda Xa, ya, la: _fit_gamma(cfg, m, Xa, ya, la, None), X, y, grid, loss, cfg.cv_folds, seed
            )
        return _fit_gamma(cfg, m, X, y, lam, dictionary)

    return fitter


class _ZFunction:
    """A fitted function of (selected columns of) Z alone, evaluated on a Dataset."""

    def __init__(self, fitted: FittedFunction, columns=None):
        self.fitted = fitted
        self.columns = columns

    def z(self, data: Dataset):
        return data.z if self.columns is None else data.z[:, list(self.columns)]

    def __call__(self, data: Dataset):
        return self.fitted.predict(self.z(data))


def _z_dictionary(cfg) -> Dictionary:
    return Dictionary(degree=cfg.degree, knots=tuple(cfg.knots), treatment="none", cross=cfg.cross)


def _plugin_nuisances(train: Dataset, m: MomentFunctional, gamma, dict_cfg) -> dict:
    """Fit the nuisances the closed-form representers need from the training fold."""
    zd = _z_dictionary(dict_cfg)
    cols = dict_cfg.columns
    zt = train.z if cols is None else train.z[:, list(cols)]
    Fz = zd.features(zt)
    small = 1e-6 * train.n
    out = {}
    if m.kind == "cate_binary":
        out["propensity"] = _ZFunction(fit_logistic(Fz, train.d, small, zd), cols)
    elif m.kind in ("cate_continuous", "quantile_derivative", "ev_bound"):
        mean_fit = fit_ridge(Fz, train.d, small, zd)
        resid = train.d - mean_fit.predict(zt)
        sd = float(np.sqrt(np.mean(resid**2)))
        mean = _ZFunction(mean_fit, cols)
        out["treatment_mean"] = mean
        out["treatment_sd"] = sd

        def density(data, mean=mean, sd=sd):
            u = (data.d - mean(data)) / sd
            return np.exp(-0.5 * u * u) / (sd * np.sqrt(2 * np.pi))

        out["density"] = density
    if m.kind == "quantile_derivative":
        level = float(np.mean(residual_density(train.y - gamma.predict(train.x))))
        out["vrho"] = lambda data, level=level: np.full(data.n, level)
    return out


def _vrho_weights(train: Dataset, m: MomentFunctional, gamma) -> np.ndarray:
    if m.target == "mean":
        return np.ones(train.n)
    return residual_density(train.y - gamma.predict(train.x))


def make_alpha_fitter(
    cfg: RieszConfig, m: MomentFunctional, learner: LearnerConfig | None = None, seed: int = 0
) -> AlphaFitter:
    """Return ``(train, gamma_hat) -> RieszEstimate`` for the configured method."""
    if cfg.dictionary is not None:
        dict_cfg, dictionary = cfg.dictionary, cfg.dictionary.build()
    else:
        dict_cfg = learner or LearnerConfig()
        dictionary = dict_cfg.dictionary()

    def fitter(train: Dataset, gamma) -> RieszEstimate:
        if cfg.method == "none":
            return RieszEstimate(None, "none")
        if cfg.method == "plugin":
            return plugin_alpha(m, _plugin_nuisances(train, m, gamma, dict_cfg), cfg.clip, cfg.density_floor)
        weights = _vrho_weights(train, m, gamma) if cfg.method == "auto-weighted" else None
        lam = cfg.lam
        if cfg.use_cv:
            M, _, _ = riesz_moments(train, m, dictionary, weights)
            top = max(float(np.max(np.abs(M))), 1e-12)
            grid = [0.0] + list(top * np.geomspace(1e-4, 1e-1, 7))
            lam = cv_riesz_lambda(train, m, dictionary, grid, weights, 5, seed)
        if cfg.method == "auto-weighted":
            return fit_auto_riesz_weighted(train, m, weights, dictionary, lam)
        return fit_auto_riesz(train, m, dictionary, lam)

    return fitter


# ---------------------------------------------------------------- crossfit


def _heldout_loss(m: MomentFunctional, y, gx) -> float:
    if m.target == "quantile":
        return float(np.mean(check_loss(y - gx, m.nu)))
    return float(np.mean((y - gx) ** 2))


def construct_debiased_outcomes(
    data: Dataset,
    m: MomentFunctional,
    folds: FoldAssignment,
    learner: LearnerConfig | None = None,
    riesz: RieszConfig | None = None,
    gamma_fitter: GammaFitter | None = None,
    alpha_fitter: AlphaFitter | None = None,
    seed: int = 0,
) -> DebiasedOutcomes:
    """Cross-fitted ``S_i = m(W_i, gamma_l) + alpha_l(X_i) rho(W_i, gamma_l)``.

    For each fold the nuisances are trained on the complement only and then
    evaluated on the fold.  Custom fitters replace the configured learners;
    a gamma fitter must return an object with ``predict(x)``.
    """
    if folds.n != data.n:
        raise CdmlError("fold assignment does not match the data size")
    learner = learner or LearnerConfig()
    riesz = riesz or RieszConfig()
    m = m.resolved(data)
    m.check_data(data)
    gfit = gamma_fitter or make_gamma_fitter(learner, m, seed)
    afit = alpha_fitter or make_alpha_fitter(riesz, m, learner, seed)
    m_part = np.empty(data.n)
    corr = np.empty(data.n)
    diags = []
    for ell in range(1, folds.L + 1):
        te_idx, tr_idx = folds.indices(ell), folds.complement(ell)
        train, test = data.take(tr_idx), data.take(te_idx)
        try:
            gamma = gfit(train)
            alpha = afit(train, gamma)
            gx = np.asarray(gamma.predict(test.x), dtype=float)
            mp = np.asarray(m.m(test, gamma.predict), dtype=float)
            cr = alpha.predict(test) * m.rho(test, gx)
        except (CdmlError, np.linalg.LinAlgError) as exc:
            raise StageError("crossfit", exc, fold=ell) from exc
        if not (np.all(np.isfinite(mp)) and np.all(np.isfinite(cr))):
            raise StageError("crossfit", CdmlError("non-finite debiased outcome"), fold=ell)
        m_part[te_idx] = mp
        corr[te_idx] = cr
        diags.append(
            {
                "fold": ell,
                "n_train": int(tr_idx.size),
                "n_test": int(te_idx.size),
                "heldout_loss": _heldout_loss(m, test.y, gx),
                "gamma_lambda": float(getattr(gamma, "penalty", np.nan)),
                "riesz_method": alpha.method,
                "riesz_lambda": float(alpha.lam),
                "riesz_moment_residual": alpha.moment_residual,
                "mean_correction": float(np.mean(cr)),
            }
        )
    return DebiasedOutcomes(m_part + corr, m_part, corr, folds, tuple(diags))


# ---------------------------------------------------------------- second step


@dataclass(frozen=True)
class BandwidthChoice:
    h: float
    source: str  # fixed | cv
    h_cv: Optional[float] = None
    candidates: tuple = ()
    scores: tuple = ()
    undersmooth: float = 1.0

    def to_dict(self):
        return {
            "h": self.h,
            "source": self.source,
            "h_cv": self.h_cv,
            "undersmooth": self.undersmooth,
            "candidates": list(self.candidates),
            "cv_scores": [None if not np.isfinite(s) else s for s in self.scores],
        }


def choose_bandwidth(S, V, cfg: LLRConfig) -> BandwidthChoice:
    """Fixed ``h`` when configured, else leave-one-out CV times the undersmoothing factor."""
    if cfg.h is not None:
        return BandwidthChoice(cfg.h, "fixed")
    cands = np.asarray(cfg.h_grid if cfg.h_grid is not None else default_bandwidth_grid(V), dtype=float)
    if cands.size == 1:
        return BandwidthChoice(float(cands[0] * cfg.undersmooth), "cv", float(cands[0]), tuple(cands), (), cfg.undersmooth)
    scores = loo_cv_scores(S, V, cfg.kernel, cands, cfg.min_mass)
    h_cv = pick_bandwidth(cands, scores)
    return BandwidthChoice(h_cv * cfg.undersmooth, "cv", h_cv, tuple(cands.tolist()), tuple(scores.tolist()), cfg.undersmooth)


def evaluation_grid(V, cfg: LLRConfig) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    r = 1 if V.ndim == 1 else V.shape[1]
    if cfg.grid is not None:
        return np.asarray(cfg.grid, dtype=float).reshape(-1, r)
    return default_grid(V, cfg.grid_points)


@dataclass(frozen=True)
class EstimationReport:
    curve: LocalLinearCurve
    outcomes: DebiasedOutcomes
    bandwidth: BandwidthChoice
    functional: dict
    config: dict
    seed: int
    n: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "version": __version__,
            "n": self.n,
            "seed": self.seed,
            "functional": self.functional,
            "folds": {"L": self.outcomes.folds.L, "sizes": self.outcomes.folds.sizes()},
            "bandwidth": self.bandwidth.to_dict(),
            "fold_diagnostics": list(self.outcomes.diagnostics),
            "debiased_outcome": {
                "mean": float(np.mean(self.outcomes.s_hat)),
                "sd": float(np.std(self.outcomes.s_hat)),
                "mean_correction": float(np.mean(self.outcomes.correction)),
            },
            "curve": self.curve.to_dict(),
            "n_flagged": int(np.sum(~self.curve.valid)),
            "config": self.config,
            **self.extra,
        }


def estimate_theta(
    data: Dataset,
    m: MomentFunctional,
    config: EstimateConfig | None = None,
    seed: int | None = None,
    gamma_fitter: GammaFitter | None = None,
    alpha_fitter: AlphaFitter | None = None,
) -> EstimationReport:
    """Full pipeline: folds, debiased outcomes, bandwidth, local linear curve."""
    config = config or EstimateConfig()
    seed = config.seed if seed is None else seed
    m = m.resolved(data)
    folds = make_folds(data.n, config.crossfit.folds, seed)
    out = construct_debiased_outcomes(
        data, m, folds, config.learner, config.riesz, gamma_fitter, alpha_fitter, seed=seed
    )
    try:
        bw = choose_bandwidth(out.s_hat, data.v, config.llr)
    except CdmlError as exc:
        raise StageError("bandwidth", exc) from exc
    grid = evaluation_grid(data.v, config.llr)
    try:
        curve = fit_local_linear(out.s_hat, data.v, grid, bw.h, Kernel(config.llr.kernel), config.llr.min_mass)
    except CdmlError as exc:
        raise StageError("local_linear", exc) from exc
    return EstimationReport(
        curve, out, bw, m.describe(), config.model_dump(mode="json", by_alias=True), int(seed), data.n
    )


def oracle_theta(
    data: Dataset,
    m: MomentFunctional,
    true_gamma: Callable,
    true_alpha: Callable,
    grid,
    h: float,
    kernel: str = "epanechnikov",
) -> LocalLinearCurve:
    """Local linear fit of the infeasible outcome built from the true nuisances.

    ``true_gamma`` maps regressor rows to values; ``true_alpha`` maps a
    Dataset to representer values.
    """
    m = m.resolved(data)
    gx = np.asarray(true_gamma(data.x), dtype=float)
    s0 = np.asarray(m.m(data, true_gamma), dtype=float) + np.asarray(true_alpha(data), dtype=float) * m.rho(data, gx)
    return fit_local_linear(s0, data.v, grid, h, kernel)

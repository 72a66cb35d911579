"""Conditional Riesz representer estimation.

Automatic estimators minimize the sample Riesz loss
``mean(-2 m(W, phi'b) + w(W) (phi(X)'b)^2) + 2 lam ||b||_1`` over the span
of a dictionary, which only needs evaluations of m.  Plug-in estimators
evaluate the closed forms of the catalog using fitted nuisances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import Dataset
from .errors import IllPosedError, InvalidArgumentError, SingularSystemError
from .learners import DEFAULT_CLIP, Dictionary, FittedFunction, coordinate_descent, _check_nonsingular
from .moments import MomentFunctional

__all__ = [
    "RieszEstimate",
    "riesz_moments",
    "fit_auto_riesz",
    "fit_auto_riesz_weighted",
    "plugin_alpha",
    "residual_density",
    "silverman_bandwidth",
    "cv_riesz_lambda",
    "DEFAULT_DENSITY_FLOOR",
]

DEFAULT_DENSITY_FLOOR = 1e-3


@dataclass(frozen=True)
class RieszEstimate:
    function: object  # FittedFunction, or callable(Dataset) -> array for plug-ins
    method: str  # auto | auto-weighted | plugin | none
    lam: float = 0.0
    sign: float = 1.0
    moment_residual: float | None = None
    info: Mapping = field(default_factory=dict)

    def predict(self, data: Dataset) -> np.ndarray:
        if self.method == "none":
            return np.zeros(data.n)
        if isinstance(self.function, FittedFunction):
            return self.sign * self.function.predict(data.x)
        return self.sign * np.asarray(self.function(data), dtype=float)

    @property
    def coef(self):
        return self.function.coef if isinstance(self.function, FittedFunction) else None


def riesz_moments(data: Dataset, m: MomentFunctional, dictionary: Dictionary, weights=None):
    """Return (M, G, Phi): M_j = mean m(W, phi_j), G = mean w phi phi'."""
    phi = dictionary.features(data.x)
    M = np.asarray(m.m(data, dictionary.features), dtype=float).mean(axis=0)
    if weights is None:
        G = phi.T @ phi / data.n
    else:
        G = (phi * np.asarray(weights, dtype=float)[:, None]).T @ phi / data.n
    return M, G, phi


def _solve_riesz(M, G, lam):
    if lam < 0:
        raise InvalidArgumentError("lambda must be >= 0")
    if lam == 0:
        try:
            _check_nonsingular(G)
        except SingularSystemError:
            raise SingularSystemError("Riesz Gram matrix is singular; use a positive penalty (lambda > 0)") from None
        return np.linalg.solve(G, M)
    b, _ = coordinate_descent(G, M, lam)
    return b


def fit_auto_riesz(data: Dataset, m: MomentFunctional, dictionary: Dictionary, lam: float = 0.0) -> RieszEstimate:
    """Automatic Riesz representer: solve ``G b = M`` (lam = 0) or its lasso version.

    The lasso version minimizes ``-2 M'b + b'Gb + 2 lam ||b||_1``, whose KKT
    conditions are ``|M - G b|_j <= lam`` with equality on the support.
    """
    if m.target != "mean":
        raise InvalidArgumentError("unweighted automatic Riesz needs a mean-type functional; use auto-weighted")
    M, G, _ = riesz_moments(data, m, dictionary)
    b = _solve_riesz(M, G, lam)
    resid = float(np.max(np.abs(M - G @ b)))
    return RieszEstimate(FittedFunction(b, dictionary), "auto", lam, 1.0, resid)


def fit_auto_riesz_weighted(
    data: Dataset, m: MomentFunctional, vrho, dictionary: Dictionary, lam: float = 0.0
) -> RieszEstimate:
    """Riesz loss weighted by ``|vrho|``, the slope proxy of the residual.

    The minimizer targets ``v_m / |v_rho|``; multiplying by the functional's
    slope sign gives ``alpha0 = -v_m / v_rho`` for either sign convention.
    """
    w = np.abs(np.broadcast_to(np.asarray(vrho, dtype=float), (data.n,)))
    M, G, _ = riesz_moments(data, m, dictionary, weights=w)
    eig = np.linalg.eigvalsh(G)
    if eig[0] < 1e-10:
        raise IllPosedError(f"weighted Riesz Gram is not positive definite (min eigenvalue {eig[0]:.3g})")
    b = _solve_riesz(M, G, lam)
    resid = float(np.max(np.abs(M - G @ b)))
    return RieszEstimate(FittedFunction(b, dictionary), "auto-weighted", lam, -m.vrho_sign, resid)


def silverman_bandwidth(u) -> float:
    u = np.asarray(u, dtype=float)
    sd = np.std(u, ddof=1) if u.size > 1 else 0.0
    q75, q25 = np.percentile(u, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * u.size ** (-0.2)


def residual_density(resid, bandwidth: float | None = None) -> np.ndarray:
    """Per-observation slope proxy (1/b) k(r_i / b) with a Gaussian k."""
    r = np.asarray(resid, dtype=float)
    b = silverman_bandwidth(r) if bandwidth is None else bandwidth
    if not b > 0:
        raise IllPosedError("residual density bandwidth is zero (residuals are constant)")
    return np.exp(-0.5 * (r / b) ** 2) / (b * np.sqrt(2 * np.pi))


def _get(nuisances, key, kind):
    if key not in nuisances:
        raise InvalidArgumentError(f"plug-in Riesz representer for {kind} needs nuisance {key!r}")
    return nuisances[key]


def _score(nuisances, kind):
    if "score" in nuisances:
        return nuisances["score"]
    if "treatment_mean" in nuisances and "treatment_sd" in nuisances:
        mean, sd = nuisances["treatment_mean"], nuisances["treatment_sd"]

        def gaussian_score(data):
            s = np.asarray(sd(data) if callable(sd) else sd, dtype=float)
            return (data.d - mean(data)) / s**2

        return gaussian_score
    raise InvalidArgumentError(f"plug-in Riesz representer for {kind} needs 'score' or 'treatment_mean'/'treatment_sd'")


def plugin_alpha(
    m: MomentFunctional,
    nuisances: Mapping[str, Callable],
    clip: float = DEFAULT_CLIP,
    density_floor: float = DEFAULT_DENSITY_FLOOR,
) -> RieszEstimate:
    """Closed-form Riesz representers evaluated with fitted nuisances.

    Nuisances are callables of a Dataset: ``propensity`` (cate_binary),
    ``score`` or ``treatment_mean``/``treatment_sd`` (continuous treatment),
    ``density`` of the price given Z (ev_bound), plus ``vrho`` for
    quantile_derivative.
    """
    kind = m.kind
    if kind == "identity":

        def alpha(data):
            return np.ones(data.n)

    elif kind == "cate_binary":
        prop = _get(nuisances, "propensity", kind)

        def alpha(data):
            p = np.clip(prop(data), clip, 1 - clip)
            return data.d / p - (1 - data.d) / (1 - p)

    elif kind == "cate_continuous":
        alpha = _score(nuisances, kind)

    elif kind == "ev_bound":
        dens = _get(nuisances, "density", kind)

        def alpha(data):
            p1 = data.x[:, m.treatment_col]
            lo = np.broadcast_to(m._param(data, "lower"), (data.n,))
            hi = np.broadcast_to(m._param(data, "upper"), (data.n,))
            om = np.broadcast_to(m._param(data, "weight"), (data.n,))
            inside = (lo < p1) & (p1 < hi)
            f = np.maximum(dens(data), density_floor)
            z1 = data.x[:, m.income_col]
            return om * inside * (z1 / p1) * np.exp(-m.kappa * (p1 - lo)) / f

    elif kind == "quantile_derivative":
        score = _score(nuisances, kind)
        vr = _get(nuisances, "vrho", kind)

        def alpha(data):
            return -score(data) / np.maximum(vr(data), density_floor)

    else:  # pragma: no cover - guarded by MomentFunctional
        raise InvalidArgumentError(kind)
    return RieszEstimate(alpha, "plugin", 0.0, 1.0)


def cv_riesz_lambda(
    data: Dataset,
    m: MomentFunctional,
    dictionary: Dictionary,
    lambdas: Sequence[float],
    weights=None,
    n_folds: int = 5,
    seed: int = 0,
) -> float:
    """Held-out Riesz loss ``-2 M_te'b + b'G_te b`` over a penalty grid."""
    n = data.n
    fold_of = np.empty(n, dtype=int)
    fold_of[np.random.default_rng(seed).permutation(n)] = np.arange(n) % n_folds
    w = None if weights is None else np.abs(np.broadcast_to(np.asarray(weights, dtype=float), (n,)))
    parts = []
    for f in range(n_folds):
        tr, te = np.flatnonzero(fold_of != f), np.flatnonzero(fold_of == f)
        Mtr, Gtr, _ = riesz_moments(data.take(tr), m, dictionary, None if w is None else w[tr])
        Mte, Gte, _ = riesz_moments(data.take(te), m, dictionary, None if w is None else w[te])
        parts.append((Mtr, Gtr, Mte, Gte, len(te)))
    scores = []
    for lam in lambdas:
        total = 0.0
        try:
            for Mtr, Gtr, Mte, Gte, size in parts:
                b = _solve_riesz(Mtr, Gtr, lam)
                total += (-2 * Mte @ b + b @ Gte @ b) * size
            scores.append(total / n)
        except SingularSystemError:
            scores.append(np.inf)
    scores = np.array(scores)
    best = np.min(scores)
    ties = [lam for lam, s in zip(lambdas, scores) if s <= best + 1e-12 * abs(best)]
    return float(max(ties))

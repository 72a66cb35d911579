"""First-step learners over a linear feature dictionary.

All fitters take a feature matrix (rows already mapped through a
:class:`Dictionary`) and return a :class:`FittedFunction` whose ``predict``
maps raw regressor rows ``x = (D, Z)`` back through the same dictionary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numba
import numpy as np

from .errors import ConvergenceError, InvalidArgumentError, SeparationError, SingularSystemError

__all__ = [
    "Dictionary",
    "FittedFunction",
    "coordinate_descent",
    "fit_ridge",
    "fit_lasso",
    "fit_logistic",
    "fit_quantile",
    "lasso_objective",
    "check_loss",
    "quantile_objective",
    "cv_lambda",
    "DEFAULT_CLIP",
]

DEFAULT_CLIP = 0.01
CD_TOL = 1e-8
CD_MAX_ITER = 100_000


@dataclass(frozen=True)
class Dictionary:
    """Basis functions phi_1..phi_K over regressor rows ``x = (D, Z)``.

    The base block g(.) holds a constant, pure powers up to ``degree``,
    optional pairwise products (``cross``) and hinge terms ``(u - knot)_+``.
    ``treatment`` decides how column 0 (the treatment) enters:

    * ``"none"``: the base block is built on every column of x;
    * ``"interact"``: ``[g(z), d * g(z)]``;
    * ``"split"``: ``[d * g(z), (1 - d) * g(z)]``.
    """

    degree: int = 1
    knots: tuple[float, ...] = ()
    treatment: str = "interact"
    include_constant: bool = True
    columns: tuple[int, ...] | None = None
    cross: bool = False

    def __post_init__(self):
        if self.treatment not in ("none", "interact", "split"):
            raise InvalidArgumentError(f"unknown treatment mode {self.treatment!r}")
        if self.degree < 0:
            raise InvalidArgumentError("degree must be >= 0")
        object.__setattr__(self, "knots", tuple(float(k) for k in self.knots))
        if self.columns is not None:
            object.__setattr__(self, "columns", tuple(int(c) for c in self.columns))

    def _base(self, u: np.ndarray, constant: bool) -> list[np.ndarray]:
        n, p = u.shape
        cols = []
        if constant:
            cols.append(np.ones(n))
        for j in range(p):
            for k in range(1, self.degree + 1):
                cols.append(u[:, j] ** k)
        if self.cross and self.degree >= 2:
            for j in range(p):
                for l in range(j + 1, p):
                    cols.append(u[:, j] * u[:, l])
        for j in range(p):
            for kn in self.knots:
                cols.append(np.maximum(u[:, j] - kn, 0.0))
        return cols

    def _z_block(self, x):
        z = x[:, 1:]
        if self.columns is not None:
            z = z[:, list(self.columns)]
        return z

    def features(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if self.treatment == "none":
            u = x if self.columns is None else x[:, [0] + [c + 1 for c in self.columns]]
            cols = self._base(u, self.include_constant)
        else:
            d = x[:, 0]
            g = self._base(self._z_block(x), True)
            if self.treatment == "interact":
                head = g if self.include_constant else g[1:]
                cols = head + [d * c for c in g]
            else:
                cols = [d * c for c in g] + [(1.0 - d) * c for c in g]
        if not cols:
            raise InvalidArgumentError("dictionary has no basis functions")
        return np.column_stack(cols)

    def size(self, p_x: int) -> int:
        return self.features(np.zeros((1, p_x))).shape[1]


@dataclass(frozen=True)
class FittedFunction:
    """phi(x)'b for a fitted coefficient vector, with an optional link."""

    coef: np.ndarray
    dictionary: Dictionary | None = None
    kind: str = "mean"  # mean | quantile | propensity
    nu: float | None = None
    clip: float = DEFAULT_CLIP
    objective: float | None = None
    penalty: float = 0.0

    def __post_init__(self):
        coef = np.array(self.coef, dtype=float).ravel()
        coef.flags.writeable = False
        object.__setattr__(self, "coef", coef)

    def features(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.dictionary is None:
            return x if x.ndim == 2 else x[None, :]
        return self.dictionary.features(x)

    def linear_predictor(self, x) -> np.ndarray:
        return self.features(x) @ self.coef

    def predict(self, x) -> np.ndarray:
        eta = self.linear_predictor(x)
        if self.kind == "propensity":
            return np.clip(_expit(eta), self.clip, 1.0 - self.clip)
        return eta

    __call__ = predict


def _expit(t):
    out = np.empty_like(t, dtype=float)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _as_xy(features, targets):
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(targets, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise InvalidArgumentError(f"features have {X.shape[0]} rows but targets have {y.shape[0]}")
    if X.shape[0] < 1:
        raise InvalidArgumentError("need at least one observation")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InvalidArgumentError("features and targets must be finite")
    return X, y


def _constant_columns(X) -> np.ndarray:
    return np.flatnonzero((np.ptp(X, axis=0) == 0.0) & (X[0] != 0.0))


@numba.njit(cache=True)
def _cd_kernel(G, c, pen, b, tol, max_iter):
    K = c.shape[0]
    grad = c - G @ b
    active = np.ones(K, dtype=np.bool_)
    is_full = True
    n_iter = 0
    while n_iter < max_iter:
        n_iter += 1
        max_delta = 0.0
        for j in range(K):
            if not active[j]:
                continue
            bj = b[j]
            zj = grad[j] + G[j, j] * bj
            pj = pen[j]
            if zj > pj:
                new = (zj - pj) / G[j, j]
            elif zj < -pj:
                new = (zj + pj) / G[j, j]
            else:
                new = 0.0
            delta = new - bj
            if delta != 0.0:
                b[j] = new
                for k in range(K):
                    grad[k] -= G[j, k] * delta
                ad = abs(delta)
                if ad > max_delta:
                    max_delta = ad
        if max_delta < tol:
            if is_full:
                return n_iter, True
            active[:] = True
            is_full = True
        elif is_full:
            any_active = False
            for j in range(K):
                active[j] = b[j] != 0.0 or pen[j] == 0.0
                any_active = any_active or active[j]
            if any_active:
                is_full = False
            else:
                active[:] = True
    return n_iter, False


def coordinate_descent(G, c, penalty, b0=None, tol=CD_TOL, max_iter=CD_MAX_ITER):
    """Cyclic coordinate descent for ``0.5 b'Gb - c'b + sum_j penalty_j |b_j|``.

    ``G`` must be symmetric positive semidefinite with a positive diagonal.
    Stops when the largest coefficient change over a full sweep is below
    ``tol``; between full sweeps only the nonzero coordinates are cycled.
    Returns ``(b, n_sweeps)``.
    """
    G = np.ascontiguousarray(G, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    K = c.shape[0]
    pen = np.ascontiguousarray(np.broadcast_to(np.asarray(penalty, dtype=float), (K,)))
    if np.any(np.diag(G) <= 0):
        raise SingularSystemError("coordinate descent needs a positive Gram diagonal")
    b = np.zeros(K) if b0 is None else np.array(b0, dtype=float)
    n_iter, ok = _cd_kernel(G, c, pen, b, float(tol), int(max_iter))
    if not ok:
        raise ConvergenceError(
            f"coordinate descent did not converge in {max_iter} sweeps", last_iterate=b, n_iter=n_iter
        )
    return b, n_iter


def _solve_quadratic(G, c, penalty, b0=None, tol=CD_TOL, max_iter=CD_MAX_ITER):
    pen = np.broadcast_to(np.asarray(penalty, dtype=float), c.shape)
    if np.all(pen == 0.0):
        # the unpenalized minimizer is the linear solve
        _check_nonsingular(G)
        return np.linalg.solve(G, c), 0
    return coordinate_descent(G, c, pen, b0=b0, tol=tol, max_iter=max_iter)


def _check_nonsingular(G, rcond=1e-12):
    s = np.linalg.svd(G, compute_uv=False)
    if s.size == 0 or s[-1] <= rcond * max(s[0], 1e-300):
        raise SingularSystemError("linear system is singular; use a positive penalty (lambda > 0)")


def fit_ridge(features, targets, lam: float, dictionary: Dictionary | None = None) -> FittedFunction:
    """Minimize ``sum (y - Xb)^2 + lam * ||b||^2`` with constant columns unpenalized."""
    X, y = _as_xy(features, targets)
    if lam < 0:
        raise InvalidArgumentError("lambda must be >= 0")
    K = X.shape[1]
    P = np.ones(K)
    P[_constant_columns(X)] = 0.0
    if lam == 0 and np.linalg.matrix_rank(X) < K:
        raise SingularSystemError("rank-deficient features with lambda = 0")
    A = X.T @ X + lam * np.diag(P)
    try:
        b = np.linalg.solve(A, X.T @ y)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from None
    r = y - X @ b
    return FittedFunction(b, dictionary, "mean", objective=float(r @ r + lam * np.sum(P * b * b)), penalty=lam)


def lasso_objective(features, targets, coef, lam, penalized=None) -> float:
    X, y = _as_xy(features, targets)
    r = y - X @ coef
    w = np.ones_like(coef) if penalized is None else penalized
    return float(r @ r / (2 * len(y)) + lam * np.sum(w * np.abs(coef)))


def _lasso_standardize(X, y):
    n, K = X.shape
    const = _constant_columns(X)
    free = np.setdiff1d(np.arange(K), const)
    Xf = X[:, free]
    if const.size:
        xm = Xf.mean(axis=0)
        ym = y.mean()
    else:
        xm = np.zeros(free.size)
        ym = 0.0
    Xc = Xf - xm
    scale = np.sqrt(np.mean(Xc * Xc, axis=0))
    keep = scale > 0
    return const, free[keep], xm[keep], ym, scale[keep], Xc[:, keep] / scale[keep], y - ym


def fit_lasso(
    features, targets, lam: float, dictionary: Dictionary | None = None, tol=CD_TOL, max_iter=CD_MAX_ITER
) -> FittedFunction:
    """Minimize ``(1/2n)||y - Xb||^2 + lam * ||b||_1`` on standardized columns.

    A constant column, if present, acts as an unpenalized intercept.
    Coefficients are returned on the original feature scale.
    """
    X, y = _as_xy(features, targets)
    if lam < 0:
        raise InvalidArgumentError("lambda must be >= 0")
    n, K = X.shape
    const, free, xm, ym, scale, Xs, yc = _lasso_standardize(X, y)
    b = np.zeros(K)
    if free.size:
        G = Xs.T @ Xs / n
        c = Xs.T @ yc / n
        bs, _ = _solve_quadratic(G, c, lam, tol=tol, max_iter=max_iter)
        b[free] = bs / scale
    if const.size:
        j = const[0]
        b[j] = (ym - xm @ b[free]) / X[0, j]
    r = y - X @ b
    obj = float(r @ r / (2 * n) + lam * np.sum(np.abs(b[free]) * scale))
    return FittedFunction(b, dictionary, "mean", objective=obj, penalty=lam)


def _logistic_parts(X, y, b, lam, P):
    eta = X @ b
    ll = float(y @ eta - np.sum(np.logaddexp(0.0, eta)))
    p = _expit(eta)
    grad = X.T @ (y - p) - 2 * lam * P * b
    return ll - lam * float(np.sum(P * b * b)), grad, p


def fit_logistic(
    features,
    labels,
    lam: float,
    dictionary: Dictionary | None = None,
    clip: float = DEFAULT_CLIP,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> FittedFunction:
    """Penalized logistic regression by damped Newton iterations.

    Maximizes ``loglik(b) - lam * ||b||^2`` (constant columns unpenalized).
    """
    X, y = _as_xy(features, labels)
    if not np.all((y == 0) | (y == 1)):
        raise InvalidArgumentError("labels must be 0/1")
    if lam < 0:
        raise InvalidArgumentError("lambda must be >= 0")
    K = X.shape[1]
    P = np.ones(K)
    P[_constant_columns(X)] = 0.0
    b = np.zeros(K)
    obj, grad, p = _logistic_parts(X, y, b, lam, P)
    for it in range(max_iter):
        if np.max(np.abs(grad)) < tol:
            break
        w = p * (1 - p)
        H = (X * w[:, None]).T @ X + 2 * lam * np.diag(P)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = b + t * step
            cobj, cgrad, cp = _logistic_parts(X, y, cand, lam, P)
            if cobj >= obj - 1e-12 * abs(obj) or t < 1e-10:
                break
            t *= 0.5
        if lam == 0 and np.max(np.abs(cand)) > 30:
            raise SeparationError(
                "logistic likelihood is unbounded (separated labels); use lambda > 0",
                last_iterate=cand,
                n_iter=it,
            )
        if np.max(np.abs(cand - b)) < 1e-15 * (1 + np.max(np.abs(b))):
            b, obj, grad, p = cand, cobj, cgrad, cp
            break
        b, obj, grad, p = cand, cobj, cgrad, cp
    else:
        raise ConvergenceError("logistic Newton iterations did not converge", last_iterate=b, n_iter=max_iter)
    if lam == 0 and np.max(np.abs(p - y)) < 1e-6:
        # every label fitted almost exactly: the optimum lies at infinity
        raise SeparationError(
            "logistic likelihood is unbounded (separated labels); use lambda > 0", last_iterate=b, n_iter=it
        )
    return FittedFunction(b, dictionary, "propensity", clip=clip, objective=-obj, penalty=lam)


def check_loss(u, nu):
    u = np.asarray(u, dtype=float)
    return u * (nu - (u < 0))


def quantile_objective(features, targets, coef, nu, lam=0.0, penalized=None) -> float:
    X, y = _as_xy(features, targets)
    w = np.ones_like(coef) if penalized is None else penalized
    return float(np.mean(check_loss(y - X @ coef, nu)) + lam * np.sum(w * np.abs(coef)))


def _smoothed_check(r, nu, w):
    """Huberized check loss, its derivative in r, and its curvature."""
    side = np.where(r > 0, nu, 1.0 - nu)
    inside = np.abs(r) <= w
    loss = np.where(inside, side * r * r / (2 * w), side * (np.abs(r) - 0.5 * w))
    psi = np.where(inside, side * r / w, np.where(r > 0, nu, nu - 1.0))
    curv = np.where(inside, side / w, 0.0)
    return loss, psi, curv


def fit_quantile(
    features,
    targets,
    nu: float,
    lam: float,
    dictionary: Dictionary | None = None,
    widths: Sequence[float] = (1e-2, 1e-3, 1e-4, 1e-5),
    tol: float = 1e-10,
    max_iter: int = 500,
) -> FittedFunction:
    """Penalized check-loss regression via smoothing continuation.

    For each smoothing width (relative to the robust scale of the targets)
    the Huberized objective is minimized by damped proximal Newton steps
    whose strongly convex subproblems are solved by coordinate descent.
    The unsmoothed objective then picks the best restart; with ``lam = 0``
    the winner is also polished onto the interpolating basis it identifies.
    """
    X, y = _as_xy(features, targets)
    if not 0 < nu < 1:
        raise InvalidArgumentError("nu must lie in (0, 1)")
    if lam < 0:
        raise InvalidArgumentError("lambda must be >= 0")
    n, K = X.shape
    P = np.ones(K)
    const = _constant_columns(X)
    P[const] = 0.0
    pen = lam * P
    q75, q25 = np.percentile(y, [75, 25])
    scale = (q75 - q25) / 1.349
    if not scale > 0:
        scale = max(np.std(y), 1.0)
    D = np.mean(X * X, axis=0)
    D[D == 0] = 1.0

    def full_obj(b):
        return float(np.mean(check_loss(y - X @ b, nu)) + np.sum(pen * np.abs(b)))

    b = np.zeros(K)
    if const.size:
        b[const[0]] = np.quantile(y, nu) / X[0, const[0]]
    candidates = [(full_obj(np.zeros(K)), np.zeros(K)), (full_obj(b), b.copy())]
    converged = True
    for w in widths:
        w = w * scale

        def smooth_obj(bb):
            return float(np.mean(_smoothed_check(y - X @ bb, nu, w)[0]) + np.sum(pen * np.abs(bb)))

        fb = smooth_obj(b)
        mu = 1e-6
        converged = False
        for _ in range(max_iter):
            _, psi, curv = _smoothed_check(y - X @ b, nu, w)
            g = X.T @ psi / n  # minus the loss gradient
            H = (X * curv[:, None]).T @ X / n
            accepted = False
            while mu < 1e12:
                Gm = H + mu * np.diag(D)
                try:
                    b_new, _ = _solve_quadratic(Gm, Gm @ b + g, pen, b0=b)
                except (SingularSystemError, ConvergenceError):
                    mu *= 10
                    continue
                step = b_new - b
                t = 1.0
                while t > 1e-6:
                    cand = b + t * step
                    fc = smooth_obj(cand)
                    if fc <= fb:
                        break
                    t *= 0.5
                if fc <= fb:
                    accepted = True
                    break
                mu *= 10
            if not accepted:
                converged = True  # no descent direction left at this width
                break
            move = np.max(np.abs(cand - b))
            gain = fb - fc
            b, fb = cand, fc
            mu = max(mu / 3, 1e-12)
            if move <= tol * (1 + np.max(np.abs(b))) or gain <= 1e-16 * (1 + abs(fb)):
                converged = True
                break
        candidates.append((full_obj(b), b.copy()))
    if not converged:
        raise ConvergenceError("quantile fit did not converge at the final smoothing width", last_iterate=b)
    best_obj, best = min(candidates, key=lambda t: t[0])
    if lam == 0 and n >= K:
        basis = np.argsort(np.abs(y - X @ best), kind="stable")[:K]
        try:
            polished = np.linalg.solve(X[basis], y[basis])
            pobj = full_obj(polished)
            if pobj < best_obj:
                best_obj, best = pobj, polished
        except np.linalg.LinAlgError:
            pass
    return FittedFunction(best, dictionary, "quantile", nu=nu, objective=best_obj, penalty=lam)


def cv_lambda(
    fit: Callable[[np.ndarray, np.ndarray, float], FittedFunction],
    features,
    targets,
    lambdas: Sequence[float],
    loss: Callable[[np.ndarray, np.ndarray], float],
    n_folds: int = 5,
    seed: int = 0,
) -> float:
    """K-fold cross-validation over a penalty grid; ties go to the larger penalty."""
    X, y = _as_xy(features, targets)
    n = len(y)
    n_folds = min(n_folds, n)
    if n_folds < 2:
        raise InvalidArgumentError("cross-validation needs at least 2 observations")
    fold_of = np.empty(n, dtype=int)
    fold_of[np.random.default_rng(seed).permutation(n)] = np.arange(n) % n_folds
    scores = []
    for lam in lambdas:
        total = 0.0
        try:
            for f in range(n_folds):
                tr, te = fold_of != f, fold_of == f
                fitted = fit(X[tr], y[tr], lam)
                total += loss(y[te], fitted.predict(X[te])) * te.sum()
            scores.append(total / n)
        except (SingularSystemError, ConvergenceError):
            scores.append(np.inf)
    scores = np.array(scores)
    if not np.any(np.isfinite(scores)):
        raise ConvergenceError("no penalty value in the grid could be fitted")
    best = np.min(scores)
    ties = [lam for lam, s in zip(lambdas, scores) if s <= best * (1 + 1e-12)]
    return float(max(ties))

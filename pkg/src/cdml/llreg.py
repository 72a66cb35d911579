"""Locally linear kernel regression with pointwise sandwich standard errors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Kernel
from .errors import InvalidArgumentError, NoValidBandwidthError

__all__ = [
    "LocalLinearCurve",
    "fit_local_linear",
    "local_linear_at",
    "pointwise_se",
    "select_bandwidth",
    "pick_bandwidth",
    "loo_cv_scores",
    "default_grid",
    "default_bandwidth_grid",
    "MIN_LOCAL_MASS",
    "MAX_LOCAL_COND",
]

MIN_LOCAL_MASS = 10
MAX_LOCAL_COND = 1e10

OK = "ok"


@dataclass(frozen=True)
class LocalLinearCurve:
    grid: np.ndarray  # (m, r)
    theta_hat: np.ndarray
    beta_hat: np.ndarray  # (m, r) local slope d theta / d v
    se: np.ndarray
    ess: np.ndarray
    n_local: np.ndarray
    flags: tuple[str, ...]
    h: float
    kernel: str

    @property
    def valid(self) -> np.ndarray:
        return np.array([f == OK for f in self.flags])

    def __len__(self):
        return len(self.flags)

    def ci(self, z: float = 1.959963984540054):
        return self.theta_hat - z * self.se, self.theta_hat + z * self.se

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "kernel": self.kernel,
            "grid": self.grid.tolist(),
            "theta_hat": self.theta_hat.tolist(),
            "beta_hat": self.beta_hat.tolist(),
            "se": self.se.tolist(),
            "ess": self.ess.tolist(),
            "n_local": self.n_local.tolist(),
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LocalLinearCurve":
        return cls(
            grid=np.asarray(d["grid"], dtype=float).reshape(len(d["flags"]), -1),
            theta_hat=np.asarray(d["theta_hat"], dtype=float),
            beta_hat=np.asarray(d["beta_hat"], dtype=float).reshape(len(d["flags"]), -1),
            se=np.asarray(d["se"], dtype=float),
            ess=np.asarray(d["ess"], dtype=float),
            n_local=np.asarray(d["n_local"], dtype=int),
            flags=tuple(d["flags"]),
            h=float(d["h"]),
            kernel=str(d["kernel"]),
        )


def _as_sv(S, V):
    S = np.asarray(S, dtype=float).ravel()
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] != S.shape[0]:
        raise InvalidArgumentError("S and V have different numbers of rows")
    return S, V


def local_linear_at(S, V, v, h, kernel: Kernel, min_mass=MIN_LOCAL_MASS, max_cond=MAX_LOCAL_COND, exclude=None):
    """Weighted least squares of S on (1, (V - v)/h) at one point ``v``.

    Only observations with positive kernel weight enter the sums, in their
    original order, so far-away rows never touch the arithmetic.
    Returns ``(theta, beta, se, ess, n_local, flag)``.
    """
    r = V.shape[1]
    u = (V - v) / h
    w = kernel(u) / h**r
    if exclude is not None:
        w[exclude] = 0.0
    idx = np.flatnonzero(w > 0)
    nan_b = np.full(r, np.nan)
    if idx.size == 0:
        return np.nan, nan_b, np.nan, 0.0, 0, "empty"
    ws = w[idx]
    ess = float(ws.sum() ** 2 / np.sum(ws * ws))
    if idx.size < min_mass:
        return np.nan, nan_b, np.nan, ess, int(idx.size), "low_mass"
    Xl = np.empty((idx.size, r + 1))
    Xl[:, 0] = 1.0
    Xl[:, 1:] = u[idx]
    WX = Xl * ws[:, None]
    A = WX.T @ Xl
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > max_cond:
        return np.nan, nan_b, np.nan, ess, int(idx.size), "ill_conditioned"
    Ainv = np.linalg.inv(A)
    Sl = S[idx]
    coef = Ainv @ (WX.T @ Sl)
    e = Sl - Xl @ coef
    we = WX * e[:, None]
    cov = Ainv @ (we.T @ we) @ Ainv
    se = float(np.sqrt(max(cov[0, 0], 0.0)))
    return float(coef[0]), coef[1:] / h, se, ess, int(idx.size), OK


def fit_local_linear(
    S, V, grid, h: float, kernel: Kernel | str = "epanechnikov", min_mass=MIN_LOCAL_MASS, max_cond=MAX_LOCAL_COND
) -> LocalLinearCurve:
    """Locally linear estimate theta_hat(v) (the local intercept) on a grid.

    Points with fewer than ``min_mass`` positively weighted observations, an
    empty neighbourhood or an ill-conditioned local Gram are flagged and
    carry NaN estimates.
    """
    kernel = Kernel(kernel) if isinstance(kernel, str) else kernel
    if not h > 0:
        raise InvalidArgumentError(f"bandwidth must be positive, got {h}")
    S, V = _as_sv(S, V)
    r = V.shape[1]
    if S.shape[0] < r + 2:
        raise InvalidArgumentError(f"need at least r + 2 = {r + 2} observations")
    grid = np.asarray(grid, dtype=float)
    grid = grid.reshape(-1, r) if grid.ndim < 2 else grid
    if grid.shape[1] != r:
        raise InvalidArgumentError("grid points must have the same dimension as V")
    m = grid.shape[0]
    theta = np.empty(m)
    beta = np.empty((m, r))
    se = np.empty(m)
    ess = np.empty(m)
    n_local = np.empty(m, dtype=int)
    flags = []
    for j in range(m):
        theta[j], beta[j], se[j], ess[j], n_local[j], flag = local_linear_at(
            S, V, grid[j], h, kernel, min_mass, max_cond
        )
        flags.append(flag)
    return LocalLinearCurve(grid, theta, beta, se, ess, n_local, tuple(flags), float(h), kernel.family)


def pointwise_se(S, V, grid, h, kernel: Kernel | str = "epanechnikov") -> np.ndarray:
    """Heteroskedasticity-robust local sandwich standard errors (NaN where flagged)."""
    return fit_local_linear(S, V, grid, h, kernel).se


def _loo_errors(S, V, kernel: Kernel, h: float, min_mass, max_cond, chunk: int = 256) -> np.ndarray:
    """Squared leave-one-out errors at every V_i; NaN where the local fit is flagged."""
    n, r = V.shape
    out = np.full(n, np.nan)
    for start in range(0, n, chunk):
        rows = np.arange(start, min(start + chunk, n))
        u = (V[None, :, :] - V[rows][:, None, :]) / h  # (c, n, r)
        w = kernel(u) / h**r
        w[np.arange(rows.size), rows] = 0.0
        wu = w[:, :, None] * u
        A = np.empty((rows.size, r + 1, r + 1))
        A[:, 0, 0] = w.sum(axis=1)
        A[:, 0, 1:] = A[:, 1:, 0] = wu.sum(axis=1)
        A[:, 1:, 1:] = np.matmul(wu.transpose(0, 2, 1), u)
        b = np.empty((rows.size, r + 1))
        b[:, 0] = w @ S
        b[:, 1:] = np.matmul(wu.transpose(0, 2, 1), S)
        count = np.count_nonzero(w > 0, axis=1)
        ok = count >= min_mass
        if np.any(ok):
            cond = np.linalg.cond(A[ok])
            good = np.flatnonzero(ok)[np.isfinite(cond) & (cond <= max_cond)]
            theta = np.linalg.solve(A[good], b[good][..., None])[:, 0, 0]
            out[rows[good]] = (S[rows[good]] - theta) ** 2
    return out


def loo_cv_scores(S, V, kernel: Kernel | str, candidates: Sequence[float], min_mass=MIN_LOCAL_MASS) -> np.ndarray:
    """Leave-one-out squared prediction error of the local linear fit at each V_i.

    All candidates are scored on the same rows, those whose leave-one-out fit
    is unflagged under every candidate that has any unflagged row, so small
    bandwidths cannot win by dropping hard points.  Candidates with no
    unflagged row score ``inf``.
    """
    kernel = Kernel(kernel) if isinstance(kernel, str) else kernel
    S, V = _as_sv(S, V)
    errs = []
    for h in candidates:
        if not h > 0:
            raise InvalidArgumentError("candidate bandwidths must be positive")
        errs.append(_loo_errors(S, V, kernel, float(h), min_mass, MAX_LOCAL_COND))
    E = np.array(errs).reshape(len(errs), S.shape[0])
    finite = np.isfinite(E)
    usable = finite.any(axis=1)
    out = np.full(E.shape[0], np.inf)
    if not usable.any():
        return out
    common = finite[usable].all(axis=0)
    if common.any():
        out[usable] = E[usable][:, common].mean(axis=1)
    else:
        out[usable] = [e[f].mean() for e, f in zip(E[usable], finite[usable])]
    return out


def select_bandwidth(
    S, V, kernel: Kernel | str, candidate_grid: Sequence[float], undersmooth: float = 1.0, min_mass=MIN_LOCAL_MASS
) -> float:
    """Leave-one-out CV bandwidth (ties go to the larger h) times ``undersmooth``."""
    cands = np.asarray(list(candidate_grid), dtype=float)
    if cands.size == 0:
        raise InvalidArgumentError("candidate bandwidth grid is empty")
    if not undersmooth > 0:
        raise InvalidArgumentError("undersmoothing multiplier must be positive")
    if cands.size == 1:
        return float(cands[0] * undersmooth)
    scores = loo_cv_scores(S, V, kernel, cands, min_mass)
    return pick_bandwidth(cands, scores) * undersmooth


def pick_bandwidth(candidates, scores) -> float:
    """Minimizer of the CV scores; near-ties (relative 1e-9) go to the larger bandwidth."""
    cands = np.asarray(candidates, dtype=float)
    scores = np.asarray(scores, dtype=float)
    if not np.any(np.isfinite(scores)):
        raise NoValidBandwidthError("every candidate bandwidth left all leave-one-out fits flagged")
    tied = np.isclose(scores, np.min(scores), rtol=1e-9, atol=1e-16)
    return float(np.max(cands[tied]))


def default_grid(V, points: int = 41, lower_q: float = 0.025, upper_q: float = 0.975) -> np.ndarray:
    """Equispaced points between two quantiles of each coordinate (product grid if r > 1)."""
    V = np.asarray(V, dtype=float)
    V = V[:, None] if V.ndim == 1 else V
    axes = [np.linspace(*np.quantile(V[:, j], [lower_q, upper_q]), points) for j in range(V.shape[1])]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([a.ravel() for a in mesh])


def default_bandwidth_grid(V, n_candidates: int = 12) -> np.ndarray:
    """Geometric candidate grid around a rule-of-thumb scale of V."""
    V = np.asarray(V, dtype=float)
    V = V[:, None] if V.ndim == 1 else V
    n, r = V.shape
    scale = float(np.mean(np.std(V, axis=0)))
    base = scale * n ** (-1.0 / (r + 4))
    return base * np.geomspace(0.25, 3.0, n_candidates)

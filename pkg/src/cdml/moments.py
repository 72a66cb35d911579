"""Linear functionals m(W, gamma) and generalized residuals rho(W, gamma).

Every ``m_*`` function takes regressor rows ``x = (D, Z)`` and a callable
``gamma`` mapping such rows to values.  ``gamma`` may be vector valued
(shape ``(n, K)``), which is how the Riesz step evaluates m on every
dictionary element at once.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .core import Dataset
from .errors import InvalidArgumentError

__all__ = [
    "MomentFunctional",
    "KINDS",
    "m_identity",
    "m_cate_binary",
    "m_cate_continuous",
    "m_ev_bound",
    "m_quantile_derivative",
    "rho_mean",
    "rho_quantile",
    "default_step",
    "simpson_weights",
]

KINDS = ("identity", "cate_binary", "cate_continuous", "ev_bound", "quantile_derivative")
SIMPSON_NODES = 201
_CHUNK_ROWS = 2048


def _with_column(x, col, value):
    out = np.array(x, dtype=float, copy=True)
    out[:, col] = value
    return out


def m_identity(x, gamma):
    return gamma(np.asarray(x, dtype=float))


def m_cate_binary(x, gamma, treatment_col=0):
    """gamma(1, Z) - gamma(0, Z)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return gamma(_with_column(x, treatment_col, 1.0)) - gamma(_with_column(x, treatment_col, 0.0))


def default_step(d) -> float:
    d = np.asarray(d, dtype=float)
    scale = float(np.std(d)) if d.size > 1 else 0.0
    return max(1e-4, 1e-4 * scale)


def m_cate_continuous(x, gamma, step=None, treatment_col=0):
    """Central difference of gamma in the treatment coordinate."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if step is None:
        step = default_step(x[:, treatment_col])
    d = x[:, treatment_col]
    up = gamma(_with_column(x, treatment_col, d + step))
    down = gamma(_with_column(x, treatment_col, d - step))
    return (up - down) / (2.0 * step)


m_quantile_derivative = m_cate_continuous


def simpson_weights(n_nodes: int) -> np.ndarray:
    if n_nodes < 3 or n_nodes % 2 == 0:
        raise InvalidArgumentError("Simpson's rule needs an odd number of nodes >= 3")
    w = np.ones(n_nodes)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w / 3.0


def m_ev_bound(x, gamma, lower, upper, kappa=0.0, weight=1.0, income_col=1, price_col=0, n_nodes=SIMPSON_NODES):
    """omega(Z) * int_lower^upper (Z1/u) gamma(u, Z) exp(-kappa (u - lower)) du.

    ``lower``, ``upper`` and ``weight`` are scalars or per-row arrays.
    Integration is composite Simpson on ``n_nodes`` equispaced nodes.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    lo = np.broadcast_to(np.asarray(lower, dtype=float), (n,))
    hi = np.broadcast_to(np.asarray(upper, dtype=float), (n,))
    om = np.broadcast_to(np.asarray(weight, dtype=float), (n,))
    if np.any(lo >= hi):
        raise InvalidArgumentError("ev_bound needs lower price < upper price for every observation")
    if np.any(lo <= 0):
        raise InvalidArgumentError("ev_bound prices must be positive")
    if kappa < 0:
        raise InvalidArgumentError("kappa must be >= 0")
    t = np.linspace(0.0, 1.0, n_nodes)
    sw = simpson_weights(n_nodes)
    pieces = []
    for start in range(0, n, _CHUNK_ROWS):
        sl = slice(start, min(start + _CHUNK_ROWS, n))
        xs = x[sl]
        c = xs.shape[0]
        u = lo[sl, None] + (hi[sl] - lo[sl])[:, None] * t[None, :]  # (c, N)
        rows = np.repeat(xs, n_nodes, axis=0)
        rows[:, price_col] = u.ravel()
        g = np.asarray(gamma(rows), dtype=float)
        g = g.reshape((c, n_nodes) + g.shape[1:])
        step = (hi[sl] - lo[sl]) / (n_nodes - 1)
        factor = (xs[:, income_col][:, None] / u) * np.exp(-kappa * (u - lo[sl, None]))
        wts = factor * sw[None, :] * step[:, None]
        vals = np.einsum("cn,cn...->c...", wts, g)
        pieces.append(vals * om[sl].reshape((c,) + (1,) * (vals.ndim - 1)))
    return np.concatenate(pieces, axis=0)


def rho_mean(y, gx):
    return np.asarray(y, dtype=float) - np.asarray(gx, dtype=float)


def rho_quantile(y, gx, nu):
    """1(Y <= gamma(X)) - nu; ties count as below."""
    return (np.asarray(y, dtype=float) <= np.asarray(gx, dtype=float)).astype(float) - nu


@dataclass(frozen=True)
class MomentFunctional:
    """A conditional object theta0(V) = E[m(W, gamma0) | V] from the catalog.

    ``lower``, ``upper`` and ``weight`` (ev_bound only) are constants or
    names of auxiliary dataset columns.  ``income_col`` indexes the regressor
    row x, so the default 1 is the first covariate Z1.
    """

    kind: str
    nu: float = 0.5
    kappa: float = 0.0
    lower: float | str = 1.0
    upper: float | str = 2.0
    weight: float | str = 1.0
    income_col: int = 1
    treatment_col: int = 0
    step: float | None = None
    n_nodes: int = SIMPSON_NODES

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown functional kind {self.kind!r}; choose from {KINDS}")
        if self.kind == "quantile_derivative" and not 0 < self.nu < 1:
            raise InvalidArgumentError("nu must lie in (0, 1)")
        if self.step is not None and not self.step > 0:
            raise InvalidArgumentError("finite-difference step must be positive")
        if self.kind == "ev_bound":
            if self.kappa < 0:
                raise InvalidArgumentError("kappa must be >= 0")
            if isinstance(self.lower, (int, float)) and isinstance(self.upper, (int, float)):
                if not self.lower < self.upper:
                    raise InvalidArgumentError("ev_bound needs lower < upper")

    @property
    def target(self) -> str:
        return "quantile" if self.kind == "quantile_derivative" else "mean"

    @property
    def vrho_sign(self) -> float:
        """Sign of the slope of E[rho(W, gamma0 + a) | X] in a."""
        return 1.0 if self.target == "quantile" else -1.0

    @property
    def binary(self) -> bool:
        return self.kind == "cate_binary"

    def resolved(self, data: Dataset) -> "MomentFunctional":
        """Fix the finite-difference step from the full sample before splitting."""
        if self.kind in ("cate_continuous", "quantile_derivative") and self.step is None:
            return replace(self, step=default_step(data.d))
        return self

    def check_data(self, data: Dataset):
        if self.binary:
            data.require_binary_treatment()
        if self.kind == "ev_bound":
            for attr in ("lower", "upper", "weight"):
                val = getattr(self, attr)
                if isinstance(val, str) and val not in data.aux:
                    raise InvalidArgumentError(f"ev_bound {attr} refers to missing column {val!r}")
            lo, hi = self._param(data, "lower"), self._param(data, "upper")
            if np.any(np.broadcast_to(lo, (data.n,)) >= np.broadcast_to(hi, (data.n,))):
                raise InvalidArgumentError("ev_bound needs lower < upper for every observation")

    def _param(self, data: Dataset, attr):
        val = getattr(self, attr)
        return data.aux[val] if isinstance(val, str) else float(val)

    def m(self, data: Dataset, gamma: Callable) -> np.ndarray:
        x = data.x
        if self.kind == "identity":
            return m_identity(x, gamma)
        if self.kind == "cate_binary":
            return m_cate_binary(x, gamma, self.treatment_col)
        if self.kind in ("cate_continuous", "quantile_derivative"):
            return m_cate_continuous(x, gamma, self.step, self.treatment_col)
        return m_ev_bound(
            x,
            gamma,
            self._param(data, "lower"),
            self._param(data, "upper"),
            kappa=self.kappa,
            weight=self._param(data, "weight"),
            income_col=self.income_col,
            price_col=self.treatment_col,
            n_nodes=self.n_nodes,
        )

    def rho(self, data: Dataset, gx) -> np.ndarray:
        if self.target == "quantile":
            return rho_quantile(data.y, gx, self.nu)
        return rho_mean(data.y, gx)

    def describe(self) -> dict:
        out = {"kind": self.kind, "target": self.target}
        if self.kind == "quantile_derivative":
            out["nu"] = self.nu
        if self.kind in ("cate_continuous", "quantile_derivative"):
            out["step"] = self.step
        if self.kind == "ev_bound":
            out.update(kappa=self.kappa, lower=self.lower, upper=self.upper, weight=self.weight)
        return out

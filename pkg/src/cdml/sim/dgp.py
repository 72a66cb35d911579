"""Synthetic designs whose nuisances and targets are available in closed form."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from ..core import Dataset
from ..errors import InvalidArgumentError
from ..moments import MomentFunctional

__all__ = ["DgpSpec", "generate", "DGP_ALIASES", "dgp_by_name", "CENTRAL_POINT"]

DGP_KINDS = ("cate_binary", "cate_continuous", "quantile_ls")
# Population midpoint of the evaluation grid when V ~ Uniform(0, 1).
CENTRAL_POINT = 0.5


@dataclass(frozen=True)
class DgpSpec:
    """A design with analytic gamma0, alpha0 and theta0.

    All designs draw ``Z ~ Uniform(0, 1)^p`` and set ``V`` to the first
    ``r`` coordinates of Z, so ``theta0(v) = 1 + v_1`` throughout.

    * ``cate_binary``: ``D ~ Bernoulli(0.25 + 0.5 z1)`` and
      ``gamma0 = d (1 + z1) + f(z2) + sum_j c_j z_j`` with ``f = sin(pi .)``
      (``nonlinear``) or the identity.
    * ``cate_continuous``: ``D | Z ~ N(0.5 z1, treatment_sd^2)`` with the
      same gamma0, so the score ``(D - 0.5 z1) / treatment_sd^2`` is linear.
    * ``quantile_ls``: ``Y = d (1 + z1) + z2 + sigma (1 + z1) eps`` with
      normal eps and D as in the continuous design; the nu-quantile of Y
      given X and its d-derivative are then closed form.
    """

    kind: str = "cate_binary"
    p: int = 2
    r: int = 1
    sigma: float = 1.0
    nu: float = 0.5
    treatment_sd: float = 1.0
    nonlinear: bool = True
    sparse_coef: tuple[float, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DGP_KINDS:
            raise InvalidArgumentError(f"unknown design {self.kind!r}; choose from {DGP_KINDS}")
        if self.p < 2:
            raise InvalidArgumentError("designs need at least two covariates")
        if not 1 <= self.r <= self.p:
            raise InvalidArgumentError("r must lie between 1 and p")
        if self.sigma < 0 or self.treatment_sd <= 0:
            raise InvalidArgumentError("noise scales must be nonnegative (treatment_sd positive)")
        if not 0 < self.nu < 1:
            raise InvalidArgumentError("nu must lie in (0, 1)")
        if len(self.sparse_coef) > self.p - 2:
            raise InvalidArgumentError("sparse_coef has more entries than covariates z3..zp")
        object.__setattr__(self, "sparse_coef", tuple(float(c) for c in self.sparse_coef))

    # dimensions
    @property
    def d(self) -> int:
        """Dimension of the regressors X = (D, Z)."""
        return self.p + 1

    # oracles -----------------------------------------------------------
    def propensity(self, z) -> np.ndarray:
        z = np.atleast_2d(z)
        return 0.25 + 0.5 * z[:, 0]

    def treatment_mean(self, z) -> np.ndarray:
        return 0.5 * np.atleast_2d(z)[:, 0]

    def _baseline(self, z) -> np.ndarray:
        z = np.atleast_2d(z)
        if self.kind == "quantile_ls":
            return z[:, 1]
        base = np.sin(np.pi * z[:, 1]) if self.nonlinear else z[:, 1].copy()
        for j, c in enumerate(self.sparse_coef):
            base = base + c * z[:, 2 + j]
        return base

    def location(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x[:, 0] * (1.0 + x[:, 1]) + self._baseline(x[:, 1:])

    def scale(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.sigma * (1.0 + x[:, 1])

    @property
    def quantile_shift(self) -> float:
        return float(norm.ppf(self.nu))

    def gamma0(self, x) -> np.ndarray:
        """Conditional mean (mean designs) or nu-quantile of Y given X = x."""
        if self.kind == "quantile_ls":
            return self.location(x) + self.scale(x) * self.quantile_shift
        return self.location(x)

    def theta0(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        v = v[:, None] if v.ndim == 1 else v
        return 1.0 + v[:, 0]

    def vrho(self, x) -> np.ndarray:
        """Slope of E[rho(W, gamma0 + a) | X] at a = 0 in the sign convention of the functional."""
        if self.kind != "quantile_ls":
            return -np.ones(np.atleast_2d(x).shape[0])
        sc = self.scale(x)
        if np.any(sc == 0):
            raise InvalidArgumentError("quantile design needs sigma > 0 for a finite density")
        return norm.pdf(self.quantile_shift) / sc

    def score(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return (x[:, 0] - self.treatment_mean(x[:, 1:])) / self.treatment_sd**2

    def alpha0(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.kind == "cate_binary":
            pi = self.propensity(x[:, 1:])
            d = x[:, 0]
            return d / pi - (1 - d) / (1 - pi)
        if self.kind == "cate_continuous":
            return self.score(x)
        return -self.score(x) / self.vrho(x)

    def alpha0_data(self, data: Dataset) -> np.ndarray:
        return self.alpha0(data.x)

    def functional(self) -> MomentFunctional:
        if self.kind == "cate_binary":
            return MomentFunctional("cate_binary")
        if self.kind == "cate_continuous":
            return MomentFunctional("cate_continuous")
        return MomentFunctional("quantile_derivative", nu=self.nu)

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "p": self.p,
            "d": self.d,
            "r": self.r,
            "sigma": self.sigma,
            "nu": self.nu,
            "treatment_sd": self.treatment_sd,
            "nonlinear": self.nonlinear,
            "sparse_coef": list(self.sparse_coef),
        }


def generate(spec: DgpSpec, n: int, seed: int) -> Dataset:
    """Draw Z, then D, then Y; V is the first r coordinates of Z."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng = np.random.default_rng(seed)
    z = rng.uniform(0.0, 1.0, size=(n, spec.p))
    if spec.kind == "cate_binary":
        d = (rng.uniform(size=n) < spec.propensity(z)).astype(float)
    else:
        d = spec.treatment_mean(z) + spec.treatment_sd * rng.standard_normal(n)
    eps = rng.standard_normal(n)
    x = np.column_stack([d, z])
    if spec.kind == "quantile_ls":
        y = spec.location(x) + spec.scale(x) * eps
    else:
        y = spec.gamma0(x) + spec.sigma * eps
    return Dataset(y=y, d=d, z=z, v=z[:, : spec.r])


DGP_ALIASES = {
    "a": "cate_binary",
    "b": "cate_continuous",
    "c": "quantile_ls",
    "hd": "high_dim",
}


def dgp_by_name(name: str, sigma: float | None = None) -> DgpSpec:
    """The shipped designs: (a) binary, (b) continuous, (c) quantile, hd (p = 50, sparse)."""
    key = DGP_ALIASES.get(name, name)
    extra = {} if sigma is None else {"sigma": sigma}
    if key == "high_dim":
        coef = (1.0, -1.0, 0.5, -0.5, 0.5) + (0.0,) * 43
        return DgpSpec("cate_binary", p=50, nonlinear=False, sparse_coef=coef, **extra)
    if key in DGP_KINDS:
        return DgpSpec(key, **extra)
    raise InvalidArgumentError(f"unknown design {name!r}; choose from a, b, c, hd")

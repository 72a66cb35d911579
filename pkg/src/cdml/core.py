"""Data model: observations, fold partitions and smoothing kernels."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "Dataset",
    "FoldAssignment",
    "Kernel",
    "KERNELS",
    "V_TRANSFORMS",
    "make_folds",
    "kernel_eval",
    "read_csv_columns",
    "dataset_from_columns",
]


def _frozen(a, ndim):
    a = np.array(a, dtype=float)
    if ndim == 2 and a.ndim == 1:
        a = a[:, None]
    if a.ndim != ndim:
        raise InvalidArgumentError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """A sample of observations W = (Y, D, Z) with conditioning variable V.

    The regressor matrix used by the first-step learners is ``x = (D, Z)``;
    the treatment always sits in column 0 of ``x``.  Per-observation
    auxiliary columns (price bounds, weights, ...) live in ``aux``.
    """

    y: np.ndarray
    d: np.ndarray
    z: np.ndarray
    v: np.ndarray
    aux: Mapping[str, np.ndarray] = field(default_factory=dict)
    z_names: tuple[str, ...] = ()

    def __post_init__(self):
        y = _frozen(self.y, 1)
        d = _frozen(self.d, 1)
        z = _frozen(self.z, 2)
        v = _frozen(self.v, 2)
        n = y.shape[0]
        for name, col in (("d", d), ("z", z), ("v", v)):
            if col.shape[0] != n:
                raise InvalidArgumentError(f"column {name!r} has {col.shape[0]} rows, expected {n}")
        if v.shape[1] < 1:
            raise InvalidArgumentError("v must have at least one column")
        aux = {}
        for key, col in dict(self.aux).items():
            col = _frozen(col, 1)
            if col.shape[0] != n:
                raise InvalidArgumentError(f"aux column {key!r} has {col.shape[0]} rows, expected {n}")
            aux[key] = col
        for name, col in (("y", y), ("d", d), ("z", z), ("v", v), *aux.items()):
            if not np.all(np.isfinite(col)):
                raise InvalidArgumentError(f"column {name!r} contains non-finite values")
        names = tuple(self.z_names) or tuple(f"z{j + 1}" for j in range(z.shape[1]))
        if len(names) != z.shape[1]:
            raise InvalidArgumentError("z_names length does not match z")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "aux", aux)
        object.__setattr__(self, "z_names", names)
        x = np.column_stack([d, z])
        x.flags.writeable = False
        object.__setattr__(self, "_x", x)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self._x

    @property
    def r(self) -> int:
        return self.v.shape[1]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            y=self.y[idx],
            d=self.d[idx],
            z=self.z[idx],
            v=self.v[idx],
            aux={k: c[idx] for k, c in self.aux.items()},
            z_names=self.z_names,
        )

    def with_y(self, y) -> "Dataset":
        return Dataset(y=y, d=self.d, z=self.z, v=self.v, aux=self.aux, z_names=self.z_names)

    def is_binary_treatment(self) -> bool:
        return bool(np.all((self.d == 0.0) | (self.d == 1.0)))

    def require_binary_treatment(self):
        if not self.is_binary_treatment():
            raise InvalidArgumentError("binary-treatment functional requires every d in {0, 1}")


@dataclass(frozen=True)
class FoldAssignment:
    n: int
    L: int
    fold_of: np.ndarray  # labels 1..L

    def indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def complement(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)

    def sizes(self) -> list[int]:
        return [int(np.sum(self.fold_of == f)) for f in range(1, self.L + 1)]


def make_folds(n: int, L: int, seed: int) -> FoldAssignment:
    """Balanced seeded partition of ``range(n)`` into ``L`` folds.

    After a seeded shuffle the k-th shuffled index goes to fold ``k % L + 1``,
    so any remainder lands one observation per fold starting at fold 1.
    """
    if int(L) != L or int(n) != n:
        raise InvalidArgumentError("n and L must be integers")
    n, L = int(n), int(L)
    if L < 2 or L > n:
        raise InvalidArgumentError(f"need 2 <= L <= n, got L={L}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[perm] = np.arange(n) % L + 1
    fold_of.flags.writeable = False
    return FoldAssignment(n=n, L=L, fold_of=fold_of)


_GAUSS_CUT = 8.0
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _epanechnikov(u):
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def _gaussian(u):
    return np.where(np.abs(u) <= _GAUSS_CUT, _INV_SQRT_2PI * np.exp(-0.5 * u * u), 0.0)


def _uniform(u):
    return np.where(np.abs(u) <= 1.0, 0.5, 0.0)


KERNELS = {"epanechnikov": _epanechnikov, "gaussian": _gaussian, "uniform": _uniform}


@dataclass(frozen=True)
class Kernel:
    """Univariate kernel with a product extension to several coordinates."""

    family: str = "epanechnikov"

    def __post_init__(self):
        if self.family not in KERNELS:
            raise InvalidArgumentError(f"unknown kernel {self.family!r}; choose from {sorted(KERNELS)}")

    @property
    def support(self) -> float:
        return _GAUSS_CUT if self.family == "gaussian" else 1.0

    def __call__(self, u) -> np.ndarray:
        """K(u) for scalar coordinates; the last axis is multiplied out."""
        u = np.asarray(u, dtype=float)
        k = KERNELS[self.family](u)
        return k if k.ndim == 0 else np.prod(k, axis=-1)

    def univariate(self, u) -> np.ndarray:
        return KERNELS[self.family](np.asarray(u, dtype=float))

    def scaled(self, u, h: float) -> np.ndarray:
        """K_h(u) = h^{-r} prod_j K(u_j / h) over the last axis of ``u``."""
        if not h > 0:
            raise InvalidArgumentError(f"bandwidth must be positive, got {h}")
        u = np.asarray(u, dtype=float)
        if u.ndim == 0:
            u = u[None]
        r = u.shape[-1]
        return np.prod(KERNELS[self.family](u / h), axis=-1) / h**r


def kernel_eval(k: Kernel, u, h: float) -> float:
    """Scaled product kernel at a single point ``u`` (length r)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if not np.all(np.isfinite(u)):
        raise InvalidArgumentError("u must be finite")
    return float(k.scaled(u, h))


# Named V = T(Z) transforms available from configuration files.
V_TRANSFORMS = {
    "first": lambda z: z[:, :1],
    "mean": lambda z: z.mean(axis=1, keepdims=True),
    "sum": lambda z: z.sum(axis=1, keepdims=True),
    "norm": lambda z: np.sqrt((z * z).sum(axis=1, keepdims=True)),
}


def read_csv_columns(path) -> dict[str, np.ndarray]:
    """Read a headed CSV into float columns; empty or non-numeric cells are rejected."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidArgumentError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            raise InvalidArgumentError(f"{path}: duplicate column names in header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise InvalidArgumentError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise InvalidArgumentError(f"{path}:{lineno}: non-numeric value") from None
    if not rows:
        raise InvalidArgumentError(f"{path}: no data rows")
    arr = np.array(rows, dtype=float)
    return {name: arr[:, j] for j, name in enumerate(header)}


def dataset_from_columns(
    columns: Mapping[str, np.ndarray],
    y: str,
    d: str,
    z: Sequence[str],
    v: Sequence[str] | None = None,
    v_transform: str | None = None,
    aux: Sequence[str] = (),
) -> Dataset:
    """Assemble a Dataset from named columns and a column-role map."""

    def col(name):
        if name not in columns:
            raise InvalidArgumentError(f"column {name!r} not found; available: {sorted(columns)}")
        return np.asarray(columns[name], dtype=float)

    if not z:
        raise InvalidArgumentError("at least one z column is required")
    zmat = np.column_stack([col(c) for c in z])
    if (v is None) == (v_transform is None):
        raise InvalidArgumentError("give exactly one of v (z-column names) or v_transform")
    if v is not None:
        missing = [c for c in v if c not in z]
        if missing:
            raise InvalidArgumentError(f"v columns must be z columns so that V = T(Z); not in z: {missing}")
        vmat = np.column_stack([zmat[:, list(z).index(c)] for c in v])
    else:
        if v_transform not in V_TRANSFORMS:
            raise InvalidArgumentError(f"unknown v_transform {v_transform!r}; choose from {sorted(V_TRANSFORMS)}")
        vmat = V_TRANSFORMS[v_transform](zmat)
    return Dataset(
        y=col(y),
        d=col(d),
        z=zmat,
        v=vmat,
        aux={name: col(name) for name in aux},
        z_names=tuple(z),
    )

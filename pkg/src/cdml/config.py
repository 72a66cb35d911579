"""Validated configuration blocks.

Every block forbids unknown keys so that a misspelt statistical option
fails loudly instead of silently falling back to a default.
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import InvalidArgumentError
from .learners import Dictionary
from .moments import MomentFunctional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "DictionaryConfig",
    "LearnerConfig",
    "RieszConfig",
    "LLRConfig",
    "CrossfitConfig",
    "FunctionalConfig",
    "DataConfig",
    "EstimateConfig",
    "RunConfig",
    "SimulateConfig",
    "load_toml",
    "format_validation_error",
]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class DictionaryConfig(_Strict):
    degree: int = Field(1, ge=0)
    knots: list[float] = []
    treatment: Literal["none", "interact", "split"] = "interact"
    include_constant: bool = True
    columns: Optional[list[int]] = None
    cross: bool = False

    def build(self) -> Dictionary:
        return Dictionary(
            degree=self.degree,
            knots=tuple(self.knots),
            treatment=self.treatment,
            include_constant=self.include_constant,
            columns=None if self.columns is None else tuple(self.columns),
            cross=self.cross,
        )


class LearnerConfig(DictionaryConfig):
    kind: Literal["ridge", "lasso", "logistic", "quantile"] = "ridge"
    lam: Optional[float] = Field(None, alias="lambda", ge=0)
    cv: bool = False
    cv_folds: int = Field(5, ge=2)

    def dictionary(self) -> Dictionary:
        return DictionaryConfig.model_validate(self.model_dump(include=set(DictionaryConfig.model_fields))).build()

    @property
    def use_cv(self) -> bool:
        return self.cv or self.lam is None


class RieszConfig(_Strict):
    method: Literal["auto", "auto-weighted", "plugin", "none"] = "auto"
    lam: Optional[float] = Field(0.0, alias="lambda", ge=0)
    cv: bool = False
    density_floor: float = Field(1e-3, gt=0)
    clip: float = Field(0.01, gt=0, lt=0.5)
    dictionary: Optional[DictionaryConfig] = None

    @property
    def use_cv(self) -> bool:
        return self.cv or self.lam is None


class LLRConfig(_Strict):
    h: Optional[float] = Field(None, gt=0)
    h_grid: Optional[list[float]] = None
    undersmooth: float = Field(0.8, gt=0)
    grid_points: int = Field(41, ge=1)
    grid: Optional[list[float]] = None
    kernel: Literal["epanechnikov", "gaussian", "uniform"] = "epanechnikov"
    min_mass: int = Field(10, ge=1)

    @field_validator("h_grid")
    @classmethod
    def _positive(cls, v):
        if v is not None and (not v or any(h <= 0 for h in v)):
            raise ValueError("h_grid must be a nonempty list of positive bandwidths")
        return v


class CrossfitConfig(_Strict):
    folds: int = Field(5, ge=2)


class FunctionalConfig(_Strict):
    kind: Literal["identity", "cate_binary", "cate_continuous", "ev_bound", "quantile_derivative"] = "cate_binary"
    nu: float = Field(0.5, gt=0, lt=1)
    kappa: float = Field(0.0, ge=0)
    lower: Union[float, str] = 1.0
    upper: Union[float, str] = 2.0
    weight: Union[float, str] = 1.0
    income: Optional[str] = None
    step: Optional[float] = Field(None, gt=0)

    def build(self, z_names: tuple[str, ...] = ()) -> MomentFunctional:
        income_col = 1
        if self.income is not None:
            if self.income not in z_names:
                raise InvalidArgumentError(f"functional.income {self.income!r} is not a z column")
            income_col = 1 + z_names.index(self.income)
        return MomentFunctional(
            kind=self.kind,
            nu=self.nu,
            kappa=self.kappa,
            lower=self.lower,
            upper=self.upper,
            weight=self.weight,
            income_col=income_col,
            step=self.step,
        )

    def aux_columns(self) -> list[str]:
        if self.kind != "ev_bound":
            return []
        return [v for v in (self.lower, self.upper, self.weight) if isinstance(v, str)]


class DataConfig(_Strict):
    path: str
    y: str
    d: str
    z: list[str]
    v: Optional[list[str]] = None
    v_transform: Optional[str] = None

    @model_validator(mode="after")
    def _one_v(self):
        if (self.v is None) == (self.v_transform is None):
            raise ValueError("give exactly one of data.v or data.v_transform")
        return self


class EstimateConfig(_Strict):
    """Everything the estimator needs apart from the data itself."""

    functional: FunctionalConfig = FunctionalConfig()
    learner: LearnerConfig = LearnerConfig()
    riesz: RieszConfig = RieszConfig()
    llr: LLRConfig = LLRConfig()
    crossfit: CrossfitConfig = CrossfitConfig()
    seed: int = 0

    @model_validator(mode="after")
    def _consistent(self):
        quantile = self.functional.kind == "quantile_derivative"
        if quantile and self.learner.kind != "quantile":
            raise ValueError("quantile_derivative needs learner.kind = 'quantile'")
        if not quantile and self.learner.kind == "quantile":
            raise ValueError("learner.kind = 'quantile' only fits the quantile_derivative functional")
        if quantile and self.riesz.method == "auto":
            raise ValueError("quantile_derivative needs riesz.method = 'auto-weighted', 'plugin' or 'none'")
        return self


class RunConfig(EstimateConfig):
    command: Optional[Literal["estimate", "simulate", "diagnose"]] = None
    data: DataConfig
    output: str = "cdml-out"
    threads: Optional[int] = Field(None, ge=1)
    diagnose: Optional[dict] = None

    def estimate_config(self) -> EstimateConfig:
        return EstimateConfig.model_validate(self.model_dump(include=set(EstimateConfig.model_fields), by_alias=True))


class ThresholdConfig(_Strict):
    slope_target: float = 2.0
    slope_tol: float = 0.3
    se_multiple: float = 3.0
    equivalence_final_ratio: Optional[float] = 0.5
    coverage_low: float = 0.90
    coverage_high: float = 0.98
    gamma_rate_slope: float = -0.4


class SimulateConfig(_Strict):
    dgp: Literal["a", "b", "c", "hd", "cate_binary", "cate_continuous", "quantile_ls", "high_dim"] = "a"
    check: list[Literal["equivalence", "orthogonality", "rates", "coverage", "all"]] = ["all"]
    n_list: list[int] = [500, 2000, 8000]
    n: int = Field(4000, ge=10)
    reps: int = Field(50, ge=1)
    eps_list: list[float] = [0.4, 0.2, 0.1, 0.05]
    seed: int = 0
    output: str = "cdml-sim"
    threads: Optional[int] = Field(None, ge=1)
    sigma: Optional[float] = Field(None, ge=0)
    bandwidth_constant: Optional[float] = Field(None, gt=0)
    compare_plugin: bool = False
    learner: Optional[LearnerConfig] = None
    riesz: Optional[RieszConfig] = None
    llr: LLRConfig = LLRConfig()
    crossfit: CrossfitConfig = CrossfitConfig()
    thresholds: ThresholdConfig = ThresholdConfig()

    @field_validator("n_list")
    @classmethod
    def _sizes(cls, v):
        if not v or any(n < 10 for n in v):
            raise ValueError("n_list must hold sample sizes >= 10")
        return v

    @field_validator("eps_list")
    @classmethod
    def _eps(cls, v):
        if len(v) < 2 or any(e < 0 for e in v):
            raise ValueError("eps_list needs at least two nonnegative values")
        return v


def load_toml(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise InvalidArgumentError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise InvalidArgumentError(f"{path}: {exc}") from None


def format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)

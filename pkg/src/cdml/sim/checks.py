"""Monte Carlo verification of orthogonality, equivalence, rates and coverage.

Every check is deterministic given its seed: replication ``k`` at sample
size ``n`` draws its data from a seed derived from ``(seed, n, k)``, and the
optional process pool reduces results in replication order.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..config import LearnerConfig, LLRConfig, RieszConfig
from ..core import Dataset, Kernel, make_folds
from ..engine import construct_debiased_outcomes, make_alpha_fitter, make_gamma_fitter
from ..errors import InvalidArgumentError
from ..llreg import local_linear_at, loo_cv_scores, pick_bandwidth
from .dgp import CENTRAL_POINT, DgpSpec, generate

__all__ = [
    "SimSettings",
    "default_settings",
    "rep_seed",
    "calibrate_bandwidth_constant",
    "check_equivalence",
    "check_orthogonality",
    "check_rates",
    "check_coverage",
    "log_log_slope",
    "score_deviations",
    "summarize_deviations",
    "pilot_bandwidth",
    "Z95",
]

Z95 = 1.959963984540054
PILOT_REP = 2**31 - 1
TEST_SALT = 0x5BD1E995
# A nuisance error whose local log-log slope in n exceeds this is treated as not vanishing.
STALL_SLOPE = -0.1


@dataclass(frozen=True)
class SimSettings:
    """First-step and smoothing choices shared by the checks."""

    learner: LearnerConfig
    riesz: RieszConfig
    llr: LLRConfig = LLRConfig()
    folds: int = 5


def default_settings(spec: DgpSpec) -> SimSettings:
    """Dictionaries that contain (or closely approximate) the design's nuisances."""
    if spec.kind == "quantile_ls":
        learner = LearnerConfig(kind="quantile", degree=1, lam=0.0)
        riesz = RieszConfig(method="auto-weighted", lam=0.0, dictionary={"degree": 2, "columns": [0]})
    elif spec.p > 10:
        learner = LearnerConfig(kind="lasso", degree=1, lam=0.02)
        riesz = RieszConfig(lam=0.0, dictionary={"degree": 3, "treatment": "split", "columns": [0]})
    elif spec.kind == "cate_continuous":
        learner = LearnerConfig(degree=3, knots=[0.25, 0.5, 0.75], lam=1e-6)
        riesz = RieszConfig(lam=0.0, dictionary={"degree": 1, "columns": [0]})
    else:
        learner = LearnerConfig(degree=3, knots=[0.25, 0.5, 0.75], lam=1e-6)
        riesz = RieszConfig(lam=0.0, dictionary={"degree": 3, "treatment": "split", "columns": [0]})
    return SimSettings(learner, riesz)


def rep_seed(seed: int, n: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(n), int(rep)]).generate_state(1)[0])


def _map(fn: Callable, jobs: Sequence, threads: Optional[int]):
    if threads is None or threads <= 1 or len(jobs) <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, *zip(*jobs), chunksize=max(1, len(jobs) // (4 * threads))))


def log_log_slope(x, y) -> float:
    """Least-squares slope of log y on log x over the positive pairs."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def _iqr(a) -> float:
    q75, q25 = np.percentile(a, [75, 25])
    return float(q75 - q25)


def _point(spec: DgpSpec) -> np.ndarray:
    return np.full(spec.r, CENTRAL_POINT)


def oracle_outcomes(spec: DgpSpec, data: Dataset, m=None) -> np.ndarray:
    m = (m or spec.functional()).resolved(data)
    gx = spec.gamma0(data.x)
    return m.m(data, spec.gamma0) + spec.alpha0(data.x) * m.rho(data, gx)


def _debiased(spec, data, settings: SimSettings, seed, gamma_fitter=None, alpha_fitter=None):
    m = spec.functional()
    folds = make_folds(data.n, settings.folds, seed)
    return construct_debiased_outcomes(
        data, m, folds, settings.learner, settings.riesz, gamma_fitter, alpha_fitter, seed=seed
    ).s_hat


# ------------------------------------------------------------ bandwidths


def calibrate_bandwidth_constant(
    spec: DgpSpec, kernel: str = "epanechnikov", n: int = 500, target_ess: float = 50.0, seed: int = 0
) -> float:
    """Smallest c (on a fine geometric grid) with ESS >= target at the central point for h = c n^(-1/(r+4))."""
    data = generate(spec, n, seed)
    k = Kernel(kernel)
    v = _point(spec)
    rate = n ** (-1.0 / (spec.r + 4))
    for c in np.geomspace(0.05, 20.0, 400):
        h = c * rate
        w = k((data.v - v) / h)
        if w.sum() > 0 and w.sum() ** 2 / np.sum(w * w) >= target_ess:
            return float(c)
    raise InvalidArgumentError("could not reach the target effective sample size")


def _bandwidth(n, r, constant):
    return constant * n ** (-1.0 / (r + 4))


# ------------------------------------------------------------ equivalence


def _equivalence_rep(spec, n, seed, settings, h, oracle_nuisances):
    data = generate(spec, n, seed)
    s0 = oracle_outcomes(spec, data)
    if oracle_nuisances:
        s_hat = s0
    else:
        s_hat = _debiased(spec, data, settings, seed)
    k = Kernel(settings.llr.kernel)
    v = _point(spec)
    th, *_, f1 = local_linear_at(s_hat, data.v, v, h, k, settings.llr.min_mass)
    tt, *_, f2 = local_linear_at(s0, data.v, v, h, k, settings.llr.min_mass)
    return th, tt, f1 == "ok" and f2 == "ok"


def check_equivalence(
    spec: DgpSpec,
    n_list: Sequence[int] = (500, 2000, 8000),
    reps: int = 200,
    settings: SimSettings | None = None,
    seed: int = 0,
    bandwidth_constant: float | None = None,
    final_ratio: float | None = 0.5,
    oracle_nuisances: bool = False,
    threads: int | None = None,
) -> dict:
    """Feasible vs oracle local linear estimates at the central point.

    For each n, ``delta`` is the median of ``|theta_hat - theta_tilde|`` and
    ``spread`` the interquartile range of ``theta_tilde`` over replications.
    """
    if reps < 1:
        raise InvalidArgumentError("reps must be >= 1")
    settings = settings or default_settings(spec)
    c = bandwidth_constant or calibrate_bandwidth_constant(spec, settings.llr.kernel, seed=seed)
    rows = []
    for n in n_list:
        h = _bandwidth(n, spec.r, c)
        jobs = [(spec, n, rep_seed(seed, n, k), settings, h, oracle_nuisances) for k in range(reps)]
        res = _map(_equivalence_rep, jobs, threads)
        th = np.array([r[0] for r in res])
        tt = np.array([r[1] for r in res])
        ok = np.array([r[2] for r in res])
        diff = np.abs(th[ok] - tt[ok])
        delta = float(np.median(diff)) if diff.size else float("nan")
        spread = _iqr(tt[ok]) if ok.sum() > 1 else float("nan")
        rows.append(
            {
                "n": int(n),
                "h": h,
                "delta": delta,
                "spread": spread,
                "ratio": delta / spread if spread and spread > 0 else (0.0 if delta == 0 else float("nan")),
                "valid_reps": int(ok.sum()),
                "per_rep": {"theta_hat": th.tolist(), "theta_oracle": tt.tolist()},
            }
        )
    ratios = [r["ratio"] for r in rows]
    decreasing = all(b < a for a, b in zip(ratios, ratios[1:]))
    final_ok = final_ratio is None or (np.isfinite(ratios[-1]) and ratios[-1] < final_ratio)
    return {
        "check": "equivalence",
        "dgp": spec.describe(),
        "reps": reps,
        "low_confidence": reps < 2,
        "bandwidth_constant": c,
        "point": _point(spec).tolist(),
        "rows": rows,
        "ratios": ratios,
        "strictly_decreasing": decreasing,
        "final_ratio_threshold": final_ratio,
        "passed": bool(decreasing and final_ok),
    }


# ------------------------------------------------------------ orthogonality


def default_directions(spec: DgpSpec):
    """Smooth bounded perturbation directions for gamma and alpha."""

    def delta_gamma(x):
        x = np.atleast_2d(x)
        return (1.0 + x[:, 1]) * (1.0 + 0.5 * x[:, 0])

    def delta_alpha(x):
        x = np.atleast_2d(x)
        return 2.0 * (1.0 + x[:, 2])

    return delta_gamma, delta_alpha


def _bin_edges(v, n_bins):
    edges = np.quantile(v, np.linspace(0, 1, n_bins + 1))
    edges[0], edges[-1] = -np.inf, np.inf
    return edges


def score_deviations(data: Dataset, m, gamma, alpha_x, eps_list, n_bins, directions):
    """Per-bin sums and sums of squares of ``psi(gamma + eps dg, alpha + eps da) - psi(gamma, alpha)``.

    ``gamma`` and ``alpha_x`` are callables of regressor rows; bins are the
    sample quantile bins of the first coordinate of V.
    """
    m = m.resolved(data)
    dg, da = directions
    x = data.x
    g0 = gamma(x)
    a0 = alpha_x(x)
    rho0 = m.rho(data, g0)
    s0 = m.m(data, gamma) + a0 * rho0
    bins = np.searchsorted(_bin_edges(data.v[:, 0], n_bins), data.v[:, 0], side="right") - 1
    dgx, dax = dg(x), da(x)
    out = {"joint": [], "alpha": [], "gamma": []}
    counts = np.bincount(bins, minlength=n_bins).astype(float)
    for eps in eps_list:

        def gamma_eps(xx, eps=eps):
            return gamma(xx) + eps * dg(xx)

        m_eps = m.m(data, gamma_eps)
        rho_eps = m.rho(data, g0 + eps * dgx)
        variants = {
            "joint": m_eps + (a0 + eps * dax) * rho_eps - s0,
            "alpha": (a0 + eps * dax) * rho0 - a0 * rho0,
            "gamma": m_eps + a0 * rho_eps - s0,
        }
        for key, dev in variants.items():
            sums = np.bincount(bins, weights=dev, minlength=n_bins)
            sq = np.bincount(bins, weights=dev * dev, minlength=n_bins)
            out[key].append((sums, sq))
    return counts, out


def summarize_deviations(results, eps_list) -> dict:
    """Pool per-replication bin sums into bin means, standard errors and z-scores."""
    counts = sum(r[0] for r in results)
    summary = {}
    for key in ("joint", "alpha", "gamma"):
        per_eps = []
        for j, eps in enumerate(eps_list):
            sums = sum(r[1][key][j][0] for r in results)
            sq = sum(r[1][key][j][1] for r in results)
            mean = sums / counts
            var = np.maximum(sq / counts - mean**2, 0.0)
            se = np.sqrt(var / counts)
            with np.errstate(divide="ignore", invalid="ignore"):
                zs = np.where(se > 0, mean / se, 0.0)
            per_eps.append(
                {
                    "eps": eps,
                    "bin_mean": mean.tolist(),
                    "bin_se": se.tolist(),
                    "max_abs_dev": float(np.max(np.abs(mean))),
                    "max_abs_z": float(np.max(np.abs(zs))),
                }
            )
        summary[key] = per_eps
    return summary


def _orthogonality_rep(spec, n, seed, eps_list, n_bins, directions):
    data = generate(spec, n, seed)
    return score_deviations(
        data, spec.functional(), spec.gamma0, spec.alpha0, eps_list, n_bins, directions or default_directions(spec)
    )


def check_orthogonality(
    spec: DgpSpec,
    n: int = 5000,
    eps_list: Sequence[float] = (0.4, 0.2, 0.1, 0.05),
    reps: int = 50,
    seed: int = 0,
    n_bins: int = 10,
    directions=None,
    slope_target: float = 2.0,
    slope_tol: float = 0.3,
    se_multiple: float = 3.0,
    threads: int | None = None,
) -> dict:
    """Decile-binned mean deviation of the orthogonal score under nuisance perturbations.

    The joint perturbation should shrink like eps^2; the alpha-only
    perturbation has conditional mean exactly zero for mean-type targets.
    """
    if reps < 1:
        raise InvalidArgumentError("reps must be >= 1")
    eps_list = [float(e) for e in eps_list]
    jobs = [(spec, n, rep_seed(seed, n, k), eps_list, n_bins, directions) for k in range(reps)]
    res = _map(_orthogonality_rep, jobs, threads)
    summary = summarize_deviations(res, eps_list)
    eps_arr = np.array(eps_list)
    joint_dev = np.array([e["max_abs_dev"] for e in summary["joint"]])
    gamma_dev = np.array([e["max_abs_dev"] for e in summary["gamma"]])
    slope = log_log_slope(eps_arr, joint_dev)
    zero_ok = all(e["max_abs_dev"] == 0.0 for e in summary["joint"] if e["eps"] == 0.0)
    alpha_ok = all(e["max_abs_z"] <= se_multiple for e in summary["alpha"])
    slope_ok = bool(np.isfinite(slope) and abs(slope - slope_target) <= slope_tol)
    mean_type = spec.functional().target == "mean"
    return {
        "check": "orthogonality",
        "dgp": spec.describe(),
        "n": n,
        "reps": reps,
        "low_confidence": reps < 2,
        "eps": eps_list,
        "bins": n_bins,
        "joint": summary["joint"],
        "alpha_only": summary["alpha"],
        "gamma_only": summary["gamma"],
        "joint_slope": slope,
        "gamma_only_slope": log_log_slope(eps_arr, gamma_dev),
        "slope_target": slope_target,
        "slope_tol": slope_tol,
        "slope_within_tolerance": slope_ok,
        "alpha_only_within_se": alpha_ok if mean_type else None,
        "zero_eps_exact": zero_ok,
        "passed": bool(slope_ok and (alpha_ok or not mean_type) and zero_ok),
    }


# ------------------------------------------------------------ rates


def _rates_rep(spec, n, seed, settings, n_test, gamma_fitter):
    data = generate(spec, n, seed)
    test = generate(spec, n_test, seed ^ TEST_SALT)
    m = spec.functional().resolved(data)
    gfit = gamma_fitter or make_gamma_fitter(settings.learner, m, seed)
    gamma = gfit(data)
    alpha = make_alpha_fitter(settings.riesz, m, settings.learner, seed)(data, gamma)
    g_err = float(np.sqrt(np.mean((gamma.predict(test.x) - spec.gamma0(test.x)) ** 2)))
    a_err = float(np.sqrt(np.mean((alpha.predict(test) - spec.alpha0(test.x)) ** 2)))
    return g_err, a_err


def check_rates(
    spec: DgpSpec,
    n_list: Sequence[int] = (500, 2000, 8000),
    reps: int = 20,
    settings: SimSettings | None = None,
    seed: int = 0,
    bandwidth_constant: float | None = None,
    n_test: int = 20000,
    gamma_fitter=None,
    gamma_slope_threshold: float = -0.4,
    threads: int | None = None,
) -> dict:
    """Out-of-sample RMS errors of the nuisances and the product rate condition.

    ``product = sqrt(n) |gamma_hat - gamma0| |alpha_hat - alpha0| / h^(r/2)``
    must vanish; a sample size is flagged when the local log-log slope of
    the product against n is not negative.
    """
    if reps < 1:
        raise InvalidArgumentError("reps must be >= 1")
    if len(n_list) < 2:
        raise InvalidArgumentError("rate slopes need at least two sample sizes")
    settings = settings or default_settings(spec)
    c = bandwidth_constant or calibrate_bandwidth_constant(spec, settings.llr.kernel, seed=seed)
    rows = []
    for n in n_list:
        jobs = [(spec, n, rep_seed(seed, n, k), settings, n_test, gamma_fitter) for k in range(reps)]
        res = np.array(_map(_rates_rep, jobs, threads))
        g_err, a_err = float(np.median(res[:, 0])), float(np.median(res[:, 1]))
        h = _bandwidth(n, spec.r, c)
        rows.append(
            {
                "n": int(n),
                "h": h,
                "gamma_rmse": g_err,
                "alpha_rmse": a_err,
                "product": float(np.sqrt(n) * g_err * a_err / h ** (spec.r / 2)),
                "per_rep_gamma_rmse": res[:, 0].tolist(),
                "per_rep_alpha_rmse": res[:, 1].tolist(),
            }
        )
    ns = np.array(n_list, dtype=float)
    prod = np.array([r["product"] for r in rows])
    g_arr = np.array([r["gamma_rmse"] for r in rows])
    a_arr = np.array([r["alpha_rmse"] for r in rows])
    for i, row in enumerate(rows):
        a, b = (i - 1, i) if i > 0 else (0, 1)
        pair = ns[[a, b]]
        row["product_local_slope"] = log_log_slope(pair, prod[[a, b]])
        row["gamma_local_slope"] = log_log_slope(pair, g_arr[[a, b]])
        row["alpha_local_slope"] = log_log_slope(pair, a_arr[[a, b]])
        exact = prod[a] == 0 and prod[b] == 0
        stalled = not (
            row["product_local_slope"] < 0
            and row["gamma_local_slope"] < STALL_SLOPE
            and row["alpha_local_slope"] < STALL_SLOPE
        )
        row["violated"] = bool(stalled and not exact)
    gamma_slope = log_log_slope(ns, [r["gamma_rmse"] for r in rows])
    alpha_slope = log_log_slope(ns, [r["alpha_rmse"] for r in rows])
    return {
        "check": "rates",
        "dgp": spec.describe(),
        "reps": reps,
        "low_confidence": reps < 2,
        "bandwidth_constant": c,
        "rows": rows,
        "gamma_slope": gamma_slope,
        "alpha_slope": alpha_slope,
        "product_slope": log_log_slope(ns, prod),
        "gamma_slope_threshold": gamma_slope_threshold,
        "smoothness_threshold": {
            "regressor_dim": spec.d,
            "r": spec.r,
            "condition": "s > 3d/4" if spec.r == 1 else f"s > d({spec.r}+2)/4",
        },
        "any_violation": any(r["violated"] for r in rows),
        "passed": bool(gamma_slope <= gamma_slope_threshold and not any(r["violated"] for r in rows)),
    }


# ------------------------------------------------------------ coverage


def pilot_bandwidth(spec: DgpSpec, n: int, settings: SimSettings, seed: int, candidates=None) -> tuple[float, float]:
    """Leave-one-out CV bandwidth on one pilot replication, and its undersmoothed version."""
    data = generate(spec, n, rep_seed(seed, n, PILOT_REP))
    s_hat = _debiased(spec, data, settings, seed)
    if candidates is None:
        sd = float(np.std(data.v[:, 0]))
        candidates = sd * n ** (-1.0 / (spec.r + 4)) * np.geomspace(0.25, 3.0, 12)
    scores = loo_cv_scores(s_hat, data.v, settings.llr.kernel, candidates, settings.llr.min_mass)
    h_cv = pick_bandwidth(candidates, scores)
    return h_cv, h_cv * settings.llr.undersmooth


def _coverage_rep(spec, n, seed, settings, h, plugin_settings):
    data = generate(spec, n, seed)
    k = Kernel(settings.llr.kernel)
    v = _point(spec)
    truth = float(spec.theta0(v[None, :])[0])
    out = []
    for st in (settings, plugin_settings):
        if st is None:
            continue
        s_hat = _debiased(spec, data, st, seed)
        th, _, se, *_, flag = local_linear_at(s_hat, data.v, v, h, k, st.llr.min_mass)
        out.append((th, se, flag == "ok", truth))
    return out


def _covered(th, se, truth, atol=1e-8):
    return abs(th - truth) <= Z95 * se + atol


def check_coverage(
    spec: DgpSpec,
    n: int = 4000,
    reps: int = 500,
    settings: SimSettings | None = None,
    seed: int = 0,
    h: float | None = None,
    compare_plugin: bool = False,
    plugin_settings: SimSettings | None = None,
    low: float = 0.90,
    high: float = 0.98,
    threads: int | None = None,
) -> dict:
    """Empirical coverage of ``theta_hat(v*) +/- 1.96 se(v*)`` at the central point.

    With ``compare_plugin`` each replication also runs the same first step
    without the correction term, on the same data and folds.
    """
    if reps < 1:
        raise InvalidArgumentError("reps must be >= 1")
    settings = settings or default_settings(spec)
    if h is None:
        h_cv, h = pilot_bandwidth(spec, n, settings, seed)
    else:
        h_cv = None
    if compare_plugin and plugin_settings is None:
        plugin_settings = SimSettings(
            settings.learner, settings.riesz.model_copy(update={"method": "none"}), settings.llr, settings.folds
        )
    jobs = [(spec, n, rep_seed(seed, n, k), settings, h, plugin_settings if compare_plugin else None) for k in range(reps)]
    res = _map(_coverage_rep, jobs, threads)

    def summarize(idx):
        th = np.array([r[idx][0] for r in res])
        se = np.array([r[idx][1] for r in res])
        ok = np.array([r[idx][2] for r in res])
        truth = res[0][idx][3]
        cov = np.array([_covered(a, b, truth) for a, b in zip(th[ok], se[ok])])
        return {
            "coverage": float(cov.mean()) if cov.size else float("nan"),
            "bias": float(np.mean(th[ok]) - truth) if ok.any() else float("nan"),
            "abs_bias": float(abs(np.mean(th[ok]) - truth)) if ok.any() else float("nan"),
            "median_se": float(np.median(se[ok])) if ok.any() else float("nan"),
            "sd_theta": float(np.std(th[ok])) if ok.any() else float("nan"),
            "valid_reps": int(ok.sum()),
            "truth": truth,
            "per_rep": {"theta_hat": th.tolist(), "se": se.tolist()},
        }

    debiased = summarize(0)
    in_band = bool(low <= debiased["coverage"] <= high)
    out = {
        "check": "coverage",
        "dgp": spec.describe(),
        "n": n,
        "reps": reps,
        "low_confidence": reps < 2,
        "h": h,
        "h_cv": h_cv,
        "point": _point(spec).tolist(),
        "band": [low, high],
        "debiased": debiased,
        "within_band": in_band,
        "passed": in_band,
    }
    if compare_plugin:
        plug = summarize(1)
        out["plugin"] = plug
        out["plugin_more_biased"] = bool(debiased["abs_bias"] < plug["abs_bias"])
        out["plugin_lower_coverage"] = bool(plug["coverage"] < debiased["coverage"])
    return out

"""Heuristic rate and orthogonality diagnostics on a user dataset.

No true nuisances exist for real data, so full-sample fits stand in for
gamma0 and alpha0 (surrogate oracles) and bootstrap resamples play the
role of Monte Carlo replications.  The numbers are indicative only and
every report carries ``"heuristic": true``.
"""

from __future__ import annotations

import numpy as np

from .config import EstimateConfig
from .core import Dataset
from .engine import make_alpha_fitter, make_gamma_fitter
from .moments import MomentFunctional
from .sim.checks import log_log_slope, score_deviations, summarize_deviations

__all__ = ["diagnose", "HEURISTIC_NOTE"]

HEURISTIC_NOTE = (
    "HEURISTIC: full-sample fits are used as surrogate oracles and bootstrap resamples as replications; "
    "these checks cannot certify the rate or orthogonality conditions"
)


def _surrogates(data: Dataset, m: MomentFunctional, config: EstimateConfig, seed: int):
    gamma = make_gamma_fitter(config.learner, m, seed)(data)
    alpha = make_alpha_fitter(config.riesz, m, config.learner, seed)(data, gamma)
    return gamma, alpha


class _AlphaOnRows:
    """Evaluate a Riesz estimate on raw regressor rows."""

    def __init__(self, alpha, template: Dataset):
        self.alpha = alpha
        self.template = template

    def __call__(self, x):
        x = np.atleast_2d(x)
        t = self.template
        data = Dataset(y=np.zeros(x.shape[0]), d=x[:, 0], z=x[:, 1:], v=np.zeros((x.shape[0], 1)), z_names=t.z_names)
        return self.alpha.predict(data)


def _directions(data: Dataset, gamma_scale: float, alpha_scale: float):
    """Bounded smooth directions on standardized covariates."""
    z = data.z
    mu, sd = z.mean(axis=0), z.std(axis=0)
    sd[sd == 0] = 1.0
    last = z.shape[1] - 1

    def dg(x):
        x = np.atleast_2d(x)
        u = (x[:, 1] - mu[0]) / sd[0]
        return gamma_scale * (1.0 + 0.5 * np.tanh(u)) * (1.0 + 0.25 * np.tanh(x[:, 0]))

    def da(x):
        x = np.atleast_2d(x)
        u = (x[:, 1 + last] - mu[last]) / sd[last]
        return alpha_scale * (1.0 + 0.5 * np.tanh(u))

    return dg, da


def diagnose(
    data: Dataset,
    m: MomentFunctional,
    config: EstimateConfig,
    reps: int = 20,
    eps_list=(0.4, 0.2, 0.1, 0.05),
    fractions=(0.125, 0.25, 0.5),
    n_bins: int = 10,
    seed: int = 0,
) -> dict:
    """Bootstrap-surrogate orthogonality slope and first-step rate slopes."""
    m = m.resolved(data)
    m.check_data(data)
    rng = np.random.default_rng(seed)
    gamma, alpha = _surrogates(data, m, config, seed)
    alpha_rows = None if data.aux else _AlphaOnRows(alpha, data)
    gx = gamma.predict(data.x)
    a_full = alpha.predict(data)
    report = {"heuristic": True, "note": HEURISTIC_NOTE, "n": data.n, "reps": reps, "functional": m.describe()}

    # orthogonality around the surrogates on bootstrap resamples
    if alpha_rows is not None and alpha.method != "none":
        dirs = _directions(data, float(np.std(data.y)) or 1.0, float(np.std(a_full)) or 1.0)
        res = []
        for _ in range(reps):
            idx = rng.integers(0, data.n, data.n)
            res.append(score_deviations(data.take(idx), m, gamma.predict, alpha_rows, list(eps_list), n_bins, dirs))
        summary = summarize_deviations(res, list(eps_list))
        dev = [e["max_abs_dev"] for e in summary["joint"]]
        report["orthogonality"] = {
            "eps": list(eps_list),
            "joint_max_abs_dev": dev,
            "joint_slope": log_log_slope(eps_list, dev),
            "alpha_only_max_abs_z": [e["max_abs_z"] for e in summary["alpha"]],
        }
    else:
        report["orthogonality"] = {"skipped": "needs a fitted Riesz representer without auxiliary columns"}

    # first-step rates on subsamples against the full-sample surrogates
    sizes, g_err, a_err = [], [], []
    gfit = make_gamma_fitter(config.learner, m, seed)
    afit = make_alpha_fitter(config.riesz, m, config.learner, seed)
    for frac in fractions:
        k = max(int(frac * data.n), 10)
        ge, ae = [], []
        for _ in range(reps):
            idx = rng.choice(data.n, size=k, replace=False)
            sub = data.take(np.sort(idx))
            g = gfit(sub)
            ge.append(float(np.sqrt(np.mean((g.predict(data.x) - gx) ** 2))))
            if alpha.method != "none":
                a = afit(sub, g)
                ae.append(float(np.sqrt(np.mean((a.predict(data) - a_full) ** 2))))
        sizes.append(k)
        g_err.append(float(np.median(ge)))
        a_err.append(float(np.median(ae)) if ae else float("nan"))
    report["rates"] = {
        "subsample_sizes": sizes,
        "gamma_rmse": g_err,
        "alpha_rmse": a_err,
        "gamma_slope": log_log_slope(sizes, g_err),
        "alpha_slope": log_log_slope(sizes, a_err),
    }
    return report

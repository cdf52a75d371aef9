"""One-parameter sweeps of the estimation pipeline and log-log scaling fits."""

from __future__ import annotations

import math

import numpy as np

from .analytic import AnalyticModel, long_time_rate, transfer_efficiency
from .statistics import estimate_correlation, regime_chi
from .units import ScenarioConfig

SWEEPABLE = ("rho", "z0", "D", "B", "T1rho")
# exponent reported against the quantity in the scaling law rate ∝ rho / (z0 D)
LAW_SIGN = {"rho": 1.0, "z0": -1.0, "D": -1.0}

COLUMNS = ("value", "tau_c_us", "sigma2", "inv_tau_p_per_us", "alpha", "chi", "regime", "error")


def point_config(base: ScenarioConfig, param: str, value: float, *, scale_box: bool = True) -> ScenarioConfig:
    if param not in SWEEPABLE:
        raise ValueError(f"cannot sweep {param!r}; choose one of {', '.join(SWEEPABLE)}")
    changes = {param: value}
    if param == "z0" and scale_box:
        changes["box_length"] = base.box_length * value / base.z0
    return base.replace(**changes)


def sweep_point(cfg: ScenarioConfig, *, n_traj: int, walkers_per_traj: int, workers: int = 1) -> dict:
    est = estimate_correlation(cfg, n_traj, walkers_per_traj=walkers_per_traj, workers=workers)
    model = AnalyticModel.from_estimate(cfg, est)
    chi, label = regime_chi(cfg, est)
    return {
        "tau_c_us": est.tau_c,
        "sigma2": est.sigma2,
        "inv_tau_p_per_us": long_time_rate(model),
        "alpha": transfer_efficiency(model),
        "chi": chi,
        "regime": label,
        "error": "",
        "estimate": est,
    }


def run_sweep(base: ScenarioConfig, param: str, values, *, n_traj: int = 200, walkers_per_traj: int = 500,
              scale_box: bool = True, workers: int = 1) -> tuple[list[dict], dict]:
    """Evaluate every sweep point; invalid points become error rows and the sweep goes on."""
    rows = []
    for value in values:
        row = {"value": float(value)}
        try:
            cfg = point_config(base, param, float(value), scale_box=scale_box)
            row.update(sweep_point(cfg, n_traj=n_traj, walkers_per_traj=walkers_per_traj, workers=workers))
        except (ValueError, RuntimeError) as exc:
            row.update({k: math.nan for k in ("tau_c_us", "sigma2", "inv_tau_p_per_us", "alpha", "chi")})
            row.update({"regime": "", "error": f"{type(exc).__name__}: {exc}"})
        rows.append(row)
    return rows, scaling_exponents(rows, param)


def loglog_slope(x, y) -> tuple[float, float]:
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = np.isfinite(x) & np.isfinite(y) & (x > 0) & (y > 0)
    if ok.sum() < 2:
        return math.nan, math.nan
    lx, ly = np.log(x[ok]), np.log(y[ok])
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    if ok.sum() < 3:
        return float(coef[0]), math.nan
    resid = ly - A @ coef
    se = math.sqrt(float(resid @ resid) / (ok.sum() - 2) / float(((lx - lx.mean()) ** 2).sum()))
    return float(coef[0]), se


def scaling_exponents(rows, param) -> dict:
    """Log-log slopes of tau_c and 1/tau_p against the swept value.

    For rho, z0 and D the result also holds the exponent against the variable as it
    appears in rate ∝ rho/(z0 D), i.e. against rho, 1/z0 and 1/D.
    """
    values = [r["value"] for r in rows]
    out = {}
    for key in ("inv_tau_p_per_us", "tau_c_us", "chi"):
        slope, se = loglog_slope(values, [r[key] for r in rows])
        out[f"slope_{key}"] = slope
        out[f"slope_{key}_stderr"] = se
    if param in LAW_SIGN:
        out["law_exponent"] = LAW_SIGN[param] * out["slope_inv_tau_p_per_us"]
    return out

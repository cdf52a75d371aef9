"""Curve comparison: common-grid RMS deviations, tail-rate fits and tail-based efficiency."""

from __future__ import annotations

import math

import numpy as np

from .analytic import PolarizationCurve, fit_log_slope


class GridMismatchError(ValueError):
    pass


def common_grid(curves, n_points: int | None = None) -> np.ndarray:
    lo = max(c.times.min() for c in curves)
    hi = min(c.times.max() for c in curves)
    if not hi > lo:
        raise GridMismatchError(f"curves share no time overlap (latest start {lo:.4g} us, earliest end {hi:.4g} us)")
    if n_points is None:
        # the densest curve inside the overlap sets the resolution
        n_points = max(int(((c.times >= lo) & (c.times <= hi)).sum()) for c in curves)
        n_points = max(n_points, 2)
    return np.linspace(lo, hi, n_points)


def on_grid(curve: PolarizationCurve, grid) -> np.ndarray:
    return np.interp(grid, curve.times, curve.n_mean)


def rms_deviation(a: PolarizationCurve, b: PolarizationCurve, *, t_max: float = math.inf,
                  relative: bool = True, grid=None) -> float:
    """RMS of (a - b) on the common grid, relative to b by default, restricted to t <= t_max."""
    grid = common_grid([a, b]) if grid is None else grid
    grid = grid[grid <= t_max]
    if len(grid) == 0:
        raise GridMismatchError("no grid points before t_max")
    ya, yb = on_grid(a, grid), on_grid(b, grid)
    diff = (ya - yb) / yb if relative else ya - yb
    return float(np.sqrt(np.mean(diff**2)))


def tail_window(curve: PolarizationCurve, t_start: float, *, noise_floor: float = 5.0, n_B: float = 0.5):
    """End of the usable tail: the last time the excess stays above ``noise_floor`` stderr."""
    excess = curve.n_mean - n_B
    if curve.stderr is None:
        ok = excess > 0
    else:
        ok = excess > noise_floor * np.maximum(curve.stderr, 1e-300)
    # stop at the first point that drops under the floor
    after = np.flatnonzero((curve.times >= t_start) & ~ok)
    end = curve.times[after[0] - 1] if len(after) else curve.times[-1]
    return t_start, float(end)


def tail_rate(curve: PolarizationCurve, t_start: float, t_end: float | None = None) -> tuple[float, float]:
    """Fitted late-time decay rate (1/μs, positive) of <n> - 1/2 and its standard error."""
    start, end = tail_window(curve, t_start)
    if t_end is not None:
        end = min(end, t_end)
    slope, se = fit_log_slope(curve.times, curve.n_mean, start, end)
    return -slope, se


def alpha_from_tail(rate: float, T1rho: float | None) -> float:
    """Transfer efficiency implied by a composite tail rate 1/tau_p + 1/T1rho."""
    if T1rho is None:
        return 1.0
    return 1.0 - 1.0 / (T1rho * rate)


def compare_curves(curves, labels, measured: PolarizationCurve | None = None, *, t_tail: float | None = None,
                   T1rho: float | None = None, horizon: float = math.inf) -> dict:
    """Pairwise comparison report; the measured curve, when present, is the reference."""
    everything = list(curves) + ([measured] if measured is not None else [])
    names = list(labels) + (["measured"] if measured is not None else [])
    grid = common_grid(everything)
    reference = measured if measured is not None else curves[0]
    ref_name = "measured" if measured is not None else names[0]
    report = {
        "reference": ref_name,
        "grid": {"t_min_us": float(grid[0]), "t_max_us": float(grid[-1]), "points": len(grid)},
        "horizon_us": horizon,
        "rms": {},
        "tail": {},
    }
    for curve, name in zip(everything, names):
        report["rms"][name] = {
            "relative": rms_deviation(curve, reference, grid=grid),
            "absolute": rms_deviation(curve, reference, grid=grid, relative=False),
        }
        if math.isfinite(horizon):
            report["rms"][name]["relative_pre_horizon"] = rms_deviation(curve, reference, grid=grid, t_max=horizon)
        if t_tail is not None:
            try:
                rate, se = tail_rate(curve, t_tail)
            except ValueError as exc:
                report["tail"][name] = {"error": str(exc)}
                continue
            report["tail"][name] = {"rate_per_us": rate, "rate_stderr": se, "t_start_us": t_tail,
                                    "alpha_from_tail": alpha_from_tail(rate, T1rho)}
    return report


def combined_table(curves, names, grid=None) -> str:
    """Whitespace-separated table (gnuplot-ready): t_us then n and stderr for each curve."""
    grid = common_grid(curves) if grid is None else grid
    header = ["t_us"]
    columns = [grid]
    for curve, name in zip(curves, names):
        header += [f"n_{name}", f"se_{name}"]
        columns.append(on_grid(curve, grid))
        se = np.interp(grid, curve.times, curve.stderr) if curve.stderr is not None else np.full(len(grid), np.nan)
        columns.append(se)
    lines = ["# " + " ".join(header)]
    for row in np.column_stack(columns):
        lines.append(" ".join(f"{v:.10g}" for v in row))
    return "\n".join(lines) + "\n"

"""Incoherent population model for the driven NV.

The NV population obeys

    d<n>/dt = -(N/4) gamma(t) (<n> - n_B) - (<n> - 1/2) / T1rho

With an exponential memory kernel gamma(t) = sigma2 tau_c (1 - exp(-t/tau_c)), a thermal
bath (n_B = 1/2) and no T1rho term, the solution is

    <n>(t) = 1/2 + 1/2 exp(N tau_c² sigma2 / 4 · (1 - t/tau_c - exp(-t/tau_c))).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.constants as sc
from scipy.integrate import solve_ivp

from .units import CONSTANTS

PROVENANCES = ("analytic", "gaussian-sim", "measured")


class ModelViolationError(ValueError):
    pass


@dataclass(frozen=True)
class AnalyticModel:
    N: int
    sigma2: float  # rad²/μs²
    tau_c: float  # μs
    T1rho: float | None = None  # μs
    n_B: float = 0.5
    # physical inputs the model was calibrated at; only needed for scaling_rate
    rho: float | None = None
    z0: float | None = None
    D: float | None = None

    def __post_init__(self):
        if self.N < 0:
            raise ModelViolationError(f"N must be >= 0, got {self.N}")
        if self.sigma2 < 0:
            raise ModelViolationError(f"sigma2 must be >= 0, got {self.sigma2}")
        if not self.tau_c > 0:
            raise ModelViolationError(f"tau_c must be > 0, got {self.tau_c}")
        if not 0 <= self.n_B <= 1:
            raise ModelViolationError(f"n_B must lie in [0, 1], got {self.n_B}")
        if self.T1rho is not None and not self.T1rho > 0:
            raise ModelViolationError(f"T1rho must be > 0, got {self.T1rho}")

    @classmethod
    def from_estimate(cls, cfg, est, **overrides) -> "AnalyticModel":
        kwargs = dict(N=cfg.N, sigma2=est.sigma2, tau_c=est.tau_c, T1rho=cfg.T1rho,
                      rho=cfg.rho, z0=cfg.z0, D=cfg.D)
        kwargs.update(overrides)
        return cls(**kwargs)

    def replace(self, **changes) -> "AnalyticModel":
        kwargs = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kwargs.update(changes)
        return AnalyticModel(**kwargs)


@dataclass
class PolarizationCurve:
    times: np.ndarray  # μs
    n_mean: np.ndarray
    stderr: np.ndarray | None = None
    provenance: str = "analytic"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.n_mean = np.asarray(self.n_mean, dtype=float)
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float)
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}, got {self.provenance!r}")
        if self.times.shape != self.n_mean.shape:
            raise ValueError("times and n_mean differ in length")

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key in sorted(self.meta):
            buf.write(f"# {key}: {self.meta[key]}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t_us", "n_mean", "stderr", "provenance"])
        se = self.stderr if self.stderr is not None else np.full(len(self.times), np.nan)
        for t, n, e in zip(self.times, self.n_mean, se):
            writer.writerow([repr(float(t)), repr(float(n)), "" if np.isnan(e) else repr(float(e)), self.provenance])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "PolarizationCurve":
        """Read a curve CSV; a headed 3-column file (t_us, population, error) reads as measured data."""
        meta, rows = {}, []
        with open(path, newline="") as fh:
            lines = []
            for line in fh:
                if line.startswith("#"):
                    key, _, value = line[1:].partition(":")
                    meta[key.strip()] = value.strip()
                elif line.strip():
                    lines.append(line)
        reader = csv.reader(lines)
        header = [h.strip() for h in next(reader)]
        rows = [r for r in reader]
        if not header or header[0] != "t_us":
            raise ValueError(f"{path}: first column must be t_us, got {header[:1]}")
        t = np.array([float(r[0]) for r in rows])
        n = np.array([float(r[1]) for r in rows])
        se_col = [r[2].strip() if len(r) > 2 else "" for r in rows]
        se = np.array([float(v) if v else np.nan for v in se_col])
        if "provenance" in header:
            prov = rows[0][header.index("provenance")].strip() if rows else "analytic"
        else:
            prov = "measured"
        return cls(t, n, None if np.all(np.isnan(se)) else se, prov, meta)


def exponential_kernel(model: AnalyticModel) -> Callable[[np.ndarray], np.ndarray]:
    s2, tau = model.sigma2, model.tau_c
    return lambda t: s2 * tau * -np.expm1(-np.asarray(t, dtype=float) / tau)


def closed_form(model: AnalyticModel, t) -> np.ndarray:
    """Closed-form <n>(t) for the exponential kernel with <n>(0) = 1.

    A finite T1rho multiplies the excess by exp(-t/T1rho), which is exact for n_B = 1/2.
    """
    t = np.asarray(t, dtype=float)
    tau = model.tau_c
    x = t / tau
    # 1 - x - exp(-x), computed without cancellation for small x
    shape = -x - np.expm1(-x)
    exponent = 0.25 * model.N * tau**2 * model.sigma2 * shape
    if model.T1rho is not None:
        if model.n_B != 0.5:
            curve = solve_master(model, exponential_kernel(model), np.atleast_1d(t))
            return curve.n_mean.reshape(t.shape)
        exponent = exponent - t / model.T1rho
    return model.n_B + (1.0 - model.n_B) * np.exp(exponent)


def short_time_rate(model: AnalyticModel) -> float:
    """Gaussian-decay rate sqrt(N sigma2 / 8) (rad/μs) valid for t << tau_c."""
    return math.sqrt(model.N * model.sigma2 / 8.0)


def long_time_rate(model: AnalyticModel) -> float:
    """Exponential polarization rate 1/tau_p = N sigma2 tau_c / 4 (1/μs) for t >> tau_c."""
    return 0.25 * model.N * model.sigma2 * model.tau_c


polarization_rate = long_time_rate


def tail_rate(model: AnalyticModel) -> float:
    """Late-time decay rate of the excess including rotating-frame relaxation."""
    rate = long_time_rate(model)
    if model.T1rho is not None:
        rate += 1.0 / model.T1rho
    return rate


def solve_master(model: AnalyticModel, gamma: Callable, grid, n0: float = 1.0,
                 rtol: float = 1e-8, atol: float = 1e-13) -> "PolarizationCurve":
    """Integrate the population equation for an arbitrary memory kernel on ``grid``.

    Uses an implicit embedded Runge-Kutta pair (Radau IIA) so that very fast transfer
    rates stay cheap; the output is dense on the requested grid.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be non-decreasing")
    probe = np.asarray(gamma(grid), dtype=float)
    if np.any(probe < 0):
        raise ModelViolationError(f"memory kernel is negative on the grid (min {probe.min():.3g})")
    if abs(float(gamma(0.0))) > 1e-12 * max(1.0, float(np.max(np.abs(probe)))):
        raise ModelViolationError(f"memory kernel must vanish at t = 0, got {float(gamma(0.0))}")
    quarter_N = 0.25 * model.N
    relax = 0.0 if model.T1rho is None else 1.0 / model.T1rho
    n_B = model.n_B

    def rhs(t, y):
        return -quarter_N * gamma(t) * (y - n_B) - relax * (y - 0.5)

    def jac(t, y):
        return np.array([[-quarter_N * gamma(t) - relax]])

    t0 = min(0.0, grid[0]) if len(grid) else 0.0
    t1 = grid[-1] if len(grid) else 0.0
    if t1 == t0:
        n = np.full(len(grid), n0)
    else:
        sol = solve_ivp(rhs, (t0, t1), [n0], method="Radau", t_eval=grid, rtol=rtol, atol=atol, jac=jac)
        if not sol.success:
            raise RuntimeError(f"master-equation integration failed: {sol.message}")
        n = sol.y[0]
    return PolarizationCurve(grid, n, None, "analytic",
                             {"model": "master-equation", "N": model.N, "sigma2": model.sigma2,
                              "tau_c_us": model.tau_c, "T1rho_us": model.T1rho})


def analytic_curve(model: AnalyticModel, grid, **meta) -> PolarizationCurve:
    grid = np.asarray(grid, dtype=float)
    info = {"model": "closed-form", "N": model.N, "sigma2": model.sigma2, "tau_c_us": model.tau_c,
            "T1rho_us": model.T1rho, "tail_rate_per_us": tail_rate(model)}
    info.update(meta)
    return PolarizationCurve(grid, closed_form(model, grid), None, "analytic", info)


def transfer_efficiency(model: AnalyticModel) -> float:
    """Fraction of the NV polarization that goes to the nuclei rather than to T1rho loss."""
    rate = long_time_rate(model)
    if model.T1rho is None:
        return 1.0
    if rate == 0:
        return 0.0
    return rate / (rate + 1.0 / model.T1rho)


def scaling_rate(rho: float, z0: float, D: float, reference: AnalyticModel) -> float:
    """Polarization rate rescaled from a calibrated reference as rho / (z0 D)."""
    if None in (reference.rho, reference.z0, reference.D):
        raise ValueError("reference model lacks its calibration point (rho, z0, D)")
    return long_time_rate(reference) * (rho / reference.rho) * (reference.z0 / z0) * (reference.D / D)


def fit_log_slope(times, n, t_min: float, t_max: float = math.inf, n_B: float = 0.5) -> tuple[float, float]:
    """Least-squares slope (1/μs) of log(<n> - n_B) on [t_min, t_max] and its standard error."""
    times, n = np.asarray(times, dtype=float), np.asarray(n, dtype=float)
    sel = (times >= t_min) & (times <= t_max) & (n - n_B > 0)
    if sel.sum() < 3:
        raise ValueError("fewer than 3 usable points in the tail window")
    x, y = times[sel], np.log(n[sel] - n_B)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = max(len(x) - 2, 1)
    resid = y - A @ coef
    se = math.sqrt(float(resid @ resid) / dof / float(((x - x.mean()) ** 2).sum()))
    return float(coef[0]), se


@dataclass(frozen=True)
class NVLayerGeometry:
    """Geometry of a dense near-surface NV layer under a thin oil film.

    The defaults place one NV under every 20 × 20 nm² patch, which is one detection box per
    NV. The oil film is 3 μm thick and stays well mixed across its thickness.
    """

    nv_areal_density: float = 1.0 / 20.0**2  # nm⁻²
    oil_thickness: float = 3000.0  # nm
    rho: float = 50.0  # nm⁻³
    polarized_depth: float | None = None  # nm; None → whole film

    @property
    def depth(self) -> float:
        return self.oil_thickness if self.polarized_depth is None else min(self.polarized_depth, self.oil_thickness)


def macroscopic_polarization(alpha: float, N: int, repetition_time: float, T1n: float,
                             geometry: NVLayerGeometry = NVLayerGeometry()) -> float:
    """Steady-state nuclear polarization of the film under repeated NV reinitialization.

    One cycle of length ``repetition_time`` lets an NV inject ``alpha / 2`` spread over the
    N nuclei it addresses (``alpha / (2N)`` each). At any moment a fraction
    ``N · n_NV / (rho · depth)`` of the film's nuclei is addressed. Balancing the resulting
    mean injection rate against T1n decay gives

        P_n = alpha · n_NV · T1n / (2 · rho · depth · repetition_time).
    """
    if repetition_time <= 0:
        raise ValueError("repetition_time must be > 0")
    if alpha == 0 or T1n == 0 or N == 0:
        return 0.0
    per_cycle = alpha / (2.0 * N)
    addressed_fraction = N * geometry.nv_areal_density / (geometry.rho * geometry.depth)
    return per_cycle * addressed_fraction * T1n / repetition_time


def thermal_polarization(B: float, temperature: float = 298.0) -> float:
    """Boltzmann proton polarization tanh(ħ γ_n B / 2kT) at field ``B`` tesla."""
    return math.tanh(sc.hbar * CONSTANTS.gamma_n * 1e6 * B / (2 * sc.k * temperature))

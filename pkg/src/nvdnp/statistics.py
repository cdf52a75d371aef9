"""Extensive bath parameters: moments of the transverse hyperfine field, the memory
kernel gamma(t), the correlation time and the regime/validity diagnostics.

Conventions: ``a = A_x + i A_y`` (so g = a/4). ``sigma2`` is the variance of one
transverse component, averaged over x and y. ``gamma(t)`` integrates the per-component
autocorrelation of ``xi = A - <A>``, so ``gamma(inf) = sigma2 * tau_c``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import curve_fit

from .bath import CORRELATION, MOMENTS, BathState, make_rng, nv_position, step_diffusion
from .dipolar import coupling
from .units import CONSTANTS, ScenarioConfig

PLATEAU_FRACTION = 0.2
PLATEAU_TOLERANCE = 0.02


class InconclusiveEstimateError(RuntimeError):
    """gamma(t) did not plateau inside the integration window."""

    def __init__(self, message, times=None, gamma=None):
        super().__init__(message)
        self.times = times
        self.gamma = gamma


def _transverse(points, cfg: ScenarioConfig) -> np.ndarray:
    return 4.0 * coupling(points - nv_position(cfg), cfg.nv_tilt_deg)


def _uniform_points(rng, n, L):
    pts = rng.uniform(0.0, 1.0, size=(n, 3)) * L
    pts[:, :2] -= L / 2
    return pts


@dataclass(frozen=True)
class Moments:
    mean_a: complex  # <A_x> + i<A_y>, rad/μs
    sigma2: float  # rad²/μs², per component
    sigma2_x: float
    sigma2_y: float
    third_x: float  # third central moment of A_x, rad³/μs³
    third_y: float
    mean_abs2: float  # <|a|²>
    stderr: dict = field(default_factory=dict)

    @property
    def third_cumulant(self) -> float:
        """Component-averaged magnitude of the third cumulant."""
        return 0.5 * (abs(self.third_x) + abs(self.third_y))

    @property
    def mean_g(self) -> complex:
        return self.mean_a / 4.0


def _moments_from_raw(m1x, m1y, m2x, m2y, m3x, m3y):
    s2x = m2x - m1x**2
    s2y = m2y - m1y**2
    k3x = m3x - 3 * m1x * m2x + 2 * m1x**3
    k3y = m3y - 3 * m1y * m2y + 2 * m1y**3
    return (complex(m1x, m1y), float(0.5 * (s2x + s2y)), float(s2x), float(s2y), float(k3x), float(k3y),
            float(m2x + m2y))


def estimate_moments(cfg: ScenarioConfig, n_samples: int = 1_000_000, seed: int | None = None,
                     n_batches: int = 20) -> Moments:
    """Monte-Carlo moments of the transverse field for one nucleus uniform in the box.

    Standard errors come from ``n_batches`` equal batches.
    """
    if n_samples < 1000:
        raise ValueError(f"n_samples must be >= 1000, got {n_samples}")
    rng = make_rng(cfg.seed if seed is None else seed, 0, MOMENTS)
    per = n_samples // n_batches
    rows = []
    for _ in range(n_batches):
        a = _transverse(_uniform_points(rng, per, cfg.box_length), cfg)
        x, y = a.real, a.imag
        rows.append([x.mean(), y.mean(), (x * x).mean(), (y * y).mean(), (x**3).mean(), (y**3).mean()])
    rows = np.array(rows)
    raw = rows.mean(axis=0)
    mean_a, s2, s2x, s2y, k3x, k3y, m2 = _moments_from_raw(*raw)
    batch = [_moments_from_raw(*r) for r in rows]

    def se(values):
        return float(np.std(values, ddof=1) / math.sqrt(n_batches))

    stderr = {
        "mean_a": se([abs(b[0] - mean_a) for b in batch]),
        "sigma2": se([b[1] for b in batch]),
        "third_cumulant": se([0.5 * (abs(b[4]) + abs(b[5])) for b in batch]),
    }
    return Moments(mean_a, s2, s2x, s2y, k3x, k3y, m2, stderr)


def _graded_edges(length, scale):
    """Panel edges on [0, length], refined geometrically towards 0 on the given scale."""
    edges = [0.0]
    e = scale / 8
    while e < length:
        edges.append(e)
        e *= 2
    edges.append(length)
    return np.array(edges)


def _gauss_nodes(edges, order):
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (b - a) * x + 0.5 * (b + a)).ravel()
    weights = (0.5 * (b - a) * w).ravel()
    return nodes, weights


def _quadrature_raw(cfg: ScenarioConfig, order: int):
    L = cfg.box_length
    half = _graded_edges(L / 2, cfg.z0)
    lat_edges = np.concatenate([-half[::-1], half[1:]])
    xs, wx = _gauss_nodes(lat_edges, order)
    zs, wz = _gauss_nodes(_graded_edges(L, cfg.z0), order)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    Wxy = np.outer(wx, wx).ravel()
    plane = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
    acc = np.zeros(6)
    for z, w in zip(zs, wz):
        plane[:, 2] = z
        a = _transverse(plane, cfg)
        x, y = a.real, a.imag
        ww = Wxy * w
        acc += [ww @ x, ww @ y, ww @ (x * x), ww @ (y * y), ww @ (x**3), ww @ (y**3)]
    return acc / L**3


def quadrature_moments(cfg: ScenarioConfig, order: int = 12) -> Moments:
    """Deterministic moments by graded tensor Gauss-Legendre quadrature over the box.

    The error estimate compares against a lower-order rule.
    """
    hi = _moments_from_raw(*_quadrature_raw(cfg, order))
    lo = _moments_from_raw(*_quadrature_raw(cfg, max(order // 2, 4)))
    stderr = {
        "mean_a": float(abs(hi[0] - lo[0])),
        "sigma2": float(abs(hi[1] - lo[1])),
        "third_cumulant": float(abs(0.5 * (abs(hi[4]) + abs(hi[5])) - 0.5 * (abs(lo[4]) + abs(lo[5])))),
    }
    return Moments(*hi, stderr=stderr)


@dataclass
class CorrelationEstimate:
    sigma2: float  # rad²/μs²
    tau_c: float  # μs
    times: np.ndarray  # μs
    gamma: np.ndarray  # rad²/μs
    chi: float
    mean_a: complex  # rad/μs
    third_cumulant: float  # rad³/μs³
    N: int
    tau_c_self: float  # gamma(inf)/sigma2 with the sampler's own variance
    exp_fit_tau: float
    exp_fit_residual: float  # RMS of gamma - exponential fit, relative to the plateau
    autocorrelation: np.ndarray  # normalized, per component
    stderr: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def gamma_inf(self) -> float:
        return float(self.gamma[-1])

    @property
    def mean_g(self) -> complex:
        return self.mean_a / 4.0

    def gamma_at(self, t):
        """Interpolated gamma(t); constant at the plateau beyond the window."""
        return np.interp(t, self.times, self.gamma)

    def to_dict(self) -> dict:
        return {
            "kind": "CorrelationEstimate",
            "units": {
                "sigma2": "rad^2/us^2", "tau_c": "us", "gamma": "rad^2/us", "times": "us",
                "mean_A": "rad/us", "third_cumulant": "rad^3/us^3", "chi": "1",
            },
            "N": self.N,
            "sigma2": self.sigma2,
            "tau_c": self.tau_c,
            "tau_c_self_normalized": self.tau_c_self,
            "chi": self.chi,
            "mean_A": [self.mean_a.real, self.mean_a.imag],
            "third_cumulant": self.third_cumulant,
            "exp_fit_tau": self.exp_fit_tau,
            "exp_fit_residual": self.exp_fit_residual,
            "stderr": self.stderr,
            "meta": self.meta,
            "times": self.times.tolist(),
            "gamma": self.gamma.tolist(),
            "autocorrelation": self.autocorrelation.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CorrelationEstimate":
        if doc.get("kind") != "CorrelationEstimate":
            raise ValueError("document is not a CorrelationEstimate report")
        return cls(
            sigma2=doc["sigma2"], tau_c=doc["tau_c"], times=np.array(doc["times"]),
            gamma=np.array(doc["gamma"]), chi=doc["chi"], mean_a=complex(*doc["mean_A"]),
            third_cumulant=doc["third_cumulant"], N=doc["N"], tau_c_self=doc["tau_c_self_normalized"],
            exp_fit_tau=doc["exp_fit_tau"], exp_fit_residual=doc["exp_fit_residual"],
            autocorrelation=np.array(doc["autocorrelation"]), stderr=doc["stderr"], meta=doc["meta"],
        )

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "CorrelationEstimate":
        return cls.from_dict(json.loads(Path(path).read_text()))


def default_correlation_dt(cfg: ScenarioConfig) -> float:
    if cfg.D == 0:
        return cfg.dt
    return 0.01 * cfg.z0**2 / cfg.D


def default_correlation_window(cfg: ScenarioConfig) -> float:
    # long enough for a walker started next to the NV to leave a box of this size
    if cfg.D == 0:
        return cfg.t_max
    return (2.0 * cfg.box_length**2 + 10.0 * cfg.z0**2) / cfg.D


def _correlation_trajectory(args):
    cfg, seed, stream, mean_a, bound, walkers, dt, steps = args
    rng = make_rng(seed, stream, CORRELATION)
    L = cfg.box_length
    # rejection sampling of initial positions with density ∝ |xi|²
    chunks, accepted, candidates = [], 0, 0
    batch = max(4 * walkers, 20_000)
    while accepted < walkers:
        pts = _uniform_points(rng, batch, L)
        xi2 = np.abs(_transverse(pts, cfg) - mean_a) ** 2
        keep = rng.uniform(0.0, bound, size=batch) < xi2
        if accepted + keep.sum() >= walkers:
            # stop exactly at the walker that completes the sample, so the candidate count
            # stays an unbiased geometric stopping time
            last = np.flatnonzero(keep)[walkers - accepted - 1]
            keep[last + 1:] = False
            candidates += last + 1
        else:
            candidates += batch
        chunks.append(pts[keep])
        accepted += int(keep.sum())
    pos = np.concatenate(chunks)
    xi0 = _transverse(pos, cfg) - mean_a
    weight = 1.0 / np.abs(xi0) ** 2
    r = np.zeros(steps + 1)
    r[0] = 1.0
    state = BathState(positions=pos, box_length=L, rng=rng)
    live = np.arange(walkers)
    for k in range(1, steps + 1):
        step_diffusion(state, dt, cfg.D)
        if len(state.swapped):
            keep = np.ones(len(live), dtype=bool)
            keep[state.swapped] = False
            live, xi0, weight = live[keep], xi0[keep], weight[keep]
            state.positions = state.positions[keep]
            if not len(live):
                break
        xi = _transverse(state.positions, cfg) - mean_a
        r[k] = np.sum((xi * np.conj(xi0)).real * weight) / walkers
    return r, candidates


def estimate_correlation(cfg: ScenarioConfig, n_traj: int | None = None, *, walkers_per_traj: int = 500,
                         seed: int | None = None, dt: float | None = None, window: float | None = None,
                         moments: Moments | None = None, workers: int = 1) -> CorrelationEstimate:
    """Ensemble estimate of gamma(t), sigma2 and tau_c for one nucleus in the box.

    Each trajectory follows ``walkers_per_traj`` independent walkers whose starting points
    are importance-sampled with density ∝ |xi|², which makes the self-normalized
    autocorrelation estimator low-variance. A walker that leaves through a reservoir face
    contributes zero from then on. ``sigma2`` comes from quadrature, and
    ``tau_c = gamma(inf) / sigma2``. Both are independent of the sampler's own variance
    estimate, which comes from the rejection acceptance rate.
    """
    n_traj = cfg.n_traj if n_traj is None else n_traj
    seed = cfg.seed if seed is None else seed
    dt = default_correlation_dt(cfg) if dt is None else dt
    window = default_correlation_window(cfg) if window is None else window
    steps = max(int(math.ceil(window / dt)), 10)
    times = np.arange(steps + 1) * dt
    moments = quadrature_moments(cfg) if moments is None else moments
    b0 = CONSTANTS.dipolar_prefactor
    # every box point is at least z0 from the NV and |A_perp| <= 1.5 b0 / r³
    bound = (1.5 * b0 / cfg.z0**3 + abs(moments.mean_a)) ** 2

    jobs = [(cfg, seed, k, moments.mean_a, bound, walkers_per_traj, dt, steps) for k in range(n_traj)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_correlation_trajectory, jobs))
    else:
        results = [_correlation_trajectory(job) for job in jobs]
    r_all = np.array([r for r, _ in results])
    candidates = np.array([c for _, c in results], dtype=float)

    total_cand = candidates.sum()
    total_acc = walkers_per_traj * n_traj
    p_acc = total_acc / total_cand
    sigma2_self = 0.5 * bound * p_acc
    sigma2_self_se = sigma2_self * math.sqrt(max(1 - p_acc, 0.0) / total_acc)

    r_mean = r_all.mean(axis=0)
    integrals = cumulative_trapezoid(r_all, times, axis=1, initial=0.0)
    I = integrals[:, -1]
    tau_self = float(I.mean())
    tau_self_se = float(I.std(ddof=1) / math.sqrt(n_traj)) if n_traj > 1 else float("nan")

    gamma = sigma2_self * cumulative_trapezoid(r_mean, times, initial=0.0)
    sigma2 = moments.sigma2
    tau_c = float(gamma[-1] / sigma2) if sigma2 > 0 else 0.0
    tau_c_se = abs(tau_c) * math.hypot(tau_self_se / tau_self if tau_self else 0.0,
                                       sigma2_self_se / sigma2_self if sigma2_self else 0.0)

    tail = gamma[int(len(gamma) * (1 - PLATEAU_FRACTION)):]
    plateau = gamma[-1]
    if not plateau > 0 or (tail.max() - tail.min()) > PLATEAU_TOLERANCE * abs(plateau):
        raise InconclusiveEstimateError(
            f"gamma(t) has no plateau within {times[-1]:.4g} us: last {PLATEAU_FRACTION:.0%} of the "
            f"window varies by {(tail.max() - tail.min()) / abs(plateau) if plateau else float('inf'):.3g} "
            f"of its final value (tolerance {PLATEAU_TOLERANCE})",
            times, gamma,
        )

    fit_tau, fit_resid = _exponential_fit(times, gamma, sigma2_self, tau_self)
    est = CorrelationEstimate(
        sigma2=float(sigma2), tau_c=tau_c, times=times, gamma=gamma, chi=cfg.omega_N * tau_c,
        mean_a=moments.mean_a, third_cumulant=moments.third_cumulant, N=cfg.N,
        tau_c_self=tau_self, exp_fit_tau=fit_tau, exp_fit_residual=fit_resid, autocorrelation=r_mean,
        stderr={
            "sigma2": moments.stderr.get("sigma2", 0.0),
            "sigma2_self": sigma2_self_se,
            "tau_c": tau_c_se,
            "tau_c_self": tau_self_se,
            "gamma_inf": float(abs(gamma[-1])) * tau_self_se / tau_self if tau_self else float("nan"),
            "mean_A": moments.stderr.get("mean_a", 0.0),
            "third_cumulant": moments.stderr.get("third_cumulant", 0.0),
        },
        meta={
            "n_traj": n_traj, "walkers_per_traj": walkers_per_traj, "seed": seed, "dt_us": dt,
            "window_us": float(times[-1]), "sigma2_self": sigma2_self, "acceptance": p_acc,
            "z0_nm": cfg.z0, "D_nm2_per_us": cfg.D, "rho_per_nm3": cfg.rho,
            "box_length_nm": cfg.box_length, "nv_tilt_deg": cfg.nv_tilt_deg,
            "omega_N_rad_per_us": cfg.omega_N,
            "convention": "per-component variance of A_x, A_y averaged; g = (A_x + i A_y)/4",
        },
    )
    return est


def _exponential_fit(times, gamma, s2_guess, tau_guess):
    model = lambda t, s2, tau: s2 * tau * (1.0 - np.exp(-t / tau))
    try:
        (s2, tau), _ = curve_fit(model, times, gamma, p0=(s2_guess, max(tau_guess, times[1])),
                                 bounds=([0, 1e-12], [np.inf, np.inf]), maxfev=10_000)
    except (RuntimeError, ValueError):
        return float("nan"), float("nan")
    resid = gamma - model(times, s2, tau)
    return float(tau), float(np.sqrt(np.mean(resid**2)) / abs(gamma[-1]))


def regime_chi(cfg: ScenarioConfig, est: CorrelationEstimate | float) -> tuple[float, str]:
    """chi = omega_N * tau_c with a regime label; accepts an estimate or a bare tau_c."""
    tau_c = est.tau_c if isinstance(est, CorrelationEstimate) else float(est)
    chi = cfg.omega_N * tau_c
    label = "resonant-transfer regime" if chi > 1 else "motional-suppression regime"
    return chi, label


def validity_horizon(cfg: ScenarioConfig, est) -> float:
    """Time (μs) up to which the incoherent population equation applies.

    min(1/(N |<xi³>| tau_c²), 1/(N |<g>|² tau_c)), with no safety margin applied.
    """
    N, tau = cfg.N, est.tau_c
    k3 = abs(est.third_cumulant)
    g2 = abs(est.mean_g) ** 2
    limits = [math.inf]
    if N * k3 * tau**2 > 0:
        limits.append(1.0 / (N * k3 * tau**2))
    if N * g2 * tau > 0:
        limits.append(1.0 / (N * g2 * tau))
    return min(limits)

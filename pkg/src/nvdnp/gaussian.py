"""Bosonized NV + nuclear-bath dynamics on the one-particle correlation matrix.

Mode 0 is the NV (Holstein-Primakoff boson), modes 1..N are the nuclei. The state is
C_ij = <b_i† b_j>, and a step maps C to U C U† with U = exp(-i h dt). Here h is the
single-particle matrix in the frame rotating at omega_N: its diagonal holds the
detunings, and its first row and column hold conj(g_i) and g_i.

Two backends share these operations:

* ``dense`` keeps the full (N+1)×(N+1) matrix. It is the reference path for small N.
* ``amplitude`` uses that C - I/2 stays rank one. It is (1/2) psi psi† at t = 0 with
  psi = e_0, and unitary steps, mode resets and the T1rho channel all preserve that
  form. Propagating psi alone is exact and costs O(N) per step.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .analytic import PolarizationCurve
from .bath import CouplingTrajectory, iter_couplings, n_steps
from .units import ScenarioConfig

MAX_STEP_PHASE = 0.1
TRACE_TOL = 1e-9
HERMITICITY_TOL = 1e-12
OCCUPATION_TOL = 1e-9
DENSE_MAX_MODES = 4000


class StepSizeError(ValueError):
    pass


class InvariantViolationError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# ---------------------------------------------------------------- dense operations

def init_state(N: int) -> np.ndarray:
    """NV boson holding one excitation and N thermal (occupation 1/2) bath modes."""
    if N < 0:
        raise ValueError(f"N must be >= 0, got {N}")
    C = np.zeros((N + 1, N + 1), dtype=complex)
    C[0, 0] = 1.0
    idx = np.arange(1, N + 1)
    C[idx, idx] = 0.5
    return C


def single_particle_matrix(g, Omega: float = 0.0, omega_N: float = 0.0, detunings=None) -> np.ndarray:
    """h with diag (Omega - omega_N, d_1, ..., d_N) and first row/column conj(g), g."""
    g = np.asarray(g, dtype=complex)
    h = np.zeros((len(g) + 1, len(g) + 1), dtype=complex)
    h[0, 0] = Omega - omega_N
    if detunings is not None:
        h[np.arange(1, len(g) + 1), np.arange(1, len(g) + 1)] = detunings
    h[0, 1:] = np.conj(g)
    h[1:, 0] = g
    return h


def _check_step(g, dt):
    phase = math.sqrt(float(np.vdot(g, g).real)) * dt
    if phase >= MAX_STEP_PHASE:
        raise StepSizeError(
            f"coupling norm * dt = {phase:.3g} >= {MAX_STEP_PHASE}; reduce dt below "
            f"{MAX_STEP_PHASE * dt / phase:.3g} us"
        )
    return phase


def propagator(g, dt: float, Omega: float = 0.0, omega_N: float = 0.0, detunings=None) -> np.ndarray:
    """U = exp(-i h dt); closed form on resonance, dense exponential otherwise."""
    g = np.asarray(g, dtype=complex)
    _check_step(g, dt)
    n = len(g) + 1
    if Omega == omega_N and (detunings is None or not np.any(detunings)):
        norm = math.sqrt(float(np.vdot(g, g).real))
        U = np.eye(n, dtype=complex)
        if norm == 0:
            return U
        c, s = math.cos(norm * dt), math.sin(norm * dt)
        w = np.zeros(n, dtype=complex)
        w[1:] = g / norm
        e0 = np.zeros(n)
        e0[0] = 1.0
        U += (c - 1.0) * (np.outer(e0, e0) + np.outer(w, w.conj()))
        U -= 1j * s * (np.outer(e0, w.conj()) + np.outer(w, e0))
        return U
    return expm(-1j * dt * single_particle_matrix(g, Omega, omega_N, detunings))


def step(C: np.ndarray, g, Omega: float, omega_N: float, dt: float, detunings=None) -> np.ndarray:
    U = propagator(g, dt, Omega, omega_N, detunings)
    C = U @ C @ U.conj().T
    return 0.5 * (C + C.conj().T)


def reset_modes(C: np.ndarray, indices) -> np.ndarray:
    """Replace bath modes (0-based bath indices) by fresh uncorrelated thermal modes."""
    idx = np.asarray(indices, dtype=np.intp) + 1
    if len(idx) == 0:
        return C
    C = C.copy()
    C[idx, :] = 0.0
    C[:, idx] = 0.0
    C[idx, idx] = 0.5
    return C


def apply_T1rho(C: np.ndarray, dt: float, T1rho: float | None) -> np.ndarray:
    """Relax the NV occupation towards 1/2 and damp its coherences with the bath."""
    if T1rho is None or math.isinf(T1rho):
        return C
    C = C.copy()
    decay = math.exp(-dt / T1rho)
    half = math.exp(-dt / (2 * T1rho))
    C[0, 0] = 0.5 + (C[0, 0] - 0.5) * decay
    C[0, 1:] *= half
    C[1:, 0] *= half
    return C


def nv_population(C: np.ndarray) -> float:
    return float(C[0, 0].real)


# ------------------------------------------------------------ rank-one amplitude form

@dataclass
class AmplitudeState:
    """C = I/2 + psi psi† / 2; psi[0] is the NV entry."""

    psi: np.ndarray

    @classmethod
    def initial(cls, N: int) -> "AmplitudeState":
        psi = np.zeros(N + 1, dtype=complex)
        psi[0] = 1.0
        return cls(psi)

    @property
    def population(self) -> float:
        return 0.5 + 0.5 * abs(self.psi[0]) ** 2

    def step(self, g, dt: float, detunings=None) -> None:
        """psi <- exp(-i h dt) psi in O(N); Strang splitting when detunings are present."""
        if detunings is not None:
            self.psi *= np.exp(-0.5j * dt * detunings)
        self._couple(g, dt)
        if detunings is not None:
            self.psi *= np.exp(-0.5j * dt * detunings)

    def _couple(self, g, dt):
        norm2 = float(np.vdot(g, g).real)
        if norm2 == 0.0:
            return
        norm = math.sqrt(norm2)
        if norm * dt >= MAX_STEP_PHASE:
            _check_step(g, dt)
        c, s = math.cos(norm * dt), math.sin(norm * dt)
        psi = self.psi
        p0 = psi[0]
        bath = psi[1:]
        proj = np.vdot(g, bath) / norm  # ŵ† psi_bath
        psi[0] = c * p0 - 1j * s * proj
        bath += (g / norm) * ((c - 1.0) * proj - 1j * s * p0)

    def reset(self, indices) -> None:
        if len(indices):
            self.psi[np.asarray(indices, dtype=np.intp) + 1] = 0.0

    def relax(self, dt: float, T1rho: float | None) -> None:
        if T1rho is not None and not math.isinf(T1rho):
            self.psi[0] *= math.exp(-dt / (2 * T1rho))

    def to_matrix(self) -> np.ndarray:
        n = len(self.psi)
        return 0.5 * np.eye(n) + 0.5 * np.outer(self.psi, self.psi.conj())

    @property
    def bath_gain(self) -> float:
        return 0.5 * float(np.vdot(self.psi[1:], self.psi[1:]).real)


# ------------------------------------------------------------------------- driver

@dataclass
class SimOutcome:
    curve: PolarizationCurve
    bath_gain: float
    diagnostics: dict = field(default_factory=dict)
    trajectories: np.ndarray | None = None  # (n_traj, T) per-trajectory populations


def _detunings(cfg: ScenarioConfig, frame, N):
    """Diagonal of h in the rotating frame, or None on exact resonance without A_z noise."""
    d0 = cfg.Omega - cfg.omega_N
    if frame.Az is None and d0 == 0:
        return None
    d = np.zeros(N + 1)
    d[0] = d0
    if frame.Az is not None:
        d[1:] = 0.5 * frame.Az
    return d


def propagate(cfg: ScenarioConfig, frames, backend: str = "amplitude"):
    """Run one trajectory through a stream of coupling frames.

    Returns (times, populations, diagnostics, bath_gain).
    """
    N = cfg.N
    if backend == "dense" and N + 1 > DENSE_MAX_MODES:
        raise ValueError(f"dense backend limited to {DENSE_MAX_MODES} modes, got {N + 1}")
    steps_total = n_steps(cfg)
    times = np.arange(steps_total + 1) * cfg.dt
    pops = np.empty(steps_total + 1)
    pops[0] = 1.0
    trace_drift = herm_drift = occ_low = occ_high = 0.0
    occ_low, occ_high = 0.5, 1.0
    swaps = 0
    hamiltonian_only = cfg.T1rho is None
    if backend == "amplitude":
        state = AmplitudeState.initial(N)
    elif backend == "dense":
        C = init_state(N)
    else:
        raise ValueError(f"unknown backend {backend!r}")

    k = 0
    for frame in frames:
        if k == steps_total:
            break
        det = _detunings(cfg, frame, N)
        if backend == "amplitude":
            before = float(np.vdot(state.psi, state.psi).real)
            if det is None:
                state._couple(frame.g, cfg.dt)
            else:
                state.step(frame.g, cfg.dt, det)
            trace_drift = max(trace_drift, abs(float(np.vdot(state.psi, state.psi).real) - before) / 2)
            state.relax(cfg.dt, cfg.T1rho)
            if len(frame.swapped):
                hamiltonian_only = False
                swaps += len(frame.swapped)
                state.reset(frame.swapped)
            pops[k + 1] = state.population
        else:
            tr = np.trace(C).real
            U = propagator(frame.g, cfg.dt, cfg.Omega, cfg.omega_N, None if det is None else det[1:])
            C = U @ C @ U.conj().T
            herm_drift = max(herm_drift, float(np.max(np.abs(C - C.conj().T))))
            C = 0.5 * (C + C.conj().T)
            trace_drift = max(trace_drift, abs(np.trace(C).real - tr))
            C = apply_T1rho(C, cfg.dt, cfg.T1rho)
            if len(frame.swapped):
                hamiltonian_only = False
                swaps += len(frame.swapped)
                C = reset_modes(C, frame.swapped)
            diag = np.diag(C).real
            occ_low, occ_high = min(occ_low, diag.min()), max(occ_high, diag.max())
            pops[k + 1] = nv_population(C)
        k += 1
    if k != steps_total:
        raise ValueError(f"coupling stream ended after {k} of {steps_total} steps")

    if backend == "amplitude":
        bath_gain = state.bath_gain
        norm2 = float(np.vdot(state.psi, state.psi).real)
        # occupations are 1/2 + |psi_i|²/2
        occ_high = 0.5 + 0.5 * float(np.max(np.abs(state.psi)) ** 2)
        occ_low = 0.5
    else:
        bath_gain = float(np.trace(C).real - C[0, 0].real - 0.5 * N)
        norm2 = None
    diagnostics = {
        "trace_drift_max_per_step": float(trace_drift),
        "hermiticity_drift_max": float(herm_drift),
        "occupation_min": float(occ_low),
        "occupation_max": float(occ_high),
        "swap_count": int(swaps),
        "hamiltonian_only": hamiltonian_only,
        "final_excess_norm2": norm2,
    }
    _check_invariants(diagnostics)
    return times, pops, diagnostics, bath_gain


def _check_invariants(d):
    problems = []
    if d["trace_drift_max_per_step"] > TRACE_TOL:
        problems.append(f"trace drift {d['trace_drift_max_per_step']:.3g} > {TRACE_TOL}")
    if d["hermiticity_drift_max"] > HERMITICITY_TOL:
        problems.append(f"hermiticity drift {d['hermiticity_drift_max']:.3g} > {HERMITICITY_TOL}")
    if d["occupation_min"] < -OCCUPATION_TOL or d["occupation_max"] > 1 + OCCUPATION_TOL:
        problems.append(f"occupations left [0, 1]: [{d['occupation_min']:.6g}, {d['occupation_max']:.6g}]")
    if problems:
        raise InvariantViolationError("simulation aborted: " + "; ".join(problems), d)


def propagate_trajectory(cfg: ScenarioConfig, trajectory: CouplingTrajectory, backend: str = "amplitude"):
    """Replay a stored coupling trajectory (e.g. from a dump file)."""
    dt = trajectory.dt
    steps = len(trajectory.times) - 1
    if dt > 0 and not math.isclose(dt, cfg.dt, rel_tol=1e-12):
        cfg = cfg.replace(dt=dt, t_max=steps * dt)
    elif steps != n_steps(cfg):
        cfg = cfg.replace(t_max=steps * cfg.dt)
    return propagate(cfg, trajectory.frames(), backend)


def _run_one(args):
    cfg, stream, backend = args
    _, pops, diag, gain = propagate(cfg, iter_couplings(cfg, cfg.seed, stream), backend)
    return pops, diag, gain


def run(cfg: ScenarioConfig, *, workers: int = 1, backend: str = "amplitude",
        keep_trajectories: bool = False) -> SimOutcome:
    """Ensemble of ``cfg.n_traj`` independent bath trajectories.

    Every trajectory draws from its own (seed, index) stream and the reduction runs in
    trajectory order, so the result does not depend on ``workers``.
    """
    jobs = [(cfg, k, backend) for k in range(cfg.n_traj)]
    if workers > 1 and cfg.n_traj > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    pops = np.array([r[0] for r in results])
    times = np.arange(pops.shape[1]) * cfg.dt
    mean = pops.mean(axis=0)
    stderr = pops.std(axis=0, ddof=1) / math.sqrt(len(pops)) if len(pops) > 1 else np.zeros_like(mean)
    diags = [r[1] for r in results]
    diagnostics = {
        "n_traj": cfg.n_traj,
        "backend": backend,
        "trace_drift_max_per_step": max(d["trace_drift_max_per_step"] for d in diags),
        "hermiticity_drift_max": max(d["hermiticity_drift_max"] for d in diags),
        "occupation_min": min(d["occupation_min"] for d in diags),
        "occupation_max": max(d["occupation_max"] for d in diags),
        "swap_count_total": sum(d["swap_count"] for d in diags),
        "swap_count_mean": float(np.mean([d["swap_count"] for d in diags])),
    }
    curve = PolarizationCurve(times, mean, stderr, "gaussian-sim", {
        "config_digest": cfg.digest(), "N": cfg.N, "n_traj": cfg.n_traj, "seed": cfg.seed,
        "dt_us": cfg.dt, "T1rho_us": cfg.T1rho, "backend": backend,
    })
    return SimOutcome(curve, float(np.mean([r[2] for r in results])), diagnostics,
                      pops if keep_trajectories else None)

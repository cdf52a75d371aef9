"""Brownian nuclear bath in a box above the diamond surface.

Geometry: the box is ``[-L/2, L/2]² × [0, L]`` with the diamond surface at ``z = 0`` and
the NV at ``(0, 0, -z0)``. Walkers reflect off the surface. Leaving through a lateral face
wraps periodically; leaving through the top face mirrors back inside. Both of those count
as a reservoir swap: the returning walker is a new, uncorrelated nucleus.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .dipolar import coupling, hyperfine
from .units import ScenarioConfig

MAX_TRAJECTORY_BYTES = 2 * 1024**3


class TrajectorySizeError(MemoryError):
    pass


# stream namespaces, so estimator and simulator trajectories never share draws
SIMULATION, CORRELATION, MOMENTS = 0, 1, 2


def make_rng(seed: int, stream: int = 0, purpose: int = SIMULATION) -> np.random.Generator:
    """Independent generator for trajectory ``stream`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(purpose, stream)))


@dataclass
class BathState:
    positions: np.ndarray  # (N, 3) nm
    box_length: float
    rng: np.random.Generator
    swapped: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))

    @property
    def N(self) -> int:
        return len(self.positions)


def init_bath(cfg: ScenarioConfig, seed: int | None = None, stream: int = 0) -> BathState:
    """N walkers drawn i.i.d. uniformly over the box."""
    rng = make_rng(cfg.seed if seed is None else seed, stream)
    L = cfg.box_length
    pos = rng.uniform(0.0, 1.0, size=(cfg.N, 3)) * L
    pos[:, :2] -= L / 2
    return BathState(positions=pos, box_length=L, rng=rng)


def step_diffusion(state: BathState, dt: float, D: float) -> BathState:
    """Advance every walker by one Brownian step, in place.

    Sets ``state.swapped`` to the indices that crossed a lateral or top face.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if D == 0 or state.N == 0:
        state.swapped = np.empty(0, dtype=np.intp)
        return state
    L = state.box_length
    half = L / 2
    pos = state.positions
    pos += state.rng.normal(0.0, np.sqrt(2.0 * D * dt), size=pos.shape)
    lateral = (np.abs(pos[:, 0]) > half) | (np.abs(pos[:, 1]) > half)
    np.abs(pos[:, 2], out=pos[:, 2])
    top = pos[:, 2] > L
    if lateral.any():
        pos[:, :2] = np.mod(pos[:, :2] + half, L) - half
    if top.any():
        # mirror at z = L; fold again in case a huge step overshoots the whole box
        pos[:, 2] = np.where(top, 2 * L - pos[:, 2], pos[:, 2])
        pos[:, 2] = np.abs(np.mod(pos[:, 2] + L, 2 * L) - L)
    state.swapped = np.flatnonzero(lateral | top)
    return state


def nv_position(cfg: ScenarioConfig) -> np.ndarray:
    return np.array([0.0, 0.0, -cfg.z0])


def sample_couplings(state: BathState, cfg: ScenarioConfig) -> np.ndarray:
    """Complex flip-flop couplings g_i (rad/μs) of all walkers to the NV."""
    return coupling(state.positions - nv_position(cfg), cfg.nv_tilt_deg)


def sample_axial(state: BathState, cfg: ScenarioConfig) -> np.ndarray:
    """Secular field component A_z (rad/μs) of all walkers."""
    return hyperfine(state.positions - nv_position(cfg), cfg.nv_tilt_deg).Az


@dataclass
class CouplingFrame:
    t: float
    g: np.ndarray
    swapped: np.ndarray  # indices replaced at the end of the interval starting at t
    Az: np.ndarray | None = None


def n_steps(cfg: ScenarioConfig) -> int:
    return int(round(cfg.t_max / cfg.dt))


def iter_couplings(cfg: ScenarioConfig, seed: int | None = None, stream: int = 0) -> Iterator[CouplingFrame]:
    """Live coupling stream on the grid {0, dt, ..., t_max}.

    Frame k holds g at t_k (used for the interval [t_k, t_k+dt)) and the walkers swapped
    during that interval. The last frame has no swaps.
    """
    state = init_bath(cfg, seed, stream)
    steps = n_steps(cfg)
    for k in range(steps + 1):
        g = sample_couplings(state, cfg)
        Az = sample_axial(state, cfg) if cfg.detuning_fluctuations else None
        if k < steps:
            step_diffusion(state, cfg.dt, cfg.D)
            swapped = state.swapped
        else:
            swapped = np.empty(0, dtype=np.intp)
        yield CouplingFrame(k * cfg.dt, g, swapped, Az)


@dataclass
class CouplingTrajectory:
    times: np.ndarray  # (T,)
    g: np.ndarray  # (T, N) complex
    swap_steps: np.ndarray  # frame index k of each swap (swap happens in [t_k, t_k+1))
    swap_indices: np.ndarray
    Az: np.ndarray | None = None
    cfg_digest: str = ""

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def swap_log(self) -> list[tuple[float, int]]:
        """(time, index) of each replacement, timed at the end of its interval."""
        return [(float(self.times[k + 1]), int(i)) for k, i in zip(self.swap_steps, self.swap_indices)]

    def frames(self) -> Iterator[CouplingFrame]:
        order = np.argsort(self.swap_steps, kind="stable")
        steps, idx = self.swap_steps[order], self.swap_indices[order]
        bounds = np.searchsorted(steps, np.arange(len(self.times) + 1))
        for k, t in enumerate(self.times):
            Az = None if self.Az is None else self.Az[k]
            yield CouplingFrame(float(t), self.g[k], idx[bounds[k]:bounds[k + 1]], Az)

    def coarsen(self, factor: int) -> "CouplingTrajectory":
        """Keep every ``factor``-th frame; swaps are folded into the enclosing coarse interval."""
        keep = np.arange(0, len(self.times), factor)
        coarse_steps = self.swap_steps // factor
        valid = coarse_steps < len(keep) - 1
        return CouplingTrajectory(
            self.times[keep], self.g[keep], coarse_steps[valid], self.swap_indices[valid],
            None if self.Az is None else self.Az[keep], self.cfg_digest,
        )


def generate_trajectory(cfg: ScenarioConfig, seed: int | None = None, stream: int = 0,
                        max_bytes: int = MAX_TRAJECTORY_BYTES) -> CouplingTrajectory:
    """Materialize a full coupling trajectory (for replay, dumps and analysis)."""
    frames = n_steps(cfg) + 1
    per_value = 16 + (8 if cfg.detuning_fluctuations else 0)
    size = frames * cfg.N * per_value
    if size > max_bytes:
        raise TrajectorySizeError(
            f"trajectory needs N*frames = {cfg.N}*{frames} = {cfg.N * frames} samples "
            f"({size / 1e9:.2f} GB > limit {max_bytes / 1e9:.2f} GB)"
        )
    g = np.empty((frames, cfg.N), dtype=complex)
    Az = np.empty((frames, cfg.N)) if cfg.detuning_fluctuations else None
    swap_steps, swap_idx = [], []
    for k, frame in enumerate(iter_couplings(cfg, seed, stream)):
        g[k] = frame.g
        if Az is not None:
            Az[k] = frame.Az
        if len(frame.swapped):
            swap_steps.append(np.full(len(frame.swapped), k))
            swap_idx.append(frame.swapped)
    return CouplingTrajectory(
        times=np.arange(frames) * cfg.dt,
        g=g,
        swap_steps=np.concatenate(swap_steps) if swap_steps else np.empty(0, dtype=np.intp),
        swap_indices=np.concatenate(swap_idx) if swap_idx else np.empty(0, dtype=np.intp),
        Az=Az,
        cfg_digest=cfg.digest(),
    )


# Dump layout (little endian):
#   header: magic b"NVDNPTRJ", u32 version, 16-byte ascii cfg digest, u64 N, u64 frames,
#           f64 dt, u8 has_Az
#   frame:  f64 t, complex128[N] g, [f64[N] Az], u32 n_swaps, u32[n_swaps] indices
_MAGIC = b"NVDNPTRJ"
_VERSION = 1
_HEADER = struct.Struct("<8sI16sQQdB")


def dump_trajectory(traj: CouplingTrajectory, path) -> None:
    N = traj.g.shape[1]
    digest = traj.cfg_digest.encode("ascii").ljust(16, b"\0")[:16]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, digest, N, len(traj.times), traj.dt, traj.Az is not None))
        for frame in traj.frames():
            fh.write(struct.pack("<d", frame.t))
            fh.write(np.ascontiguousarray(frame.g, dtype="<c16").tobytes())
            if frame.Az is not None:
                fh.write(np.ascontiguousarray(frame.Az, dtype="<f8").tobytes())
            fh.write(struct.pack("<I", len(frame.swapped)))
            fh.write(np.asarray(frame.swapped, dtype="<u4").tobytes())


def load_trajectory(path) -> CouplingTrajectory:
    data = Path(path).read_bytes()
    magic, version, digest, N, frames, _dt, has_az = _HEADER.unpack_from(data, 0)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError(f"{path}: not a version-{_VERSION} trajectory dump")
    off = _HEADER.size
    times = np.empty(frames)
    g = np.empty((frames, N), dtype=complex)
    Az = np.empty((frames, N)) if has_az else None
    swap_steps, swap_idx = [], []
    for k in range(frames):
        times[k] = struct.unpack_from("<d", data, off)[0]
        off += 8
        g[k] = np.frombuffer(data, dtype="<c16", count=N, offset=off)
        off += 16 * N
        if has_az:
            Az[k] = np.frombuffer(data, dtype="<f8", count=N, offset=off)
            off += 8 * N
        (n_sw,) = struct.unpack_from("<I", data, off)
        off += 4
        if n_sw:
            swap_idx.append(np.frombuffer(data, dtype="<u4", count=n_sw, offset=off).astype(np.intp))
            swap_steps.append(np.full(n_sw, k, dtype=np.intp))
        off += 4 * n_sw
    return CouplingTrajectory(
        times, g,
        np.concatenate(swap_steps) if swap_steps else np.empty(0, dtype=np.intp),
        np.concatenate(swap_idx) if swap_idx else np.empty(0, dtype=np.intp),
        Az, digest.rstrip(b"\0").decode("ascii"),
    )

"""Secular NV-nucleus hyperfine field and flip-flop coupling.

Positions are relative vectors (nm) from the NV to the nucleus in the lab frame, whose
z axis is the diamond surface normal. The NV axis may be tilted away from the normal
by ``tilt_deg`` (in the lab x-z plane); returned components are in the NV frame.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .units import CONSTANTS

MIN_DISTANCE = 0.1  # nm


class SingularityError(ValueError):
    pass


class HyperfineVector(NamedTuple):
    Ax: np.ndarray
    Ay: np.ndarray
    Az: np.ndarray


def nv_frame(tilt_deg: float = 0.0) -> np.ndarray:
    """Rotation matrix whose rows are the NV-frame unit vectors expressed in the lab frame."""
    th = np.deg2rad(tilt_deg)
    c, s = np.cos(th), np.sin(th)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def _to_nv_frame(x, tilt_deg):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ValueError(f"positions must have trailing dimension 3, got shape {x.shape}")
    if tilt_deg:
        x = x @ nv_frame(tilt_deg).T
    return x


def hyperfine(x, tilt_deg: float = 0.0, b0: float | None = None) -> HyperfineVector:
    """A = (b0/r³)·(3(n·r̂)r̂ − n) for position(s) ``x`` of shape (..., 3)."""
    if b0 is None:
        b0 = CONSTANTS.dipolar_prefactor
    q = _to_nv_frame(x, tilt_deg)
    r2 = np.einsum("...i,...i->...", q, q)
    if np.any(r2 < MIN_DISTANCE**2):
        raise SingularityError(f"nucleus closer than {MIN_DISTANCE} nm to the NV")
    inv_r = 1.0 / np.sqrt(r2)
    inv_r3 = inv_r * inv_r * inv_r
    qz = q[..., 2]
    pre = 3.0 * b0 * qz * inv_r3 * inv_r * inv_r
    return HyperfineVector(pre * q[..., 0], pre * q[..., 1], pre * qz - b0 * inv_r3)


def coupling(x, tilt_deg: float = 0.0, b0: float | None = None):
    """Flip-flop coupling g = (Ax + i·Ay)/4 in rad/μs."""
    A = hyperfine(x, tilt_deg, b0)
    return (A.Ax + 1j * A.Ay) / 4.0

"""Physical constants, unit conversions and validated scenario configuration.

Internal units throughout the package: nm, μs, rad/μs, tesla.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import scipy.constants as sc

SCHEMA_VERSION = 1
SEED_ENV_VAR = "NVDNP_SEED"

GAUSS_PER_TESLA = 1.0e4


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""


class ResonanceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PhysicalConstants:
    """Gyromagnetic ratios and the NV-proton dipolar prefactor in internal units."""

    gamma_e: float  # rad/μs/T
    gamma_n: float  # rad/μs/T
    dipolar_prefactor: float  # rad/μs·nm³

    @classmethod
    def codata(cls) -> "PhysicalConstants":
        gamma_e = sc.physical_constants["electron gyromag. ratio"][0]  # rad/s/T
        gamma_n = sc.physical_constants["proton gyromag. ratio"][0]
        # (μ0/4π) γe γn ħ  in rad/s·m³  ->  rad/μs·nm³
        b0 = sc.mu_0 / (4 * math.pi) * gamma_e * gamma_n * sc.hbar
        return cls(gamma_e=gamma_e * 1e-6, gamma_n=gamma_n * 1e-6, dipolar_prefactor=b0 * 1e27 * 1e-6)


CONSTANTS = PhysicalConstants.codata()


def gauss_to_tesla(b_gauss: float) -> float:
    return b_gauss / GAUSS_PER_TESLA


def tesla_to_gauss(b_tesla: float) -> float:
    return b_tesla * GAUSS_PER_TESLA


def larmor_frequency(B: float) -> float:
    """Proton Larmor frequency (rad/μs) in a field of ``B`` tesla."""
    if B < 0:
        raise ConfigError(f"B must be non-negative, got {B}")
    return CONSTANTS.gamma_n * B


@dataclass(frozen=True)
class ScenarioConfig:
    """All physical and numerical parameters of one run.

    ``N`` may be left as ``None``; it is then derived as ``round(rho * box_length**3)``.
    ``Omega`` defaults to the resonant value ``gamma_n * B``; ``T1rho=None`` means no
    rotating-frame relaxation.
    """

    z0: float  # nm
    D: float  # nm²/μs
    rho: float  # nm⁻³
    B: float  # T
    Omega: float | None = None  # rad/μs
    box_length: float = 20.0  # nm
    N: int | None = None
    T1rho: float | None = None  # μs
    dt: float = 0.1  # μs
    t_max: float = 40.0  # μs
    n_traj: int = 100
    seed: int = 0
    nv_tilt_deg: float = 0.0
    detuning_fluctuations: bool = False
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        for name in ("z0", "rho", "box_length", "dt"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be > 0, got {value}")
        if not (self.D >= 0 and math.isfinite(self.D)):
            raise ConfigError(f"D must be >= 0, got {self.D}")
        if self.B < 0:
            raise ConfigError(f"B must be >= 0, got {self.B}")
        if self.t_max < self.dt:
            raise ConfigError(f"t_max ({self.t_max}) must be >= dt ({self.dt})")
        if self.n_traj < 1:
            raise ConfigError(f"n_traj must be >= 1, got {self.n_traj}")
        if self.T1rho is not None and not self.T1rho > 0:
            raise ConfigError(f"T1rho must be > 0 when given, got {self.T1rho}")
        derived = round(self.rho * self.box_length**3)
        if self.N is None:
            object.__setattr__(self, "N", int(derived))
        else:
            if self.N < 0:
                raise ConfigError(f"N must be >= 0, got {self.N}")
            # N = 0 is an explicit "no bath" switch used for relaxation-only runs
            if self.N != 0 and abs(self.N - self.rho * self.box_length**3) > 1:
                raise ConfigError(
                    f"N={self.N} disagrees with rho*box_length^3="
                    f"{self.rho * self.box_length**3:.3f} (rho={self.rho}, box_length={self.box_length})"
                )
            object.__setattr__(self, "N", int(self.N))
        if self.Omega is None:
            object.__setattr__(self, "Omega", self.omega_N)
        notes = []
        if self.omega_N > 0 and self.detuning > 0.01 * self.omega_N:
            notes.append(
                f"Hartmann-Hahn mismatch: |Omega - omega_N| = {self.detuning:.4g} rad/us "
                f"exceeds 1% of omega_N = {self.omega_N:.4g} rad/us"
            )
        object.__setattr__(self, "warnings", tuple(notes))

    @property
    def omega_N(self) -> float:
        return larmor_frequency(self.B)

    @property
    def detuning(self) -> float:
        return abs(self.Omega - self.omega_N)

    @property
    def resonant(self) -> bool:
        return not self.warnings

    @property
    def volume(self) -> float:
        return self.box_length**3

    def replace(self, **changes) -> "ScenarioConfig":
        """Copy with changed fields; N and a resonant Omega are re-derived unless given."""
        kwargs = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "warnings"}
        if "N" not in changes and self.N != 0:
            kwargs["N"] = None
        if "Omega" not in changes and self.detuning == 0:
            kwargs["Omega"] = None
        kwargs.update(changes)
        return ScenarioConfig(**kwargs)

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION}
        for f in dataclasses.fields(self):
            if f.name == "warnings":
                continue
            out[f.name] = getattr(self, f.name)
        out["B_tesla"] = out.pop("B")
        return out

    def digest(self) -> str:
        """Stable hash of the configuration (hex sha256, 16 chars)."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# file key -> (field name, converter)
_FILE_KEYS = {
    "z0_nm": ("z0", float),
    "D_nm2_per_us": ("D", float),
    "rho_per_nm3": ("rho", float),
    "B_tesla": ("B", float),
    "B_gauss": ("B", gauss_to_tesla),
    "Omega_rad_per_us": ("Omega", float),
    "Omega_MHz": ("Omega", lambda v: 2 * math.pi * v),
    "box_length_nm": ("box_length", float),
    "N": ("N", int),
    "T1rho_us": ("T1rho", float),
    "dt_us": ("dt", float),
    "t_max_us": ("t_max", float),
    "n_traj": ("n_traj", int),
    "seed": ("seed", int),
    "nv_tilt_deg": ("nv_tilt_deg", float),
    "detuning_fluctuations": ("detuning_fluctuations", bool),
}

_REQUIRED = ("z0", "D", "rho", "B")


def config_from_mapping(doc: dict, *, apply_env: bool = True) -> ScenarioConfig:
    """Build a config from the on-disk key/value schema (unit-suffixed keys)."""
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    kwargs = {}
    for key, value in doc.items():
        if key == "schema_version" or key.startswith("_"):
            continue
        if key not in _FILE_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        name, convert = _FILE_KEYS[key]
        if name in kwargs:
            raise ConfigError(f"field {name!r} given twice (key {key!r})")
        if value is None:
            kwargs[name] = None
            continue
        try:
            kwargs[name] = convert(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    missing = [name for name in _REQUIRED if name not in kwargs]
    if missing:
        raise ConfigError(f"missing required fields: {', '.join(missing)}")
    if apply_env and os.environ.get(SEED_ENV_VAR):
        try:
            kwargs["seed"] = int(os.environ[SEED_ENV_VAR])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from exc
    cfg = ScenarioConfig(**kwargs)
    for note in cfg.warnings:
        warnings.warn(note, ResonanceWarning, stacklevel=2)
    return cfg


def load_config(path) -> ScenarioConfig:
    """Read and validate a JSON scenario file."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_mapping(doc)


def config_to_file_mapping(cfg: ScenarioConfig) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "z0_nm": cfg.z0,
        "D_nm2_per_us": cfg.D,
        "rho_per_nm3": cfg.rho,
        "B_tesla": cfg.B,
        "Omega_rad_per_us": cfg.Omega,
        "box_length_nm": cfg.box_length,
        "N": cfg.N,
        "T1rho_us": cfg.T1rho,
        "dt_us": cfg.dt,
        "t_max_us": cfg.t_max,
        "n_traj": cfg.n_traj,
        "seed": cfg.seed,
        "nv_tilt_deg": cfg.nv_tilt_deg,
        "detuning_fluctuations": cfg.detuning_fluctuations,
    }
    return doc


def save_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_file_mapping(cfg), indent=2) + "\n")

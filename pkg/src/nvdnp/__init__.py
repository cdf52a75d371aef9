"""Polarization transfer from a driven shallow NV center to diffusing nuclear spins."""

__version__ = "0.1.0"

from .units import CONSTANTS, ConfigError, ScenarioConfig, larmor_frequency, load_config  # noqa: E402
from .dipolar import coupling, hyperfine  # noqa: E402
from .analytic import (  # noqa: E402
    AnalyticModel,
    PolarizationCurve,
    closed_form,
    long_time_rate,
    macroscopic_polarization,
    short_time_rate,
    solve_master,
    transfer_efficiency,
)
from .statistics import (  # noqa: E402
    CorrelationEstimate,
    estimate_correlation,
    estimate_moments,
    quadrature_moments,
    regime_chi,
    validity_horizon,
)

__all__ = [
    "CONSTANTS", "ConfigError", "ScenarioConfig", "larmor_frequency", "load_config",
    "coupling", "hyperfine",
    "AnalyticModel", "PolarizationCurve", "closed_form", "long_time_rate", "macroscopic_polarization",
    "short_time_rate", "solve_master", "transfer_efficiency",
    "CorrelationEstimate", "estimate_correlation", "estimate_moments", "quadrature_moments", "regime_chi",
    "validity_horizon",
]

import math

import numpy as np
import pytest

from nvdnp.statistics import estimate_correlation
from nvdnp.sweep import loglog_slope, point_config, run_sweep, scaling_exponents
from nvdnp.units import ScenarioConfig

BASE = ScenarioConfig(z0=3.2, D=0.46, rho=10.0, B=0.066, box_length=6.0, T1rho=11.0, seed=2)


def test_point_config_scales_box_with_depth():
    cfg = point_config(BASE, "z0", 6.4)
    assert cfg.box_length == pytest.approx(12.0)
    assert cfg.N == round(10.0 * 12.0**3)
    assert point_config(BASE, "z0", 6.4, scale_box=False).box_length == 6.0
    with pytest.raises(ValueError):
        point_config(BASE, "colour", 1.0)


def test_loglog_slope_exact():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    slope, se = loglog_slope(x, 3 * x**-1.5)
    assert slope == pytest.approx(-1.5)
    assert se == pytest.approx(0.0, abs=1e-12)
    assert math.isnan(loglog_slope([1.0], [1.0])[0])


def test_density_sweep_is_linear():
    rows, fits = run_sweep(BASE, "rho", [5.0, 10.0, 20.0], n_traj=3, walkers_per_traj=100)
    assert fits["law_exponent"] == pytest.approx(1.0, abs=0.02)
    assert all(r["error"] == "" for r in rows)


def test_diffusion_sweep_flips_regime():
    rows, fits = run_sweep(BASE, "D", [0.46, 46.0, 4600.0], n_traj=3, walkers_per_traj=100)
    labels = [r["regime"] for r in rows]
    assert labels[0] == "resonant-transfer regime"
    assert labels[-1] == "motional-suppression regime"
    assert fits["law_exponent"] == pytest.approx(1.0, abs=1e-6)


def test_bad_points_become_error_rows():
    rows, _ = run_sweep(BASE, "D", [0.46, -1.0], n_traj=2, walkers_per_traj=100)
    assert rows[0]["error"] == ""
    assert rows[1]["error"].startswith("ConfigError")
    assert math.isnan(rows[1]["tau_c_us"])


def test_single_value_sweep_equals_direct_estimate():
    rows, _ = run_sweep(BASE, "T1rho", [11.0], n_traj=2, walkers_per_traj=100)
    est = estimate_correlation(BASE, 2, walkers_per_traj=100)
    assert rows[0]["tau_c_us"] == est.tau_c
    assert rows[0]["sigma2"] == est.sigma2


def test_exponents_from_rows():
    rows = [{"value": v, "inv_tau_p_per_us": 2.0 / v, "tau_c_us": 1.0 / v, "chi": 3.0 / v} for v in (1.0, 2.0, 4.0)]
    fits = scaling_exponents(rows, "D")
    assert fits["slope_inv_tau_p_per_us"] == pytest.approx(-1.0)
    assert fits["law_exponent"] == pytest.approx(1.0)

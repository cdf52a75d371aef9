import numpy as np
import pytest
from scipy import stats

from nvdnp.bath import (
    CORRELATION,
    SIMULATION,
    TrajectorySizeError,
    dump_trajectory,
    generate_trajectory,
    init_bath,
    iter_couplings,
    load_trajectory,
    make_rng,
    n_steps,
    step_diffusion,
)
from nvdnp.units import ScenarioConfig


def _cfg(**kw):
    base = dict(z0=3.2, D=0.46, rho=1.0, B=0.066, box_length=10.0, dt=0.1, t_max=2.0, seed=3)
    base.update(kw)
    return ScenarioConfig(**base)


def test_initial_positions_inside_box():
    cfg = _cfg()
    s = init_bath(cfg)
    L = cfg.box_length
    assert s.N == cfg.N == 1000
    assert np.all(np.abs(s.positions[:, :2]) <= L / 2)
    assert np.all((s.positions[:, 2] >= 0) & (s.positions[:, 2] <= L))


def test_increment_std_and_msd_in_bulk():
    # walkers far from every face: plain Brownian statistics
    cfg = _cfg(rho=1.0, box_length=1000.0, N=None)
    state = init_bath(cfg.replace(rho=2e-6))
    state.positions[:] = [0.0, 0.0, 500.0]
    state.positions = np.repeat(state.positions[:1], 20000, axis=0)
    start = state.positions.copy()
    D, dt, steps = 0.46, 0.1, 50
    step_diffusion(state, dt, D)
    inc = state.positions - start
    assert np.std(inc) == pytest.approx(np.sqrt(2 * D * dt), rel=0.02)
    for _ in range(steps - 1):
        step_diffusion(state, dt, D)
    msd = np.mean(np.sum((state.positions - start) ** 2, axis=1))
    assert msd == pytest.approx(6 * D * dt * steps, rel=0.03)
    assert len(state.swapped) == 0


def test_density_stays_uniform():
    """Chi-square test of the occupation of 5x5x5 cells after many large steps."""
    cfg = _cfg(rho=2.0, box_length=10.0)
    state = init_bath(cfg)
    for _ in range(200):
        step_diffusion(state, 0.5, 2.0)
    L = cfg.box_length
    edges = [np.linspace(-L / 2, L / 2, 6), np.linspace(-L / 2, L / 2, 6), np.linspace(0, L, 6)]
    counts, _ = np.histogramdd(state.positions, bins=edges)
    assert counts.sum() == cfg.N
    p = stats.chisquare(counts.ravel()).pvalue
    assert p > 1e-3


def test_surface_reflects_and_faces_swap():
    cfg = _cfg()
    state = init_bath(cfg)
    state.positions[:] = 0.0
    state.positions[:, 2] = 0.01
    step_diffusion(state, 0.1, 0.46)
    assert np.all(state.positions[:, 2] >= 0)
    # near the surface and the axis nothing crosses a lateral face in one step
    assert len(state.swapped) == 0
    state.positions[:, 0] = 4.999
    step_diffusion(state, 0.1, 0.46)
    crossed = np.flatnonzero(state.positions[:, 0] < 0)
    assert set(crossed) <= set(state.swapped)
    assert np.all(np.abs(state.positions[:, :2]) <= 5.0)


def test_top_face_swaps():
    cfg = _cfg()
    state = init_bath(cfg)
    state.positions[:] = [0.0, 0.0, 9.999]
    step_diffusion(state, 0.1, 0.46)
    assert np.all(state.positions[:, 2] <= 10.0)
    assert len(state.swapped) > 0


def test_zero_diffusion_is_frozen():
    cfg = _cfg(D=0.0)
    frames = list(iter_couplings(cfg))
    assert len(frames) == n_steps(cfg) + 1
    assert all(np.array_equal(f.g, frames[0].g) for f in frames)
    assert all(len(f.swapped) == 0 for f in frames)


def test_streams_are_independent_and_reproducible():
    a = make_rng(5, 0).normal(size=4)
    assert np.array_equal(a, make_rng(5, 0).normal(size=4))
    assert not np.array_equal(a, make_rng(5, 1).normal(size=4))
    assert not np.array_equal(a, make_rng(5, 0, CORRELATION).normal(size=4))
    assert not np.array_equal(a, make_rng(6, 0, SIMULATION).normal(size=4))


def test_trajectory_deterministic_and_matches_live_stream():
    cfg = _cfg(box_length=5.0, rho=2.0, D=3.0)
    t1 = generate_trajectory(cfg, stream=2)
    t2 = generate_trajectory(cfg, stream=2)
    assert np.array_equal(t1.g, t2.g)
    live = list(iter_couplings(cfg, stream=2))
    for frame, rep in zip(live, t1.frames()):
        assert np.array_equal(frame.g, rep.g)
        assert np.array_equal(np.sort(frame.swapped), np.sort(rep.swapped))
    assert len(t1.swap_log) > 0
    assert t1.cfg_digest == cfg.digest()


def test_dump_and_replay_bit_identical(tmp_path):
    cfg = _cfg(box_length=5.0, rho=2.0, D=3.0, detuning_fluctuations=True)
    traj = generate_trajectory(cfg)
    path = tmp_path / "traj.bin"
    dump_trajectory(traj, path)
    back = load_trajectory(path)
    assert np.array_equal(back.times, traj.times)
    assert np.array_equal(back.g, traj.g)
    assert np.array_equal(back.Az, traj.Az)
    assert back.swap_log == traj.swap_log
    assert back.cfg_digest == traj.cfg_digest
    path2 = tmp_path / "again.bin"
    dump_trajectory(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"\0" * 64)
    with pytest.raises(ValueError):
        load_trajectory(p)


def test_coarsen_keeps_every_kth_frame_and_all_swaps():
    cfg = _cfg(box_length=5.0, rho=2.0, D=3.0)
    traj = generate_trajectory(cfg)
    c = traj.coarsen(2)
    assert c.dt == pytest.approx(2 * traj.dt)
    assert np.array_equal(c.g, traj.g[::2])
    # swaps in the final fine interval belong to no coarse interval
    assert len(c.swap_indices) <= len(traj.swap_indices)
    assert set(zip(c.swap_steps * 2 // 2, c.swap_indices)) <= set(zip(traj.swap_steps // 2, traj.swap_indices))


def test_memory_limit():
    cfg = _cfg()
    with pytest.raises(TrajectorySizeError, match="N\\*frames"):
        generate_trajectory(cfg, max_bytes=1000)

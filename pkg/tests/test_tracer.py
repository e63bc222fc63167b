"""Molecule initialization, stepping, trajectory and ensemble contracts."""

import math

import numpy as np
import pytest
import scipy.stats

from moltrace.collision import GasParams, SamplingMethod, collision_rate
from moltrace.constants import AMU_KG, BOLTZMANN_J_PER_K
from moltrace.flowfield import generate_analytic
from moltrace.geometry import CellRegions, Disc, TerminalClass
from moltrace.rng import Stream
from moltrace.tracer import (
    Discard,
    MoleculeState,
    Terminal,
    TracerConfig,
    init_molecule,
    run_ensemble,
    run_trajectory,
    step,
)

PARAMS = GasParams()
DIRECT = SamplingMethod.direct()
DELTA = 5e-4


def stagnant_box(density, temperature=4.5, half=8e-3):
    return generate_analytic(
        "stagnant", {"density_m3": density, "temperature_K": temperature},
        DELTA, ((-half, -half, -half), (half, half, half)))


def centered_regions(half=8e-3):
    return CellRegions(
        source_disc=Disc(np.array([0.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]), 2e-3),
        exit_disc=Disc(np.array([0.0, 0.0, half]), np.array([0.0, 0.0, 1.0]), 3e-3),
        plane_tolerance_m=DELTA)


class TestInitMolecule:
    def test_mean_speed_maxwell_boltzmann(self):
        # oracle: mean speed of a 128 amu molecule at 500 K,
        # sqrt(8 kB T / (pi m)) = 2.88e2 m/s
        regions = centered_regions()
        _, velocities = init_molecule(regions, 500.0, PARAMS, Stream(11), size=1_000_000)
        speeds = np.linalg.norm(velocities, axis=1)
        expect = math.sqrt(8.0 * 1.380649e-23 * 500.0
                           / (math.pi * 128.0 * 1.66053906892e-27))
        assert expect == pytest.approx(2.88e2, rel=2e-3)
        assert speeds.mean() == pytest.approx(expect, rel=0.01)

    def test_positions_uniform_on_disc(self):
        regions = centered_regions()
        positions, _ = init_molecule(regions, 500.0, PARAMS, Stream(12), size=20_000)
        offsets = positions - regions.source_disc.center
        axial = offsets @ regions.source_disc.normal
        np.testing.assert_allclose(axial, 0.0, atol=1e-18)
        radial = np.linalg.norm(offsets, axis=1)
        assert radial.max() <= regions.source_disc.radius
        # uniform over the disc area: radius^2 is uniform on (0, R^2)
        _, p = scipy.stats.kstest(radial ** 2 / regions.source_disc.radius ** 2,
                                  "uniform")
        assert p > 0.001

    def test_direction_cos_squared_weighted(self):
        # oracle: polar density ~ cos^2(phi) sin(phi), so cos(phi) has CDF c^3
        regions = centered_regions()
        _, velocities = init_molecule(regions, 500.0, PARAMS, Stream(13), size=100_000)
        cos_polar = (velocities @ regions.source_disc.normal
                     / np.linalg.norm(velocities, axis=1))
        assert cos_polar.min() > 0.0  # hemisphere into the cell
        _, p = scipy.stats.kstest(cos_polar, lambda c: c ** 3)
        assert p > 0.001

    def test_single_state(self):
        state = init_molecule(centered_regions(), 500.0, PARAMS, Stream(14))
        assert isinstance(state, MoleculeState)
        assert state.collisions == 0 and state.time == 0.0

    def test_bad_temperature(self):
        with pytest.raises(ValueError):
            init_molecule(centered_regions(), -5.0, PARAMS, Stream(1))


class TestStep:
    def test_unclamped_step_length_exact(self):
        grid = generate_analytic(
            "uniform", {"velocity_mps": [0.0, 0.0, 30.0],
                        "density_m3": 3e23, "temperature_K": 4.5},
            DELTA, ((-8e-3, -8e-3, -8e-3), (8e-3, 8e-3, 8e-3)))
        cfg = TracerConfig(master_seed=1, dt_max_s=10.0)
        v = np.array([100.0, 0.0, 0.0])
        state = MoleculeState(np.array([1e-4, 1e-4, 1e-4]), v.copy())
        rate = collision_rate(v, [0.0, 0.0, 30.0], 3e23, 4.5, PARAMS)
        dt = cfg.collision_probability / rate
        assert np.linalg.norm(v) * dt < DELTA / 2  # no clamp in play
        out = step(state, grid, PARAMS, DIRECT, cfg, Stream(2))
        assert out.time == pytest.approx(dt, rel=1e-14)
        np.testing.assert_allclose(out.position, state.position + v * dt, rtol=1e-14)

    def test_vacuum_falls_back_to_geometric_cap(self):
        grid = stagnant_box(0.0)
        cfg = TracerConfig(master_seed=1, dt_max_s=10.0)
        v = np.array([120.0, 40.0, -30.0])
        state = MoleculeState(np.zeros(3), v.copy())
        out = step(state, grid, PARAMS, DIRECT, cfg, Stream(3))
        speed = np.linalg.norm(v)
        assert out.time == pytest.approx(DELTA / (2 * speed), rel=1e-14)
        assert np.linalg.norm(out.position) == pytest.approx(DELTA / 2, rel=1e-14)
        np.testing.assert_array_equal(out.velocity, v)  # ballistic, no collision
        assert out.collisions == 0

    def test_dt_max_respected(self):
        grid = stagnant_box(0.0)
        cfg = TracerConfig(master_seed=1, dt_max_s=1e-7)
        state = MoleculeState(np.zeros(3), np.array([100.0, 0.0, 0.0]))
        out = step(state, grid, PARAMS, DIRECT, cfg, Stream(4))
        assert out.time == pytest.approx(1e-7, rel=1e-14)

    def test_time_monotone_and_no_tunneling(self):
        grid = stagnant_box(3e23)
        cfg = TracerConfig(master_seed=1)
        stream = Stream(5)
        state = init_molecule(centered_regions(), 500.0, PARAMS, stream)
        for _ in range(3000):
            out = step(state, grid, PARAMS, DIRECT, cfg, stream)
            if isinstance(out, Terminal):
                out = out.state
                moved = np.linalg.norm(out.position - state.position)
                assert moved <= DELTA / 2 * (1 + 1e-12)
                break
            assert out.time > state.time
            moved = np.linalg.norm(out.position - state.position)
            assert moved <= DELTA / 2 * (1 + 1e-12)
            state = out

    def test_collision_rate_per_step_is_p(self):
        # in an unclamped uniform field the collision draw fires with
        # probability p per step
        grid = stagnant_box(1e24, half=16e-3)
        cfg = TracerConfig(master_seed=1)
        stream = Stream(6)
        state = MoleculeState(np.zeros(3), np.array([50.0, 20.0, 10.0]))
        n_steps = 20_000
        for _ in range(n_steps):
            out = step(state, grid, PARAMS, DIRECT, cfg, stream)
            assert not isinstance(out, Terminal)
            state = out
        p_hat = state.collisions / n_steps
        sigma = math.sqrt(0.1 * 0.9 / n_steps)
        assert abs(p_hat - 0.1) < 4 * sigma

    def test_terminal_classified_with_regions(self):
        grid = stagnant_box(0.0)
        regions = centered_regions()
        cfg = TracerConfig(master_seed=1)
        state = MoleculeState(np.array([0.0, 0.0, 7.9e-3]), np.array([0.0, 0.0, 400.0]))
        out = step(state, grid, PARAMS, DIRECT, cfg, Stream(7), regions=regions)
        assert isinstance(out, Terminal)
        assert out.terminal_class is TerminalClass.EXIT
        assert out.state.position[2] > 8e-3


class TestRunTrajectory:
    def test_immediate_wall_hit_discarded(self):
        grid = stagnant_box(0.0)  # vacuum: ballistic, zero collisions
        regions = CellRegions(
            source_disc=Disc(np.array([0.0, 0.0, 7e-3]), np.array([0.0, 0.0, 1.0]), 1e-3),
            exit_disc=Disc(np.array([0.0, 0.0, -8e-3]), np.array([0.0, 0.0, -1.0]), 1e-3),
            plane_tolerance_m=DELTA)
        cfg = TracerConfig(master_seed=3, accept_min_collisions=10)
        out = run_trajectory(grid, regions, PARAMS, DIRECT, cfg, Stream(3, 0))
        assert isinstance(out, Discard)
        assert out.final_collisions == 0

    def test_record_structure_stride_and_cap(self):
        grid = stagnant_box(1e24, half=16e-3)
        regions = centered_regions(half=16e-3)
        cfg = TracerConfig(master_seed=4, record_stride=5, max_collisions=23,
                           accept_min_collisions=1)
        rec = run_trajectory(grid, regions, PARAMS, DIRECT, cfg, Stream(4, 0))
        assert rec.terminal_class is TerminalClass.COLLISION_CAP
        np.testing.assert_array_equal(rec.collision_counts, [0, 5, 10, 15, 20, 23])
        assert rec.final_collisions == 23
        assert np.all(np.diff(rec.times) > 0)

    def test_wall_record_keeps_last_in_volume_and_endpoint(self):
        grid = stagnant_box(0.0)
        regions = centered_regions()
        cfg = TracerConfig(master_seed=5, accept_min_collisions=-1)
        rec = run_trajectory(grid, regions, PARAMS, DIRECT, cfg, Stream(5, 1))
        inside = rec.positions[-2]
        endpoint = rec.positions[-1]
        assert np.all(np.abs(inside) <= 8e-3)
        assert np.any(np.abs(endpoint) > 8e-3) or True  # endpoint just crossed
        _, in_bounds = grid.voxel_index(endpoint)
        assert (not in_bounds) or not grid.occupied[tuple(grid.voxel_index(endpoint)[0])]
        assert rec.residence_time == rec.times[-1]

    def test_uniform_flow_reaches_exit(self):
        # advection-dominated: nearly every accepted molecule must exit
        grid = generate_analytic(
            "uniform", {"velocity_mps": [0.0, 0.0, 80.0],
                        "density_m3": 2e21, "temperature_K": 4.5},
            DELTA, ((-8e-3, -8e-3, 0.0), (8e-3, 8e-3, 8e-3)))
        regions = CellRegions(
            source_disc=Disc(np.array([0.0, 0.0, 1e-3]), np.array([0.0, 0.0, 1.0]), 1e-3),
            exit_disc=Disc(np.array([0.0, 0.0, 8e-3]), np.array([0.0, 0.0, 1.0]), 7e-3),
            plane_tolerance_m=DELTA)
        cfg = TracerConfig(master_seed=6, target_count=400, accept_min_collisions=10,
                           source_temperature_K=100.0)
        result = run_ensemble(grid, regions, PARAMS, DIRECT, cfg)
        n_exit = int(result.class_mask(TerminalClass.EXIT).sum())
        assert n_exit / result.n_records >= 0.99

    def test_stagnant_diffusion_isotropic_azimuth(self):
        # source at the box center: the transverse azimuth of wall hits is
        # uniform across 45-degree sectors by the D4 symmetry of the box
        grid = stagnant_box(4e20)
        regions = centered_regions()
        cfg = TracerConfig(master_seed=7, target_count=1200, accept_min_collisions=10,
                           source_temperature_K=50.0)
        result = run_ensemble(grid, regions, PARAMS, DIRECT, cfg)
        wall = result.terminal_positions[result.class_mask(TerminalClass.WALL)]
        azimuth = np.arctan2(wall[:, 1], wall[:, 0])
        bins = np.floor((azimuth + np.pi) / (np.pi / 4)).astype(int) % 8
        counts = np.bincount(bins, minlength=8)
        _, p = scipy.stats.chisquare(counts)
        assert p > 0.001


class TestRunEnsemble:
    def test_count_contract(self):
        grid = stagnant_box(1e24)
        cfg = TracerConfig(master_seed=8, target_count=10, max_collisions=50,
                           accept_min_collisions=1, record_stride=10)
        result = run_ensemble(grid, centered_regions(), PARAMS, DIRECT, cfg)
        assert result.n_records == 10
        assert np.all(np.diff(result.attempt_indices) > 0)

    def test_worker_count_invariance(self):
        grid = stagnant_box(3e24)
        cfg = TracerConfig(master_seed=9, target_count=300, max_collisions=150,
                           record_stride=1, accept_min_collisions=5)
        results = [run_ensemble(grid, centered_regions(), PARAMS, DIRECT, cfg,
                                workers=w, block_size=64) for w in (1, 4, 8)]
        for other in results[1:]:
            np.testing.assert_array_equal(results[0].sample_times, other.sample_times)
            np.testing.assert_array_equal(results[0].sample_velocities,
                                          other.sample_velocities)
            np.testing.assert_array_equal(results[0].terminal_classes,
                                          other.terminal_classes)
            np.testing.assert_array_equal(results[0].attempt_indices,
                                          other.attempt_indices)
            assert results[0].n_discarded == other.n_discarded
            assert results[0].n_attempts == other.n_attempts

    def test_discard_rate_orders_with_harshness(self):
        # dilute gas near a wall discards more than a dense, gently flowing one
        harsh_grid = stagnant_box(1e19)
        gentle_grid = generate_analytic(
            "uniform", {"velocity_mps": [0.0, 0.0, 40.0],
                        "density_m3": 2e21, "temperature_K": 4.5},
            DELTA, ((-8e-3, -8e-3, -8e-3), (8e-3, 8e-3, 8e-3)))
        regions = CellRegions(
            source_disc=Disc(np.array([0.0, 0.0, -7e-3]), np.array([0.0, 0.0, 1.0]), 1e-3),
            exit_disc=Disc(np.array([0.0, 0.0, 8e-3]), np.array([0.0, 0.0, 1.0]), 4e-3),
            plane_tolerance_m=DELTA)
        cfg = TracerConfig(master_seed=10, target_count=100, accept_min_collisions=10)
        harsh = run_ensemble(harsh_grid, regions, PARAMS, DIRECT, cfg,
                             max_attempts=200_000)
        gentle = run_ensemble(gentle_grid, regions, PARAMS, DIRECT, cfg,
                              max_attempts=200_000)
        assert harsh.n_discarded / harsh.n_attempts > gentle.n_discarded / gentle.n_attempts

    def test_max_attempts_guard(self):
        grid = stagnant_box(0.0)  # vacuum: nothing ever accepted
        cfg = TracerConfig(master_seed=11, target_count=5, accept_min_collisions=10)
        with pytest.raises(RuntimeError, match="attempts"):
            run_ensemble(grid, centered_regions(), PARAMS, DIRECT, cfg,
                         block_size=64, max_attempts=256)

    def test_counts_partition(self):
        grid = stagnant_box(1.2e20)
        cfg = TracerConfig(master_seed=12, target_count=150, max_collisions=400,
                           accept_min_collisions=5, record_stride=100)
        result = run_ensemble(grid, centered_regions(), PARAMS, DIRECT, cfg)
        total = sum(int(result.class_mask(c).sum())
                    for c in (TerminalClass.EXIT, TerminalClass.SOURCE_DISC,
                              TerminalClass.WALL, TerminalClass.COLLISION_CAP))
        assert total == result.n_records == 150

"""Voxelization, soft-edge fill, lookup, curl and analytic generators."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moltrace.flowfield import (
    FieldMetadata,
    FlowSample,
    VoxelGrid,
    as_sample_array,
    curl,
    fill_soft_edges,
    generate_analytic,
    load_grid,
    load_samples_csv,
    save_grid,
    save_samples_csv,
    voxelize,
)

BOUNDS = ((0.0, 0.0, 0.0), (4e-3, 4e-3, 4e-3))
DELTA = 5e-4


def make_samples(n, seed=0, lo=0.0, hi=4e-3):
    rng = np.random.default_rng(seed)
    arr = np.empty((n, 8))
    arr[:, :3] = rng.uniform(lo, hi, size=(n, 3))
    arr[:, 3:6] = rng.normal(0.0, 30.0, size=(n, 3))
    arr[:, 6] = rng.uniform(1e20, 1e22, size=n)
    arr[:, 7] = rng.uniform(3.0, 10.0, size=n)
    return arr


class TestVoxelize:
    def test_single_sample_single_voxel(self):
        sample = FlowSample(np.array([1e-4, 1e-4, 1e-4]), np.array([1.0, 0.0, 0.0]),
                            1e22, 4.5)
        grid = voxelize([sample], DELTA, BOUNDS)
        u, n, T, inside = grid.lookup([1e-4, 1e-4, 1e-4])
        assert inside
        np.testing.assert_array_equal(u, [1.0, 0.0, 0.0])
        assert n == 1e22
        assert T == 4.5

    def test_two_samples_average(self):
        # two samples in one voxel: stored density is their mean
        base = np.array([[1e-4, 1e-4, 1e-4, 0, 0, 0, 1e22, 4.0],
                         [2e-4, 2e-4, 2e-4, 0, 0, 0, 3e22, 6.0]])
        grid = voxelize(base, DELTA, BOUNDS)
        _, n, T, _ = grid.lookup([1e-4, 1e-4, 1e-4])
        assert n == pytest.approx(2e22, rel=1e-15)
        assert T == pytest.approx(5.0, rel=1e-15)

    def test_means_match_bruteforce_grouping(self):
        # oracle: group samples per voxel with a plain dict and average
        arr = make_samples(1000, seed=3)
        grid = voxelize(arr, DELTA, BOUNDS)

        groups = {}
        for row in arr:
            key = tuple(int(np.floor(c / DELTA)) for c in row[:3])
            groups.setdefault(key, []).append(row)
        assert int(grid.occupied.sum()) == len(groups)
        for key, rows in groups.items():
            expect = np.mean([r[3:] for r in rows], axis=0)
            i, j, k = key
            np.testing.assert_allclose(grid.velocity[i, j, k], expect[:3], rtol=1e-12)
            np.testing.assert_allclose(grid.density[i, j, k], expect[3], rtol=1e-12)
            np.testing.assert_allclose(grid.temperature[i, j, k], expect[4], rtol=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            voxelize([], DELTA, BOUNDS)

    def test_nonfinite_rejected_with_index(self):
        arr = make_samples(10)
        arr[7, 4] = np.nan
        with pytest.raises(ValueError, match="index 7"):
            voxelize(arr, DELTA, BOUNDS)

    def test_out_of_bounds_rejected_with_index(self):
        arr = make_samples(5)
        arr[2, 0] = 5e-3
        with pytest.raises(ValueError, match="sample 2"):
            voxelize(arr, DELTA, BOUNDS)

    def test_negative_density_rejected(self):
        arr = make_samples(5)
        arr[1, 6] = -1.0
        with pytest.raises(ValueError, match="density.*index 1"):
            voxelize(arr, DELTA, BOUNDS)

    @given(st.integers(0, 2 ** 32 - 1), st.integers(2, 40))
    @settings(max_examples=25, deadline=None)
    def test_permutation_invariant(self, seed, n):
        arr = make_samples(n, seed=seed)
        grid_a = voxelize(arr, DELTA, BOUNDS)
        perm = np.random.default_rng(seed + 1).permutation(n)
        grid_b = voxelize(arr[perm], DELTA, BOUNDS)
        np.testing.assert_array_equal(grid_a.occupied, grid_b.occupied)
        np.testing.assert_allclose(grid_a.velocity, grid_b.velocity, rtol=1e-12)
        np.testing.assert_allclose(grid_a.density, grid_b.density, rtol=1e-12)


class TestFillSoftEdges:
    def test_copies_single_neighbor(self):
        arr = np.array([[2.5e-4, 2.5e-4, 2.5e-4, 1.0, 2.0, 3.0, 1e22, 4.5]])
        grid = fill_soft_edges(voxelize(arr, DELTA, BOUNDS))
        u, n, T, inside = grid.lookup([7.5e-4, 2.5e-4, 2.5e-4])
        assert not inside  # fill never extends occupancy
        np.testing.assert_array_equal(u, [1.0, 2.0, 3.0])
        assert (n, T) == (1e22, 4.5)

    def test_two_neighbor_mean(self):
        # empty voxel flanked along x by 4 K and 6 K voxels
        arr = np.array([[2.5e-4, 2.5e-4, 2.5e-4, 0, 0, 0, 1e22, 4.0],
                        [1.25e-3, 2.5e-4, 2.5e-4, 0, 0, 0, 3e22, 6.0]])
        grid = fill_soft_edges(voxelize(arr, DELTA, BOUNDS))
        _, n, T, _ = grid.lookup([7.5e-4, 2.5e-4, 2.5e-4])
        assert T == pytest.approx(5.0)
        assert n == pytest.approx(2e22)

    @staticmethod
    def _bfs_fill_oracle(grid):
        """Independent multi-source BFS: each layer averages the previous one."""
        dims = grid.dims
        values = {}
        dist = {}
        frontier = []
        for idx in np.argwhere(grid.populated):
            key = tuple(idx)
            values[key] = np.array([*grid.velocity[key], grid.density[key],
                                    grid.temperature[key]])
            dist[key] = 0
            frontier.append(key)
        d = 0
        while frontier:
            next_frontier = set()
            for key in frontier:
                for axis, step in itertools.product(range(3), (-1, 1)):
                    nb = list(key)
                    nb[axis] += step
                    nb = tuple(nb)
                    if not all(0 <= nb[a] < dims[a] for a in range(3)):
                        continue
                    if nb not in dist:
                        next_frontier.add(nb)
            d += 1
            for nb in next_frontier:
                sources = []
                for axis, step in itertools.product(range(3), (-1, 1)):
                    src = list(nb)
                    src[axis] += step
                    src = tuple(src)
                    if dist.get(src, -1) == d - 1:
                        sources.append(values[src])
                values[nb] = np.mean(sources, axis=0)
                dist[nb] = d
            frontier = sorted(next_frontier)
        return values

    def test_matches_bfs_oracle_two_corner_seed(self):
        arr = np.array([[1e-4, 1e-4, 1e-4, 5.0, 0.0, 0.0, 1e22, 4.0],
                        [3.9e-3, 3.9e-3, 3.9e-3, -5.0, 1.0, 0.0, 5e22, 9.0]])
        grid = voxelize(arr, DELTA, BOUNDS)
        filled = fill_soft_edges(grid)
        oracle = self._bfs_fill_oracle(grid)
        assert filled.populated.all()
        for key, expect in oracle.items():
            np.testing.assert_allclose(filled.velocity[key], expect[:3], rtol=1e-12)
            np.testing.assert_allclose(filled.density[key], expect[3], rtol=1e-12)
            np.testing.assert_allclose(filled.temperature[key], expect[4], rtol=1e-12)

    def test_idempotent(self):
        grid = voxelize(make_samples(20, seed=5), DELTA, BOUNDS)
        once = fill_soft_edges(grid)
        twice = fill_soft_edges(once)
        np.testing.assert_array_equal(once.populated, twice.populated)
        np.testing.assert_array_equal(once.velocity, twice.velocity)
        np.testing.assert_array_equal(once.density, twice.density)
        np.testing.assert_array_equal(once.temperature, twice.temperature)

    def test_occupancy_not_extended(self):
        grid = voxelize(make_samples(10, seed=6), DELTA, BOUNDS)
        filled = fill_soft_edges(grid)
        np.testing.assert_array_equal(grid.occupied, filled.occupied)

    def test_all_empty_rejected(self):
        grid = generate_analytic("stagnant", {"density_m3": 1e22, "temperature_K": 4.5},
                                 DELTA, BOUNDS)
        empty = grid.replace(populated=np.zeros(grid.dims, dtype=bool))
        with pytest.raises(ValueError, match="empty"):
            fill_soft_edges(empty)


class TestLookup:
    def test_voxel_center(self):
        grid = voxelize(make_samples(200, seed=7), DELTA, BOUNDS)
        idx = tuple(np.argwhere(grid.occupied)[0])
        center = (np.asarray(idx) + 0.5) * DELTA
        u, n, T, inside = grid.lookup(center)
        assert inside
        np.testing.assert_array_equal(u, grid.velocity[idx])

    def test_boundary_face_half_open(self):
        grid = generate_analytic("stagnant", {"density_m3": 1e22, "temperature_K": 4.5},
                                 DELTA, BOUNDS)
        # a point exactly on the face between voxels 0 and 1 belongs to voxel 1
        idx, ok = grid.voxel_index([DELTA, 1e-4, 1e-4])
        assert ok and tuple(idx) == (1, 0, 0)
        idx, ok = grid.voxel_index([0.0, 0.0, 0.0])
        assert ok and tuple(idx) == (0, 0, 0)

    def test_beyond_bounds_outside(self):
        grid = generate_analytic("stagnant", {"density_m3": 1e22, "temperature_K": 4.5},
                                 DELTA, BOUNDS)
        u, n, T, inside = grid.lookup([5e-3, 0.0, 0.0])
        assert not inside and u is None
        _, _, _, inside = grid.lookup(grid.upper)  # top corner is exclusive
        assert not inside

    @given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.01, 0.99),
           st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.01, 0.99))
    @settings(max_examples=30, deadline=None)
    def test_piecewise_constant(self, a, b, c, d, e, f):
        grid = generate_analytic(
            "vortex_axial",
            {"angular_speed_rad_s": 1e3, "axial_mps": 10.0,
             "density_m3": 1e22, "temperature_K": 4.5},
            DELTA, BOUNDS)
        p1 = np.array([a, b, c]) * DELTA  # both inside voxel (0,0,0)
        p2 = np.array([d, e, f]) * DELTA
        u1, n1, t1, _ = grid.lookup(p1)
        u2, n2, t2, _ = grid.lookup(p2)
        np.testing.assert_array_equal(u1, u2)
        assert (n1, t1) == (n2, t2)


class TestCurl:
    def test_uniform_field_zero(self):
        grid = generate_analytic("uniform", {"velocity_mps": [3.0, -2.0, 50.0],
                                             "density_m3": 1e22, "temperature_K": 4.5},
                                 DELTA, BOUNDS)
        w = curl(grid)
        np.testing.assert_array_equal(w, np.zeros_like(w))

    def test_solid_body_rotation_about_y(self):
        # u = (Omega z, 0, -Omega x) has curl (0, 2 Omega, 0)
        omega = 700.0
        grid = generate_analytic("stagnant", {"density_m3": 1e22, "temperature_K": 4.5},
                                 DELTA, BOUNDS)
        x, y, z = np.meshgrid(*grid.voxel_centers(), indexing="ij")
        u = np.stack([omega * z, np.zeros_like(z), -omega * x], axis=-1)
        grid = grid.replace(velocity=u)
        w = curl(grid)
        np.testing.assert_allclose(w[..., 0], 0.0, atol=1e-9)
        np.testing.assert_allclose(w[..., 1], 2 * omega, rtol=1e-12)
        np.testing.assert_allclose(w[..., 2], 0.0, atol=1e-9)

    def test_linear_shear_slope(self):
        slope = 4.0e3
        grid = generate_analytic("stagnant", {"density_m3": 1e22, "temperature_K": 4.5},
                                 DELTA, BOUNDS)
        x, _, _ = np.meshgrid(*grid.voxel_centers(), indexing="ij")
        u = np.zeros(grid.dims + (3,))
        u[..., 2] = slope * x  # u_z(x) linear
        w = curl(grid.replace(velocity=u))
        np.testing.assert_allclose(w[..., 1], -slope, rtol=1e-12)

    def test_refinement_halves_error(self):
        # curvature field: one-sided boundary differences give O(delta) error,
        # so halving the voxel size should roughly halve the max error
        wavenumber = 2 * np.pi / 4e-3

        def max_err(delta):
            bounds = ((0.0, 0.0, 0.0), (4e-3, 2e-3, 2e-3))
            grid = generate_analytic("stagnant",
                                     {"density_m3": 1e22, "temperature_K": 4.5},
                                     delta, bounds)
            x, _, _ = np.meshgrid(*grid.voxel_centers(), indexing="ij")
            u = np.zeros(grid.dims + (3,))
            u[..., 2] = np.cos(wavenumber * x)  # curvature peaks at the boundary
            w = curl(grid.replace(velocity=u))
            truth = wavenumber * np.sin(wavenumber * x)
            return np.abs(w[..., 1] - truth).max()

        coarse = max_err(5e-4)
        fine = max_err(2.5e-4)
        assert fine < coarse
        assert fine / coarse == pytest.approx(0.5, abs=0.15)


class TestGenerateAnalytic:
    def test_stagnant_zero_velocity_everywhere(self):
        grid = generate_analytic("stagnant", {"density_m3": 1e22, "temperature_K": 4.5},
                                 DELTA, BOUNDS)
        for point in ([1e-4] * 3, [3.9e-3] * 3, [2e-3, 1e-3, 3e-3]):
            u, n, T, inside = grid.lookup(point)
            assert inside
            np.testing.assert_array_equal(u, np.zeros(3))
            assert (n, T) == (1e22, 4.5)

    def test_uniform_curl_zero(self):
        grid = generate_analytic("uniform", {"velocity_mps": [0.0, 0.0, 50.0],
                                             "density_m3": 1e22, "temperature_K": 4.5},
                                 DELTA, BOUNDS)
        np.testing.assert_array_equal(curl(grid), 0.0)

    def test_vortex_axial_curl(self):
        omega = 1.5e3
        grid = generate_analytic(
            "vortex_axial",
            {"angular_speed_rad_s": omega, "axial_mps": 20.0,
             "density_m3": 1e22, "temperature_K": 4.5, "axis_xy_m": [2e-3, 2e-3]},
            DELTA, BOUNDS)
        w = curl(grid)
        np.testing.assert_allclose(w[..., 2], 2 * omega, rtol=1e-12)
        np.testing.assert_allclose(w[..., 0], 0.0, atol=1e-8)

    def test_radial_sink_points_at_focus(self):
        focus = np.array([2e-3, 2e-3, 2e-3])
        grid = generate_analytic(
            "radial_sink",
            {"focus_m": focus, "strength_mps": 100.0, "softening_m": 1e-3,
             "density_m3": 1e22, "temperature_K": 4.5},
            DELTA, BOUNDS)
        probe = np.array([3e-4, 3e-4, 3e-4])
        u, _, _, _ = grid.lookup(probe)
        direction = u / np.linalg.norm(u)
        toward = (focus - probe) / np.linalg.norm(focus - probe)
        # same voxel-center direction: compare against the voxel center point
        center = (np.floor(probe / DELTA) + 0.5) * DELTA
        toward = (focus - center) / np.linalg.norm(focus - center)
        np.testing.assert_allclose(direction, toward, atol=1e-12)

    def test_magnitude_grows_near_focus(self):
        focus = np.array([2e-3, 2e-3, 2e-3])
        grid = generate_analytic(
            "radial_sink",
            {"focus_m": focus, "strength_mps": 100.0, "softening_m": 1e-3,
             "density_m3": 1e22, "temperature_K": 4.5},
            DELTA, BOUNDS)
        near, _, _, _ = grid.lookup([1.6e-3, 2.1e-3, 2.1e-3])
        far, _, _, _ = grid.lookup([2e-4, 2.1e-3, 2.1e-3])
        assert np.linalg.norm(near) > np.linalg.norm(far)

    @pytest.mark.parametrize("kind,params", [
        ("nonsense", {"density_m3": 1e22, "temperature_K": 4.5}),
        ("stagnant", {"density_m3": -1.0, "temperature_K": 4.5}),
        ("stagnant", {"density_m3": 1e22, "temperature_K": 0.0}),
        ("radial_sink", {"density_m3": 1e22, "temperature_K": 4.5,
                         "focus_m": [1.0, 1.0, 1.0], "strength_mps": 10.0,
                         "softening_m": 1e-3}),
        ("uniform", {"density_m3": 1e22, "temperature_K": 4.5}),
    ])
    def test_invalid_params_rejected(self, kind, params):
        with pytest.raises(ValueError):
            generate_analytic(kind, params, DELTA, BOUNDS)


class TestSerialization:
    def test_csv_round_trip(self, tmp_path):
        arr = make_samples(50, seed=11)
        path = tmp_path / "field.csv"
        save_samples_csv(path, arr)
        back = load_samples_csv(path)
        np.testing.assert_allclose(back, arr, rtol=1e-15)

    def test_csv_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError, match="header"):
            load_samples_csv(path)

    def test_grid_round_trip(self, tmp_path):
        grid = fill_soft_edges(voxelize(make_samples(100, seed=12), DELTA, BOUNDS))
        meta = FieldMetadata(throughput_sccm=26.0, heat_load_w=0.03,
                             injection_angle_deg=45.0, orifice_diameter_m=1.5e-3,
                             label="test")
        grid = grid.replace(metadata=meta)
        path = tmp_path / "grid.npz"
        save_grid(grid, path)
        back = load_grid(path)
        assert back.metadata == meta
        assert back.dims == grid.dims
        assert back.voxel_size == grid.voxel_size
        np.testing.assert_array_equal(back.origin, grid.origin)
        np.testing.assert_array_equal(back.velocity, grid.velocity)
        np.testing.assert_array_equal(back.occupied, grid.occupied)
        np.testing.assert_array_equal(back.populated, grid.populated)

    def test_sample_array_from_dataclasses(self):
        s = FlowSample(np.array([1e-4, 2e-4, 3e-4]), np.array([1.0, 2.0, 3.0]), 1e21, 5.0)
        arr = as_sample_array([s, s])
        assert arr.shape == (2, 8)
        np.testing.assert_array_equal(arr[0], [1e-4, 2e-4, 3e-4, 1.0, 2.0, 3.0, 1e21, 5.0])

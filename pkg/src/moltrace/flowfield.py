"""Voxelized flow fields: CSV ingestion, soft-edge fill, lookup, curl, generators.

Scattered (position, velocity, density, temperature) samples are quantized
onto a grid of cubic voxels.  Voxels holding at least one sample store the
arithmetic mean of their samples and define the simulation volume
(`occupied`).  Empty voxels adjacent to populated ones can afterwards be
filled by recursive nearest-neighbor averaging (`fill_soft_edges`), which
extends stored values but never the occupancy, so filling cannot enlarge
the physical volume.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

CSV_COLUMNS = ("x", "y", "z", "ux", "uy", "uz", "n", "T")
ANALYTIC_KINDS = ("stagnant", "uniform", "radial_sink", "vortex_axial")
GRID_FORMAT_VERSION = 1


@dataclass(frozen=True)
class FlowSample:
    """One scattered flow-field sample, SI units."""

    position: np.ndarray       # (3,) m
    velocity: np.ndarray       # (3,) m/s
    number_density: float      # 1/m^3
    temperature: float         # K


@dataclass(frozen=True)
class FieldMetadata:
    """Provenance of a flow field. Carried through runs, never used by physics."""

    throughput_sccm: float | None = None
    heat_load_w: float | None = None
    injection_angle_deg: float | None = None
    orifice_diameter_m: float | None = None
    label: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FieldMetadata":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def as_sample_array(samples) -> np.ndarray:
    """Normalize FlowSample iterables or (N, 8) arrays to a float (N, 8) array.

    Columns follow CSV_COLUMNS: x, y, z, ux, uy, uz, n, T.
    """
    if isinstance(samples, np.ndarray):
        arr = np.array(samples, dtype=float, ndmin=2)
    else:
        rows = [
            (*s.position, *s.velocity, s.number_density, s.temperature)
            for s in samples
        ]
        if not rows:
            return np.empty((0, 8))
        arr = np.asarray(rows, dtype=float)
    if arr.size == 0:
        return np.empty((0, 8))
    if arr.ndim != 2 or arr.shape[1] != 8:
        raise ValueError(f"expected samples with 8 columns {CSV_COLUMNS}, got shape {arr.shape}")
    return arr


def _validate_samples(arr: np.ndarray) -> None:
    bad = ~np.isfinite(arr).all(axis=1)
    if bad.any():
        raise ValueError(f"non-finite sample at index {int(np.argmax(bad))}")
    neg_n = arr[:, 6] < 0.0
    if neg_n.any():
        raise ValueError(f"negative number density at sample index {int(np.argmax(neg_n))}")
    bad_t = arr[:, 7] <= 0.0
    if bad_t.any():
        raise ValueError(f"non-positive temperature at sample index {int(np.argmax(bad_t))}")


class VoxelGrid:
    """Cubic-voxel lookup table for (u, n, T) over an axis-aligned box.

    Two boolean masks are kept per voxel:

    * ``occupied``  -- contained original samples; defines what counts as
      inside the simulation volume.
    * ``populated`` -- holds field values (occupied voxels plus any filled
      in by :func:`fill_soft_edges`).

    Instances are immutable after construction and safe to share between
    concurrent readers.
    """

    def __init__(self, origin, voxel_size, dims, velocity, density, temperature,
                 occupied, populated, metadata: FieldMetadata | None = None):
        self.origin = np.asarray(origin, dtype=float).reshape(3).copy()
        self.voxel_size = float(voxel_size)
        self.dims = tuple(int(d) for d in dims)
        if self.voxel_size <= 0.0:
            raise ValueError("voxel_size must be positive")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"invalid grid dims {self.dims}")
        shape = self.dims
        self.velocity = np.ascontiguousarray(velocity, dtype=float).reshape(shape + (3,))
        self.density = np.ascontiguousarray(density, dtype=float).reshape(shape)
        self.temperature = np.ascontiguousarray(temperature, dtype=float).reshape(shape)
        self.occupied = np.ascontiguousarray(occupied, dtype=bool).reshape(shape)
        self.populated = np.ascontiguousarray(populated, dtype=bool).reshape(shape)
        self.metadata = metadata if metadata is not None else FieldMetadata()
        for a in (self.origin, self.velocity, self.density, self.temperature,
                  self.occupied, self.populated):
            a.setflags(write=False)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.voxel_size * np.asarray(self.dims, dtype=float)

    def voxel_index(self, r) -> tuple[np.ndarray, bool]:
        """Index of the voxel containing r under the half-open convention.

        Points on a voxel face belong to the voxel on the positive side
        (intervals are [low, high) on every axis).  Returns (index, in_bounds).
        """
        r = np.asarray(r, dtype=float).reshape(3)
        idx = np.floor((r - self.origin) / self.voxel_size).astype(np.int64)
        in_bounds = bool(np.all(idx >= 0) and np.all(idx < np.asarray(self.dims)))
        return idx, in_bounds

    def lookup(self, r):
        """(u, n, T, inside) at point r; ``inside`` follows the occupancy mask.

        Out-of-bounds points and unpopulated voxels return (None, None, None,
        False).
        """
        idx, in_bounds = self.voxel_index(r)
        if not in_bounds:
            return None, None, None, False
        i, j, k = idx
        inside = bool(self.occupied[i, j, k])
        if not self.populated[i, j, k]:
            return None, None, None, False
        return self.velocity[i, j, k].copy(), float(self.density[i, j, k]), \
            float(self.temperature[i, j, k]), inside

    def voxel_centers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-axis coordinates of voxel centers."""
        return tuple(
            self.origin[a] + self.voxel_size * (np.arange(self.dims[a]) + 0.5)
            for a in range(3)
        )

    def replace(self, **kw) -> "VoxelGrid":
        base = dict(origin=self.origin, voxel_size=self.voxel_size, dims=self.dims,
                    velocity=self.velocity, density=self.density,
                    temperature=self.temperature, occupied=self.occupied,
                    populated=self.populated, metadata=self.metadata)
        base.update(kw)
        return VoxelGrid(**base)


def voxelize(samples, voxel_size: float, bounds, metadata: FieldMetadata | None = None) -> VoxelGrid:
    """Quantize scattered samples onto a cubic-voxel grid.

    Every voxel containing at least one sample stores the arithmetic mean of
    its samples' u, n, T and is marked occupied.  Voxels without samples are
    left empty (see :func:`fill_soft_edges`).  `bounds` is a (lo, hi) pair of
    3-vectors that must contain all sample positions; the upper face is
    exclusive, matching the half-open voxel convention.
    """
    arr = as_sample_array(samples)
    if arr.shape[0] == 0:
        raise ValueError("empty sample list")
    _validate_samples(arr)
    voxel_size = float(voxel_size)
    if voxel_size <= 0.0:
        raise ValueError("voxel_size must be positive")
    lo = np.asarray(bounds[0], dtype=float).reshape(3)
    hi = np.asarray(bounds[1], dtype=float).reshape(3)
    if not np.all(hi > lo):
        raise ValueError(f"degenerate bounds lo={lo} hi={hi}")

    pos = arr[:, :3]
    outside = np.any(pos < lo, axis=1) | np.any(pos >= hi, axis=1)
    if outside.any():
        i = int(np.argmax(outside))
        raise ValueError(f"sample {i} at {pos[i]} lies outside bounds lo={lo} hi={hi}")

    dims = np.maximum(np.ceil((hi - lo) / voxel_size - 1e-9).astype(int), 1)
    idx = np.floor((pos - lo) / voxel_size).astype(np.int64)
    idx = np.minimum(idx, dims - 1)  # guard float round-up at the top face
    flat = np.ravel_multi_index(tuple(idx.T), tuple(dims))

    ncells = int(np.prod(dims))
    counts = np.bincount(flat, minlength=ncells).astype(float)
    occupied = counts > 0

    def mean_of(col):
        s = np.bincount(flat, weights=arr[:, col], minlength=ncells)
        out = np.full(ncells, np.nan)
        out[occupied] = s[occupied] / counts[occupied]
        return out.reshape(tuple(dims))

    velocity = np.stack([mean_of(3), mean_of(4), mean_of(5)], axis=-1)
    density = mean_of(6)
    temperature = mean_of(7)
    occ = occupied.reshape(tuple(dims))
    return VoxelGrid(lo, voxel_size, tuple(dims), velocity, density, temperature,
                     occ, occ.copy(), metadata)


def _shift(a: np.ndarray, axis: int, step: int, fill):
    """Array shifted by `step` along `axis`, padding with `fill`."""
    out = np.full_like(a, fill)
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if step > 0:
        src[axis] = slice(0, a.shape[axis] - step)
        dst[axis] = slice(step, None)
    else:
        src[axis] = slice(-step, None)
        dst[axis] = slice(0, a.shape[axis] + step)
    out[tuple(dst)] = a[tuple(src)]
    return out


def fill_soft_edges(grid: VoxelGrid) -> VoxelGrid:
    """Extend field values into empty voxels by nearest-neighbor averaging.

    Iteratively, every empty voxel with at least one populated
    Manhattan-nearest (6-connected) neighbor receives the mean of those
    neighbors' values; layers are applied synchronously and the iteration
    runs to a fixed point.  The occupancy mask is not modified, so the
    simulation volume is unchanged.  Applying the fill twice equals applying
    it once.
    """
    if not grid.populated.any():
        raise ValueError("cannot fill an entirely empty grid")

    pop = np.array(grid.populated)
    values = np.concatenate(
        [np.array(grid.velocity),
         np.array(grid.density)[..., None],
         np.array(grid.temperature)[..., None]], axis=-1)
    values[~pop] = 0.0

    while True:
        nb_count = np.zeros(grid.dims, dtype=float)
        nb_sum = np.zeros(values.shape, dtype=float)
        for axis in range(3):
            for step in (1, -1):
                shifted_pop = _shift(pop, axis, step, False)
                nb_count += shifted_pop
                nb_sum += _shift(values, axis, step, 0.0) * shifted_pop[..., None]
        grow = (~pop) & (nb_count > 0)
        if not grow.any():
            break
        values[grow] = nb_sum[grow] / nb_count[grow][..., None]
        pop |= grow

    velocity = np.where(pop[..., None], values[..., :3], np.nan)
    density = np.where(pop, values[..., 3], np.nan)
    temperature = np.where(pop, values[..., 4], np.nan)
    return grid.replace(velocity=velocity, density=density, temperature=temperature,
                        populated=pop)


def _masked_derivative(f: np.ndarray, pop: np.ndarray, axis: int, h: float) -> np.ndarray:
    """d f / d axis on populated voxels.

    Central difference where both axis-neighbors are populated, one-sided
    where only one is, zero where neither is (isolated along the axis).
    """
    fp = _shift(np.where(pop, f, 0.0), axis, -1, 0.0)
    fm = _shift(np.where(pop, f, 0.0), axis, 1, 0.0)
    has_p = _shift(pop, axis, -1, False)
    has_m = _shift(pop, axis, 1, False)

    d = np.zeros_like(f)
    both = has_p & has_m
    d[both] = (fp[both] - fm[both]) / (2.0 * h)
    only_p = has_p & ~has_m
    d[only_p] = (fp[only_p] - f[only_p]) / h
    only_m = has_m & ~has_p
    d[only_m] = (f[only_m] - fm[only_m]) / h
    return d


def curl(grid: VoxelGrid) -> np.ndarray:
    """Finite-difference curl of the stored velocity on populated voxels.

    Returns an array of shape dims + (3,); voxels outside the populated set
    are NaN.
    """
    pop = grid.populated
    if not pop.any():
        raise ValueError("curl of an empty grid")
    u = np.where(pop[..., None], grid.velocity, 0.0)
    h = grid.voxel_size

    def d(comp, axis):
        return _masked_derivative(u[..., comp], pop, axis, h)

    w = np.stack([d(2, 1) - d(1, 2),
                  d(0, 2) - d(2, 0),
                  d(1, 0) - d(0, 1)], axis=-1)
    w[~pop] = np.nan
    return w


def _require_params(kind: str, params: dict, required: tuple[str, ...]) -> None:
    missing = [k for k in required if k not in params]
    if missing:
        raise ValueError(f"analytic field '{kind}' missing params: {missing}")


def generate_analytic(kind: str, params: dict, voxel_size: float, bounds,
                      metadata: FieldMetadata | None = None) -> VoxelGrid:
    """Build a fully-occupied grid from a closed-form field.

    Kinds and their params (SI units, unit-suffixed keys):

    * ``stagnant``:     density_m3, temperature_K (u = 0)
    * ``uniform``:      velocity_mps (3-vector), density_m3, temperature_K
    * ``radial_sink``:  focus_m (3-vector), strength_mps, softening_m,
                        density_m3, temperature_K -- flow points toward the
                        focus, magnitude growing near it
    * ``vortex_axial``: angular_speed_rad_s, axial_mps, density_m3,
                        temperature_K, optional axis_xy_m -- solid-body swirl
                        about a z-parallel axis plus constant axial flow
    """
    if kind not in ANALYTIC_KINDS:
        raise ValueError(f"unknown analytic field kind '{kind}' (choose from {ANALYTIC_KINDS})")
    voxel_size = float(voxel_size)
    if voxel_size <= 0.0:
        raise ValueError("voxel_size must be positive")
    lo = np.asarray(bounds[0], dtype=float).reshape(3)
    hi = np.asarray(bounds[1], dtype=float).reshape(3)
    if not np.all(hi > lo):
        raise ValueError(f"degenerate bounds lo={lo} hi={hi}")

    n0 = float(params.get("density_m3", np.nan))
    t0 = float(params.get("temperature_K", np.nan))
    _require_params(kind, params, ("density_m3", "temperature_K"))
    if not np.isfinite(n0) or n0 < 0.0:
        raise ValueError(f"density_m3 must be finite and >= 0, got {n0}")
    if not np.isfinite(t0) or t0 <= 0.0:
        raise ValueError(f"temperature_K must be finite and > 0, got {t0}")

    dims = np.maximum(np.ceil((hi - lo) / voxel_size - 1e-9).astype(int), 1)
    axes = [lo[a] + voxel_size * (np.arange(dims[a]) + 0.5) for a in range(3)]
    x, y, z = np.meshgrid(*axes, indexing="ij")
    shape = tuple(dims)

    u = np.zeros(shape + (3,))
    if kind == "uniform":
        _require_params(kind, params, ("velocity_mps",))
        v0 = np.asarray(params["velocity_mps"], dtype=float).reshape(3)
        if not np.isfinite(v0).all():
            raise ValueError("velocity_mps must be finite")
        u[...] = v0
    elif kind == "radial_sink":
        _require_params(kind, params, ("focus_m", "strength_mps", "softening_m"))
        focus = np.asarray(params["focus_m"], dtype=float).reshape(3)
        strength = float(params["strength_mps"])
        soft = float(params["softening_m"])
        if soft <= 0.0 or strength <= 0.0:
            raise ValueError("radial_sink requires strength_mps > 0 and softening_m > 0")
        if np.any(focus < lo) or np.any(focus > hi):
            raise ValueError(f"radial_sink focus {focus} outside bounds lo={lo} hi={hi}")
        dx, dy, dz = x - focus[0], y - focus[1], z - focus[2]
        dist = np.sqrt(dx * dx + dy * dy + dz * dz)
        mag = strength * soft / (dist + soft)
        with np.errstate(invalid="ignore", divide="ignore"):
            scale = np.where(dist > 0.0, -mag / dist, 0.0)
        u[..., 0] = scale * dx
        u[..., 1] = scale * dy
        u[..., 2] = scale * dz
    elif kind == "vortex_axial":
        _require_params(kind, params, ("angular_speed_rad_s", "axial_mps"))
        omega = float(params["angular_speed_rad_s"])
        uz = float(params["axial_mps"])
        ax = np.asarray(params.get("axis_xy_m", (0.0, 0.0)), dtype=float).reshape(2)
        if not (np.isfinite(omega) and np.isfinite(uz) and np.isfinite(ax).all()):
            raise ValueError("vortex_axial parameters must be finite")
        u[..., 0] = -omega * (y - ax[1])
        u[..., 1] = omega * (x - ax[0])
        u[..., 2] = uz

    density = np.full(shape, n0)
    temperature = np.full(shape, t0)
    occ = np.ones(shape, dtype=bool)
    return VoxelGrid(lo, voxel_size, shape, u, density, temperature, occ,
                     occ.copy(), metadata)


def load_samples_csv(path) -> np.ndarray:
    """Read a point-cloud CSV with header ``x,y,z,ux,uy,uz,n,T`` (SI units)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        names = tuple(s.strip() for s in header.strip().split(","))
        if names != CSV_COLUMNS:
            raise ValueError(
                f"bad CSV header in {path}: expected {','.join(CSV_COLUMNS)}, got {header.strip()!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        raise ValueError(f"no samples in {path}")
    if data.shape[1] != 8:
        raise ValueError(f"{path}: expected 8 columns, got {data.shape[1]}")
    return data


def save_samples_csv(path, samples) -> None:
    arr = as_sample_array(samples)
    np.savetxt(path, arr, delimiter=",", header=",".join(CSV_COLUMNS), comments="")


def save_grid(grid: VoxelGrid, path) -> None:
    """Serialize a grid to a self-describing .npz container (see docs/formats.md)."""
    meta = dict(grid.metadata.to_dict(), format_version=GRID_FORMAT_VERSION)
    np.savez_compressed(
        path,
        format_version=np.int64(GRID_FORMAT_VERSION),
        origin=grid.origin,
        voxel_size=np.float64(grid.voxel_size),
        dims=np.asarray(grid.dims, dtype=np.int64),
        velocity=grid.velocity,
        density=grid.density,
        temperature=grid.temperature,
        occupied=grid.occupied,
        populated=grid.populated,
        metadata_json=np.bytes_(json.dumps(meta, sort_keys=True).encode()),
    )


def load_grid(path) -> VoxelGrid:
    with np.load(path) as z:
        version = int(z["format_version"])
        if version != GRID_FORMAT_VERSION:
            raise ValueError(f"unsupported grid format version {version}")
        meta = FieldMetadata.from_dict(json.loads(bytes(z["metadata_json"]).decode()))
        return VoxelGrid(z["origin"], float(z["voxel_size"]), tuple(z["dims"]),
                         z["velocity"], z["density"], z["temperature"],
                         z["occupied"], z["populated"], meta)

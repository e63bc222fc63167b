"""Trajectory initialization, propagation and ensemble execution.

Trajectories are independent work units over a shared immutable grid.  Each
attempt index owns a private random stream derived from the master seed, and
accepted trajectories are collected in attempt order, so ensembles are
bit-identical for any worker count.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _engine
from .collision import GasParams, SamplingMethod
from .flowfield import VoxelGrid
from .geometry import CellRegions, TerminalClass, classify_terminal
from .rng import Stream

_CLASS_CODES = {
    TerminalClass.EXIT: 0,
    TerminalClass.SOURCE_DISC: 1,
    TerminalClass.WALL: 2,
    TerminalClass.COLLISION_CAP: 3,
}
_CODE_CLASSES = {v: k for k, v in _CLASS_CODES.items()}


@dataclass
class MoleculeState:
    """Snapshot of one traced molecule."""

    position: np.ndarray   # (3,) m
    velocity: np.ndarray   # (3,) m/s
    collisions: int = 0
    time: float = 0.0


@dataclass(frozen=True)
class TracerConfig:
    """Knobs of the tracing loop.

    ``accept_min_collisions`` is the acceptance threshold: a trajectory that
    terminates having experienced no more than this many collisions is
    discarded and the caller re-initializes.  Set it to -1 to accept
    everything (useful for ballistic studies).
    """

    accept_min_collisions: int = 10
    max_collisions: int = 10 ** 9
    record_stride: int = 1000
    target_count: int = 100_000
    collision_probability: float = 0.1
    dt_max_s: float = 1e-5
    source_temperature_K: float = 500.0
    master_seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.collision_probability < 1.0):
            raise ValueError("collision_probability must lie in (0, 1)")
        if self.accept_min_collisions >= self.max_collisions:
            raise ValueError("accept_min_collisions must be below max_collisions")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.target_count < 1:
            raise ValueError("target_count must be >= 1")
        if not (self.dt_max_s > 0.0):
            raise ValueError("dt_max_s must be > 0")
        if not (self.source_temperature_K > 0.0):
            raise ValueError("source_temperature_K must be > 0")


@dataclass
class TrajectoryRecord:
    """Subsampled history of one accepted trajectory plus its terminal data."""

    times: np.ndarray             # (S,) s
    positions: np.ndarray         # (S, 3) m
    velocities: np.ndarray        # (S, 3) m/s
    collision_counts: np.ndarray  # (S,)
    terminal_class: TerminalClass
    terminal_position: np.ndarray
    residence_time: float
    final_collisions: int
    attempt_index: int


@dataclass
class Discard:
    """A trajectory rejected for terminating at or below the collision threshold."""

    attempt_index: int
    final_collisions: int
    terminal_class: TerminalClass


@dataclass
class Terminal:
    """Step outcome when the molecule left the simulation volume."""

    state: MoleculeState
    terminal_class: TerminalClass | None = None


class TrajectoryAborted(RuntimeError):
    pass


def _orthonormal_frame(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([0.0, 0.0, 1.0]) if abs(normal[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(helper, normal)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    return e1, e2


def _grid_args(grid: VoxelGrid):
    nx, ny, nz = grid.dims
    return (grid.origin, 1.0 / grid.voxel_size, nx, ny, nz,
            grid.velocity, grid.density, grid.temperature, grid.occupied)


def _source_args(regions: CellRegions):
    disc = regions.source_disc
    e1, e2 = _orthonormal_frame(disc.normal)
    return disc.center, e1, e2, disc.normal, disc.radius


def init_molecule(regions: CellRegions, source_temperature_K: float,
                  params: GasParams, stream: Stream, size=None):
    """Draw initial molecule state(s) from the source disc.

    Position is uniform on the disc; speed follows the Maxwell-Boltzmann
    speed distribution at the source temperature; the direction is cos^2
    weighted in the polar angle from the disc normal (into the cell) with
    uniform azimuth.  Returns one MoleculeState, or (positions, velocities)
    arrays when `size` is given.
    """
    if source_temperature_K <= 0.0:
        raise ValueError("source temperature must be > 0")
    center, e1, e2, normal, radius = _source_args(regions)
    n_draws = 1 if size is None else int(size)
    positions = np.empty((n_draws, 3))
    velocities = np.empty((n_draws, 3))
    _engine._init_batch(stream.state, positions, velocities, center, e1, e2,
                        normal, radius, float(source_temperature_K),
                        params.molecule_mass_kg)
    if size is None:
        return MoleculeState(positions[0], velocities[0], 0, 0.0)
    return positions, velocities


def step(state: MoleculeState, grid: VoxelGrid, params: GasParams,
         method: SamplingMethod, config: TracerConfig, stream: Stream,
         regions: CellRegions | None = None):
    """Advance one molecule by one time step.

    Returns the updated MoleculeState, or a Terminal carrying the endpoint
    when the molecule left the simulation volume (classified when `regions`
    is given).  Raises TrajectoryAborted on non-finite state.
    """
    pos = np.array(state.position, dtype=float)
    vel = np.array(state.velocity, dtype=float)
    status, t, n_coll = _engine._step(
        stream.state, pos, vel, float(state.time), int(state.collisions),
        *_grid_args(grid),
        params.cross_section_m2, params.molecule_mass_kg, params.buffer_mass_kg,
        method.kernel_id, method.candidates,
        config.collision_probability, config.dt_max_s, grid.voxel_size)
    new_state = MoleculeState(pos, vel, int(n_coll), float(t))
    if status == _engine.ABORTED:
        raise TrajectoryAborted(f"non-finite or stalled state at t={state.time}, r={state.position}")
    if status == _engine.LEFT_VOLUME:
        cls = classify_terminal(pos, regions) if regions is not None else None
        return Terminal(new_state, cls)
    return new_state


def _run_attempt(grid_args, delta, source_args, params: GasParams,
                 method: SamplingMethod, config: TracerConfig, state: np.ndarray):
    return _engine._trace(
        state, *grid_args, *source_args,
        params.cross_section_m2, params.molecule_mass_kg, params.buffer_mass_kg,
        method.kernel_id, method.candidates,
        config.collision_probability, config.dt_max_s, delta,
        config.source_temperature_K, config.max_collisions, config.record_stride)


def run_trajectory(grid: VoxelGrid, regions: CellRegions, params: GasParams,
                   method: SamplingMethod, config: TracerConfig, stream: Stream,
                   attempt_index: int = 0):
    """Trace one molecule to termination.

    Returns a TrajectoryRecord, or Discard when the trajectory ended with no
    more than ``accept_min_collisions`` collisions.
    """
    status, count, ts, ps, vs, ks, t_end, n_coll = _run_attempt(
        _grid_args(grid), grid.voxel_size, _source_args(regions), params,
        method, config, stream.state)
    if status == _engine.ABORTED:
        raise TrajectoryAborted(
            f"trajectory attempt {attempt_index} aborted after {n_coll} collisions")
    endpoint = ps[count - 1].copy()
    if status == _engine.CAP_REACHED:
        terminal_class = TerminalClass.COLLISION_CAP
    else:
        terminal_class = classify_terminal(endpoint, regions)
        if n_coll <= config.accept_min_collisions:
            return Discard(attempt_index, int(n_coll), terminal_class)
    return TrajectoryRecord(
        times=ts[:count].copy(), positions=ps[:count].copy(),
        velocities=vs[:count].copy(), collision_counts=ks[:count].copy(),
        terminal_class=terminal_class, terminal_position=endpoint,
        residence_time=float(t_end), final_collisions=int(n_coll),
        attempt_index=int(attempt_index))


@dataclass
class EnsembleResult:
    """Accepted trajectories of one run, packed into contiguous arrays.

    Per-sample arrays are the concatenation of all records' samples;
    ``record_offsets`` delimits them (record i spans
    offsets[i]:offsets[i+1]).  All arrays are ordered by attempt index, so
    the content is a pure function of (inputs, master_seed).
    """

    sample_times: np.ndarray
    sample_positions: np.ndarray
    sample_velocities: np.ndarray
    sample_collisions: np.ndarray
    record_offsets: np.ndarray
    terminal_classes: np.ndarray      # int8 codes, see class_of()
    terminal_positions: np.ndarray
    residence_times: np.ndarray
    final_collisions: np.ndarray
    attempt_indices: np.ndarray
    n_discarded: int
    n_attempts: int
    master_seed: int
    n_aborted: int = 0

    @property
    def n_records(self) -> int:
        return len(self.residence_times)

    def class_of(self, i: int) -> TerminalClass:
        return _CODE_CLASSES[int(self.terminal_classes[i])]

    def class_mask(self, cls: TerminalClass) -> np.ndarray:
        return self.terminal_classes == _CLASS_CODES[cls]

    def record(self, i: int) -> TrajectoryRecord:
        lo, hi = self.record_offsets[i], self.record_offsets[i + 1]
        return TrajectoryRecord(
            times=self.sample_times[lo:hi],
            positions=self.sample_positions[lo:hi],
            velocities=self.sample_velocities[lo:hi],
            collision_counts=self.sample_collisions[lo:hi],
            terminal_class=self.class_of(i),
            terminal_position=self.terminal_positions[i],
            residence_time=float(self.residence_times[i]),
            final_collisions=int(self.final_collisions[i]),
            attempt_index=int(self.attempt_indices[i]))

    @property
    def records(self) -> list:
        return [self.record(i) for i in range(self.n_records)]


def _pack_records(parts: list, n_records: int) -> tuple:
    """Assemble per-trajectory pieces into packed arrays, freeing them as copied."""
    total = sum(p[1] for p in parts if p is not None)
    times = np.empty(total)
    positions = np.empty((total, 3))
    velocities = np.empty((total, 3))
    collisions = np.empty(total, np.int64)
    offsets = np.empty(n_records + 1, np.int64)
    classes = np.empty(n_records, np.int8)
    term_pos = np.empty((n_records, 3))
    taus = np.empty(n_records)
    finals = np.empty(n_records, np.int64)
    attempts = np.empty(n_records, np.int64)

    at = 0
    for i, part in enumerate(parts):
        (attempt, count, ts, ps, vs, ks, tau, n_coll, cls) = part
        offsets[i] = at
        times[at:at + count] = ts[:count]
        positions[at:at + count] = ps[:count]
        velocities[at:at + count] = vs[:count]
        collisions[at:at + count] = ks[:count]
        classes[i] = _CLASS_CODES[cls]
        term_pos[i] = ps[count - 1]
        taus[i] = tau
        finals[i] = n_coll
        attempts[i] = attempt
        at += count
        parts[i] = None
    offsets[n_records] = at
    return times, positions, velocities, collisions, offsets, classes, term_pos, \
        taus, finals, attempts


def run_ensemble(grid: VoxelGrid, regions: CellRegions, params: GasParams,
                 method: SamplingMethod, config: TracerConfig,
                 workers: int = 1, block_size: int = 256,
                 max_attempts: int | None = None) -> EnsembleResult:
    """Trace attempts until ``target_count`` trajectories are accepted.

    Attempt i always runs on stream (master_seed, i); the accepted set is
    the first target_count accepted attempts in index order, making the
    result independent of worker count and scheduling.  Discarded attempts
    below the acceptance horizon are counted.  `max_attempts` guards against
    configurations that can never accept (raises RuntimeError when
    exhausted).
    """
    grid_args = _grid_args(grid)
    source_args = _source_args(regions)
    delta = grid.voxel_size
    master = config.master_seed

    def trace_block(start: int) -> list:
        out = []
        for attempt in range(start, start + block_size):
            state = Stream(master, attempt).state
            res = _run_attempt(grid_args, delta, source_args, params, method,
                               config, state)
            out.append((attempt,) + res)
        return out

    accepted: list = []
    n_discarded = 0
    n_aborted = 0
    horizon = -1

    def fold(block: list) -> bool:
        """Consume one block in attempt order; True when the target is met."""
        nonlocal n_discarded, n_aborted, horizon
        for item in block:
            attempt, status, count, ts, ps, vs, ks, t_end, n_coll = item
            if status == _engine.ABORTED:
                n_aborted += 1
                continue
            if status == _engine.CAP_REACHED:
                cls = TerminalClass.COLLISION_CAP
            else:
                cls = classify_terminal(ps[count - 1], regions)
                if n_coll <= config.accept_min_collisions:
                    n_discarded += 1
                    continue
            accepted.append((attempt, count, ts, ps, vs, ks, float(t_end),
                             int(n_coll), cls))
            if len(accepted) == config.target_count:
                horizon = attempt
                return True
        return False

    def exhausted(next_start: int) -> bool:
        if max_attempts is not None and next_start >= max_attempts:
            raise RuntimeError(
                f"only {len(accepted)} of {config.target_count} trajectories "
                f"accepted after {next_start} attempts")
        return False

    if workers <= 1:
        start = 0
        while True:
            if fold(trace_block(start)):
                break
            start += block_size
            exhausted(start)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            in_flight = {}
            next_submit = 0
            next_fold = 0
            done = False
            while not done:
                while len(in_flight) < workers + 2:
                    in_flight[next_submit] = pool.submit(trace_block, next_submit)
                    next_submit += block_size
                done = fold(in_flight.pop(next_fold).result())
                next_fold += block_size
                if not done:
                    exhausted(next_fold)
            for f in in_flight.values():
                f.cancel()

    packed = _pack_records(accepted, len(accepted))
    return EnsembleResult(*packed, n_discarded=n_discarded,
                          n_attempts=horizon + 1, master_seed=master,
                          n_aborted=n_aborted)


def dump_trajectories(result: EnsembleResult, records_path, samples_path) -> None:
    """Write the trajectory dump: per-record terminal data and all samples.

    records CSV: trajectory, attempt, terminal_class, residence_time_s,
    collisions.  samples CSV: trajectory, t_s, x_m, y_m, z_m, vx_mps, vy_mps,
    vz_mps, collisions.
    """
    with open(records_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory", "attempt", "terminal_class",
                    "residence_time_s", "collisions"])
        for i in range(result.n_records):
            w.writerow([i, int(result.attempt_indices[i]),
                        result.class_of(i).value,
                        repr(float(result.residence_times[i])),
                        int(result.final_collisions[i])])
    with open(samples_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory", "t_s", "x_m", "y_m", "z_m",
                    "vx_mps", "vy_mps", "vz_mps", "collisions"])
        for i in range(result.n_records):
            lo, hi = result.record_offsets[i], result.record_offsets[i + 1]
            for s in range(lo, hi):
                p = result.sample_positions[s]
                v = result.sample_velocities[s]
                w.writerow([i, repr(float(result.sample_times[s])),
                            repr(p[0]), repr(p[1]), repr(p[2]),
                            repr(v[0]), repr(v[1]), repr(v[2]),
                            int(result.sample_collisions[s])])

"""Ensemble reductions: thermalization curves, extraction efficiency,
wall-contamination chart with its median coated area, residence-time
histograms, and the run summary.

All reductions run in a fixed summation order over records sorted by attempt
index, so parallel-produced ensembles reduce to exactly the same numbers as
sequential ones.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .collision import GasParams
from .constants import BOLTZMANN_J_PER_K
from .geometry import TerminalClass, wall_chart
from .tracer import EnsembleResult

_KB = BOLTZMANN_J_PER_K

LOW_STATS_THRESHOLD = 100  # molecules per collision-count bin


def _pooled_samples(source):
    """(velocities (S,3), collision counts (S,)) from an ensemble or records."""
    if isinstance(source, EnsembleResult):
        return source.sample_velocities, source.sample_collisions
    records = list(source)
    if not records:
        raise ValueError("no records")
    velocities = np.concatenate([r.velocities for r in records])
    counts = np.concatenate([r.collision_counts for r in records])
    return velocities, counts


def _exit_taus(source) -> np.ndarray:
    if isinstance(source, EnsembleResult):
        return source.residence_times[source.class_mask(TerminalClass.EXIT)]
    return np.array([r.residence_time for r in source
                     if r.terminal_class == TerminalClass.EXIT])


@dataclass
class ThermalizationCurve:
    """Per-axis temperatures inferred from ensemble velocity spread at each
    collision count."""

    collision_counts: np.ndarray   # (K,)
    temperatures: np.ndarray       # (K, 3) kelvin, axes x/y/z
    std_errors: np.ndarray         # (K, 3)
    sample_counts: np.ndarray      # (K,)
    low_stats: np.ndarray          # (K,) bool, fewer than LOW_STATS_THRESHOLD molecules
    degenerate: np.ndarray         # (K, 3) bool, zero velocity spread
    fit_method: str = "variance"

    def axis(self, i: int) -> np.ndarray:
        return self.temperatures[:, i]


def thermalization_curve(source, params: GasParams, max_count: int,
                         min_count: int = 0) -> ThermalizationCurve:
    """Temperatures T_i(K) for collision counts K in [min_count, max_count].

    T_i(K) is the variance of velocity component i over all molecules that
    have experienced exactly K collisions, scaled by m/kB.  The per-count
    ensemble mean is subtracted, so a drifting distribution center does not
    inflate the temperature.  Requires record_stride = 1 so every collision
    count in range is present.
    """
    velocities, counts = _pooled_samples(source)
    if max_count < min_count:
        raise ValueError("max_count must be >= min_count")
    sel = (counts >= min_count) & (counts <= max_count)
    v = velocities[sel]
    k = counts[sel] - min_count
    span = max_count - min_count + 1
    n = np.bincount(k, minlength=span).astype(float)
    if np.any(n == 0):
        missing = int(np.argmax(n == 0)) + min_count
        raise ValueError(
            f"no samples at collision count {missing}; "
            "thermalization analysis needs record_stride = 1 over the range")

    temps = np.empty((span, 3))
    errs = np.empty((span, 3))
    degenerate = np.zeros((span, 3), dtype=bool)
    scale = params.molecule_mass_kg / _KB
    for axis in range(3):
        s1 = np.bincount(k, weights=v[:, axis], minlength=span)
        s2 = np.bincount(k, weights=v[:, axis] ** 2, minlength=span)
        with np.errstate(invalid="ignore", divide="ignore"):
            var = np.where(n > 1, (s2 - s1 * s1 / n) / np.maximum(n - 1, 1), np.nan)
        var = np.maximum(var, 0.0)  # guard rounding at zero spread
        temps[:, axis] = scale * var
        errs[:, axis] = temps[:, axis] * np.sqrt(2.0 / np.maximum(n - 1, 1))
        degenerate[:, axis] = (n > 1) & (var == 0.0)

    return ThermalizationCurve(
        collision_counts=np.arange(min_count, max_count + 1),
        temperatures=temps, std_errors=errs, sample_counts=n.astype(np.int64),
        low_stats=n < LOW_STATS_THRESHOLD, degenerate=degenerate)


def analytic_thermalization(counts, t_initial: float, t_buffer: float,
                            params: GasParams):
    """Closed-form per-axis temperature after a number of collisions.

    T(K) = T_buffer + (T_initial - T_buffer) * exp(-2 K m m_b / (m + m_b)^2),
    the standard buffer-gas thermalization law for hard spheres.
    """
    counts = np.asarray(counts, dtype=float)
    m, mb = params.molecule_mass_kg, params.buffer_mass_kg
    decay = 2.0 * m * mb / (m + mb) ** 2
    out = t_buffer + (t_initial - t_buffer) * np.exp(-decay * counts)
    return float(out) if out.ndim == 0 else out


def thermalization_decay_rate(params: GasParams) -> float:
    """Per-collision exponent of the analytic thermalization law."""
    m, mb = params.molecule_mass_kg, params.buffer_mass_kg
    return 2.0 * m * mb / (m + mb) ** 2


@dataclass
class ExtractionCounts:
    """Terminal-class census and the resulting extraction efficiency."""

    n_total: int
    n_exit: int
    n_wall: int
    n_source: int
    n_cap: int
    efficiency: float | None  # None when no molecule was properly injected

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def extraction_efficiency(source) -> ExtractionCounts:
    """Fraction of successfully injected molecules that reached the exit.

    efficiency = n_exit / (n_exit + n_wall).  Molecules that never left the
    source disc are not counted as injected, and collision-cap records are
    excluded entirely.
    """
    if isinstance(source, EnsembleResult):
        n_exit = int(source.class_mask(TerminalClass.EXIT).sum())
        n_wall = int(source.class_mask(TerminalClass.WALL).sum())
        n_source = int(source.class_mask(TerminalClass.SOURCE_DISC).sum())
        n_cap = int(source.class_mask(TerminalClass.COLLISION_CAP).sum())
    else:
        classes = [r.terminal_class for r in source]
        n_exit = sum(c == TerminalClass.EXIT for c in classes)
        n_wall = sum(c == TerminalClass.WALL for c in classes)
        n_source = sum(c == TerminalClass.SOURCE_DISC for c in classes)
        n_cap = sum(c == TerminalClass.COLLISION_CAP for c in classes)
    injected = n_exit + n_wall
    eta = n_exit / injected if injected > 0 else None
    return ExtractionCounts(n_total=n_exit + n_wall + n_source + n_cap,
                            n_exit=n_exit, n_wall=n_wall, n_source=n_source,
                            n_cap=n_cap, efficiency=eta)


@dataclass
class WallChart:
    """2D histogram of wall hits over (azimuth, y) pixels."""

    azimuth_edges_deg: np.ndarray
    y_edges_m: np.ndarray
    counts: np.ndarray           # (n_az, n_y)
    cell_radius_m: float

    @property
    def pixel_area_m2(self) -> float:
        daz = math.radians(self.azimuth_edges_deg[1] - self.azimuth_edges_deg[0])
        dy = self.y_edges_m[1] - self.y_edges_m[0]
        return self.cell_radius_m * daz * dy


def bin_wall_hits(wall_hits, pixel_deg: float = 2.0, pixel_y_m: float = 5e-4,
                  cell_radius_m: float = 8e-3) -> WallChart:
    """Bin (azimuth_deg, y_m) wall hits into chart pixels.

    Azimuth pixels tile (-180, 180]; y pixels are anchored at multiples of
    the pixel height so the binning does not depend on the data.
    """
    hits = np.asarray(wall_hits, dtype=float).reshape(-1, 2)
    if hits.shape[0] == 0:
        raise ValueError("no wall hits to bin")
    n_az = max(int(round(360.0 / pixel_deg)), 1)
    az_edges = -180.0 + (360.0 / n_az) * np.arange(n_az + 1)
    y_lo = math.floor(hits[:, 1].min() / pixel_y_m)
    y_hi = math.floor(hits[:, 1].max() / pixel_y_m) + 1
    y_edges = pixel_y_m * np.arange(y_lo, y_hi + 1)

    iaz = np.clip(((hits[:, 0] + 180.0) / (360.0 / n_az)).astype(int), 0, n_az - 1)
    iy = np.clip(np.floor(hits[:, 1] / pixel_y_m).astype(int) - y_lo, 0,
                 len(y_edges) - 2)
    counts = np.zeros((n_az, len(y_edges) - 1), dtype=np.int64)
    np.add.at(counts, (iaz, iy), 1)
    return WallChart(az_edges, y_edges, counts, float(cell_radius_m))


def median_coated_area(wall_hits, pixel_deg: float = 2.0, pixel_y_m: float = 5e-4,
                       cell_radius_m: float = 8e-3,
                       chart: WallChart | None = None) -> float:
    """Physical area of the most-hit chart pixels accumulating half the losses.

    Pixels are sorted by count (descending; ties broken by pixel position in
    lexicographic azimuth-then-y order) and the smallest prefix whose
    cumulative count reaches half of all wall hits is kept.  The returned
    area is that pixel count times the physical pixel area at the cell
    radius.
    """
    if chart is None:
        chart = bin_wall_hits(wall_hits, pixel_deg, pixel_y_m, cell_radius_m)
    counts = chart.counts
    total = counts.sum()
    if total == 0:
        raise ValueError("no wall hits")
    flat = counts.reshape(-1)  # row-major: azimuth index varies slowest
    order = np.lexsort((np.arange(flat.size), -flat))
    cum = np.cumsum(flat[order])
    n_pixels = int(np.searchsorted(cum, total / 2.0)) + 1
    return n_pixels * chart.pixel_area_m2


@dataclass
class Peak:
    index: int
    center: float
    height: float
    prominence: float


@dataclass
class ResidenceHistogram:
    """Residence times of extracted molecules, normalized to unit sum."""

    edges_s: np.ndarray
    counts: np.ndarray     # normalized, sums to 1
    n_exit: int
    peaks: list = field(default_factory=list)

    @property
    def centers_s(self) -> np.ndarray:
        return 0.5 * (self.edges_s[:-1] + self.edges_s[1:])


def detect_peaks(counts: np.ndarray, prominence_fraction: float = 0.05) -> list:
    """Local maxima over a 3-bin window with prominence above a fraction of
    the global maximum.

    Prominence of a peak is its height above the higher of the two valley
    floors separating it from taller bins (or from the histogram ends).
    """
    c = np.asarray(counts, dtype=float)
    peaks = []
    top = c.max() if c.size else 0.0
    if top <= 0.0:
        return peaks
    for i in range(c.size):
        left = c[i - 1] if i > 0 else -math.inf
        right = c[i + 1] if i + 1 < c.size else -math.inf
        if not (c[i] > left and c[i] >= right):
            continue
        lo = i
        left_min = c[i]
        while lo > 0 and c[lo - 1] <= c[i]:
            lo -= 1
            left_min = min(left_min, c[lo])
        right_min = c[i]
        hi = i
        while hi + 1 < c.size and c[hi + 1] <= c[i]:
            hi += 1
            right_min = min(right_min, c[hi])
        prominence = c[i] - max(left_min if lo > 0 else 0.0,
                                right_min if hi + 1 < c.size else 0.0)
        if prominence >= prominence_fraction * top:
            peaks.append(Peak(i, math.nan, float(c[i]), float(prominence)))
    return peaks


def residence_histogram(source, bins=100, range_s=None,
                        prominence_fraction: float = 0.05) -> ResidenceHistogram:
    """Histogram of residence times of Exit records, normalized to unit sum.

    `bins` and `range_s` follow numpy.histogram semantics.  The peak report
    lists local maxima via :func:`detect_peaks`.
    """
    taus = np.asarray(_exit_taus(source), dtype=float)
    if taus.size == 0:
        raise ValueError("no extracted molecules: residence histogram undefined")
    counts, edges = np.histogram(taus, bins=bins, range=range_s)
    norm = counts / counts.sum()
    hist = ResidenceHistogram(edges_s=edges, counts=norm, n_exit=int(taus.size))
    centers = hist.centers_s
    hist.peaks = detect_peaks(norm, prominence_fraction)
    for p in hist.peaks:
        p.center = float(centers[p.index])
    return hist


@dataclass
class RunSummary:
    """All observables of one run plus the configuration that produced it."""

    counts: ExtractionCounts
    n_discarded: int
    n_attempts: int
    n_aborted: int
    efficiency: float | None
    median_coated_area_m2: float | None
    residence: ResidenceHistogram | None
    chart: WallChart | None
    config_echo: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "counts": self.counts.as_dict(),
            "n_discarded": self.n_discarded,
            "n_attempts": self.n_attempts,
            "n_aborted": self.n_aborted,
            "efficiency": self.efficiency,
            "median_coated_area_m2": self.median_coated_area_m2,
            "residence": None,
            "wall_chart": None,
            "config": self.config_echo,
        }
        if self.residence is not None:
            d["residence"] = {
                "edges_s": [float(x) for x in self.residence.edges_s],
                "counts": [float(x) for x in self.residence.counts],
                "n_exit": self.residence.n_exit,
                "peaks": [{"index": p.index, "center_s": p.center,
                           "height": p.height, "prominence": p.prominence}
                          for p in self.residence.peaks],
            }
        if self.chart is not None:
            d["wall_chart"] = {
                "azimuth_edges_deg": [float(x) for x in self.chart.azimuth_edges_deg],
                "y_edges_m": [float(x) for x in self.chart.y_edges_m],
                "counts": self.chart.counts.tolist(),
                "cell_radius_m": self.chart.cell_radius_m,
            }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def summarize_run(result: EnsembleResult, residence_bins=100, residence_range_s=None,
                  wall_pixel_deg: float = 2.0, wall_pixel_y_m: float = 5e-4,
                  cell_radius_m: float = 8e-3, prominence_fraction: float = 0.05,
                  config_echo: dict | None = None) -> RunSummary:
    """Reduce an ensemble to its RunSummary."""
    counts = extraction_efficiency(result)

    chart = None
    area = None
    wall_mask = result.class_mask(TerminalClass.WALL)
    if wall_mask.any():
        az, y = wall_chart(result.terminal_positions[wall_mask])
        chart = bin_wall_hits(np.column_stack([az, y]), wall_pixel_deg,
                              wall_pixel_y_m, cell_radius_m)
        area = median_coated_area(None, chart=chart)

    residence = None
    if counts.n_exit > 0:
        residence = residence_histogram(result, bins=residence_bins,
                                        range_s=residence_range_s,
                                        prominence_fraction=prominence_fraction)

    return RunSummary(counts=counts, n_discarded=result.n_discarded,
                      n_attempts=result.n_attempts, n_aborted=result.n_aborted,
                      efficiency=counts.efficiency, median_coated_area_m2=area,
                      residence=residence, chart=chart,
                      config_echo=config_echo or {})


def write_curve_csv(curve: ThermalizationCurve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["collisions", "T_x_K", "T_y_K", "T_z_K",
                    "stderr_x_K", "stderr_y_K", "stderr_z_K", "n_molecules",
                    "low_stats"])
        for i, k in enumerate(curve.collision_counts):
            w.writerow([int(k),
                        *(repr(float(x)) for x in curve.temperatures[i]),
                        *(repr(float(x)) for x in curve.std_errors[i]),
                        int(curve.sample_counts[i]), int(curve.low_stats[i])])


def write_residence_csv(hist: ResidenceHistogram, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["tau_low_s", "tau_high_s", "fraction"])
        for i in range(len(hist.counts)):
            w.writerow([repr(float(hist.edges_s[i])),
                        repr(float(hist.edges_s[i + 1])),
                        repr(float(hist.counts[i]))])


def write_wall_chart_csv(chart: WallChart, path) -> None:
    """Dense counts matrix; header lines document the pixel geometry."""
    header = (
        f"azimuth rows: {len(chart.azimuth_edges_deg) - 1} pixels from "
        f"{chart.azimuth_edges_deg[0]} to {chart.azimuth_edges_deg[-1]} deg\n"
        f"y columns: {len(chart.y_edges_m) - 1} pixels from "
        f"{chart.y_edges_m[0]!r} to {chart.y_edges_m[-1]!r} m\n"
        f"cell radius: {chart.cell_radius_m!r} m"
    )
    np.savetxt(path, chart.counts, fmt="%d", delimiter=",", header=header)

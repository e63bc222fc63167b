"""Declarative run configuration: schema, validation, assembly.

Configs are JSON with explicit units in field names (sigma_m2,
temperature_K, ...) because unit slips are the dominant failure mode in this
kind of code.  `validate` returns structured diagnostics without running
anything; a config with no diagnostics is guaranteed not to fail on
configuration grounds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .collision import GasParams, SamplingMethod
from .constants import AMU_KG
from .flowfield import ANALYTIC_KINDS, FieldMetadata
from .geometry import CellRegions, Disc, slabs_overlap
from .tracer import TracerConfig

SCHEMA_VERSION = 1


@dataclass
class Diagnostic:
    fieldpath: str
    message: str

    def __str__(self):
        return f"{self.fieldpath}: {self.message}"


@dataclass
class RunConfig:
    """Parsed run configuration; see docs/formats.md for the file schema."""

    raw: dict
    field_source: str                 # "csv" | "analytic"
    csv_path: str | None
    analytic_kind: str | None
    analytic_params: dict
    voxel_size_m: float
    bounds_m: tuple
    metadata: FieldMetadata
    regions_spec: dict
    gas: GasParams
    method: SamplingMethod
    tracer: TracerConfig
    analysis: dict = field(default_factory=dict)
    output_dir: str = "out"
    write_trajectories: bool | None = None
    sweep: list = field(default_factory=list)

    def regions(self) -> CellRegions:
        r = self.regions_spec
        tol = r.get("plane_tolerance_m") or self.voxel_size_m
        return CellRegions(
            source_disc=Disc(np.asarray(r["source_disc"]["center_m"], float),
                             np.asarray(r["source_disc"]["normal"], float),
                             float(r["source_disc"]["radius_m"])),
            exit_disc=Disc(np.asarray(r["exit_disc"]["center_m"], float),
                           np.asarray(r["exit_disc"]["normal"], float),
                           float(r["exit_disc"]["radius_m"])),
            plane_tolerance_m=float(tol))


def _get(d: dict, path: str, default=None):
    cur = d
    for part in path.split("."):
        if not isinstance(cur, dict) or part not in cur:
            return default
        cur = cur[part]
    return cur


def _num(diags, d, path, *, positive=False, nonnegative=False, required=True,
         default=None):
    v = _get(d, path, None)
    if v is None:
        if required:
            diags.append(Diagnostic(path, "missing required numeric field"))
        return default
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        diags.append(Diagnostic(path, f"expected a number, got {type(v).__name__}"))
        return default
    v = float(v)
    if not np.isfinite(v):
        diags.append(Diagnostic(path, "must be finite"))
        return default
    if positive and v <= 0:
        diags.append(Diagnostic(path, f"must be > 0, got {v}"))
        return default
    if nonnegative and v < 0:
        diags.append(Diagnostic(path, f"must be >= 0, got {v}"))
        return default
    return v


def _vec3(diags, d, path, required=True):
    v = _get(d, path, None)
    if v is None:
        if required:
            diags.append(Diagnostic(path, "missing required 3-vector"))
        return None
    try:
        arr = np.asarray(v, dtype=float).reshape(3)
    except (TypeError, ValueError):
        diags.append(Diagnostic(path, f"expected a 3-vector, got {v!r}"))
        return None
    if not np.isfinite(arr).all():
        diags.append(Diagnostic(path, "must be finite"))
        return None
    return arr


def _disc_in_bounds(diags, name, spec, lo, hi):
    if spec is None or lo is None or hi is None:
        return
    center = spec.get("center")
    radius = spec.get("radius")
    if center is None or radius is None:
        return
    if np.any(center < lo) or np.any(center > hi):
        diags.append(Diagnostic(
            name, f"disc center {center.tolist()} outside field bounds "
                  f"lo={lo.tolist()} hi={hi.tolist()}"))


def validate_dict(cfg: dict) -> list[Diagnostic]:
    """Schema and physics sanity checks; returns all diagnostics found."""
    diags: list[Diagnostic] = []
    if not isinstance(cfg, dict):
        return [Diagnostic("$", "config root must be a JSON object")]

    version = cfg.get("schema_version")
    if version != SCHEMA_VERSION:
        diags.append(Diagnostic("schema_version",
                                f"expected {SCHEMA_VERSION}, got {version!r}"))

    # --- field ---
    source = _get(cfg, "field.source")
    lo = hi = None
    if source not in ("csv", "analytic"):
        diags.append(Diagnostic("field.source", f"must be 'csv' or 'analytic', got {source!r}"))
    elif source == "csv":
        if not isinstance(_get(cfg, "field.csv_path"), str):
            diags.append(Diagnostic("field.csv_path", "missing CSV path"))
    else:
        kind = _get(cfg, "field.kind")
        if kind not in ANALYTIC_KINDS:
            diags.append(Diagnostic("field.kind",
                                    f"must be one of {ANALYTIC_KINDS}, got {kind!r}"))
        params = _get(cfg, "field.params", {})
        if not isinstance(params, dict):
            diags.append(Diagnostic("field.params", "must be an object"))
            params = {}
        _num(diags, cfg, "field.params.density_m3", nonnegative=True)
        _num(diags, cfg, "field.params.temperature_K", positive=True)
        if kind == "uniform":
            _vec3(diags, cfg, "field.params.velocity_mps")
        elif kind == "radial_sink":
            _vec3(diags, cfg, "field.params.focus_m")
            _num(diags, cfg, "field.params.strength_mps", positive=True)
            _num(diags, cfg, "field.params.softening_m", positive=True)
        elif kind == "vortex_axial":
            _num(diags, cfg, "field.params.angular_speed_rad_s")
            _num(diags, cfg, "field.params.axial_mps")

    _num(diags, cfg, "field.voxel_size_m", positive=True)
    lo = _vec3(diags, cfg, "field.bounds_m.lo")
    hi = _vec3(diags, cfg, "field.bounds_m.hi")
    if lo is not None and hi is not None and not np.all(hi > lo):
        diags.append(Diagnostic("field.bounds_m", f"hi must exceed lo, got lo={lo.tolist()} hi={hi.tolist()}"))

    # --- regions ---
    discs = {}
    for name in ("source_disc", "exit_disc"):
        base = f"regions.{name}"
        center = _vec3(diags, cfg, f"{base}.center_m")
        normal = _vec3(diags, cfg, f"{base}.normal")
        radius = _num(diags, cfg, f"{base}.radius_m", positive=True)
        if normal is not None and np.linalg.norm(normal) == 0.0:
            diags.append(Diagnostic(f"{base}.normal", "must be nonzero"))
            normal = None
        discs[name] = {"center": center, "normal": normal, "radius": radius}
        _disc_in_bounds(diags, base, discs[name], lo, hi)
    tol = _num(diags, cfg, "regions.plane_tolerance_m", positive=True,
               required=False)
    src, ext = discs["source_disc"], discs["exit_disc"]
    if all(v is not None for d in (src, ext) for v in d.values()):
        voxel = _get(cfg, "field.voxel_size_m")
        slab_tol = tol or (voxel if isinstance(voxel, (int, float)) else 5e-4)
        if slabs_overlap(Disc(src["center"], src["normal"], src["radius"]),
                         Disc(ext["center"], ext["normal"], ext["radius"]),
                         float(slab_tol)):
            diags.append(Diagnostic(
                "regions", "source and exit discs overlap within the "
                           f"{slab_tol:.4g} m plane tolerance: source at "
                           f"{src['center'].tolist()} (r={src['radius']:.4g} m), "
                           f"exit at {ext['center'].tolist()} "
                           f"(r={ext['radius']:.4g} m)"))

    # --- gas ---
    _num(diags, cfg, "gas.cross_section_m2", positive=True, required=False)
    _num(diags, cfg, "gas.molecule_mass_amu", positive=True, required=False)
    _num(diags, cfg, "gas.buffer_mass_amu", positive=True, required=False)

    # --- sampling ---
    kind = _get(cfg, "sampling.method", "direct")
    if kind not in ("direct", "weighted"):
        diags.append(Diagnostic("sampling.method", f"must be 'direct' or 'weighted', got {kind!r}"))
    cand = _get(cfg, "sampling.candidates", 10)
    if not isinstance(cand, int) or isinstance(cand, bool) or cand < 1:
        diags.append(Diagnostic("sampling.candidates", f"must be an integer >= 1, got {cand!r}"))

    # --- tracer ---
    pc = _num(diags, cfg, "tracer.collision_probability", required=False, default=0.1)
    if pc is not None and not (0.0 < pc < 1.0):
        diags.append(Diagnostic("tracer.collision_probability", f"must lie in (0, 1), got {pc}"))
    for path in ("tracer.max_collisions", "tracer.record_stride", "tracer.target_count"):
        v = _get(cfg, path)
        if v is not None and (isinstance(v, bool) or not isinstance(v, int) or v < 1):
            diags.append(Diagnostic(path, f"must be an integer >= 1, got {v!r}"))
    kth = _get(cfg, "tracer.accept_min_collisions")
    if kth is not None and (isinstance(kth, bool) or not isinstance(kth, int)):
        diags.append(Diagnostic("tracer.accept_min_collisions", f"must be an integer, got {kth!r}"))
    kmax = _get(cfg, "tracer.max_collisions", 10 ** 9)
    if isinstance(kth, int) and isinstance(kmax, int) and kth >= kmax:
        diags.append(Diagnostic("tracer.accept_min_collisions",
                                f"must be below max_collisions ({kth} >= {kmax})"))
    _num(diags, cfg, "tracer.dt_max_s", positive=True, required=False)
    _num(diags, cfg, "tracer.source_temperature_K", positive=True, required=False)
    seed = _get(cfg, "tracer.master_seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
        diags.append(Diagnostic("tracer.master_seed", f"must be an integer, got {seed!r}"))

    # --- analysis ---
    _num(diags, cfg, "analysis.wall_pixel_deg", positive=True, required=False)
    _num(diags, cfg, "analysis.wall_pixel_y_m", positive=True, required=False)
    _num(diags, cfg, "analysis.cell_radius_m", positive=True, required=False)
    _num(diags, cfg, "analysis.residence_max_s", positive=True, required=False)
    rb = _get(cfg, "analysis.residence_bins")
    if rb is not None and (isinstance(rb, bool) or not isinstance(rb, int) or rb < 1):
        diags.append(Diagnostic("analysis.residence_bins", f"must be an integer >= 1, got {rb!r}"))
    tm = _get(cfg, "analysis.thermalization_max_collisions")
    if tm is not None:
        if isinstance(tm, bool) or not isinstance(tm, int) or tm < 0:
            diags.append(Diagnostic("analysis.thermalization_max_collisions",
                                    f"must be an integer >= 0, got {tm!r}"))
        elif _get(cfg, "tracer.record_stride", 1000) != 1:
            diags.append(Diagnostic("analysis.thermalization_max_collisions",
                                    "thermalization curves need tracer.record_stride = 1"))

    # --- sweep ---
    sweep = cfg.get("sweep", [])
    if not isinstance(sweep, list):
        diags.append(Diagnostic("sweep", "must be a list of override objects"))
    else:
        for i, item in enumerate(sweep):
            if not isinstance(item, dict):
                diags.append(Diagnostic(f"sweep[{i}]", "must be an object"))
                continue
            m = item.get("method")
            if m is not None and m not in ("direct", "weighted"):
                diags.append(Diagnostic(f"sweep[{i}].method", f"must be 'direct' or 'weighted', got {m!r}"))
            s = item.get("master_seed")
            if s is not None and (isinstance(s, bool) or not isinstance(s, int)):
                diags.append(Diagnostic(f"sweep[{i}].master_seed", "must be an integer"))

    return diags


def parse(cfg: dict) -> RunConfig:
    """Build a RunConfig from a validated dict (raises on invalid input)."""
    diags = validate_dict(cfg)
    if diags:
        raise ValueError("invalid config: " + "; ".join(str(d) for d in diags))

    gas = GasParams(
        cross_section_m2=float(_get(cfg, "gas.cross_section_m2", GasParams().cross_section_m2)),
        molecule_mass_kg=float(_get(cfg, "gas.molecule_mass_amu", 128.0)) * AMU_KG,
        buffer_mass_kg=float(_get(cfg, "gas.buffer_mass_amu", 4.0)) * AMU_KG)
    method = SamplingMethod(kind=_get(cfg, "sampling.method", "direct"),
                            candidates=int(_get(cfg, "sampling.candidates", 10)))
    defaults = TracerConfig()
    tracer = TracerConfig(
        accept_min_collisions=int(_get(cfg, "tracer.accept_min_collisions",
                                       defaults.accept_min_collisions)),
        max_collisions=int(_get(cfg, "tracer.max_collisions", defaults.max_collisions)),
        record_stride=int(_get(cfg, "tracer.record_stride", defaults.record_stride)),
        target_count=int(_get(cfg, "tracer.target_count", defaults.target_count)),
        collision_probability=float(_get(cfg, "tracer.collision_probability",
                                         defaults.collision_probability)),
        dt_max_s=float(_get(cfg, "tracer.dt_max_s", defaults.dt_max_s)),
        source_temperature_K=float(_get(cfg, "tracer.source_temperature_K",
                                        defaults.source_temperature_K)),
        master_seed=int(_get(cfg, "tracer.master_seed", defaults.master_seed)))
    metadata = FieldMetadata.from_dict(_get(cfg, "field.metadata", {}) or {})

    return RunConfig(
        raw=cfg,
        field_source=_get(cfg, "field.source"),
        csv_path=_get(cfg, "field.csv_path"),
        analytic_kind=_get(cfg, "field.kind"),
        analytic_params=_get(cfg, "field.params", {}) or {},
        voxel_size_m=float(_get(cfg, "field.voxel_size_m")),
        bounds_m=(np.asarray(_get(cfg, "field.bounds_m.lo"), float),
                  np.asarray(_get(cfg, "field.bounds_m.hi"), float)),
        metadata=metadata,
        regions_spec=cfg["regions"],
        gas=gas, method=method, tracer=tracer,
        analysis=_get(cfg, "analysis", {}) or {},
        output_dir=_get(cfg, "output.directory", "out"),
        write_trajectories=_get(cfg, "output.write_trajectories"),
        sweep=cfg.get("sweep", []))


def load(path) -> tuple[dict, list[Diagnostic]]:
    """Read a JSON config file; JSON errors become diagnostics with location."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        return {}, [Diagnostic(str(path), f"cannot read config: {exc}")]
    except json.JSONDecodeError as exc:
        return {}, [Diagnostic(f"{path}:{exc.lineno}:{exc.colno}", exc.msg)]
    return cfg, validate_dict(cfg)

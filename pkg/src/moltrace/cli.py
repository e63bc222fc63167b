"""Command-line entry point: validate configs, execute runs, write artifacts."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import __version__, analysis, config as config_mod, flowfield, tracer

OUTPUT_DIR_ENV = "MOLTRACE_OUT"
TRAJECTORY_DUMP_LIMIT = 10_000  # dumps default off above this target count

EXIT_OK = 0
EXIT_DIAGNOSTICS = 2
EXIT_IO = 3


def _build_grid(cfg: config_mod.RunConfig) -> flowfield.VoxelGrid:
    if cfg.field_source == "csv":
        samples = flowfield.load_samples_csv(cfg.csv_path)
        grid = flowfield.voxelize(samples, cfg.voxel_size_m, cfg.bounds_m,
                                  cfg.metadata)
        return flowfield.fill_soft_edges(grid)
    return flowfield.generate_analytic(cfg.analytic_kind, cfg.analytic_params,
                                       cfg.voxel_size_m, cfg.bounds_m,
                                       cfg.metadata)


def _config_echo(cfg: config_mod.RunConfig, seed: int) -> dict:
    # worker count deliberately not echoed: summaries are contractually
    # independent of it (it is recorded in the manifest instead)
    echo = json.loads(json.dumps(cfg.raw, sort_keys=True))
    echo.setdefault("tracer", {})["master_seed"] = seed
    echo["effective"] = {
        "package_version": __version__,
        "method": dataclasses.asdict(cfg.method),
        "gas": dataclasses.asdict(cfg.gas),
        "tracer": dataclasses.asdict(cfg.tracer) | {"master_seed": seed},
    }
    return echo


def _execute_one(cfg: config_mod.RunConfig, grid, out_dir: Path, seed: int,
                 workers: int) -> dict:
    """Run one configuration into out_dir; returns the artifact listing."""
    regions = cfg.regions()
    tr = dataclasses.replace(cfg.tracer, master_seed=seed)
    result = tracer.run_ensemble(grid, regions, cfg.gas, cfg.method, tr,
                                 workers=workers)

    a = cfg.analysis
    echo = _config_echo(cfg, seed)
    summary = analysis.summarize_run(
        result,
        residence_bins=a.get("residence_bins", 100),
        residence_range_s=(0.0, a["residence_max_s"]) if "residence_max_s" in a else None,
        wall_pixel_deg=a.get("wall_pixel_deg", 2.0),
        wall_pixel_y_m=a.get("wall_pixel_y_m", 5e-4),
        cell_radius_m=a.get("cell_radius_m", 8e-3),
        config_echo=echo)

    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = {}

    summary_path = out_dir / "summary.json"
    summary_path.write_text(summary.to_json(), encoding="utf-8")
    artifacts["summary"] = summary_path.name

    if summary.residence is not None:
        analysis.write_residence_csv(summary.residence, out_dir / "residence_histogram.csv")
        artifacts["residence_histogram"] = "residence_histogram.csv"
    if summary.chart is not None:
        analysis.write_wall_chart_csv(summary.chart, out_dir / "wall_chart.csv")
        artifacts["wall_chart"] = "wall_chart.csv"

    if "thermalization_max_collisions" in a:
        curve = analysis.thermalization_curve(result, cfg.gas,
                                              int(a["thermalization_max_collisions"]))
        analysis.write_curve_csv(curve, out_dir / "thermalization.csv")
        artifacts["thermalization"] = "thermalization.csv"

    dump = cfg.write_trajectories
    if dump is None:
        dump = cfg.tracer.target_count <= TRAJECTORY_DUMP_LIMIT
    if dump:
        tracer.dump_trajectories(result, out_dir / "trajectories.csv",
                                 out_dir / "trajectory_samples.csv")
        artifacts["trajectories"] = "trajectories.csv"
        artifacts["trajectory_samples"] = "trajectory_samples.csv"

    manifest = {
        "schema_version": config_mod.SCHEMA_VERSION,
        "package_version": __version__,
        "config": echo,
        "master_seed": seed,
        "workers": workers,
        "counts": summary.counts.as_dict(),
        "n_discarded": summary.n_discarded,
        "n_attempts": summary.n_attempts,
        "n_aborted": summary.n_aborted,
        "artifacts": artifacts,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return artifacts


def run_command(config_path, seed=None, workers=1, out=None) -> int:
    cfg_dict, diags = config_mod.load(config_path)
    if diags:
        for d in diags:
            print(f"error: {d}", file=sys.stderr)
        return EXIT_DIAGNOSTICS
    cfg = config_mod.parse(cfg_dict)

    out_root = Path(out or os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir)
    try:
        grid = _build_grid(cfg)
    except (OSError, ValueError) as exc:
        print(f"error: cannot build flow field: {exc}", file=sys.stderr)
        return EXIT_IO

    base_seed = cfg.tracer.master_seed if seed is None else int(seed)
    try:
        if cfg.sweep:
            for i, item in enumerate(cfg.sweep):
                sweep_cfg = cfg
                if "method" in item or "candidates" in item:
                    method = dataclasses.replace(
                        cfg.method, kind=item.get("method", cfg.method.kind),
                        candidates=item.get("candidates", cfg.method.candidates))
                    sweep_cfg = dataclasses.replace(cfg, method=method)
                item_seed = item.get("master_seed", base_seed)
                label = f"{i:03d}_{sweep_cfg.method.kind}_seed{item_seed}"
                _execute_one(sweep_cfg, grid, out_root / label, item_seed, workers)
                print(f"sweep {label}: done")
        else:
            _execute_one(cfg, grid, out_root, base_seed, workers)
    except OSError as exc:
        print(f"error: I/O failure under {out_root}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"artifacts written to {out_root}")
    return EXIT_OK


def validate_command(config_path) -> int:
    _, diags = config_mod.load(config_path)
    print(json.dumps([dataclasses.asdict(d) for d in diags], indent=2))
    return EXIT_OK if not diags else EXIT_DIAGNOSTICS


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="moltrace",
        description="Monte Carlo molecule tracing through voxelized buffer-gas flow fields")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a run from a JSON config")
    p_run.add_argument("config", help="path to the run configuration")
    p_run.add_argument("--seed", type=int, default=None,
                       help="override tracer.master_seed")
    p_run.add_argument("--workers", type=int, default=1,
                       help="worker threads (results are independent of this)")
    p_run.add_argument("--out", default=None,
                       help=f"output directory (also via ${OUTPUT_DIR_ENV})")

    p_val = sub.add_parser("validate", help="check a config without running")
    p_val.add_argument("config")

    args = parser.parse_args(argv)
    if args.command == "run":
        return run_command(args.config, seed=args.seed, workers=args.workers,
                           out=args.out)
    return validate_command(args.config)


if __name__ == "__main__":
    sys.exit(main())

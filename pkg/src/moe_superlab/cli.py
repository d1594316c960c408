"""Command-line entry point: ``moe-superlab <subcommand> --config PATH``.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from moe_superlab import __version__
from moe_superlab.analytic import (
    construct_support_moe,
    verify_cones_many,
    verify_equivalence,
    verify_equivalence_exhaustive,
)
from moe_superlab.config import KINDS, ConfigError, ExperimentConfig, validate_config
from moe_superlab.datagen import FeatureDistribution, make_rng
from moe_superlab.experiments import (
    PhaseGridSpec,
    run_partition_suite,
    run_phase_grid,
    run_specialization_suite,
    run_sweep,
)
from moe_superlab.metrics import MetricsReport, wtw_matrix
from moe_superlab.models import save_checkpoint
from moe_superlab.plotting import PlotSpec, render_bars, render_heatmap, render_lines, render_matrix, render_partition
from moe_superlab.training import TrainingDiverged, train

log = logging.getLogger("moe_superlab")


def write_csv(path, rows: list[dict]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if not rows:
            return path
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# keys that change where or how fast a run executes but not its results
_UNHASHED = ("out", "workers", "description")


def config_hash(data: dict) -> str:
    content = {k: v for k, v in data.items() if k not in _UNHASHED}
    return hashlib.sha256(json.dumps(content, sort_keys=True).encode()).hexdigest()[:12]


def run_directory(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out) / f"{cfg.kind}-{config_hash(cfg.raw)}"


def write_manifest(run_dir: Path, cfg: ExperimentConfig, summary: dict) -> Path:
    artifacts = sorted(p for p in run_dir.iterdir() if p.is_file() and p.name != "manifest.json")
    manifest = {
        "kind": cfg.kind,
        "seed": cfg.seed,
        "config": cfg.raw,
        "versions": {"moe_superlab": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "summary": summary,
        "artifacts": {p.name: _sha256(p) for p in artifacts},
    }
    path = run_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


# ---------------------------------------------------------------- runners


def _run_train(cfg: ExperimentConfig, run_dir: Path) -> dict:
    arch, dist = cfg.arch, cfg.distribution
    result = train(dist, arch, replace(cfg.train, seed=cfg.seed))
    save_checkpoint(result.model, run_dir / "checkpoint.json")
    result.write_loss_curve(run_dir / "loss_curve.csv")
    X = dist.draw(10 * cfg.train.batch_size, make_rng(cfg.seed, 3))
    report = MetricsReport.from_model(result.model, X)
    report.write_csv(run_dir / "results.csv")
    report.write_json(run_dir / "metrics.json")
    for e in range(arch.E):
        stats = [s for s in report.stats if s.expert == e]
        classes = [c.value for s, c in zip(report.stats, report.classes) if s.expert == e]
        render_bars([s.norm for s in stats], PlotSpec("bars", f"expert {e}: feature norms", "feature", "norm"),
                    run_dir / f"norms_expert{e}.svg", classes=classes)
        render_matrix(wtw_matrix(result.model.W[e]), PlotSpec("heatmap", f"expert {e}: W^T W"),
                      run_dir / f"wtw_expert{e}.svg")
    return {"final_loss": result.final_loss, **report.summary()}


def _sweep_rows(cfg: ExperimentConfig) -> list[dict]:
    importance = cfg.distribution.importance if cfg.distribution is not None else None
    rows = run_sweep(cfg.archs, cfg.densities, cfg.runs_per_point, cfg.train, cfg.seed,
                     importance=importance, workers=cfg.workers)
    for row in rows:
        row.pop("losses"), row.pop("fpds")
    return rows


def _run_fpd(cfg: ExperimentConfig, run_dir: Path) -> dict:
    rows = _sweep_rows(cfg)
    write_csv(run_dir / "results.csv", rows)
    render_results(run_dir / "results.csv", "fpd", run_dir / "fpd.svg")
    return {"points": len(rows), "failed": sum(r["failed"] for r in rows)}


def _run_loss(cfg: ExperimentConfig, run_dir: Path) -> dict:
    rows = _sweep_rows(cfg)
    write_csv(run_dir / "results.csv", rows)
    render_results(run_dir / "results.csv", "loss", run_dir / "loss.svg")
    return {"points": len(rows), "failed": sum(r["failed"] for r in rows)}


def _run_phase(cfg: ExperimentConfig, run_dir: Path) -> dict:
    opts = cfg.options.get("phase", {})
    spec = PhaseGridSpec(archs=cfg.archs, **opts)
    cells = run_phase_grid(spec, cfg.train, cfg.seed, workers=cfg.workers)
    write_csv(run_dir / "results.csv", [c.to_row() for c in cells])
    render_results(run_dir / "results.csv", "phase", run_dir)
    return {"cells": len(cells), "missing": sum(c.missing for c in cells)}


def _run_partition(cfg: ExperimentConfig, run_dir: Path) -> dict:
    opts = cfg.options.get("partition", {})
    dist = cfg.distribution or FeatureDistribution(2)
    runs = run_partition_suite(cfg.arch, dist, replace(cfg.train, seed=cfg.seed), opts.get("seeds", 20),
                               opts.get("resolution", 101), workers=cfg.workers)
    write_csv(run_dir / "results.csv", [
        {"seed": r.seed, "final_loss": r.final_loss, "dominant_share": r.dominant_share,
         "occupied_experts": r.occupied_experts, **{f"share_expert{e}": float(v) for e, v in enumerate(r.shares)}}
        for r in runs])
    order = sorted(runs, key=lambda r: r.final_loss)
    for tag, run in (("best", order[0]), ("worst", order[-1])):
        np.savetxt(run_dir / f"partition_{tag}.csv", run.grid, fmt="%d", delimiter=",")
        spec = PlotSpec("grid-partition", f"{tag} run, loss {run.final_loss:.4f}", "x0", "x1")
        render_partition(run.grid, spec, run_dir / f"partition_{tag}.svg")
    return {"best_loss": order[0].final_loss, "worst_loss": order[-1].final_loss}


def _run_specialize(cfg: ExperimentConfig, run_dir: Path) -> dict:
    opts = dict(cfg.options.get("specialize", {}))
    schemes = opts.pop("schemes", None) or [cfg.arch.router_init]
    models = opts.pop("models_per_scheme", 10)
    report = run_specialization_suite(cfg.arch, cfg.distribution, cfg.train, models, schemes, cfg.seed,
                                      workers=cfg.workers, **opts)
    rows = [row for scheme in report.schemes() for row in report.table(scheme)]
    write_csv(run_dir / "results.csv", rows)
    write_csv(run_dir / "experts.csv", [
        {"scheme": r.scheme, "model": r.model, "expert": r.expert, "n_monosemantic": r.n_mono,
         "features": " ".join(map(str, r.monosemantic)), "mean_usage": r.mean_usage,
         "usage_when_active": r.usage_when_active, "usage_when_only_active": r.usage_when_only_active,
         "all_occupied": all(r.occupied) if r.occupied else None}
        for r in report.experts])
    return {s: {"occupancy_rate": report.occupancy_rate(s)} for s in report.schemes()}


def _analytic_report(n: int, m: int, a: int, samples: int, sparsity: float, seed: int) -> dict:
    moe = construct_support_moe(n, m, a)
    exhaustive = verify_equivalence_exhaustive(moe)
    sampled = verify_equivalence(moe, samples, FeatureDistribution(n, sparsity), seed)
    return {"exhaustive": exhaustive, "sampled": sampled,
            "max_error": max(exhaustive["max_error"], sampled["max_error"])}


def _run_verify_analytic(cfg: ExperimentConfig, run_dir: Path) -> dict:
    an = cfg.options.get("analytic", {})
    report = _analytic_report(an.get("n", 6), an.get("m", 2), an.get("a", 2), an.get("samples", 10_000),
                              an.get("sparsity", 0.8), cfg.seed)
    (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return {"max_error": report["max_error"]}


def _run_verify_cones(cfg: ExperimentConfig, run_dir: Path) -> dict:
    c = cfg.options.get("cones", {})
    report = verify_cones_many(c.get("routers", 100), c.get("trials", 100_000), c.get("E", 4), c.get("n", 5), cfg.seed)
    (run_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return {k: report[k] for k in ("trials", "scaling_violations", "convexity_violations")}


RUNNERS = {
    "train": _run_train,
    "fpd": _run_fpd,
    "loss": _run_loss,
    "phase": _run_phase,
    "partition": _run_partition,
    "specialize": _run_specialize,
    "verify-analytic": _run_verify_analytic,
    "verify-cones": _run_verify_cones,
}


# ---------------------------------------------------------------- rendering from CSV


def _series(rows: list[dict], value: str) -> dict:
    series: dict[str, list] = {}
    for r in rows:
        series.setdefault(r["arch"], []).append((float(r["inverse_density"]), float(r[value]) if r[value] else float("nan")))
    return {k: sorted(v) for k, v in series.items()}


def render_results(csv_path, kind: str, out) -> list[Path]:
    """Render a results CSV produced by a sweep, phase or train run."""
    rows = read_csv(csv_path)
    out = Path(out)
    if kind == "fpd":
        spec = PlotSpec("lines", "features per dimension", "1 / (1 - S)", "features per dimension", log_x=True)
        return [render_lines(_series(rows, "mean_fpd"), spec, out, reference=1.0)]
    if kind == "loss":
        spec = PlotSpec("lines", "average loss", "1 / (1 - S)", "loss per feature", log_x=True, log_y=True)
        return [render_lines(_series(rows, "mean_loss_per_feature"), spec, out)]
    if kind == "phase":
        out.mkdir(parents=True, exist_ok=True)
        written = []
        groups: dict[tuple, list] = {}
        for r in rows:
            groups.setdefault((int(r["arch_index"]), int(r["expert"]), r["arch"], int(r["n_experts"])), []).append(r)
        for (a_i, e, label, E), grp in sorted(groups.items()):
            S_vals = sorted({float(r["S"]) for r in grp})
            r_vals = sorted({float(r["r"]) for r in grp})
            norm = np.full((len(S_vals), len(r_vals)), np.nan)
            interf = np.full_like(norm, np.nan)
            for r in grp:
                i, j = S_vals.index(float(r["S"])), r_vals.index(float(r["r"]))
                norm[i, j] = float(r["norm"]) if r["norm"] else np.nan
                interf[i, j] = float(r["interference"]) if r["interference"] else np.nan
            spec = PlotSpec("heatmap", f"{label} expert {e + 1}/{E}", "relative importance r", "sparsity S",
                            x_ticks=tuple(f"{v:.2f}" for v in r_vals), y_ticks=tuple(f"{v:.2f}" for v in S_vals))
            written.append(render_heatmap(norm, interf, spec, out / f"phase_arch{a_i}_expert{e}.svg"))
        return written
    if kind == "norms":
        spec = PlotSpec("bars", "feature norms", "feature", "norm")
        return [render_bars([float(r["norm"]) for r in rows], spec, out, classes=[r["class"] for r in rows])]
    raise ValueError(f"cannot render results of kind {kind!r}")


# ---------------------------------------------------------------- argument parsing


def _load_config(args) -> ExperimentConfig:
    data: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
    data.setdefault("kind", args.command)
    if data["kind"] != args.command:
        raise ConfigError(f"config kind '{data['kind']}' does not match subcommand '{args.command}'")
    if args.seed is not None:
        data["seed"] = args.seed
    if args.out is not None:
        data["out"] = args.out
    if args.command == "verify-analytic":
        an = data.setdefault("analytic", {})
        for key in ("n", "m", "a", "samples"):
            if getattr(args, key, None) is not None:
                an[key] = getattr(args, key)
    if args.command == "verify-cones":
        cones = data.setdefault("cones", {})
        for key in ("routers", "trials"):
            if getattr(args, key, None) is not None:
                cones[key] = getattr(args, key)
    return validate_config(data)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moe-superlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind)
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="parent directory for run directories")
        if kind == "verify-analytic":
            for key in ("n", "m", "a", "samples"):
                p.add_argument(f"--{key}", type=int)
        if kind == "verify-cones":
            p.add_argument("--routers", type=int)
            p.add_argument("--trials", type=int)
    r = sub.add_parser("render", help="render a results CSV to SVG")
    r.add_argument("--input", required=True)
    r.add_argument("--kind", required=True, choices=("fpd", "loss", "phase", "norms"))
    r.add_argument("--out", required=True, help="SVG path (directory for phase)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "render":
        try:
            paths = render_results(args.input, args.kind, args.out)
        except (OSError, ValueError, KeyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(f"render: wrote {len(paths)} file(s) to {args.out}")
        return 0

    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    run_dir = run_directory(cfg)
    run_dir.mkdir(parents=True, exist_ok=True)
    try:
        summary = RUNNERS[cfg.kind](cfg, run_dir)
    except (TrainingDiverged, RuntimeError, FloatingPointError, ValueError) as exc:
        print(f"error: {cfg.kind} failed: {exc}", file=sys.stderr)
        return 2
    write_manifest(run_dir, cfg, summary)
    brief = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in summary.items()
                      if not isinstance(v, (dict, list)))
    print(f"{cfg.kind}: {run_dir} {brief}".rstrip())
    return 0


if __name__ == "__main__":
    sys.exit(main())

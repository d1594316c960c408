"""Sweeps and suites over trained toy models.

Each runner splits its work into independent jobs with seeds derived from
``(seed, job key)`` and reduces results by key, so the output does not
depend on execution order or on the worker count (``MOE_SUPERLAB_WORKERS``).
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from moe_superlab.datagen import FeatureDistribution, make_rng
from moe_superlab.metrics import (
    MONO_THRESHOLD,
    NORM_EPS,
    FeatureClass,
    classify_feature,
    conditional_usage,
    feature_stats,
    features_per_dimension,
    interference_zscores,
    monosemantic_features,
    occupancy_map,
    occupies,
)
from moe_superlab.models import ArchSpec, MoEModel, RouterInit, init_model, route_batch
from moe_superlab.training import TrainConfig, TrainingDiverged, train, train_best_of

log = logging.getLogger(__name__)

WORKERS_ENV = "MOE_SUPERLAB_WORKERS"

__all__ = [
    "ArchSpec",
    "PhaseCell",
    "PhaseGridSpec",
    "SpecializationReport",
    "job_seed",
    "run_fpd_sweep",
    "run_loss_sweep",
    "run_phase_grid",
    "run_relative_monosemanticity",
    "run_partition_suite",
    "run_routing_partition",
    "run_specialization_suite",
    "run_sweep",
]


def job_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)).generate_state(1)[0])


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    return max(1, workers)


def _run_jobs(fn, jobs: dict, workers: int | None = None) -> dict:
    """Apply ``fn`` to every job value; returns results under the same keys."""
    workers = worker_count(workers)
    keys = sorted(jobs)
    if workers == 1 or len(keys) < 2:
        return {key: fn(jobs[key]) for key in keys}
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return dict(zip(keys, pool.map(fn, [jobs[key] for key in keys])))


# ---------------------------------------------------------------- sweeps


def _sweep_job(job):
    arch, dist, config = job
    try:
        result = train(dist, arch, config)
    except TrainingDiverged as exc:
        log.warning("sweep point failed: %s", exc)
        return None
    X = dist.draw(10 * config.batch_size, make_rng(config.seed, 3))
    return {
        "loss": result.final_loss,
        "fpd": features_per_dimension(result.model, X),
    }


def run_sweep(archs, densities, runs_per_point: int, config: TrainConfig, seed: int = 0,
              importance=None, workers: int | None = None) -> list[dict]:
    """Train ``runs_per_point`` models per (arch, density) and average loss and FPD.

    Importance defaults to uniform. ``mean_loss_per_feature`` is the mean
    loss divided by ``n``.
    """
    archs = list(archs)
    densities = [float(d) for d in densities]
    for d in densities:
        if not 0.0 < d <= 1.0:
            raise ValueError(f"densities must lie in (0, 1], got {d}")
    jobs = {}
    for a_i, arch in enumerate(archs):
        for d_i, density in enumerate(densities):
            dist = FeatureDistribution(arch.n, 1.0 - density, importance)
            for r in range(runs_per_point):
                jobs[(a_i, d_i, r)] = (arch, dist, replace(config, seed=job_seed(seed, a_i, d_i, r)))
    results = _run_jobs(_sweep_job, jobs, workers)

    rows = []
    for a_i, arch in enumerate(archs):
        for d_i, density in enumerate(densities):
            ok = [results[(a_i, d_i, r)] for r in range(runs_per_point) if results[(a_i, d_i, r)] is not None]
            losses = [o["loss"] for o in ok]
            fpds = [o["fpd"] for o in ok]
            rows.append({
                "arch": arch.label,
                "n": arch.n, "m": arch.m, "E": arch.E, "k": arch.k,
                "density": density,
                "inverse_density": 1.0 / density,
                "runs": len(ok),
                "failed": runs_per_point - len(ok),
                "mean_loss": float(np.mean(losses)) if ok else float("nan"),
                "mean_loss_per_feature": float(np.mean(losses)) / arch.n if ok else float("nan"),
                "mean_fpd": float(np.mean(fpds)) if ok else float("nan"),
                "losses": losses,
                "fpds": fpds,
            })
    return rows


def run_fpd_sweep(archs, densities, runs_per_point: int, config: TrainConfig, seed: int = 0,
                  workers: int | None = None) -> list[dict]:
    """Features-per-dimension against density, uniform importance."""
    keep = ("arch", "n", "m", "E", "k", "density", "inverse_density", "runs", "failed", "mean_fpd")
    return [{k: row[k] for k in keep} for row in run_sweep(archs, densities, runs_per_point, config, seed,
                                                          workers=workers)]


def run_loss_sweep(archs, densities, runs_per_point: int = 5, config: TrainConfig | None = None,
                   seed: int = 0, workers: int | None = None) -> list[dict]:
    """Mean final reconstruction loss against density, uniform importance."""
    config = config or TrainConfig()
    keep = ("arch", "n", "m", "E", "k", "density", "inverse_density", "runs", "failed",
            "mean_loss", "mean_loss_per_feature")
    return [{k: row[k] for k in keep} for row in run_sweep(archs, densities, runs_per_point, config, seed,
                                                          workers=workers)]


# ---------------------------------------------------------------- phase grid


def grid_axis(low: float, high: float, resolution: int) -> np.ndarray:
    """Cell centres of ``resolution`` equal cells covering ``[low, high]``."""
    edges = np.linspace(low, high, resolution + 1)
    return (edges[:-1] + edges[1:]) / 2


@dataclass(frozen=True)
class PhaseGridSpec:
    archs: list[ArchSpec]
    sparsity_range: tuple[float, float] = (0.1, 1.0)
    importance_range: tuple[float, float] = (0.1, 3.0)
    resolution: int = 10
    restarts: int = 10

    def __post_init__(self):
        lo, hi = self.sparsity_range
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError(f"sparsity_range must satisfy 0 <= low < high <= 1, got {self.sparsity_range}")
        lo, hi = self.importance_range
        if not 0.0 < lo < hi:
            raise ValueError(f"importance_range must satisfy 0 < low < high, got {self.importance_range}")
        if self.resolution < 1 or self.restarts < 1:
            raise ValueError("resolution and restarts must be >= 1")
        if not self.archs:
            raise ValueError("phase grid needs at least one architecture")

    @property
    def sparsities(self) -> np.ndarray:
        return grid_axis(*self.sparsity_range, self.resolution)

    @property
    def importances(self) -> np.ndarray:
        return grid_axis(*self.importance_range, self.resolution)


@dataclass
class PhaseCell:
    arch: str
    arch_index: int
    expert: int
    n_experts: int
    S: float
    r: float
    best_loss: float
    norm: float
    interference: float
    feature_class: FeatureClass | None

    @property
    def missing(self) -> bool:
        return self.feature_class is None

    def to_row(self) -> dict:
        return {
            "arch": self.arch, "arch_index": self.arch_index, "expert": self.expert,
            "n_experts": self.n_experts, "S": self.S, "r": self.r, "best_loss": self.best_loss,
            "norm": self.norm, "interference": self.interference,
            "class": self.feature_class.value if self.feature_class else "missing",
        }


def _phase_job(job):
    arch, dist, config, restarts = job
    try:
        result = train_best_of(dist, arch, config, restarts)
    except TrainingDiverged as exc:
        log.warning("phase cell failed: %s", exc)
        return None
    out = []
    for e in range(arch.E):
        last = feature_stats(result.model.W[e], e)[-1]
        out.append((result.final_loss, last.norm, last.interference, classify_feature(last)))
    return out


def run_phase_grid(spec: PhaseGridSpec, config: TrainConfig, seed: int = 0,
                   workers: int | None = None) -> list[PhaseCell]:
    """Best-of-``restarts`` training per (arch, S, r) cell; last-feature stats per expert.

    ``r`` scales the magnitude of the last feature; importance is uniform.
    """
    jobs = {}
    for a_i, arch in enumerate(spec.archs):
        for s_i, S in enumerate(spec.sparsities):
            for r_i, r in enumerate(spec.importances):
                dist = FeatureDistribution(arch.n, float(S), None, float(r))
                jobs[(a_i, s_i, r_i)] = (arch, dist, replace(config, seed=job_seed(seed, a_i, s_i, r_i)),
                                         spec.restarts)
    results = _run_jobs(_phase_job, jobs, workers)
    cells = []
    for (a_i, s_i, r_i), res in sorted(results.items()):
        arch = spec.archs[a_i]
        S, r = float(spec.sparsities[s_i]), float(spec.importances[r_i])
        for e in range(arch.E):
            if res is None:
                cells.append(PhaseCell(arch.label, a_i, e, arch.E, S, r, float("nan"), float("nan"),
                                       float("nan"), None))
            else:
                loss, norm, interf, cls = res[e]
                cells.append(PhaseCell(arch.label, a_i, e, arch.E, S, r, loss, norm, interf, cls))
    return cells


def phase_matrix(cells: list[PhaseCell], arch_index: int, expert: int, value: str = "norm") -> np.ndarray:
    """``(len(S), len(r))`` array of one attribute, rows ordered by increasing S."""
    sel = [c for c in cells if c.arch_index == arch_index and c.expert == expert]
    S_vals = sorted({c.S for c in sel})
    r_vals = sorted({c.r for c in sel})
    out = np.full((len(S_vals), len(r_vals)), np.nan)
    for c in sel:
        out[S_vals.index(c.S), r_vals.index(c.r)] = getattr(c, value)
    return out


# ---------------------------------------------------------------- routing partition


def run_routing_partition(model: MoEModel, resolution: int = 101) -> np.ndarray:
    """Expert index at each point of a ``resolution``² lattice on ``[0, 1]²``.

    ``grid[i, j]`` is the expert for ``x = (j / (res-1), i / (res-1))``.
    """
    if model.n != 2 or model.k != 1:
        raise ValueError(f"routing partition needs n=2 and k=1, got n={model.n}, k={model.k}")
    axis = np.linspace(0.0, 1.0, resolution)
    x0, x1 = np.meshgrid(axis, axis)
    X = np.column_stack([x0.ravel(), x1.ravel()])
    return route_batch(model, X).selected[:, 0].reshape(resolution, resolution)


def partition_shares(grid: np.ndarray, E: int) -> np.ndarray:
    return np.bincount(grid.ravel(), minlength=E) / grid.size


@dataclass
class PartitionRun:
    seed: int
    final_loss: float
    grid: np.ndarray = field(repr=False)
    shares: np.ndarray

    @property
    def occupied_experts(self) -> int:
        return int((self.shares > 0).sum())

    @property
    def dominant_share(self) -> float:
        return float(self.shares.max())


def _partition_job(job):
    arch, dist, config, resolution = job
    result = train(dist, arch, config)
    grid = run_routing_partition(result.model, resolution)
    return PartitionRun(config.seed, result.final_loss, grid, partition_shares(grid, arch.E))


def run_partition_suite(arch: ArchSpec, dist: FeatureDistribution, config: TrainConfig, seeds: int,
                        resolution: int = 101, workers: int | None = None) -> list[PartitionRun]:
    """Train ``seeds`` models (seeds ``config.seed + i``) and map each one's routing regions."""
    jobs = {i: (arch, dist, replace(config, seed=config.seed + i), resolution) for i in range(seeds)}
    results = _run_jobs(_partition_job, jobs, workers)
    return [results[i] for i in range(seeds)]


# ---------------------------------------------------------------- specialisation


@dataclass
class ExpertRecord:
    scheme: str
    model: int
    expert: int
    monosemantic: list[int]
    mean_usage: float
    usage_when_active: float
    usage_when_only_active: float
    occupied: list[bool] = field(default_factory=list)

    @property
    def n_mono(self) -> int:
        return len(self.monosemantic)


@dataclass
class SpecializationReport:
    experts: list[ExpertRecord]
    losses: dict[str, list[float]] = field(default_factory=dict)

    def schemes(self) -> list[str]:
        return list(dict.fromkeys(r.scheme for r in self.experts))

    def table(self, scheme: str) -> list[dict]:
        """Rows grouped by monosemantic-feature count; usage in percent, ``None`` for empty groups."""
        recs = [r for r in self.experts if r.scheme == scheme]
        top = max([r.n_mono for r in recs] + [5])
        rows = []
        for count in range(top + 1):
            group = [r for r in recs if r.n_mono == count]
            row = {"scheme": scheme, "n_monosemantic": count, "n_experts": len(group),
                   "mean_usage": None, "usage_when_active": None, "usage_when_only_active": None}
            if group and count > 0:
                row["mean_usage"] = 100 * float(np.mean([r.mean_usage for r in group]))
                row["usage_when_active"] = 100 * float(np.mean([r.usage_when_active for r in group]))
                row["usage_when_only_active"] = 100 * float(np.mean([r.usage_when_only_active for r in group]))
            rows.append(row)
        return rows

    def occupancy_rate(self, scheme: str) -> float:
        flags = [f for r in self.experts if r.scheme == scheme for f in r.occupied]
        return float(np.mean(flags)) if flags else float("nan")


def _scheme_label(init: RouterInit) -> str:
    return init.variant


def _specialization_job(job):
    arch, dist, config, samples, norm_threshold, mono_threshold, usage_seed = job
    result = train(dist, arch, config)
    model = result.model
    mono = monosemantic_features(model, norm_threshold, mono_threshold)
    out = []
    for e, feats in enumerate(mono):
        if feats:
            mean, active, only = conditional_usage(model, dist, feats, samples, seed=usage_seed)
            occ = [occupies(model, e, f) for f in feats] if model.k == 1 else []
            out.append((e, feats, float(mean[e]), float(active[e]), float(only[e]), occ))
        else:
            out.append((e, feats, float("nan"), float("nan"), float("nan"), []))
    return result.final_loss, out


def run_specialization_suite(arch: ArchSpec, dist: FeatureDistribution, config: TrainConfig,
                             models_per_scheme: int, schemes, seed: int = 0, samples: int = 10_000,
                             norm_threshold: float = NORM_EPS, mono_threshold: float = MONO_THRESHOLD,
                             workers: int | None = None) -> SpecializationReport:
    """Train models per router scheme and measure usage of each expert's monosemantic features."""
    if models_per_scheme < 1:
        raise ValueError(f"models_per_scheme must be >= 1, got {models_per_scheme}")
    schemes = list(schemes)
    jobs = {}
    for s_i, scheme in enumerate(schemes):
        scheme_arch = replace(arch, router_init=scheme)
        for i in range(models_per_scheme):
            jobs[(s_i, i)] = (scheme_arch, dist, replace(config, seed=job_seed(seed, s_i, i)), samples,
                              norm_threshold, mono_threshold, job_seed(seed, s_i, i, 1))
    results = _run_jobs(_specialization_job, jobs, workers)
    records = []
    losses: dict[str, list[float]] = {}
    for (s_i, i), (loss, per_expert) in sorted(results.items()):
        label = _scheme_label(schemes[s_i])
        losses.setdefault(label, []).append(loss)
        for e, feats, mean, active, only, occ in per_expert:
            records.append(ExpertRecord(label, i, e, feats, mean, active, only, occ))
    return SpecializationReport(records, losses)


def run_relative_monosemanticity(arch: ArchSpec, dist: FeatureDistribution, config: TrainConfig,
                                 seed: int | None = None) -> dict:
    """Interference z-scores of the features each expert occupied at initialisation.

    For every expert, the interference of its initially occupied features is
    standardised against that expert's interference over all features.
    """
    if arch.k != 1:
        raise ValueError("relative monosemanticity needs k=1 routing")
    if seed is not None:
        config = replace(config, seed=seed)
    initial = init_model(arch.n, arch.m, arch.E, arch.k, arch.router_init, seed=config.seed)
    owner = occupancy_map(initial)
    result = train(dist, arch, config)
    z = []
    for e in range(arch.E):
        occupied = np.flatnonzero(owner == e)
        if occupied.size == 0:
            z.append(float("nan"))
            continue
        interference = np.array([s.interference for s in feature_stats(result.model.W[e], e)])
        z.append(interference_zscores(interference, occupied))
    finite = [v for v in z if np.isfinite(v)]
    return {
        "zscores": z,
        "mean_z": float(np.mean(finite)) if finite else float("nan"),
        "final_loss": result.final_loss,
        "model": result.model,
    }

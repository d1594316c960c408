"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line detail; the terminal summary prints a
PASS/FAIL line per criterion. Set ``MOE_SUPERLAB_FULL=1`` for the full-scale
variants (100 specialisation models, 10x10 phase grid).
"""

import os
import time

import numpy as np
import pytest

from gradcheck import max_relative_error
from moe_superlab.analytic import construct_support_moe, verify_cones_many, verify_equivalence_exhaustive
from moe_superlab.datagen import FeatureDistribution, importance_exponential, importance_shuffled
from moe_superlab.experiments import (
    PhaseGridSpec,
    phase_matrix,
    run_partition_suite,
    run_phase_grid,
    run_relative_monosemanticity,
    run_specialization_suite,
    run_sweep,
)
from moe_superlab.metrics import dimensionality_matrix, total_capacity
from moe_superlab.models import ArchSpec, RouterInit, init_model
from moe_superlab.training import TrainConfig, train

FULL = os.environ.get("MOE_SUPERLAB_FULL") == "1"

# shorter schedule than the library default; converges for every setup below
FAST = TrainConfig(steps=5000, batch_size=256, learning_rate=3e-3)

pytestmark = pytest.mark.acceptance


def _detail(record, text):
    record("detail", text)


# ---------------------------------------------------------------- 1


@pytest.mark.criterion(1)
def test_gradients_match_finite_differences(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, checked = 0.0, 0
    for i in range(50):
        E = int(rng.integers(1, 4))
        k = int(rng.integers(1, min(2, E) + 1))
        model = init_model(int(rng.integers(2, 7)), int(rng.integers(1, 4)), E, k, seed=i)
        model.b[:] = rng.normal(0, 0.1, model.b.shape)
        model.router[:] = rng.normal(0, 1.0, model.router.shape)
        X = rng.random((16, model.n)) * (rng.random((16, model.n)) > 0.4)
        lb = 0.01 if i % 2 else 0.0
        err, n = max_relative_error(model, X, rng.uniform(0.5, 1.5, model.n), lb, h=1e-5)
        worst, checked = max(worst, err), checked + n
    elapsed = time.perf_counter() - t0
    _detail(record_property, f"worst relative error {worst:.2e} over {checked} coordinates ({elapsed:.1f}s)")
    assert worst < 1e-4
    assert elapsed < 10


# ---------------------------------------------------------------- 2


@pytest.mark.criterion(2)
def test_capacity_packing(record_property):
    dist = FeatureDistribution(20, 0.9, importance_exponential(20, 0.7))
    ratios = {}
    for arch in (ArchSpec(20, 6), ArchSpec(20, 2, 3, 1)):
        model = train(dist, arch, FAST).model
        ratios[arch.label] = total_capacity(model) / (arch.E * arch.m)
    _detail(record_property, ", ".join(f"{k}: {v:.3f} x E*m" for k, v in ratios.items()))
    for ratio in ratios.values():
        assert 0.85 <= ratio <= 1.05


# ---------------------------------------------------------------- 3 and 4

SWEEP_ARCHS = [ArchSpec(100, 20), ArchSpec(100, 5, 4, 1), ArchSpec(100, 2, 10, 2), ArchSpec(100, 1, 20, 5)]
SWEEP_DENSITIES = [0.05, 0.1, 0.2]


@pytest.fixture(scope="module")
def sweep():
    rows = run_sweep(SWEEP_ARCHS, SWEEP_DENSITIES, 5, FAST, seed=0)
    return {(r["arch"], r["density"]): r for r in rows}


@pytest.mark.criterion(3)
def test_features_per_dimension_ordering(sweep, record_property):
    lines = []
    for d in SWEEP_DENSITIES:
        fpd = [sweep[(a.label, d)]["mean_fpd"] for a in SWEEP_ARCHS]
        lines.append(f"d={d}: " + "/".join(f"{v:.2f}" for v in fpd))
    _detail(record_property, "mean FPD dense/E4/E10/E20 " + "; ".join(lines))
    for d in SWEEP_DENSITIES:
        fpd = [sweep[(a.label, d)]["mean_fpd"] for a in SWEEP_ARCHS]
        assert all(sweep[(a.label, d)]["runs"] == 5 for a in SWEEP_ARCHS)
        assert fpd[0] > fpd[1] > fpd[2] > fpd[3]
        if d <= 0.1:
            assert fpd[0] > 1.0


@pytest.mark.criterion(4)
def test_dense_loss_is_lowest(sweep, record_property):
    dense, e4 = SWEEP_ARCHS[0].label, SWEEP_ARCHS[1].label
    gaps = []
    for d in SWEEP_DENSITIES:
        base = sweep[(dense, d)]["mean_loss_per_feature"]
        gaps.append(sweep[(e4, d)]["mean_loss_per_feature"] - base)
        for a in SWEEP_ARCHS[1:]:
            assert base <= sweep[(a.label, d)]["mean_loss_per_feature"]
    _detail(record_property, "dense-vs-E4 gap per feature " + ", ".join(f"{g:.4f}" for g in gaps))
    for g in gaps:
        assert 0.0 <= g <= 0.15


# ---------------------------------------------------------------- 5


@pytest.mark.criterion(5)
def test_routing_partition(record_property):
    arch = ArchSpec(2, 1, 3, 1)
    runs = run_partition_suite(arch, FeatureDistribution(2, 0.0), TrainConfig(steps=3000, batch_size=256,
                                                                            learning_rate=3e-3), seeds=20)
    runs.sort(key=lambda r: r.final_loss)
    best, worst = runs[0], runs[-1]
    _detail(record_property, f"best loss {best.final_loss:.4f} with {best.occupied_experts} experts; "
                             f"worst loss {worst.final_loss:.4f}, dominant share {worst.dominant_share:.2f}")
    assert best.final_loss <= 0.05
    assert best.occupied_experts >= 2
    assert worst.dominant_share >= 0.95 or worst.final_loss >= 1.5 * best.final_loss


# ---------------------------------------------------------------- 6

DIAG_ARCH = ArchSpec(20, 5, 4, 1, RouterInit.diagonal())


def _diagonal_dims(sparsity):
    dist = FeatureDistribution(20, sparsity, importance_exponential(20, 0.7))
    D = dimensionality_matrix(train(dist, DIAG_ARCH, FAST).model)
    return [float(D[e, e]) for e in range(4)]


@pytest.mark.criterion(6)
def test_diagonal_init_monosemanticity(record_property):
    # feature density 0.1
    dims = _diagonal_dims(0.9)
    _detail(record_property, "D of each expert's own feature " + ", ".join(f"{d:.3f}" for d in dims))
    assert min(dims) >= 0.9


@pytest.mark.xfail(strict=True, reason="at 90% feature density the routed feature is absorbed by the bias")
def test_diagonal_init_dense_inputs():
    assert min(_diagonal_dims(0.1)) >= 0.9


# ---------------------------------------------------------------- 7


@pytest.mark.criterion(7)
def test_khot_occupancy(record_property):
    arch = ArchSpec(100, 10, 10, 1, RouterInit.random_khot(10))
    dist = FeatureDistribution(100, 0.9, importance_shuffled(100, 0.9, seed=0))
    models = 100 if FULL else 10
    report = run_specialization_suite(arch, dist, FAST, models, [arch.router_init], seed=0)
    recs = [r for r in report.experts if r.n_mono > 0]
    table = [row for row in report.table("random_khot") if row["n_monosemantic"] > 0 and row["n_experts"]]
    mean_usage = 100 * float(np.mean([r.mean_usage for r in recs]))
    only = [100 * r.usage_when_only_active for r in recs]
    active = [row["usage_when_active"] for row in table]
    _detail(record_property, f"occupancy {100 * report.occupancy_rate('random_khot'):.1f}%, "
                             f"mean usage {mean_usage:.2f}%, only-active min {min(only):.2f}%, "
                             f"when-active by count " + "/".join(f"{a:.1f}" for a in active))
    assert recs
    assert all(all(r.occupied) for r in recs)
    assert all(abs(u - 100.0) <= 0.5 for u in only)
    assert 8.0 <= mean_usage <= 12.0
    assert all(a < b for a, b in zip(active, active[1:]))


# ---------------------------------------------------------------- 8


@pytest.mark.criterion(8)
def test_relative_monosemanticity(record_property):
    arch = ArchSpec(20, 5, 4, 1, RouterInit.ordered_khot(5))
    out = run_relative_monosemanticity(arch, FeatureDistribution(20, 0.9), FAST, seed=0)
    _detail(record_property, f"mean z {out['mean_z']:.3f}, per expert "
                             + ", ".join(f"{z:.2f}" for z in out["zscores"]))
    assert out["mean_z"] <= -0.5


# ---------------------------------------------------------------- 9 and 10


@pytest.mark.criterion(9)
def test_analytic_equivalence(record_property):
    t0 = time.perf_counter()
    report = verify_equivalence_exhaustive(construct_support_moe(6, 2, 2), values=(0.25, 1.0))
    elapsed = time.perf_counter() - t0
    _detail(record_property, f"max error {report['max_error']:.1e} over {report['inputs']} inputs ({elapsed:.2f}s)")
    assert report["max_error"] < 1e-12
    assert elapsed < 1


@pytest.mark.criterion(10)
def test_cone_properties(record_property):
    t0 = time.perf_counter()
    report = verify_cones_many(routers=100, trials=100_000, E=4, n=5, seed=0)
    elapsed = time.perf_counter() - t0
    _detail(record_property, f"{report['scaling_violations']} scaling and {report['convexity_violations']} "
                             f"convexity violations in {report['trials']} trials ({elapsed:.2f}s)")
    assert report["trials"] == 100_000
    assert report["scaling_violations"] == 0 and report["convexity_violations"] == 0
    assert elapsed < 5


# ---------------------------------------------------------------- 11


@pytest.mark.criterion(11)
def test_phase_structure(record_property):
    spec = PhaseGridSpec([ArchSpec(2, 1), ArchSpec(2, 1, 2, 1)], resolution=10 if FULL else 5, restarts=10)
    config = TrainConfig(steps=2000, batch_size=256, learning_rate=3e-3, lb_coeff=0.01)
    cells = run_phase_grid(spec, config, seed=0)
    dense = phase_matrix(cells, 0, 0, "norm")
    moe = np.maximum(phase_matrix(cells, 1, 0, "norm"), phase_matrix(cells, 1, 1, "norm"))
    corner = next(c for c in cells if c.arch_index == 0 and c.S == spec.sparsities[0] and c.r == spec.importances[0])
    n_dense, n_moe = int((dense > 0.5).sum()), int((moe > 0.5).sum())
    _detail(record_property, f"corner {corner.feature_class.value}, top-row min norm {dense[-1].min():.2f}, "
                             f"cells represented dense {n_dense} vs E=2 {n_moe}")
    assert spec.importances[0] < 1
    assert corner.feature_class.value == "ignored"
    assert np.all(dense[-1] > 0.5)
    assert n_moe > n_dense

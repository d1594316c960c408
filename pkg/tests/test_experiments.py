import numpy as np
import pytest

from moe_superlab.datagen import FeatureDistribution
from moe_superlab.experiments import (
    PhaseGridSpec,
    SpecializationReport,
    ExpertRecord,
    grid_axis,
    job_seed,
    partition_shares,
    phase_matrix,
    run_fpd_sweep,
    run_loss_sweep,
    run_phase_grid,
    run_relative_monosemanticity,
    run_routing_partition,
    run_specialization_suite,
    run_sweep,
    worker_count,
)
from moe_superlab.models import ArchSpec, MoEModel, RouterInit
from moe_superlab.training import TrainConfig

FAST = TrainConfig(steps=60, batch_size=32, learning_rate=3e-3)
ARCHS = [ArchSpec(6, 2), ArchSpec(6, 1, 2, 1)]


def test_job_seeds_are_distinct_and_stable():
    seeds = {job_seed(0, a, b) for a in range(5) for b in range(5)}
    assert len(seeds) == 25
    assert job_seed(3, 1, 2) == job_seed(3, 1, 2)


def test_worker_count_from_environment(monkeypatch):
    monkeypatch.setenv("MOE_SUPERLAB_WORKERS", "3")
    assert worker_count() == 3
    assert worker_count(1) == 1


def test_sweep_rows():
    rows = run_sweep(ARCHS, [0.2, 0.5], 2, FAST, seed=1)
    assert len(rows) == 4
    for row in rows:
        assert row["runs"] == 2 and row["failed"] == 0
        assert row["mean_loss"] == pytest.approx(np.mean(row["losses"]))
        assert row["mean_loss_per_feature"] == pytest.approx(row["mean_loss"] / 6)
        assert row["inverse_density"] == pytest.approx(1 / row["density"])
    assert set(run_fpd_sweep(ARCHS, [0.5], 1, FAST)[0]) >= {"mean_fpd", "arch"}
    assert "mean_loss" in run_loss_sweep(ARCHS, [0.5], 1, FAST)[0]


def test_sweep_does_not_depend_on_worker_count():
    serial = run_sweep(ARCHS, [0.3], 2, FAST, seed=5, workers=1)
    parallel = run_sweep(ARCHS, [0.3], 2, FAST, seed=5, workers=2)
    assert serial == parallel


def test_sweep_rejects_bad_density():
    with pytest.raises(ValueError):
        run_sweep(ARCHS, [0.0], 1, FAST)


def test_sweep_records_failures():
    rows = run_sweep([ArchSpec(3, 1)], [1.0], 2, TrainConfig(steps=30, learning_rate=1e200))
    assert rows[0]["failed"] == 2 and np.isnan(rows[0]["mean_loss"])


def test_grid_axis_cell_centres():
    assert np.allclose(grid_axis(0.0, 1.0, 4), [0.125, 0.375, 0.625, 0.875])


def test_phase_grid_small():
    spec = PhaseGridSpec([ArchSpec(2, 1), ArchSpec(2, 1, 2, 1)], resolution=2, restarts=1)
    cells = run_phase_grid(spec, FAST, seed=0)
    assert len(cells) == 2 * 2 * (1 + 2)
    m = phase_matrix(cells, 1, 1, "norm")
    assert m.shape == (2, 2) and np.all(np.isfinite(m))
    assert {c.to_row()["class"] for c in cells} <= {"ignored", "monosemantic", "superposed"}


@pytest.mark.parametrize("kwargs", [
    dict(sparsity_range=(0.5, 0.2)), dict(importance_range=(0.0, 1.0)), dict(resolution=0), dict(archs=[]),
])
def test_phase_spec_validation(kwargs):
    base = dict(archs=[ArchSpec(2, 1)])
    base.update(kwargs)
    with pytest.raises(ValueError):
        PhaseGridSpec(**base)


def test_routing_partition_orientation():
    # expert 0 prefers x0, expert 1 prefers x1
    model = MoEModel(np.zeros((2, 1, 2)), np.zeros((2, 2)), np.array([[1.0, 0.0], [0.0, 1.0]]), k=1)
    grid = run_routing_partition(model, 11)
    assert grid[0, 10] == 0      # x = (1, 0)
    assert grid[10, 0] == 1      # x = (0, 1)
    assert grid[0, 0] == 0       # tie at origin goes to the lowest index
    shares = partition_shares(grid, 2)
    assert shares.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        run_routing_partition(MoEModel(np.zeros((2, 1, 3)), np.zeros((2, 3)), np.zeros((2, 3)), k=1))


def test_specialization_table_shape():
    recs = [
        ExpertRecord("s", 0, 0, [1], 0.1, 0.3, 1.0, [True]),
        ExpertRecord("s", 0, 1, [], float("nan"), float("nan"), float("nan"), []),
        ExpertRecord("s", 0, 2, [2, 3], 0.1, 0.5, 1.0, [True, False]),
    ]
    report = SpecializationReport(recs)
    table = report.table("s")
    assert [r["n_monosemantic"] for r in table] == [0, 1, 2, 3, 4, 5]
    assert table[0]["mean_usage"] is None
    assert table[1]["usage_when_active"] == pytest.approx(30.0)
    assert table[3]["n_experts"] == 0 and table[3]["mean_usage"] is None
    assert report.occupancy_rate("s") == pytest.approx(2 / 3)


def test_specialization_suite_runs():
    arch = ArchSpec(8, 2, 4, 1, RouterInit.ordered_khot(2))
    report = run_specialization_suite(arch, FeatureDistribution(8, 0.8), FAST, 2,
                                      [RouterInit.ordered_khot(2), RouterInit.random_khot(2)], samples=200)
    assert report.schemes() == ["ordered_khot", "random_khot"]
    assert len(report.experts) == 2 * 2 * 4
    assert len(report.losses["ordered_khot"]) == 2


def test_relative_monosemanticity_runs():
    arch = ArchSpec(8, 2, 4, 1, RouterInit.ordered_khot(2))
    out = run_relative_monosemanticity(arch, FeatureDistribution(8, 0.8), FAST, seed=3)
    assert len(out["zscores"]) == 4
    with pytest.raises(ValueError):
        run_relative_monosemanticity(ArchSpec(8, 2, 4, 2), FeatureDistribution(8), FAST)

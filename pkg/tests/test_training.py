import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import max_relative_error
from moe_superlab.datagen import FeatureDistribution
from moe_superlab.models import ArchSpec, BatchRouting, MoEModel, init_model
from moe_superlab.training import (
    AdamState,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    derive_seed,
    gradients,
    load_balance_loss,
    loss_and_gradients,
    reconstruction_loss,
    train,
    train_best_of,
)


def test_reconstruction_loss_examples():
    assert reconstruction_loss([1.0, 0.0], [0.0, 0.0], [2.0, 1.0]) == 2.0
    batch = reconstruction_loss(np.zeros((2, 2)), np.array([[1.0, 0.0], [0.0, 2.0]]), np.ones(2))
    assert batch == 2.5
    with pytest.raises(ValueError):
        reconstruction_loss([1.0], [1.0, 2.0], [1.0, 1.0])


def test_balance_loss_is_one_when_uniform():
    gates = np.full((4, 2), 0.5)
    routing = BatchRouting(gates, np.array([[0], [1], [0], [1]]), np.ones((4, 1)))
    assert load_balance_loss(routing, 2) == pytest.approx(1.0)


def test_balance_loss_collapsed():
    gates = np.tile([0.9, 0.1], (4, 1))
    routing = BatchRouting(gates, np.zeros((4, 1), dtype=int), np.ones((4, 1)))
    assert load_balance_loss(routing, 2) == pytest.approx(2 * 0.9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.0, 0.05]))
def test_gradients_match_finite_differences(seed, lb):
    r = np.random.default_rng(seed)
    E = int(r.integers(1, 4))
    model = init_model(int(r.integers(2, 7)), int(r.integers(1, 4)), E, int(r.integers(1, E + 1)), seed=seed)
    model.b[:] = r.normal(0, 0.1, model.b.shape)
    model.router[:] = r.normal(0, 1.0, model.router.shape)
    X = r.random((8, model.n)) * (r.random((8, model.n)) > 0.3)
    err, checked = max_relative_error(model, X, r.uniform(0.5, 1.5, model.n), lb)
    assert checked > 0
    assert err < 1e-4


def test_dense_router_gradient_is_zero():
    model = init_model(4, 2, 1, 1, seed=0)
    X = np.random.default_rng(0).random((5, 4))
    recon, lb, g = loss_and_gradients(model, X, np.ones(4), 0.1)
    assert not g.router.any()
    assert lb == 1.0


def test_unselected_expert_gets_no_weight_gradient():
    W = np.ones((2, 1, 2))
    R = np.array([[10.0, 10.0], [-10.0, -10.0]])
    model = MoEModel(W, np.zeros((2, 2)), R, k=1)
    g = gradients(model, np.array([[0.5, 0.2]]), np.ones(2))
    assert not g.W[1].any() and not g.b[1].any()


def test_adam_first_step_moves_by_learning_rate():
    model = init_model(3, 2, 2, 1, seed=0)
    before = model.W.copy()
    g = gradients(model, np.random.default_rng(1).random((16, 3)), np.ones(3))
    cfg = TrainConfig(learning_rate=0.01)
    adam_step(model, g, AdamState.zeros_like(model), cfg)
    delta = before - model.W
    nz = np.abs(g.W) > 1e-6
    # bias-corrected first step is lr * g / (|g| + eps)
    assert np.allclose(delta[nz], 0.01 * np.sign(g.W[nz]), rtol=1e-3)


def test_training_reduces_loss_and_is_deterministic(tmp_path):
    dist = FeatureDistribution(5, 0.7)
    cfg = TrainConfig(steps=300, batch_size=64, learning_rate=3e-3, seed=4, log_every=50)
    a = train(dist, ArchSpec(5, 2, 2, 1), cfg)
    b = train(dist, ArchSpec(5, 2, 2, 1), cfg)
    assert np.array_equal(a.model.W, b.model.W)
    assert a.final_loss == b.final_loss
    assert a.loss_curve[-1][1] < a.loss_curve[0][1]
    path = tmp_path / "curve.csv"
    a.write_loss_curve(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["step", "recon_loss", "lb_loss"]
    assert [int(r[0]) for r in rows[1:]] == [0, 50, 100, 150, 200, 250, 299]


def test_fixed_batch_training():
    cfg = TrainConfig(steps=20, batch_size=16, resample_each_step=False)
    assert np.isfinite(train(FeatureDistribution(3, 0.5), ArchSpec(3, 1), cfg).final_loss)


def test_divergence_is_reported():
    cfg = TrainConfig(steps=50, batch_size=16, learning_rate=1e200)
    with pytest.raises(TrainingDiverged):
        train(FeatureDistribution(3, 0.0), ArchSpec(3, 1), cfg)


def test_best_of_keeps_lowest_loss():
    dist = FeatureDistribution(3, 0.5)
    cfg = TrainConfig(steps=100, batch_size=32, learning_rate=3e-3, seed=2)
    best = train_best_of(dist, ArchSpec(3, 1), cfg, 3)
    losses = [train(dist, ArchSpec(3, 1), TrainConfig(steps=100, batch_size=32, learning_rate=3e-3,
                                                      seed=derive_seed(2, i))).final_loss for i in range(3)]
    assert best.final_loss == min(losses)
    assert derive_seed(2, 0) == 2


def test_best_of_fails_when_every_restart_diverges():
    with pytest.raises(TrainingDiverged):
        train_best_of(FeatureDistribution(3), ArchSpec(3, 1), TrainConfig(steps=20, learning_rate=1e200), 2)


@pytest.mark.parametrize("kwargs", [dict(steps=-1), dict(batch_size=0), dict(learning_rate=-1.0)])
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_arch_distribution_mismatch():
    with pytest.raises(ValueError):
        train(FeatureDistribution(4), ArchSpec(3, 1), TrainConfig(steps=1))

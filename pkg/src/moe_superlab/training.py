"""Loss, hand-derived gradients and Adam training for the toy models.

Everything is trained as an ``MoEModel``; a dense model is the ``E = 1``
case, whose router receives an identically zero gradient.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from moe_superlab.datagen import FeatureDistribution, make_rng
from moe_superlab.models import (
    ArchSpec,
    BatchRouting,
    DenseModel,
    MoEModel,
    expert_rows,
    forward_batch,
    init_model,
    route_batch,
)

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when the loss becomes non-finite."""


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 10_000
    batch_size: int = 1024
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    lb_coeff: float = 0.0
    seed: int = 0
    resample_each_step: bool = True
    log_every: int = 100

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValueError(f"adam_betas must lie in [0, 1), got {self.adam_betas}")
        if self.lb_coeff < 0:
            raise ValueError(f"lb_coeff must be >= 0, got {self.lb_coeff}")
        object.__setattr__(self, "adam_betas", (float(b1), float(b2)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d


@dataclass
class TrainResult:
    model: MoEModel
    final_loss: float
    loss_curve: list[tuple[int, float, float]] = field(default_factory=list)
    seed: int = 0

    def write_loss_curve(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "recon_loss", "lb_loss"])
            for step, recon, lb in self.loss_curve:
                writer.writerow([step, repr(recon), repr(lb)])


@dataclass
class GradientSet:
    W: np.ndarray
    b: np.ndarray
    router: np.ndarray

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.W, self.b, self.router


def reconstruction_loss(output, target, importance) -> float:
    """Importance-weighted squared error, summed over features.

    Accepts single vectors or ``(B, n)`` batches; batches are averaged over rows.
    """
    output = np.asarray(output, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    importance = np.asarray(importance, dtype=np.float64)
    if output.shape != target.shape or output.shape[-1] != importance.shape[-1]:
        raise ValueError(
            f"shape mismatch: output {output.shape}, target {target.shape}, importance {importance.shape}"
        )
    per_row = ((target - output) ** 2 * importance).sum(axis=-1)
    return float(np.mean(per_row))


def _balance_fractions(selected: np.ndarray, E: int) -> np.ndarray:
    B, k = selected.shape
    return np.bincount(selected.ravel(), minlength=E) / (B * k)


def load_balance_loss(decisions, E: int) -> float:
    """``E * sum_e f_e * P_e`` (Switch-Transformer form).

    ``f_e`` is the share of top-k slots given to expert ``e`` and ``P_e`` its
    mean full-softmax gate. Takes a list of :class:`RoutingDecision` or a
    :class:`BatchRouting`.
    """
    if isinstance(decisions, BatchRouting):
        selected, gates = decisions.selected, decisions.gates
    else:
        decisions = list(decisions)
        if not decisions:
            raise ValueError("load_balance_loss needs a nonempty batch")
        selected = np.array([d.selected for d in decisions])
        gates = np.array([d.full_gates for d in decisions])
    f = _balance_fractions(selected, E)
    P = gates.mean(axis=0)
    return float(E * np.dot(f, P))


def _as_moe(model) -> MoEModel:
    return model.as_moe() if isinstance(model, DenseModel) else model


def loss_and_gradients(model: MoEModel, X: np.ndarray, importance, lb_coeff: float = 0.0):
    """Return ``(recon_loss, lb_loss, GradientSet)`` for one batch.

    Top-k selection and the balance fractions ``f_e`` are held constant;
    gradients reach the router only through the renormalised gate weights
    and the mean gates ``P_e``. ``relu'(0)`` is taken as 0.
    """
    model = _as_moe(model)
    X = np.asarray(X, dtype=np.float64)
    importance = np.asarray(importance, dtype=np.float64)
    B = X.shape[0]
    E = model.E

    routing = route_batch(model, X)
    weights = routing.weights
    out = np.zeros_like(X)
    cache = []
    for e in range(E):
        rows, slots = expert_rows(routing, e)
        if rows.size == 0:
            cache.append(None)
            continue
        Xe = X[rows]
        h = Xe @ model.W[e].T
        pre = h @ model.W[e] + model.b[e]
        y = np.maximum(pre, 0.0)
        out[rows] += weights[rows, slots][:, None] * y
        cache.append((rows, slots, Xe, h, pre, y))

    diff = out - X
    recon = float(np.mean((diff * diff * importance).sum(axis=1)))
    G = (2.0 / B) * importance * diff

    dW = np.zeros_like(model.W)
    db = np.zeros_like(model.b)
    dweights = np.zeros_like(weights)
    for e, item in enumerate(cache):
        if item is None:
            continue
        rows, slots, Xe, h, pre, y = item
        Ge = G[rows]
        dweights[rows, slots] = (Ge * y).sum(axis=1)
        P = np.where(pre > 0, Ge * weights[rows, slots][:, None], 0.0)
        db[e] = P.sum(axis=0)
        dW[e] = h.T @ P + (P @ model.W[e].T).T @ Xe

    # renormalised top-k weights are a softmax over the selected logits
    dlogits = np.zeros((B, E))
    dsel = weights * (dweights - (weights * dweights).sum(axis=1, keepdims=True))
    np.put_along_axis(dlogits, routing.selected, dsel, axis=1)

    lb = 0.0
    if E > 1:
        lb = load_balance_loss(routing, E)
        if lb_coeff > 0:
            f = _balance_fractions(routing.selected, E)
            gates = routing.gates
            dg = np.broadcast_to(E * f / B, gates.shape)
            dlogits += lb_coeff * gates * (dg - (gates * dg).sum(axis=1, keepdims=True))
        dR = dlogits.T @ X
    else:
        lb = 1.0
        dR = np.zeros_like(model.router)
    return recon, lb, GradientSet(dW, db, dR)


def gradients(model, batch, importance, lb_coeff: float = 0.0) -> GradientSet:
    """Analytic gradient of ``recon + lb_coeff * balance`` w.r.t. all parameters."""
    return loss_and_gradients(model, batch, importance, lb_coeff)[2]


def total_loss(model, X, importance, lb_coeff: float = 0.0) -> float:
    """Objective value matching :func:`gradients` (used for finite-difference checks)."""
    model = _as_moe(model)
    out, routing = forward_batch(model, X)
    recon = reconstruction_loss(out, X, importance)
    if model.E == 1 or lb_coeff == 0:
        return recon
    return recon + lb_coeff * load_balance_loss(routing, model.E)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, model: MoEModel) -> "AdamState":
        params = (model.W, model.b, model.router)
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(model: MoEModel, grads: GradientSet, state: AdamState, config: TrainConfig) -> tuple[MoEModel, AdamState]:
    """One bias-corrected Adam update, applied in place to ``model`` and ``state``."""
    b1, b2 = config.adam_betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for param, g, m, v in zip((model.W, model.b, model.router), grads.arrays(), state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        param -= config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
    return model, state


def _eval_batch(dist: FeatureDistribution, config: TrainConfig) -> np.ndarray:
    return dist.draw(10 * config.batch_size, make_rng(config.seed, 2))


def train(dist: FeatureDistribution, arch: ArchSpec, config: TrainConfig) -> TrainResult:
    """Train one model from ``init_model(..., seed=config.seed)``.

    Batches come from the ``(seed, 1)`` stream (or one fixed batch when
    ``resample_each_step`` is off); ``final_loss`` is the reconstruction
    loss on a separate batch ten times the training batch size.
    """
    if arch.n != dist.n:
        raise ValueError(f"architecture has n={arch.n} but distribution has n={dist.n}")
    model = init_model(arch.n, arch.m, arch.E, arch.k, arch.router_init, seed=config.seed)
    state = AdamState.zeros_like(model)
    data_rng = make_rng(config.seed, 1)
    fixed = None if config.resample_each_step else dist.draw(config.batch_size, data_rng)
    curve: list[tuple[int, float, float]] = []
    every = max(1, config.log_every)

    for step in range(config.steps):
        X = fixed if fixed is not None else dist.draw(config.batch_size, data_rng)
        # overflow is reported below as divergence rather than as numpy warnings
        with np.errstate(over="ignore", invalid="ignore"):
            recon, lb, grads = loss_and_gradients(model, X, dist.importance, config.lb_coeff)
        if not (math.isfinite(recon) and math.isfinite(lb)):
            raise TrainingDiverged(
                f"non-finite loss at step {step} (recon={recon}, lb={lb}, seed={config.seed}, arch={arch.label})"
            )
        if step % every == 0 or step == config.steps - 1:
            curve.append((step, recon, lb))
        adam_step(model, grads, state, config)

    Xeval = _eval_batch(dist, config)
    with np.errstate(over="ignore", invalid="ignore"):
        out, _ = forward_batch(model, Xeval)
        final = reconstruction_loss(out, Xeval, dist.importance)
    if not math.isfinite(final):
        raise TrainingDiverged(f"non-finite evaluation loss (seed={config.seed}, arch={arch.label})")
    return TrainResult(model=model, final_loss=final, loss_curve=curve, seed=config.seed)


def derive_seed(seed: int, index: int) -> int:
    """Seed for restart/run ``index``; index 0 keeps the base seed."""
    if index == 0:
        return int(seed)
    return int(np.random.SeedSequence(int(seed), spawn_key=(int(index),)).generate_state(1)[0])


def train_best_of(dist: FeatureDistribution, arch: ArchSpec, config: TrainConfig, restarts: int) -> TrainResult:
    """Train ``restarts`` models with derived seeds and keep the lowest final loss."""
    if restarts < 1:
        raise ValueError(f"restarts must be >= 1, got {restarts}")
    best = None
    errors = []
    for r in range(restarts):
        try:
            result = train(dist, arch, replace(config, seed=derive_seed(config.seed, r)))
        except TrainingDiverged as exc:
            log.warning("restart %d skipped: %s", r, exc)
            errors.append(exc)
            continue
        if best is None or result.final_loss < best.final_loss:
            best = result
    if best is None:
        raise TrainingDiverged(f"all {restarts} restarts failed; last error: {errors[-1]}")
    return best

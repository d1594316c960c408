"""Tied-weight toy autoencoders: a dense model and a top-k routed mixture.

Expert ``e`` maps ``x -> ReLU(W_e.T @ W_e @ x + b_e)``. The router holds one
gate vector per expert (shape ``(E, n)``); gates are ``softmax(router @ x)``,
the top ``k`` experts are kept and their gates renormalised to sum to one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from moe_superlab.datagen import make_rng
from moe_superlab.numerics import (
    as_vector,
    matmul,
    matmul_transpose,
    relu,
    softmax,
    softmax_rows,
    top_k_indices,
    top_k_rows,
)

ROUTER_VARIANTS = ("xavier", "diagonal", "ordered_khot", "random_khot")


@dataclass(frozen=True)
class RouterInit:
    """How the router matrix is initialised.

    ``diagonal`` puts ``gain`` at ``(e, e)``; the k-hot variants give each
    expert a disjoint block of ``features_per_expert`` features (contiguous
    for ``ordered_khot``, a seeded random partition for ``random_khot``).
    """

    variant: str = "xavier"
    features_per_expert: int | None = None
    seed: int | None = None
    gain: float = 1.0

    def __post_init__(self):
        if self.variant not in ROUTER_VARIANTS:
            raise ValueError(f"unknown router init {self.variant!r}; expected one of {ROUTER_VARIANTS}")
        if self.variant in ("ordered_khot", "random_khot") and not self.features_per_expert:
            raise ValueError(f"{self.variant} requires features_per_expert")

    @classmethod
    def xavier(cls) -> "RouterInit":
        return cls("xavier")

    @classmethod
    def diagonal(cls, gain: float = 1.0) -> "RouterInit":
        return cls("diagonal", gain=gain)

    @classmethod
    def ordered_khot(cls, features_per_expert: int, gain: float = 1.0) -> "RouterInit":
        return cls("ordered_khot", features_per_expert=features_per_expert, gain=gain)

    @classmethod
    def random_khot(cls, features_per_expert: int, seed: int | None = None, gain: float = 1.0) -> "RouterInit":
        return cls("random_khot", features_per_expert=features_per_expert, seed=seed, gain=gain)

    def validate(self, n: int, E: int) -> None:
        if self.variant == "diagonal" and E > n:
            raise ValueError(f"diagonal router init needs E <= n, got E={E}, n={n}")
        if self.variant in ("ordered_khot", "random_khot") and self.features_per_expert * E != n:
            raise ValueError(
                f"{self.variant} needs features_per_expert * E == n, "
                f"got {self.features_per_expert} * {E} != {n}"
            )

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "features_per_expert": self.features_per_expert,
            "seed": self.seed,
            "gain": self.gain,
        }

    @classmethod
    def from_dict(cls, d: dict | str) -> "RouterInit":
        if isinstance(d, str):
            return cls(d)
        return cls(
            variant=d.get("variant", "xavier"),
            features_per_expert=d.get("features_per_expert"),
            seed=d.get("seed"),
            gain=float(d.get("gain", 1.0)),
        )


@dataclass
class DenseModel:
    W: np.ndarray  # (m, n)
    b: np.ndarray  # (n,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ValueError(f"inconsistent dense shapes W{self.W.shape} b{self.b.shape}")

    @property
    def n(self) -> int:
        return self.W.shape[1]

    @property
    def m(self) -> int:
        return self.W.shape[0]

    def as_moe(self) -> "MoEModel":
        return MoEModel(W=self.W[None].copy(), b=self.b[None].copy(), router=np.zeros((1, self.n)), k=1)


@dataclass(frozen=True)
class Expert:
    W: np.ndarray
    b: np.ndarray


@dataclass
class MoEModel:
    """Stacked expert weights ``W`` (E, m, n), biases ``b`` (E, n), router (E, n)."""

    W: np.ndarray
    b: np.ndarray
    router: np.ndarray
    k: int = 1
    router_init: RouterInit = field(default_factory=RouterInit)
    seed: int | None = None

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.router = np.asarray(self.router, dtype=np.float64)
        if self.W.ndim != 3:
            raise ValueError(f"expert weights must be (E, m, n), got {self.W.shape}")
        E, _, n = self.W.shape
        if self.b.shape != (E, n) or self.router.shape != (E, n):
            raise ValueError(
                f"inconsistent shapes: W{self.W.shape} b{self.b.shape} router{self.router.shape}"
            )
        if not 1 <= self.k <= E:
            raise ValueError(f"k={self.k} must satisfy 1 <= k <= E={E}")

    @property
    def E(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return self.W.shape[1]

    @property
    def n(self) -> int:
        return self.W.shape[2]

    @property
    def experts(self) -> list[Expert]:
        return [Expert(self.W[e], self.b[e]) for e in range(self.E)]

    def copy(self) -> "MoEModel":
        return MoEModel(self.W.copy(), self.b.copy(), self.router.copy(), self.k, self.router_init, self.seed)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "E": self.E,
            "k": self.k,
            "router": self.router.tolist(),
            "experts": [{"W": self.W[e].tolist(), "b": self.b[e].tolist()} for e in range(self.E)],
            "router_init": self.router_init.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MoEModel":
        model = cls(
            W=np.array([ex["W"] for ex in d["experts"]], dtype=np.float64).reshape(d["E"], d["m"], d["n"]),
            b=np.array([ex["b"] for ex in d["experts"]], dtype=np.float64).reshape(d["E"], d["n"]),
            router=np.array(d["router"], dtype=np.float64).reshape(d["E"], d["n"]),
            k=int(d["k"]),
            router_init=RouterInit.from_dict(d.get("router_init") or {}),
            seed=d.get("seed"),
        )
        return model


@dataclass(frozen=True)
class ArchSpec:
    n: int
    m: int
    E: int = 1
    k: int = 1
    router_init: RouterInit = field(default_factory=RouterInit)

    def __post_init__(self):
        if min(self.n, self.m, self.E, self.k) < 1:
            raise ValueError(f"architecture sizes must be positive: {self}")
        if self.k > self.E:
            raise ValueError(f"k={self.k} exceeds E={self.E}")
        self.router_init.validate(self.n, self.E)

    @property
    def label(self) -> str:
        if self.E == 1:
            return f"dense(n={self.n},m={self.m})"
        return f"moe(n={self.n},m={self.m},E={self.E},k={self.k})"

    def to_dict(self) -> dict:
        return {"n": self.n, "m": self.m, "E": self.E, "k": self.k, "router_init": self.router_init.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(
            n=int(d["n"]),
            m=int(d["m"]),
            E=int(d.get("E", 1)),
            k=int(d.get("k", 1)),
            router_init=RouterInit.from_dict(d.get("router_init", "xavier")),
        )


@dataclass(frozen=True)
class RoutingDecision:
    selected: list[int]
    weights: np.ndarray
    full_gates: np.ndarray


def save_checkpoint(model: MoEModel, path) -> None:
    # json writes floats with repr, which round-trips float64 exactly
    Path(path).write_text(json.dumps(model.to_dict(), indent=1))


def load_checkpoint(path) -> MoEModel:
    return MoEModel.from_dict(json.loads(Path(path).read_text()))


def _xavier(rng: np.random.Generator, fan_out: int, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_router(n: int, E: int, router_init: RouterInit, rng: np.random.Generator) -> np.ndarray:
    router_init.validate(n, E)
    g = router_init.gain
    R = np.zeros((E, n))
    if router_init.variant == "xavier":
        R = _xavier(rng, E, n, (E, n))
    elif router_init.variant == "diagonal":
        R[np.arange(E), np.arange(E)] = g
    else:
        p = router_init.features_per_expert
        if router_init.variant == "ordered_khot":
            order = np.arange(n)
        else:
            perm_rng = rng if router_init.seed is None else make_rng(router_init.seed)
            order = perm_rng.permutation(n)
        for e in range(E):
            R[e, order[e * p:(e + 1) * p]] = g
    return R


def init_model(n: int, m: int, E: int = 1, k: int = 1, router_init: RouterInit | None = None,
               seed: int = 0) -> MoEModel:
    """Xavier-uniform experts, zero biases, router per ``router_init``."""
    router_init = router_init or RouterInit()
    if not 1 <= k <= E:
        raise ValueError(f"k={k} must satisfy 1 <= k <= E={E}")
    router_init.validate(n, E)
    rng = make_rng(seed)
    W = _xavier(rng, m, n, (E, m, n))
    R = init_router(n, E, router_init, rng)
    return MoEModel(W=W, b=np.zeros((E, n)), router=R, k=k, router_init=router_init, seed=seed)


def init_dense(n: int, m: int, seed: int = 0) -> DenseModel:
    model = init_model(n, m, 1, 1, seed=seed)
    return DenseModel(model.W[0], model.b[0])


def forward_dense(model: DenseModel, x) -> np.ndarray:
    x = as_vector(x)
    if x.shape[0] != model.n:
        raise ValueError(f"input length {x.shape[0]} != n={model.n}")
    return relu(matmul_transpose(model.W, matmul(model.W, x)) + model.b)


def route(model: MoEModel, x) -> RoutingDecision:
    x = as_vector(x)
    gates = softmax(matmul(model.router, x))
    selected = top_k_indices(gates, model.k)
    picked = gates[selected]
    return RoutingDecision(selected=selected, weights=picked / picked.sum(), full_gates=gates)


def forward_moe(model: MoEModel, x) -> tuple[np.ndarray, RoutingDecision]:
    x = as_vector(x)
    if x.shape[0] != model.n:
        raise ValueError(f"input length {x.shape[0]} != n={model.n}")
    decision = route(model, x)
    out = np.zeros(model.n)
    for e, w in zip(decision.selected, decision.weights):
        out += w * forward_dense(DenseModel(model.W[e], model.b[e]), x)
    return out, decision


@dataclass
class BatchRouting:
    """Routing of a whole batch: gates (B, E), selected (B, k), weights (B, k)."""

    gates: np.ndarray
    selected: np.ndarray
    weights: np.ndarray

    def dense_weights(self, E: int) -> np.ndarray:
        """Renormalised weights scattered to a (B, E) array, zero where unselected."""
        out = np.zeros((self.selected.shape[0], E))
        np.put_along_axis(out, self.selected, self.weights, axis=1)
        return out


def route_batch(model: MoEModel, X: np.ndarray) -> BatchRouting:
    gates = softmax_rows(X @ model.router.T)
    selected = top_k_rows(gates, model.k)
    picked = np.take_along_axis(gates, selected, axis=1)
    return BatchRouting(gates, selected, picked / picked.sum(axis=1, keepdims=True))


def expert_rows(routing: BatchRouting, e: int) -> tuple[np.ndarray, np.ndarray]:
    """Row indices routed to expert ``e`` and the top-k slot each occupies."""
    return np.nonzero(routing.selected == e)


def forward_batch(model: MoEModel, X: np.ndarray) -> tuple[np.ndarray, BatchRouting]:
    """Vectorised :func:`forward_moe` over the rows of ``X``; only routed rows are computed."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n:
        raise ValueError(f"expected inputs of shape (B, {model.n}), got {X.shape}")
    routing = route_batch(model, X)
    out = np.zeros_like(X)
    for e in range(model.E):
        rows, slots = expert_rows(routing, e)
        if rows.size == 0:
            continue
        Xe = X[rows]
        y = np.maximum((Xe @ model.W[e].T) @ model.W[e] + model.b[e], 0.0)
        out[rows] += routing.weights[rows, slots][:, None] * y
    return out, routing

"""Superposition and specialisation measurements.

Per feature ``i`` of one weight matrix ``W`` (m, n), with ``W_i`` the i-th
column and ``Ŵ_i`` its unit vector:

* norm            ``||W_i||``
* interference    ``sum_{j != i} (Ŵ_i . W_j)^2``
* dimensionality  ``||W_i||^2 / sum_j (Ŵ_i . W_j)^2``

Features whose norm is below ``norm_eps`` (default 0.1) count as not
learned and get dimensionality 0.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from moe_superlab.datagen import FeatureDistribution, make_rng
from moe_superlab.models import DenseModel, MoEModel, route, route_batch
from moe_superlab.numerics import frobenius_sq

NORM_EPS = 0.1
MONO_THRESHOLD = 0.9


class FeatureClass(str, enum.Enum):
    IGNORED = "ignored"
    MONOSEMANTIC = "monosemantic"
    SUPERPOSED = "superposed"


@dataclass(frozen=True)
class FeatureStats:
    expert: int
    feature: int
    norm: float
    interference: float
    dimensionality: float


@dataclass(frozen=True)
class UsageStats:
    soft: np.ndarray  # mean renormalised gate weight per expert, sums to 1
    hard: np.ndarray  # fraction of samples selecting each expert, sums to k


def _experts(model) -> np.ndarray:
    if isinstance(model, DenseModel):
        return model.W[None]
    if isinstance(model, MoEModel):
        return model.W
    W = np.asarray(model, dtype=np.float64)
    return W[None] if W.ndim == 2 else W


def wtw_matrix(W) -> np.ndarray:
    """``(i, j) -> Ŵ_i . W_j``; rows of zero-norm features are zero."""
    W = np.asarray(W, dtype=np.float64)
    norms = np.linalg.norm(W, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    unit = np.where(norms > 0, W / safe, 0.0)
    return unit.T @ W


def _feature_arrays(W, norm_eps: float):
    norms = np.linalg.norm(W, axis=0)
    proj_sq = wtw_matrix(W) ** 2
    total = proj_sq.sum(axis=1)
    self_term = np.diag(proj_sq)
    interference = np.maximum(total - self_term, 0.0)
    learned = norms >= norm_eps
    dim = np.zeros_like(norms)
    dim[learned] = norms[learned] ** 2 / total[learned]
    interference[norms == 0] = 0.0
    return norms, interference, dim


def feature_stats(W, expert: int = 0, norm_eps: float = NORM_EPS) -> list[FeatureStats]:
    """Norm, interference and dimensionality of every column of ``W``."""
    norms, interf, dim = _feature_arrays(np.asarray(W, dtype=np.float64), norm_eps)
    return [
        FeatureStats(expert, i, float(norms[i]), float(interf[i]), float(dim[i]))
        for i in range(norms.shape[0])
    ]


def model_feature_stats(model, norm_eps: float = NORM_EPS) -> list[FeatureStats]:
    return [s for e, W in enumerate(_experts(model)) for s in feature_stats(W, e, norm_eps)]


def dimensionality_matrix(model, norm_eps: float = NORM_EPS) -> np.ndarray:
    """``(E, n)`` array of per-expert feature dimensionalities."""
    return np.array([_feature_arrays(W, norm_eps)[2] for W in _experts(model)])


def total_capacity(model, norm_eps: float = NORM_EPS) -> float:
    """Sum of dimensionalities over experts and features."""
    return float(dimensionality_matrix(model, norm_eps).sum())


def expert_usage(model: MoEModel, batch: np.ndarray) -> UsageStats:
    if isinstance(model, DenseModel):
        model = model.as_moe()
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[0] == 0:
        raise ValueError("expert_usage needs a nonempty batch")
    routing = route_batch(model, batch)
    soft = routing.dense_weights(model.E).mean(axis=0)
    hard = np.bincount(routing.selected.ravel(), minlength=model.E) / batch.shape[0]
    return UsageStats(soft=soft, hard=hard)


def features_per_dimension(model: MoEModel, batch: np.ndarray) -> float:
    """``(1/k) * sum_e p_e * ||W_e||_F^2 / m`` with ``p_e`` the soft usage."""
    if isinstance(model, DenseModel):
        model = model.as_moe()
    p = expert_usage(model, batch).soft
    return float(sum(p[e] * frobenius_sq(model.W[e]) for e in range(model.E)) / (model.k * model.m))


def classify_feature(stats: FeatureStats, norm_threshold: float = NORM_EPS,
                     mono_threshold: float = MONO_THRESHOLD) -> FeatureClass:
    if stats.norm < norm_threshold:
        return FeatureClass.IGNORED
    if stats.dimensionality >= mono_threshold:
        return FeatureClass.MONOSEMANTIC
    return FeatureClass.SUPERPOSED


def monosemantic_features(model, norm_threshold: float = NORM_EPS,
                          mono_threshold: float = MONO_THRESHOLD) -> list[list[int]]:
    """Per expert, the features classified monosemantic."""
    out = []
    for e, W in enumerate(_experts(model)):
        stats = feature_stats(W, e, norm_threshold)
        out.append([s.feature for s in stats
                    if classify_feature(s, norm_threshold, mono_threshold) is FeatureClass.MONOSEMANTIC])
    return out


def _soft_usage(model: MoEModel, X: np.ndarray) -> np.ndarray:
    return route_batch(model, X).dense_weights(model.E).mean(axis=0)


def conditional_usage(model: MoEModel, dist: FeatureDistribution, feature_set, samples: int = 10_000,
                      seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-expert soft usage (fractions) under three input conditions.

    Returns ``(mean, when_active, when_only_active)``: unconditional samples;
    samples with every feature in ``feature_set`` forced nonzero; samples in
    which exactly ``feature_set`` is nonzero.
    """
    feature_set = sorted(set(int(i) for i in feature_set))
    if not feature_set:
        raise ValueError("feature_set must be nonempty")
    if isinstance(model, DenseModel):
        model = model.as_moe()
    rng = make_rng(seed)
    X = dist.draw(samples, rng)
    mean = _soft_usage(model, X)

    # features are independent, so conditioning on "nonzero" is a fresh U(0,1) draw
    fresh = 1.0 - rng.random((samples, len(feature_set)))  # (0, 1]
    scale = np.array([dist.last_feature_scale if i == dist.n - 1 else 1.0 for i in feature_set])
    X_active = dist.draw(samples, rng)
    X_active[:, feature_set] = fresh * scale
    active = _soft_usage(model, X_active)

    X_only = np.zeros_like(X_active)
    X_only[:, feature_set] = fresh * scale
    only = _soft_usage(model, X_only)
    return mean, active, only


def occupies(model: MoEModel, expert: int, feature: int) -> bool:
    """True when the basis vector of ``feature`` routes to ``expert`` alone (k = 1 only)."""
    if model.k != 1:
        raise ValueError(f"occupancy is defined only for k=1 routing, model has k={model.k}")
    x = np.zeros(model.n)
    x[feature] = 1.0
    return route(model, x).selected == [expert]


def occupancy_map(model: MoEModel) -> np.ndarray:
    """Expert that each basis feature routes to (k = 1)."""
    if model.k != 1:
        raise ValueError(f"occupancy is defined only for k=1 routing, model has k={model.k}")
    return route_batch(model, np.eye(model.n)).selected[:, 0]


def interference_zscores(interference: np.ndarray, features) -> float:
    """Mean z-score of ``interference[features]`` within the expert; 0 if variance is 0."""
    interference = np.asarray(interference, dtype=np.float64)
    sd = interference.std()
    if sd == 0:
        return 0.0
    return float(np.mean((interference[list(features)] - interference.mean()) / sd))


@dataclass
class MetricsReport:
    stats: list[FeatureStats]
    classes: list[FeatureClass]
    features_per_dimension: float
    total_capacity: float
    usage: list[float]

    @classmethod
    def from_model(cls, model, batch: np.ndarray, norm_threshold: float = NORM_EPS,
                   mono_threshold: float = MONO_THRESHOLD) -> "MetricsReport":
        if isinstance(model, DenseModel):
            model = model.as_moe()
        stats = model_feature_stats(model, norm_threshold)
        return cls(
            stats=stats,
            classes=[classify_feature(s, norm_threshold, mono_threshold) for s in stats],
            features_per_dimension=features_per_dimension(model, batch),
            total_capacity=total_capacity(model, norm_threshold),
            usage=expert_usage(model, batch).soft.tolist(),
        )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["expert", "feature", "norm", "interference", "dimensionality", "class"])
            for s, c in zip(self.stats, self.classes):
                writer.writerow([s.expert, s.feature, repr(s.norm), repr(s.interference), repr(s.dimensionality), c.value])

    def summary(self) -> dict:
        return {
            "features_per_dimension": self.features_per_dimension,
            "total_capacity": self.total_capacity,
            "p_e": self.usage,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2))

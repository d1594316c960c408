"""Synthetic sparse-feature inputs.

Each feature is independently zero with probability ``sparsity`` and
otherwise uniform on ``[0, 1)``; the last feature is then multiplied by
``last_feature_scale``. ``importance`` is carried alongside for the loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator fully determined by a ``(seed, stream)`` pair."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream),)))


@dataclass(frozen=True)
class FeatureDistribution:
    n: int
    sparsity: float = 0.0
    importance: np.ndarray | None = field(default=None, repr=False)
    last_feature_scale: float = 1.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError(f"sparsity must lie in [0, 1], got {self.sparsity}")
        if not self.last_feature_scale > 0:
            raise ValueError(f"last_feature_scale must be > 0, got {self.last_feature_scale}")
        imp = np.ones(self.n) if self.importance is None else np.asarray(self.importance, dtype=np.float64)
        if imp.shape != (self.n,):
            raise ValueError(f"importance must have length {self.n}, got shape {imp.shape}")
        if not np.all(imp > 0):
            raise ValueError("importance entries must be positive")
        imp.setflags(write=False)
        object.__setattr__(self, "importance", imp)

    @property
    def density(self) -> float:
        return 1.0 - self.sparsity

    def draw(self, size: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``size`` samples from an existing generator."""
        if size < 1:
            raise ValueError(f"size must be >= 1, got {size}")
        u = rng.random((size, self.n))
        if self.sparsity >= 1.0:
            x = np.zeros_like(u)
        else:
            # u >= S happens with probability 1 - S, and given that, (u - S) / (1 - S) ~ U[0, 1)
            x = np.maximum(u - self.sparsity, 0.0) / (1.0 - self.sparsity)
        if self.last_feature_scale != 1.0:
            x[:, -1] *= self.last_feature_scale
        return x

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "sparsity": self.sparsity,
            "importance": self.importance.tolist(),
            "last_feature_scale": self.last_feature_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureDistribution":
        return cls(
            n=int(d["n"]),
            sparsity=float(d.get("sparsity", 0.0)),
            importance=d.get("importance"),
            last_feature_scale=float(d.get("last_feature_scale", 1.0)),
        )


def sample_batch(dist: FeatureDistribution, size: int, seed: int, stream: int = 0) -> np.ndarray:
    """Sample a ``(size, n)`` batch; identical ``(seed, stream)`` gives identical data."""
    return dist.draw(size, make_rng(seed, stream))


def importance_exponential(n: int, base: float) -> np.ndarray:
    """``base ** i`` for ``i = 0 .. n-1``."""
    if not base > 0:
        raise ValueError(f"base must be > 0, got {base}")
    return np.power(float(base), np.arange(n, dtype=np.float64))


def importance_shuffled(n: int, base: float, seed: int) -> np.ndarray:
    """A seeded random permutation of :func:`importance_exponential`."""
    imp = importance_exponential(n, base)
    return imp[make_rng(seed).permutation(n)]

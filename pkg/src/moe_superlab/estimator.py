"""scikit-learn compatible wrapper around the toy autoencoders."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from moe_superlab.datagen import FeatureDistribution
from moe_superlab.metrics import (
    MetricsReport,
    expert_usage,
    features_per_dimension,
    model_feature_stats,
    total_capacity,
)
from moe_superlab.models import ArchSpec, RouterInit, forward_batch, route_batch
from moe_superlab.training import TrainConfig, reconstruction_loss, train


class _RowSampler:
    """Minibatches drawn with replacement from the rows of a data matrix."""

    def __init__(self, X: np.ndarray, importance: np.ndarray):
        self.X = X
        self.n = X.shape[1]
        self.importance = importance

    def draw(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return self.X[rng.integers(0, self.X.shape[0], size)]


class ToyMoEAutoencoder(TransformerMixin, BaseEstimator):
    """Tied-weight ReLU autoencoder with optional top-k expert routing.

    ``n_experts=1`` gives the dense model. ``fit(X)`` trains on minibatches
    resampled from the rows of ``X``; ``fit(None)`` samples fresh synthetic
    data from ``(n_features, sparsity, importance, last_feature_scale)``.

    Parameters
    ----------
    n_hidden : int
        Hidden width ``m`` of each expert.
    n_experts, top_k : int
        Expert count ``E`` and number of active experts ``k``.
    router_init : str or RouterInit
        ``"xavier"``, ``"diagonal"``, ``"ordered_khot"`` or ``"random_khot"``.
    importance : array-like, optional
        Per-feature loss weights; uniform when omitted.
    """

    def __init__(self, n_hidden=2, n_experts=1, top_k=1, router_init="xavier", features_per_expert=None,
                 n_features=None, sparsity=0.0, importance=None, last_feature_scale=1.0,
                 steps=10_000, batch_size=1024, learning_rate=1e-3, lb_coeff=0.0,
                 resample_each_step=True, random_state=0):
        self.n_hidden = n_hidden
        self.n_experts = n_experts
        self.top_k = top_k
        self.router_init = router_init
        self.features_per_expert = features_per_expert
        self.n_features = n_features
        self.sparsity = sparsity
        self.importance = importance
        self.last_feature_scale = last_feature_scale
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lb_coeff = lb_coeff
        self.resample_each_step = resample_each_step
        self.random_state = random_state

    def _router_init(self) -> RouterInit:
        if isinstance(self.router_init, RouterInit):
            return self.router_init
        return RouterInit(self.router_init, features_per_expert=self.features_per_expert)

    def _importance(self, n: int) -> np.ndarray:
        if self.importance is None:
            return np.ones(n)
        imp = np.asarray(self.importance, dtype=np.float64)
        if imp.shape != (n,):
            raise ValueError(f"importance has shape {imp.shape}, expected ({n},)")
        return imp

    def fit(self, X=None, y=None):
        if X is None:
            if self.n_features is None:
                raise ValueError("fit(None) samples synthetic data and needs n_features")
            source = FeatureDistribution(self.n_features, self.sparsity, self.importance, self.last_feature_scale)
        else:
            X = check_array(X, dtype=np.float64)
            source = _RowSampler(X, self._importance(X.shape[1]))
        arch = ArchSpec(source.n, self.n_hidden, self.n_experts, self.top_k, self._router_init())
        config = TrainConfig(steps=self.steps, batch_size=self.batch_size, learning_rate=self.learning_rate,
                             lb_coeff=self.lb_coeff, seed=int(self.random_state or 0),
                             resample_each_step=self.resample_each_step)
        result = train(source, arch, config)
        self.model_ = result.model
        self.loss_curve_ = result.loss_curve
        self.final_loss_ = result.final_loss
        self.importance_ = np.asarray(source.importance, dtype=np.float64)
        self.n_features_in_ = source.n
        return self

    def _check(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but the model was fitted with {self.n_features_in_}")
        return X

    def predict(self, X) -> np.ndarray:
        """Reconstructions of the rows of ``X``."""
        X = self._check(X)
        return forward_batch(self.model_, X)[0]

    def transform(self, X) -> np.ndarray:
        """Gate-weighted hidden codes, ``(n_samples, n_experts * n_hidden)``; unselected experts are zero."""
        X = self._check(X)
        model = self.model_
        w = route_batch(model, X).dense_weights(model.E)
        codes = np.einsum("bn,emn->bem", X, model.W) * w[:, :, None]
        return codes.reshape(X.shape[0], model.E * model.m)

    def route(self, X) -> np.ndarray:
        """Renormalised gate weights per expert, ``(n_samples, n_experts)``."""
        X = self._check(X)
        return route_batch(self.model_, X).dense_weights(self.model_.E)

    def score(self, X, y=None) -> float:
        """Negative importance-weighted reconstruction loss."""
        X = self._check(X)
        return -reconstruction_loss(self.predict(X), X, self.importance_)

    def feature_stats(self):
        check_is_fitted(self, "model_")
        return model_feature_stats(self.model_)

    def total_capacity(self) -> float:
        check_is_fitted(self, "model_")
        return total_capacity(self.model_)

    def features_per_dimension(self, X) -> float:
        X = self._check(X)
        return features_per_dimension(self.model_, X)

    def expert_usage(self, X):
        X = self._check(X)
        return expert_usage(self.model_, X)

    def metrics_report(self, X) -> MetricsReport:
        X = self._check(X)
        return MetricsReport.from_model(self.model_, X)

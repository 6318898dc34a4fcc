"""Scikit-learn style estimators wrapping the invertible symbolic models.

These follow the usual conventions (constructor stores hyperparameters
untouched, ``fit`` validates and learns, fitted attributes get a trailing
underscore, ``get_params``/``set_params``/``clone`` work), so the models
compose with the wider ecosystem: ``SymbolicFlow`` acts like a density
estimator/transformer, ``SymbolicInverseModel`` like a supervised model
with posterior sampling, ``ConditionalSymbolicFlow`` like its conditional
counterpart.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .coupling import InvertibleStack
from .eql import DEFAULT_LIBRARY
from .flows import CisrModel, FlowModel, IsrModel
from .symbolic import compose_model
from .train import TrainConfig, train


class _TrainedMixin:
    def _train_config(self):
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr_start=self.lr_start,
            lr_end=self.lr_end,
            reg_weight=self.reg_weight,
            reg_warmup=self.reg_warmup,
            reg_ramp=self.reg_ramp,
            threshold_at=self.threshold_at,
            prune_tol=self.prune_tol,
            l05_a=self.l05_a,
            seed=self.random_state,
        )

    def _library(self):
        return tuple(self.activations) if self.activations else DEFAULT_LIBRARY

    def extract_expressions(self, prune_tol=0.0):
        """Closed-form expression set of the fitted map."""
        check_is_fitted(self, "model_")
        return compose_model(self.model_, prune_tol=prune_tol)


class SymbolicFlow(_TrainedMixin, TransformerMixin, BaseEstimator):
    """Normalizing flow with equation-learner coupling blocks.

    ``fit(X)`` learns an invertible map pushing X to a standard normal;
    ``transform``/``inverse_transform`` apply the map, ``score_samples``
    gives exact log densities and ``sample`` draws new points.
    """

    def __init__(self, n_blocks=2, subnet_layers=2, activations=None, clamp=2.0,
                 epochs=200, batch_size=64, lr_start=1e-2, lr_end=1e-4,
                 reg_weight=0.0, reg_warmup=0.25, reg_ramp=0.25,
                 threshold_at=0.85, prune_tol=0.0, l05_a=0.05,
                 pad_weight=1.0, random_state=0):
        self.n_blocks = n_blocks
        self.subnet_layers = subnet_layers
        self.activations = activations
        self.clamp = clamp
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.reg_weight = reg_weight
        self.reg_warmup = reg_warmup
        self.reg_ramp = reg_ramp
        self.threshold_at = threshold_at
        self.prune_tol = prune_tol
        self.l05_a = l05_a
        self.pad_weight = pad_weight
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        stack = InvertibleStack.build(
            X.shape[1], self.n_blocks, self.subnet_layers, self._library(),
            clamp=self.clamp, seed=self.random_state, pad_weight=self.pad_weight,
        )
        self.model_ = FlowModel(stack)
        _, self.history_ = train(self.model_, (X,), self._train_config())
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return self.model_.forward(X)[0]

    def inverse_transform(self, Z):
        check_is_fitted(self, "model_")
        Z = check_array(Z, dtype=np.float64)
        return self.model_.inverse(Z)

    def score_samples(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return self.model_.log_density(X)

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "model_")
        seed = self.random_state if random_state is None else random_state
        return self.model_.sample(n_samples, seed=seed)


class SymbolicInverseModel(_TrainedMixin, BaseEstimator):
    """Invertible surrogate for a forward process with posterior sampling.

    ``fit(X, Y)`` learns a bijection x -> [y, z]; ``predict`` evaluates the
    learned forward process and ``sample_posterior(y)`` inverts it with
    latent draws to sample p(x | y).
    """

    def __init__(self, n_blocks=6, subnet_layers=3, activations=None, clamp=2.0,
                 sigma2=1e-2, epochs=50, batch_size=100, lr_start=1e-2, lr_end=1e-4,
                 reg_weight=0.0, reg_warmup=0.25, reg_ramp=0.25,
                 threshold_at=0.85, prune_tol=0.0, l05_a=0.05,
                 pad_weight=1.0, random_state=0):
        self.n_blocks = n_blocks
        self.subnet_layers = subnet_layers
        self.activations = activations
        self.clamp = clamp
        self.sigma2 = sigma2
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.reg_weight = reg_weight
        self.reg_warmup = reg_warmup
        self.reg_ramp = reg_ramp
        self.threshold_at = threshold_at
        self.prune_tol = prune_tol
        self.l05_a = l05_a
        self.pad_weight = pad_weight
        self.random_state = random_state

    def fit(self, X, Y):
        X = check_array(X, dtype=np.float64)
        Y = check_array(Y, dtype=np.float64, ensure_2d=False)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Y.shape[1] >= X.shape[1]:
            raise ValueError("need d_y < d_x so latent variables remain")
        self.n_features_in_ = X.shape[1]
        stack = InvertibleStack.build(
            X.shape[1], self.n_blocks, self.subnet_layers, self._library(),
            clamp=self.clamp, seed=self.random_state, pad_weight=self.pad_weight,
        )
        self.model_ = IsrModel(stack, d_y=Y.shape[1], sigma2=self.sigma2)
        _, self.history_ = train(self.model_, (X, Y), self._train_config())
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return self.model_.forward(X)[0]

    def sample_posterior(self, y, n_samples, random_state=None):
        check_is_fitted(self, "model_")
        seed = self.random_state if random_state is None else random_state
        return self.model_.sample_posterior(y, n_samples, seed=seed)


class ConditionalSymbolicFlow(_TrainedMixin, BaseEstimator):
    """Conditional variant: fit(X, Y) learns x -> z given y, with y
    concatenated onto every coupling subnetwork input."""

    def __init__(self, n_blocks=6, subnet_layers=3, activations=None, clamp=2.0,
                 epochs=50, batch_size=100, lr_start=1e-2, lr_end=1e-4,
                 reg_weight=0.0, reg_warmup=0.25, reg_ramp=0.25,
                 threshold_at=0.85, prune_tol=0.0, l05_a=0.05,
                 pad_weight=1.0, random_state=0):
        self.n_blocks = n_blocks
        self.subnet_layers = subnet_layers
        self.activations = activations
        self.clamp = clamp
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.reg_weight = reg_weight
        self.reg_warmup = reg_warmup
        self.reg_ramp = reg_ramp
        self.threshold_at = threshold_at
        self.prune_tol = prune_tol
        self.l05_a = l05_a
        self.pad_weight = pad_weight
        self.random_state = random_state

    def fit(self, X, Y):
        X = check_array(X, dtype=np.float64)
        Y = check_array(Y, dtype=np.float64, ensure_2d=False)
        if Y.ndim == 1:
            Y = Y[:, None]
        self.n_features_in_ = X.shape[1]
        stack = InvertibleStack.build(
            X.shape[1], self.n_blocks, self.subnet_layers, self._library(),
            clamp=self.clamp, cond_dim=Y.shape[1], seed=self.random_state,
            pad_weight=self.pad_weight,
        )
        self.model_ = CisrModel(stack)
        _, self.history_ = train(self.model_, (X, Y), self._train_config())
        return self

    def latent(self, X, Y):
        check_is_fitted(self, "model_")
        return self.model_.forward(X, Y)[0]

    def sample_posterior(self, y, n_samples, random_state=None):
        check_is_fitted(self, "model_")
        seed = self.random_state if random_state is None else random_state
        return self.model_.sample_posterior(y, n_samples, seed=seed)

"""scikit-learn style wrapper around :func:`survdd.net.train`."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .datagen import IntervalDiscretizer, SurvivalData
from .exceptions import InvalidConfigError
from .losses import LOSS_KINDS, compute_loss, nmtlr_probabilities, sigmoid, softplus
from .net import TrainConfig, forward, make_task, mlp_init, train
from .validation import check_X_y


class SurvivalMLP(BaseEstimator):
    """Two-hidden-layer network trained on one of the four survival losses.

    ``y`` may be a structured array with ``event``/``time`` fields, an
    ``(n, 2)`` array of ``[time, event]`` or a ``(time, event)`` pair. Interval
    losses discretize time with :class:`IntervalDiscretizer` fitted on the
    training targets; N-MTLR always gets a tail interval.
    """

    def __init__(self, loss="deepsurv", width=32, n_intervals=20, grid_scheme="equidistant",
                 lr=1e-3, batch_size=64, max_epochs=2000, window=20, rel_tol=1e-4,
                 full_batch=False, random_state=0):
        self.loss = loss
        self.width = width
        self.n_intervals = n_intervals
        self.grid_scheme = grid_scheme
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.window = window
        self.rel_tol = rel_tol
        self.full_batch = full_batch
        self.random_state = random_state

    def _task(self, X, time, event):
        grid = getattr(self, "discretizer_", None)
        return make_task(self.loss, SurvivalData(X, time, event),
                         None if grid is None else grid.grid_)

    def fit(self, X, y):
        if self.loss not in LOSS_KINDS:
            raise InvalidConfigError(f"unknown loss {self.loss!r}; expected one of {LOSS_KINDS}")
        X, time, event = check_X_y(X, y)
        if self.loss == "deepsurv":
            self.discretizer_ = None
            q = 1
        else:
            self.discretizer_ = IntervalDiscretizer(self.n_intervals, self.grid_scheme,
                                                    tail=self.loss == "nmtlr").fit((time, event))
            q = self.n_intervals
        seed = int(self.random_state or 0)
        cfg = TrainConfig(lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
                          window=self.window, rel_tol=self.rel_tol, full_batch=self.full_batch,
                          seed=seed)
        params = mlp_init(X.shape[1], self.width, q, seed)
        self.outcome_ = train(params, self._task(X, time, event), None, self.loss, cfg)
        self.params_ = self.outcome_.params
        self.n_features_in_ = X.shape[1]
        self.loss_curve_ = self.outcome_.trace
        return self

    def decision_function(self, X):
        """Raw logits: ``(n,)`` for deepsurv, ``(n, m)`` otherwise."""
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        z, _ = forward(self.params_, X)
        return z[:, 0] if self.loss == "deepsurv" else z

    def predict(self, X):
        """Log-risk scores for deepsurv; survival at each cut point for interval losses."""
        if self.loss == "deepsurv":
            return self.decision_function(X)
        return self.predict_survival(X)

    def predict_survival(self, X):
        """Survival probabilities at ``grid[1:]`` (interval losses only)."""
        z = self.decision_function(X)
        if self.loss == "deepsurv":
            raise InvalidConfigError("deepsurv has no baseline hazard; survival is undefined")
        if self.loss == "nmtlr":
            return nmtlr_probabilities(z)[1]
        if self.loss == "nnet":
            return np.cumprod(1.0 - sigmoid(z), axis=1)
        # intensities are per (normalized) interval, so the cumulative hazard is a plain sum
        return np.exp(-np.cumsum(softplus(z), axis=1))

    def transform(self, X):
        """Penultimate embedding ``f(x)``."""
        check_is_fitted(self, "params_")
        _, emb = forward(self.params_, check_array(X, dtype=float))
        return emb

    def score(self, X, y):
        """Negative mean per-subject training-loss on ``(X, y)`` (higher is better)."""
        check_is_fitted(self, "params_")
        X, time, event = check_X_y(X, y)
        task = self._task(X, time, event)
        z = self.decision_function(X)
        return -compute_loss(self.loss, z, task.target, with_margin=False).mean

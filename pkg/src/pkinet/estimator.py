"""Scikit-learn style front end for the incremental protocol.

``fit`` runs the base session on abundant data; each subsequent
``partial_fit`` call runs one incremental session over classes never seen
before. Labels may be arbitrary integers or strings; they are encoded to
the dense session-ordered ids the engine requires and decoded back in
``predict``.

Example
-------
>>> clf = PKIClassifier(base_epochs=20, incremental_iters=50)
>>> clf.fit(X_base, y_base)
>>> clf.partial_fit(X_new, y_new)     # 5 new classes, 5 shots each
>>> clf.score(X_test_all, y_test_all)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .data import FeatureDataset
from .model import forward_logits
from .trainer import TrainConfig, base_train, incremental_train
from .validation import check_feature_matrix, check_label_vector


class PKIClassifier(ClassifierMixin, BaseEstimator):
    """Projector-ensemble classifier over frozen backbone features.

    Parameters
    ----------
    mode : {"pki", "pkiv1", "pkiv2"}
        Ensemble aggregation: keep every per-session projector (pki), a
        single running weight sum (pkiv1), or weight sums grouped by k
        sessions (pkiv2).
    k : int
        Group size for pkiv2; ignored by the other modes.
    alpha : float
        Influence of incremental-session projectors, in (0, 1]. Scales
        their output features in pki mode and their weights in the
        compressed modes.
    hidden_dim, embed_dim : int or None
        Projector hidden/output widths; default to the feature dimension.
    base_epochs, incremental_iters, batch_size : int
        Base-session epochs, full-batch iterations per incremental
        session, and base-session mini-batch size.
    lr_max, lr_min, momentum : float
        Cosine-annealed SGD schedule endpoints and momentum coefficient.
    init_mode : {"random", "previous"}
        How each incremental session's projector starts.
    loss_reduction : {"sum", "mean"}
        Reduction of the two incremental loss terms (per-example CE and
        per-class-mean CE): plain sums or per-term means.
    random_state : int
        Seed for every randomized component of a run.
    """

    def __init__(
        self,
        mode="pki",
        k=3,
        alpha=1.0,
        hidden_dim=None,
        embed_dim=None,
        base_epochs=100,
        incremental_iters=150,
        batch_size=512,
        lr_max=0.25,
        lr_min=0.0,
        momentum=0.9,
        init_mode="random",
        loss_reduction="sum",
        random_state=0,
    ):
        self.mode = mode
        self.k = k
        self.alpha = alpha
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.base_epochs = base_epochs
        self.incremental_iters = incremental_iters
        self.batch_size = batch_size
        self.lr_max = lr_max
        self.lr_min = lr_min
        self.momentum = momentum
        self.init_mode = init_mode
        self.loss_reduction = loss_reduction
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            mode=self.mode,
            k=self.k,
            alpha=self.alpha,
            base_epochs=self.base_epochs,
            incr_iters=self.incremental_iters,
            batch_size=self.batch_size,
            lr_max=self.lr_max,
            lr_min=self.lr_min,
            momentum=self.momentum,
            hidden_dim=self.hidden_dim,
            embed_dim=self.embed_dim,
            init_mode=self.init_mode,
            loss_reduction=self.loss_reduction,
            seed=self.random_state,
        )

    def _encode(self, y: np.ndarray) -> np.ndarray:
        codes = np.searchsorted(self.classes_, y)
        codes = np.clip(codes, 0, len(self.classes_) - 1)
        if np.any(self.classes_[codes] != y):
            bad = y[self.classes_[codes] != y][0]
            raise ValueError(f"label {bad!r} was never fitted")
        return self._dense_ids_[codes]

    def fit(self, X, y):
        """Base session: train projector 0 and the classifier from scratch."""
        X = check_feature_matrix(X)
        y = np.asarray(y)
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y lengths differ")
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValueError("base session needs at least 2 classes")
        self._dense_ids_ = np.arange(len(self.classes_))
        self.n_features_in_ = X.shape[1]
        dense = self._encode(y)
        self.state_ = base_train(FeatureDataset(X, dense), self._config())
        self.session_ = 0
        return self

    def partial_fit(self, X, y):
        """One incremental session over classes disjoint from all prior ones."""
        if not hasattr(self, "state_"):
            raise ValueError("call fit() for the base session first")
        X = check_feature_matrix(X)
        y = np.asarray(y)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        new_labels = np.unique(y)
        if np.intersect1d(new_labels, self.classes_).size:
            clash = np.intersect1d(new_labels, self.classes_)[0]
            raise ValueError(
                f"label {clash!r} was already fitted; incremental sessions must "
                "introduce only new classes"
            )
        # build the grown label map first, commit only once training succeeds
        next_ids = np.arange(len(self.classes_), len(self.classes_) + len(new_labels))
        order = np.argsort(np.concatenate([self.classes_, new_labels]), kind="stable")
        classes = np.concatenate([self.classes_, new_labels])[order]
        dense_ids = np.concatenate([self._dense_ids_, next_ids])[order]
        dense = dense_ids[np.searchsorted(classes, y)]
        state = incremental_train(self.state_, FeatureDataset(X, dense), self._config())
        self.classes_, self._dense_ids_ = classes, dense_ids
        self.state_ = state
        self.session_ = state.session
        return self

    def decision_function(self, X):
        if not hasattr(self, "state_"):
            raise ValueError("estimator is not fitted")
        X = check_feature_matrix(X)
        return forward_logits(self.state_, X)

    def predict_proba(self, X):
        logits = self.decision_function(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        expz = np.exp(shifted)
        return expz / expz.sum(axis=1, keepdims=True)

    def predict(self, X):
        logits = self.decision_function(X)
        dense = np.argmax(logits, axis=1)
        # invert dense ids back to the original labels
        inverse = np.empty(len(self.classes_), dtype=np.int64)
        inverse[self._dense_ids_] = np.arange(len(self.classes_))
        return self.classes_[inverse[dense]]

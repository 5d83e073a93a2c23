"""scikit-learn facade over the fixed-simplex trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import LabeledData
from .network import RepresentationModel
from .simplex import FINETUNE, PRETRAIN, build_simplex
from .training import HOCConfig, train_model


class SimplexEmbedder(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Dense feature extractor trained against a fixed simplex classifier.

    ``fit`` trains from scratch with the simplex cross-entropy.
    ``partial_fit`` learns additional classes on top of the current model,
    regularised towards the previous one with the contrastive term, so
    features of earlier classes stay usable. ``transform`` returns the
    embedding and ``predict`` picks the closest assigned prototype.

    ``simplex_k`` fixes the number of prototypes up front; it defaults to
    four times the number of classes seen by the first ``fit``.
    """

    def __init__(
        self,
        hidden=(64, 64),
        simplex_k=None,
        lam=0.1,
        tau=10.0,
        learning_rate=0.05,
        update_learning_rate=0.001,
        momentum=0.9,
        weight_decay=1e-4,
        epochs=30,
        batch_size=128,
        random_state=0,
    ):
        self.hidden = hidden
        self.simplex_k = simplex_k
        self.lam = lam
        self.tau = tau
        self.learning_rate = learning_rate
        self.update_learning_rate = update_learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def _config(self, lam, lr):
        return HOCConfig(
            lam=lam,
            tau=self.tau,
            learning_rate=lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            epochs=self.epochs,
            batch_size=self.batch_size,
        )

    def _encode(self, y):
        return np.array([self._label_index[v] for v in y.tolist()], dtype=np.int64)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        classes = np.unique(y)
        if len(classes) < 2:
            raise ValueError("need at least 2 classes")
        k = self.simplex_k if self.simplex_k is not None else 4 * len(classes)
        self.classifier_ = build_simplex(k)
        self.classes_ = classes
        self._label_index = {v: i for i, v in enumerate(classes.tolist())}
        self.classifier_.assign_classes(range(len(classes)), PRETRAIN)
        self.n_features_in_ = X.shape[1]
        sizes = [X.shape[1], *self.hidden, self.classifier_.dim]
        model = RepresentationModel.init(sizes, seed=self.random_state, model_id="fit")
        self.model_, self.history_, _ = train_model(
            model, LabeledData(X, self._encode(y)), self.classifier_, self._config(1.0, self.learning_rate),
            seed=self.random_state,
        )
        self.n_updates_ = 0
        return self

    def partial_fit(self, X, y):
        """Learn the (new or known) classes in ``y`` while staying compatible with the current model."""
        if not hasattr(self, "model_"):
            return self.fit(X, y)
        X, y = check_X_y(X, y, dtype=np.float64)
        self._check_width(X)
        new = [v for v in np.unique(y).tolist() if v not in self._label_index]
        if new:
            start = len(self.classes_)
            self.classifier_.assign_classes(range(start, start + len(new)), FINETUNE)
            self.classes_ = np.concatenate([self.classes_, np.asarray(new, dtype=self.classes_.dtype)])
            self._label_index.update({v: start + i for i, v in enumerate(new)})
        self.n_updates_ += 1
        old = self.model_
        cfg = self._config(self.lam, self.update_learning_rate)
        self.model_, self.history_, _ = train_model(
            old, LabeledData(X, self._encode(y)), self.classifier_, cfg, old_model=old,
            seed=self.random_state + self.n_updates_,
        )
        return self

    def _check_width(self, X):
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, the estimator was fitted with {self.n_features_in_}")

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        self._check_width(X)
        return self.model_.embed(X)

    def decision_function(self, X):
        """Logits against the prototypes of the known classes, columns ordered as ``classes_``."""
        feats = self.transform(X)
        idx = self.classifier_.indices_of(range(len(self.classes_)))
        return feats @ self.classifier_.prototypes[idx].T

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

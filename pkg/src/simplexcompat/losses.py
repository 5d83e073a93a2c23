"""Training losses with analytic gradients with respect to the features.

All functions return ``(loss, grad)`` where ``grad`` has the shape of the
feature batch that receives gradient. Inputs are float64 arrays of shape
``(batch, d)``.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .simplex import SimplexClassifier

_REDUCTIONS = ("mean", "sum")


def _logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _reduce(per_sample, grad, reduction):
    if reduction not in _REDUCTIONS:
        raise ValidationError(f"reduction must be one of {_REDUCTIONS}, got {reduction!r}")
    if reduction == "mean":
        n = per_sample.shape[0]
        return float(per_sample.sum() / n), grad / n
    return float(per_sample.sum()), grad


def sce_loss(features, labels, cls, reduction: str = "mean"):
    """Softmax cross-entropy against fixed prototypes, no bias.

    The partition function runs over all K pre-allocated prototypes, so
    slots reserved for future classes still compete for probability mass.
    ``labels`` are prototype indices. ``cls`` may be a
    :class:`SimplexClassifier` (labels must then be assigned slots) or a
    bare ``(K, d)`` prototype array.
    """
    f = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if isinstance(cls, SimplexClassifier):
        w = cls.prototypes
        unassigned = np.setdiff1d(y, cls.assigned_indices)
        if unassigned.size:
            raise ValidationError(f"prototype indices {unassigned.tolist()} are not assigned to any class")
    else:
        w = np.asarray(cls, dtype=np.float64)
    if f.ndim != 2 or f.shape[1] != w.shape[1]:
        raise ValidationError(f"features must be (batch, {w.shape[1]}), got {f.shape}")
    if y.shape != (f.shape[0],):
        raise ValidationError("one label per feature row is required")
    if y.size and (y.min() < 0 or y.max() >= w.shape[0]):
        raise ValidationError("label index outside [0, K)")

    logits = f @ w.T
    rows = np.arange(f.shape[0])
    per_sample = _logsumexp(logits) - logits[rows, y]
    p = _softmax(logits)
    p[rows, y] -= 1.0
    return _reduce(per_sample, p @ w, reduction)


def _unit_rows(x: np.ndarray, what: str):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValidationError(f"{what} contains a zero-norm vector; cosine similarity is undefined")
    return x / norms, norms


def nce_loss(
    features_new,
    features_old,
    tau: float = 10.0,
    include_positive: bool = False,
    reduction: str = "sum",
):
    """Contrastive loss between a new model's features and frozen old features.

    For sample ``i`` the positive pair is (old_i, new_i) and the negatives
    are (old_i, new_j) for ``j != i``, all scored by ``exp(tau * cosine)``.
    By default the positive is left out of the denominator; set
    ``include_positive`` for the usual InfoNCE form. Only ``features_new``
    receives gradient.
    """
    fn = np.asarray(features_new, dtype=np.float64)
    fo = np.asarray(features_old, dtype=np.float64)
    if fn.shape != fo.shape or fn.ndim != 2:
        raise ValidationError(f"aligned (batch, d) batches required, got {fn.shape} and {fo.shape}")
    b = fn.shape[0]
    if b < 2:
        raise ValidationError("contrastive loss needs a batch of at least 2 samples")
    if not tau > 0:
        raise ValidationError(f"tau must be positive, got {tau!r}")
    v, vnorm = _unit_rows(fn, "features_new")
    u, _ = _unit_rows(fo, "features_old")

    s = tau * (u @ v.T)  # s[i, j] = tau * cos(old_i, new_j)
    diag = np.arange(b)
    masked = s.copy()
    if not include_positive:
        masked[diag, diag] = -np.inf
    per_sample = _logsumexp(masked) - s[diag, diag]

    coef = _softmax(masked)
    coef[diag, diag] -= 1.0
    grad_v = tau * (coef.T @ u)
    # d v / d f = (I - v v^T) / |f|
    grad = (grad_v - v * np.sum(grad_v * v, axis=1, keepdims=True)) / vnorm
    return _reduce(per_sample, grad, reduction)


def hoc_terms(features_new, labels, features_old, cls, lam: float, tau: float, include_positive: bool = False):
    """Per-batch-mean convex combination; returns ``(total, sce, nce, grad)``.

    ``nce`` is ``nan`` when ``lam == 1`` and no old features are given.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lambda must lie in [0, 1], got {lam!r}")
    if lam < 1.0 and features_old is None:
        raise ValidationError("lambda < 1 needs the previous model's features")
    l_sce, g_sce = sce_loss(features_new, labels, cls, reduction="mean")
    if features_old is None:
        return l_sce, l_sce, float("nan"), g_sce
    l_nce, g_nce = nce_loss(features_new, features_old, tau, include_positive, reduction="mean")
    total = lam * l_sce + (1.0 - lam) * l_nce
    return total, l_sce, l_nce, lam * g_sce + (1.0 - lam) * g_nce


def hoc_loss(features_new, labels, features_old, cls, cfg):
    """``lam * sce + (1 - lam) * nce`` with both terms averaged over the batch.

    ``cfg`` is anything with ``lam``, ``tau`` and ``include_positive``
    attributes, normally a :class:`~simplexcompat.training.HOCConfig`.
    """
    total, _, _, grad = hoc_terms(
        features_new, labels, features_old, cls, cfg.lam, cfg.tau, getattr(cfg, "include_positive", False)
    )
    return total, grad


def cross_entropy_head(features, labels, weight, bias):
    """Plain softmax cross-entropy through a trainable linear head.

    Returns ``(loss, grad_features, grad_weight, grad_bias)``, mean-reduced.
    ``labels`` index rows of ``weight``.
    """
    f = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    logits = f @ weight.T + bias
    n = f.shape[0]
    rows = np.arange(n)
    per_sample = _logsumexp(logits) - logits[rows, y]
    p = _softmax(logits)
    p[rows, y] -= 1.0
    p /= n
    return float(per_sample.sum() / n), p @ weight, p.T @ f, p.sum(axis=0)

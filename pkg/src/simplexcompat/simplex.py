"""Fixed d-Simplex classifier: construction, validation and class assignment.

Prototypes are stored row-major, shape ``(K, d)`` with ``d = K - 1``: row ``i``
is the prototype of class slot ``i``. Column-oriented ``d x K`` notation is
the transpose of :attr:`SimplexClassifier.prototypes`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable

import numpy as np

from .errors import CapacityError, ValidationError

PRETRAIN = "pretrain"
FINETUNE = "finetune"
PHASES = (PRETRAIN, FINETUNE)


@dataclass(frozen=True)
class ClassAssignment:
    class_label: Hashable
    prototype_index: int
    phase: str


@dataclass(frozen=True)
class EtfDiagnostics:
    max_norm_deviation: float
    max_cosine_deviation: float
    centroid_norm: float
    tol: float

    @property
    def passed(self) -> bool:
        return (
            self.max_norm_deviation <= self.tol
            and self.max_cosine_deviation <= self.tol
            and self.centroid_norm <= self.tol
        )


def simplex_vertices(k: int) -> np.ndarray:
    """Return the ``(k, k-1)`` prototype matrix of a regular simplex.

    Identity block over a zero row, shift the last row by
    ``(1 - sqrt(k)) / (k - 1)``, centre the rows, then scale to unit
    Frobenius norm (so every row has norm ``1/sqrt(k)``).
    """
    if not isinstance(k, (int, np.integer)) or k < 2:
        raise ValidationError(f"a simplex needs at least 2 vertices, got k={k!r}")
    k = int(k)
    c = (1.0 - math.sqrt(k)) / (k - 1)
    # every column holds one 1, the shift c and zeros, so its mean is (1 + c) / k
    m = (1.0 + c) / k
    w = np.full((k, k - 1), -m, dtype=np.float64)
    w[np.arange(k - 1), np.arange(k - 1)] = 1.0 - m
    w[-1, :] = c - m
    w /= np.linalg.norm(w)
    return w


@dataclass
class SimplexClassifier:
    """Non-trainable simplex head plus the pre-allocation bookkeeping.

    Pre-training labels take prototype slots from the left (0, 1, ...),
    fine-tuning labels from the right (K-1, K-2, ...). Free slots are the
    half-open range ``[pretrain_cursor, finetune_cursor)``.
    """

    prototypes: np.ndarray
    pretrain_cursor: int = 0
    finetune_cursor: int | None = None
    _assignments: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.prototypes = np.asarray(self.prototypes, dtype=np.float64)
        if self.prototypes.ndim != 2:
            raise ValidationError("prototypes must be a 2-D array")
        k, d = self.prototypes.shape
        if d != k - 1:
            raise ValidationError(f"prototype matrix must be K x (K-1), got {k} x {d}")
        if self.finetune_cursor is None:
            self.finetune_cursor = k

    @property
    def k_preallocated(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    @property
    def free_slots(self) -> int:
        return self.finetune_cursor - self.pretrain_cursor

    @property
    def assignments(self) -> list[ClassAssignment]:
        return sorted(self._assignments.values(), key=lambda a: a.prototype_index)

    @property
    def assigned_indices(self) -> np.ndarray:
        return np.array(sorted(a.prototype_index for a in self._assignments.values()), dtype=np.int64)

    def index_of(self, label) -> int:
        try:
            return self._assignments[label].prototype_index
        except KeyError:
            raise ValidationError(f"label {label!r} has no prototype assigned") from None

    def indices_of(self, labels: Iterable) -> np.ndarray:
        return np.array([self.index_of(lab) for lab in labels], dtype=np.int64)

    def assign_classes(self, labels: Iterable, phase: str) -> list[ClassAssignment]:
        """Assign prototype slots to ``labels`` in order.

        Labels already assigned in the same phase keep their slot. The call
        is all-or-nothing: on a capacity error nothing is assigned.
        """
        if phase not in PHASES:
            raise ValidationError(f"phase must be one of {PHASES}, got {phase!r}")
        labels = list(labels)
        fresh = []
        for lab in labels:
            prev = self._assignments.get(lab)
            if prev is not None:
                if prev.phase != phase:
                    raise ValidationError(
                        f"label {lab!r} is already assigned in phase {prev.phase!r}; "
                        f"refusing to reuse it for {phase!r}"
                    )
            elif lab not in fresh:
                fresh.append(lab)

        if len(fresh) > self.free_slots:
            raise CapacityError(
                f"simplex capacity exhausted assigning {fresh[self.free_slots]!r} ({phase}): "
                f"cursors collide once free slots run out "
                f"(pretrain_cursor={self.pretrain_cursor}, finetune_cursor={self.finetune_cursor})"
            )

        for lab in fresh:
            if phase == PRETRAIN:
                idx = self.pretrain_cursor
                self.pretrain_cursor += 1
            else:
                self.finetune_cursor -= 1
                idx = self.finetune_cursor
            self._assignments[lab] = ClassAssignment(lab, idx, phase)
        return [self._assignments[lab] for lab in labels]

    def verify(self, tol: float = 1e-9) -> EtfDiagnostics:
        return verify_etf(self, tol)

    def copy(self) -> "SimplexClassifier":
        out = SimplexClassifier(self.prototypes.copy(), self.pretrain_cursor, self.finetune_cursor)
        out._assignments = dict(self._assignments)
        return out

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "k": self.k_preallocated,
            "d": self.dim,
            "prototypes": [[float(v) for v in row] for row in self.prototypes],
            "assignments": [
                {"label": a.class_label, "index": a.prototype_index, "phase": a.phase}
                for a in self.assignments
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SimplexClassifier":
        try:
            k, d = int(doc["k"]), int(doc["d"])
            protos = np.array(doc["prototypes"], dtype=np.float64)
            raw = doc.get("assignments", [])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed classifier document: {exc}") from exc
        if protos.shape != (k, d):
            raise ValidationError(f"prototypes shape {protos.shape} does not match k={k}, d={d}")
        out = cls(protos)
        for phase in PHASES:
            entries = sorted(
                (a for a in raw if a["phase"] == phase),
                key=lambda a: a["index"] if phase == PRETRAIN else -a["index"],
            )
            for a in entries:
                label = a["label"]
                if isinstance(label, list):
                    label = tuple(label)
                (got,) = out.assign_classes([label], phase)
                if got.prototype_index != int(a["index"]):
                    raise ValidationError(
                        f"assignment of {label!r} to slot {a['index']} breaks the "
                        f"{phase} cursor convention (expected slot {got.prototype_index})"
                    )
        return out

    def save(self, path) -> None:
        # json emits the shortest repr that round-trips each float64 exactly
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "SimplexClassifier":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(doc)


def build_simplex(k_preallocated: int) -> SimplexClassifier:
    return SimplexClassifier(simplex_vertices(k_preallocated))


def assign_classes(cls: SimplexClassifier, labels, phase: str) -> list[ClassAssignment]:
    return cls.assign_classes(labels, phase)


def verify_etf(cls, tol: float = 1e-9) -> EtfDiagnostics:
    """Measure how far a prototype matrix is from a centred regular simplex.

    Accepts a :class:`SimplexClassifier` or a raw ``(K, d)`` array.
    """
    w = np.asarray(cls.prototypes if isinstance(cls, SimplexClassifier) else cls, dtype=np.float64)
    k = w.shape[0]
    gram = w @ w.T
    norms = np.sqrt(np.diag(gram))
    norm_dev = float(np.max(np.abs(norms - 1.0 / math.sqrt(k))))
    inv = 1.0 / norms
    cos = gram
    cos *= inv[:, None]
    cos *= inv[None, :]
    cos += 1.0 / (k - 1)
    np.fill_diagonal(cos, 0.0)
    np.abs(cos, out=cos)
    cos_dev = float(cos.max())
    centroid = float(np.linalg.norm(w.sum(axis=0)))
    return EtfDiagnostics(norm_dev, cos_dev, centroid, float(tol))

"""Cross-model retrieval evaluation: 1:N search, compatibility matrices, AC and AA_t."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .features import FeatureSet

METRICS = ("cosine", "euclidean")
NOT_ACHIEVED = "not_achieved"
DEFAULT_GALLERY_FRACTION = 0.2
DEFAULT_DEF1_PAIRS = 100_000


def _check_metric(metric):
    if metric not in METRICS:
        raise ValidationError(f"metric must be one of {METRICS}, got {metric!r}")


def _normalize(x):
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(n == 0.0, 1.0, n)


def pairwise_distance(a, b, metric: str = "cosine") -> np.ndarray:
    """Full ``(len(a), len(b))`` distance matrix; cosine distance is ``1 - cos``."""
    _check_metric(metric)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if metric == "cosine":
        return 1.0 - _normalize(a) @ _normalize(b).T
    sq = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(sq, 0.0))


def rowwise_distance(a, b, metric: str = "cosine") -> np.ndarray:
    _check_metric(metric)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if metric == "cosine":
        return 1.0 - np.sum(_normalize(a) * _normalize(b), axis=1)
    return np.linalg.norm(a - b, axis=1)


def nearest_neighbors(query: FeatureSet, gallery: FeatureSet, metric: str = "cosine", chunk: int = 2048):
    """Index of the closest gallery record for every query; ties go to the lowest index."""
    if query.dim != gallery.dim:
        raise ValidationError(f"dimension mismatch: query {query.dim}, gallery {gallery.dim}")
    if len(gallery) == 0:
        raise ValidationError("empty gallery")
    out = np.empty(len(query), dtype=np.int64)
    for s in range(0, len(query), chunk):
        out[s : s + chunk] = np.argmin(pairwise_distance(query.vectors[s : s + chunk], gallery.vectors, metric), axis=1)
    return out


def retrieval_accuracy(query: FeatureSet, gallery: FeatureSet, metric: str = "cosine") -> float:
    """Top-1 accuracy of exhaustive nearest-neighbour search."""
    if len(query) == 0:
        raise ValidationError("empty query set")
    nn = nearest_neighbors(query, gallery, metric)
    return float(np.mean(gallery.labels[nn] == query.labels))


def split_gallery_query(fs: FeatureSet, gallery_fraction: float = DEFAULT_GALLERY_FRACTION):
    """Per class, the first ``round(fraction * n_c)`` records (at least one) form the gallery."""
    if not 0.0 < gallery_fraction < 1.0:
        raise ValidationError("gallery_fraction must lie strictly between 0 and 1")
    gallery = np.zeros(len(fs), dtype=bool)
    for lab in np.unique(fs.labels):
        idx = np.flatnonzero(fs.labels == lab)
        gallery[idx[: max(1, int(round(gallery_fraction * len(idx))))]] = True
    return fs.subset(gallery), fs.subset(~gallery)


# ---------------------------------------------------------------------------
# pairwise compatibility inequalities


@dataclass(frozen=True)
class Def1Stats:
    model_new: str
    model_old: str
    frac_same_class_satisfied: float
    frac_diff_class_satisfied: float
    E_same_kt: float
    E_same_kk: float
    E_diff_kt: float
    E_diff_kk: float
    same_pairs: int
    diff_pairs: int


def _sample_pairs(labels, same: bool, max_pairs: int, rng) -> tuple[np.ndarray, np.ndarray]:
    n = len(labels)
    _, counts = np.unique(labels, return_counts=True)
    n_same = int(np.sum(counts * (counts - 1)))
    total = n_same if same else n * (n - 1) - n_same
    if total == 0 or max_pairs == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    if total <= max_pairs:
        eq = labels[:, None] == labels[None, :]
        mask = eq if same else ~eq
        np.fill_diagonal(mask, False)
        i, j = np.nonzero(mask)
        return i, j
    got_i, got_j, have = [], [], 0
    while have < max_pairs:
        i = rng.integers(0, n, size=2 * max_pairs)
        j = rng.integers(0, n, size=2 * max_pairs)
        keep = (i != j) & ((labels[i] == labels[j]) == same)
        got_i.append(i[keep])
        got_j.append(j[keep])
        have += int(keep.sum())
    return np.concatenate(got_i)[:max_pairs], np.concatenate(got_j)[:max_pairs]


def def1_check(
    set_new: FeatureSet,
    set_old: FeatureSet,
    metric: str = "cosine",
    max_pairs: int = DEFAULT_DEF1_PAIRS,
    seed: int = 0,
) -> Def1Stats:
    """Measure the pairwise compatibility inequalities on aligned feature sets.

    For sampled pairs (i, j): same-class pairs should satisfy
    ``d(old_i, new_j) <= d(old_i, old_j)``, different-class pairs
    ``d(old_i, new_j) >= d(old_i, old_j)``. Reports the satisfied fractions
    and the mean distances on both sides.
    """
    _check_metric(metric)
    if len(set_new) != len(set_old) or not np.array_equal(set_new.labels, set_old.labels):
        raise ValidationError("feature sets are not aligned: labels differ position by position")
    if set_new.dim != set_old.dim:
        raise ValidationError(f"dimension mismatch: {set_new.dim} vs {set_old.dim}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    out = {}
    for name, same in (("same", True), ("diff", False)):
        i, j = _sample_pairs(set_old.labels, same, max_pairs, rng)
        if len(i) == 0:
            out[name] = (float("nan"), float("nan"), float("nan"), 0)
            continue
        d_kt = rowwise_distance(set_old.vectors[i], set_new.vectors[j], metric)
        d_kk = rowwise_distance(set_old.vectors[i], set_old.vectors[j], metric)
        ok = d_kt <= d_kk if same else d_kt >= d_kk
        out[name] = (float(ok.mean()), float(d_kt.mean()), float(d_kk.mean()), len(i))
    s, d = out["same"], out["diff"]
    return Def1Stats(set_new.model_id, set_old.model_id, s[0], d[0], s[1], s[2], d[1], d[2], s[3], d[3])


# ---------------------------------------------------------------------------
# compatibility matrix and report


@dataclass
class CompatibilityMatrix:
    """Lower-triangular accuracies: ``rows[i][j]`` uses queries from model i+1 and gallery from model j+1.

    Entries for pairs of different feature sizes are ``None``.
    """

    rows: list

    @property
    def task_count(self) -> int:
        return len(self.rows)

    def __getitem__(self, ij):
        """1-based access, ``M[t, k]`` with ``k <= t``."""
        i, j = ij
        if not 1 <= j <= i <= self.task_count:
            raise IndexError(f"M[{i}, {j}] is outside the lower triangle")
        return self.rows[i - 1][j - 1]

    def to_csv(self, path) -> None:
        t = self.task_count
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["query_model"] + [f"gallery_{j}" for j in range(1, t + 1)])
            for i, row in enumerate(self.rows, start=1):
                w.writerow([i] + ["" if v is None else repr(v) for v in row] + [""] * (t - len(row)))


def average_compatibility(m: CompatibilityMatrix):
    """Fraction of pairs k < t with cross-test M[t,k] strictly above self-test M[k,k].

    Returns ``(ac, compatible_pairs)``; ``ac`` is :data:`NOT_ACHIEVED` when no pair qualifies.
    """
    t = m.task_count
    good = []
    for i in range(2, t + 1):
        for j in range(1, i):
            cross, self_ = m[i, j], m[j, j]
            if cross is not None and self_ is not None and cross > self_:
                good.append((i, j))
    if not good:
        return NOT_ACHIEVED, good
    return len(good) / (t * (t - 1) / 2), good


def average_multimodel_accuracy(m: CompatibilityMatrix) -> list[float]:
    """``AA_t`` for t = 1..T: mean of the lower triangle (diagonal included) up to task t."""
    out = []
    total, count = 0.0, 0
    for i in range(1, m.task_count + 1):
        for j in range(1, i + 1):
            v = m[i, j]
            if v is not None:
                total += v
                count += 1
        out.append(total / count if count else float("nan"))
    return out


@dataclass
class CompatibilityReport:
    metric: str
    model_ids: list
    matrix: CompatibilityMatrix
    ac: object
    aa: list
    def1: list = field(default_factory=list)
    skipped_pairs: list = field(default_factory=list)

    @property
    def aa_final(self) -> float:
        return self.aa[-1]

    @property
    def ac_value(self) -> float:
        """AC as a number, with "not achieved" read as 0."""
        return 0.0 if self.ac == NOT_ACHIEVED else float(self.ac)

    def recompute(self):
        return average_compatibility(self.matrix)[0], average_multimodel_accuracy(self.matrix)

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "model_ids": list(self.model_ids),
            "matrix": [list(r) for r in self.matrix.rows],
            "ac": self.ac,
            "aa": list(self.aa),
            "def1": [asdict(s) for s in self.def1],
            "skipped_pairs": [list(p) for p in self.skipped_pairs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, doc: dict) -> "CompatibilityReport":
        return cls(
            doc["metric"],
            doc.get("model_ids", []),
            CompatibilityMatrix([list(r) for r in doc["matrix"]]),
            doc["ac"],
            list(doc["aa"]),
            [Def1Stats(**s) for s in doc.get("def1", [])],
            [tuple(p) for p in doc.get("skipped_pairs", [])],
        )


def build_report(
    feature_sets: Sequence[FeatureSet],
    metric: str = "cosine",
    gallery_fraction: float = DEFAULT_GALLERY_FRACTION,
    def1_pairs: int = DEFAULT_DEF1_PAIRS,
    seed: int = 0,
) -> CompatibilityReport:
    """Evaluate one feature set per task over the same evaluation split.

    Each set is split into gallery and queries with
    :func:`split_gallery_query`. ``M[t, k]`` searches model t queries
    against the model k gallery. ``def1_pairs=0`` skips the pairwise
    inequality statistics.
    """
    _check_metric(metric)
    if not feature_sets:
        raise ValidationError("need at least one feature set")
    splits = [split_gallery_query(fs, gallery_fraction) for fs in feature_sets]
    rows, skipped, def1 = [], [], []
    for i, (_, q) in enumerate(splits):
        row = []
        for j in range(i + 1):
            g = splits[j][0]
            if q.dim != g.dim:
                row.append(None)
                skipped.append((i + 1, j + 1))
                continue
            row.append(retrieval_accuracy(q, g, metric))
            if j < i and def1_pairs:
                def1.append(
                    def1_check(feature_sets[i], feature_sets[j], metric, def1_pairs, seed=seed + 1000 * i + j)
                )
        rows.append(row)
    m = CompatibilityMatrix(rows)
    ac, _ = average_compatibility(m)
    return CompatibilityReport(
        metric,
        [fs.model_id for fs in feature_sets],
        m,
        ac,
        average_multimodel_accuracy(m),
        def1,
        skipped,
    )

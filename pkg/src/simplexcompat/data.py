"""Synthetic labelled data and the episodic replay buffer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class LabeledData:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.y.shape != (self.X.shape[0],):
            raise ValidationError(f"X must be (n, dim) with one label per row; got {self.X.shape}, {self.y.shape}")

    def __len__(self):
        return self.X.shape[0]

    @property
    def classes(self) -> list[int]:
        """Distinct labels in order of first appearance."""
        _, first = np.unique(self.y, return_index=True)
        return [int(v) for v in self.y[np.sort(first)]]

    def subset(self, mask_or_index) -> "LabeledData":
        return LabeledData(self.X[mask_or_index], self.y[mask_or_index])

    def with_classes(self, labels) -> "LabeledData":
        return self.subset(np.isin(self.y, list(labels)))

    @staticmethod
    def concat(parts) -> "LabeledData":
        parts = [p for p in parts if p is not None and len(p)]
        if not parts:
            return LabeledData(np.zeros((0, 0)), np.zeros(0, dtype=np.int64))
        return LabeledData(np.concatenate([p.X for p in parts]), np.concatenate([p.y for p in parts]))


@dataclass(frozen=True)
class SyntheticWorld:
    """Shared generative structure for every corpus of an experiment.

    Class means are standard normal (times ``mean_scale``) in a
    ``latent_dim`` space and mapped into input space by a fixed random
    isometry scaled by ``sqrt(input_dim / latent_dim)``. A sample is
    ``embed(mean + spread * e) + nuisance * n`` with ``e`` latent and ``n``
    input-space standard normal noise. With ``latent_dim=None`` means and
    noise live directly in input space.
    """

    input_dim: int = 32
    latent_dim: int | None = None
    cluster_spread: float = 0.5
    nuisance: float = 0.0
    mean_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValidationError("input_dim must be >= 1")
        if self.latent_dim is not None and not 1 <= self.latent_dim <= self.input_dim:
            raise ValidationError("latent_dim must lie in [1, input_dim]")
        if self.cluster_spread < 0 or self.nuisance < 0 or self.mean_scale < 0:
            raise ValidationError("cluster_spread, nuisance and mean_scale must be >= 0")

    @property
    def space_dim(self) -> int:
        return self.input_dim if self.latent_dim is None else self.latent_dim

    def _mixing(self) -> np.ndarray | None:
        if self.latent_dim is None:
            return None
        g = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(7,)))
        q, _ = np.linalg.qr(g.standard_normal((self.input_dim, self.latent_dim)))
        return q.T * np.sqrt(self.input_dim / self.latent_dim)

    def class_means(self, n_classes: int, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.standard_normal((n_classes, self.space_dim)) * self.mean_scale

    def sample(self, means, samples_per_class: int, rng: np.random.Generator, label_offset: int = 0) -> LabeledData:
        means = np.asarray(means, dtype=np.float64)
        n = means.shape[0]
        z = means[:, None, :] + rng.standard_normal((n, samples_per_class, self.space_dim)) * self.cluster_spread
        z = z.reshape(-1, self.space_dim)
        a = self._mixing()
        X = z if a is None else z @ a
        if self.nuisance:
            X = X + rng.standard_normal(X.shape) * self.nuisance
        return LabeledData(X, np.repeat(np.arange(n, dtype=np.int64) + label_offset, samples_per_class))


def make_synthetic_dataset(
    n_classes: int,
    samples_per_class: int,
    input_dim: int,
    cluster_spread: float,
    seed: int,
    label_offset: int = 0,
    world: SyntheticWorld | None = None,
) -> LabeledData:
    """Gaussian class blobs, ordered class by class, labels from ``label_offset``.

    Without ``world`` the class means are standard normal in input space and
    samples are ``mean + cluster_spread * N(0, I)``. All class means are
    drawn before any noise, so two calls with the same seed and different
    ``n_classes`` share their leading class means.
    """
    if n_classes < 2:
        raise ValidationError("a dataset needs at least 2 classes")
    if samples_per_class < 1:
        raise ValidationError("samples_per_class must be >= 1")
    if world is None:
        world = SyntheticWorld(input_dim=input_dim, cluster_spread=cluster_spread)
    elif world.input_dim != input_dim or world.cluster_spread != cluster_spread:
        raise ValidationError("input_dim / cluster_spread disagree with the supplied world")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((n_classes, world.space_dim)) * world.mean_scale
    return world.sample(means, samples_per_class, rng, label_offset)


def make_variant_dataset(
    world: SyntheticWorld,
    concept_seed: int,
    n_classes: int,
    shift: float,
    samples_per_class: int,
    seed: int,
    label_offset: int = 0,
    n_concepts: int | None = None,
) -> LabeledData:
    """New classes, each a concept mean of ``concept_seed`` displaced by ``shift * N(0, I)``.

    Class ``i`` derives from concept ``i % n_concepts`` (default: one
    concept per class). Same semantics, different domain: the labels are
    new but each class sits near a concept another corpus was trained on.
    """
    if n_classes < 2:
        raise ValidationError("a dataset needs at least 2 classes")
    n_concepts = n_classes if n_concepts is None else n_concepts
    if n_concepts < 1:
        raise ValidationError("n_concepts must be >= 1")
    base = world.class_means(n_concepts, concept_seed)[np.arange(n_classes) % n_concepts]
    rng = np.random.default_rng(seed)
    means = base + rng.standard_normal(base.shape) * shift
    return world.sample(means, samples_per_class, rng, label_offset)


class ReplayMemory:
    """Stores the first ``per_class`` samples of each class, in dataset order."""

    def __init__(self, per_class: int):
        if per_class < 0:
            raise ValidationError("memory_per_class must be >= 0")
        self.per_class = int(per_class)
        self._store: dict[int, LabeledData] = {}

    def __len__(self):
        return sum(len(v) for v in self._store.values())

    @property
    def classes(self) -> list[int]:
        return list(self._store)

    def update(self, data: LabeledData) -> None:
        if self.per_class == 0:
            return
        for lab in data.classes:
            if lab in self._store:
                continue
            idx = np.flatnonzero(data.y == lab)[: self.per_class]
            self._store[lab] = data.subset(idx)

    def data(self) -> LabeledData | None:
        if not self._store:
            return None
        return LabeledData.concat(self._store.values())

"""Small dense feed-forward representation model with manual backprop."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

PROVENANCES = ("scratch", "finetuned", "replaced")


@dataclass
class RepresentationModel:
    """ReLU MLP; the last layer is linear and its width is the embedding size.

    ``weights[i]`` has shape ``(fan_in, fan_out)`` so a forward step is
    ``h @ W + b``.
    """

    weights: list
    biases: list
    model_id: str = "model"
    provenance: str = "scratch"

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValidationError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValidationError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValidationError(f"layer {i} input width does not match layer {i - 1} output")
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"provenance must be one of {PROVENANCES}")

    @classmethod
    def init(cls, layer_sizes, seed: int = 0, model_id: str = "model") -> "RepresentationModel":
        """He-initialised network, e.g. ``layer_sizes=(32, 64, 64, 15)``."""
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValidationError(f"bad layer sizes {layer_sizes!r}")
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, model_id=model_id)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def embedding_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [w.shape[1] for w in self.weights]

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self, model_id=None, provenance=None) -> "RepresentationModel":
        return RepresentationModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            model_id=self.model_id if model_id is None else model_id,
            provenance=self.provenance if provenance is None else provenance,
        )

    def forward(self, x, return_cache: bool = False):
        h = np.asarray(x, dtype=np.float64)
        if h.ndim != 2 or h.shape[1] != self.input_dim:
            raise ValidationError(f"expected input of shape (n, {self.input_dim}), got {h.shape}")
        cache = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
            cache.append(h)
        return (h, cache) if return_cache else h

    __call__ = forward

    def backward(self, grad_out, cache):
        """Parameter gradients, ordered like :attr:`params`."""
        g = np.asarray(grad_out, dtype=np.float64)
        grads = []
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                g = g * (cache[i + 1] > 0.0)
            grads.append(g.sum(axis=0))
            grads.append(cache[i].T @ g)
            if i:
                g = g @ self.weights[i].T
        return grads[::-1]

    def embed(self, x, batch_size: int = 4096) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        parts = [self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(parts) if parts else np.zeros((0, self.embedding_dim))

    # -- checkpoints -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "provenance": self.provenance,
            "layer_sizes": self.layer_sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RepresentationModel":
        try:
            model = cls(doc["weights"], doc["biases"], doc["model_id"], doc["provenance"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed checkpoint: {exc}") from exc
        if "layer_sizes" in doc and list(doc["layer_sizes"]) != model.layer_sizes:
            raise ValidationError("checkpoint layer_sizes do not match its parameter arrays")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "RepresentationModel":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from exc


@dataclass
class LinearHead:
    """Trainable classifier used by the experience-replay baseline."""

    weight: np.ndarray
    bias: np.ndarray
    labels: list = field(default_factory=list)

    @classmethod
    def init(cls, dim: int, labels, seed: int = 0) -> "LinearHead":
        labels = list(labels)
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((len(labels), dim)) * np.sqrt(1.0 / dim)
        return cls(w, np.zeros(len(labels)), labels)

    @property
    def params(self):
        return [self.weight, self.bias]

    def index_of(self, labels) -> np.ndarray:
        lut = {lab: i for i, lab in enumerate(self.labels)}
        try:
            return np.array([lut[lab] for lab in labels], dtype=np.int64)
        except KeyError as exc:
            raise ValidationError(f"label {exc.args[0]!r} has no output in the classifier head") from None

"""Mini-batch SGD for representation models against a fixed simplex or a trainable head."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields

import numpy as np
from threadpoolctl import threadpool_limits

from .data import LabeledData, ReplayMemory
from .errors import DivergenceError, ValidationError
from .losses import cross_entropy_head, hoc_terms
from .network import LinearHead, RepresentationModel
from .simplex import SimplexClassifier


@dataclass
class HOCConfig:
    lam: float = 0.1
    tau: float = 10.0
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 30
    batch_size: int = 128
    lr_schedule: list = field(default_factory=list)
    include_positive: bool = False

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError(f"lambda must lie in [0, 1], got {self.lam!r}")
        if not self.tau > 0:
            raise ValidationError(f"tau must be positive, got {self.tau!r}")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValidationError("epochs must be >= 0 and batch_size >= 1")
        self.lr_schedule = sorted((int(e), float(m)) for e, m in self.lr_schedule)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``: the base rate times the last multiplier whose epoch has been reached."""
        mult = 1.0
        for start, m in self.lr_schedule:
            if epoch >= start:
                mult = m
        return self.learning_rate * mult

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["lambda"] = out.pop("lam")
        out["lr_schedule"] = [list(p) for p in self.lr_schedule]
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "HOCConfig":
        doc = dict(doc)
        if "lambda" in doc:
            doc["lam"] = doc.pop("lambda")
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ValidationError(f"unknown HOC config keys: {sorted(extra)}")
        return cls(**doc)


@dataclass(frozen=True)
class LossRecord:
    epoch: int
    loss_total: float
    loss_sce: float
    loss_nce: float


def write_loss_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss_total", "loss_sce", "loss_nce"])
        for r in history:
            w.writerow([r.epoch, repr(r.loss_total), repr(r.loss_sce), repr(r.loss_nce)])


def read_loss_history(path) -> list[LossRecord]:
    with open(path, newline="") as fh:
        return [
            LossRecord(int(r["epoch"]), float(r["loss_total"]), float(r["loss_sce"]), float(r["loss_nce"]))
            for r in csv.DictReader(fh)
        ]


class _SGD:
    """Heavy-ball SGD with L2 weight decay folded into the gradient."""

    def __init__(self, params, momentum, weight_decay):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buf = [np.zeros_like(p) for p in params]

    def step(self, grads, lr):
        for p, g, b in zip(self.params, grads, self.buf):
            if self.weight_decay:
                g = g + self.weight_decay * p
            b *= self.momentum
            b += g
            p -= lr * b


def train_model(
    model: RepresentationModel,
    dataset: LabeledData,
    cls: SimplexClassifier | None,
    cfg: HOCConfig,
    old_model: RepresentationModel | None = None,
    memory: ReplayMemory | LabeledData | None = None,
    seed: int = 0,
    head: LinearHead | None = None,
):
    """Fine-tune a copy of ``model``; returns ``(trained, history, head)``.

    With ``head=None`` the loss is the SCE/HOC combination against the
    fixed prototypes in ``cls`` (labels are mapped through its
    assignments). With a :class:`LinearHead` the loss is plain
    cross-entropy and the head is trained alongside. Momentum buffers
    start from zero on every call.
    """
    mem = memory.data() if isinstance(memory, ReplayMemory) else memory
    data = LabeledData.concat([dataset, mem])
    if len(data) == 0:
        raise ValidationError("nothing to train on")
    if head is None:
        if cls is None:
            raise ValidationError("a simplex classifier or a trainable head is required")
        if model.embedding_dim != cls.dim:
            raise ValidationError(f"model emits {model.embedding_dim}-d features, simplex is {cls.dim}-d")
        targets = cls.indices_of(data.y.tolist())
        if cfg.lam < 1.0 and old_model is None:
            raise ValidationError("lambda < 1 needs the previous model")
        use_old = cfg.lam < 1.0
    else:
        head = LinearHead(head.weight.copy(), head.bias.copy(), list(head.labels))
        targets = head.index_of(data.y.tolist())
        use_old = False

    net = model.copy()
    params = net.params + (head.params if head is not None else [])
    opt = _SGD(params, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = len(data)
    history = []
    with threadpool_limits(limits=1):
        for epoch in range(1, cfg.epochs + 1):
            lr = cfg.lr_at(epoch)
            order = rng.permutation(n)
            tot = sce = nce = 0.0
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                xb = data.X[idx]
                feats, cache = net.forward(xb, return_cache=True)
                if head is not None:
                    loss, g, gw, gb = cross_entropy_head(feats, targets[idx], head.weight, head.bias)
                    l_sce, l_nce = loss, float("nan")
                    extra = [gw, gb]
                else:
                    old = old_model.forward(xb) if use_old and len(idx) > 1 else None
                    lam = cfg.lam if old is not None else 1.0
                    loss, l_sce, l_nce, g = hoc_terms(
                        feats, targets[idx], old, cls.prototypes, lam, cfg.tau, cfg.include_positive
                    )
                    extra = []
                if not math.isfinite(loss):
                    raise DivergenceError(epoch, loss)
                opt.step(net.backward(g, cache) + extra, lr)
                w = len(idx)
                tot += loss * w
                sce += l_sce * w
                nce += l_nce * w
            rec = LossRecord(epoch, tot / n, sce / n, nce / n)
            if not math.isfinite(rec.loss_total):
                raise DivergenceError(epoch, rec.loss_total)
            history.append(rec)
            for p in net.params:
                if not np.all(np.isfinite(p)):
                    raise DivergenceError(epoch, float("nan"))
    return net, history, head

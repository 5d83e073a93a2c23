"""End-to-end desk-scale experiments: pre-train, fine-tune, replace, evaluate, persist."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import LabeledData, SyntheticWorld, make_synthetic_dataset, make_variant_dataset
from .errors import NumericalError, ValidationError, with_context
from .evaluation import METRICS, CompatibilityReport, build_report
from .network import LinearHead, RepresentationModel
from .sequence import METHODS, SequenceStep, TaskSequence, run_sequence
from .simplex import PRETRAIN, SimplexClassifier, build_simplex
from .training import HOCConfig, write_loss_history, train_model

log = logging.getLogger(__name__)

# label ranges keep the three class pools disjoint
PRETRAIN_LABELS = 0
FINETUNE_LABELS = 1000
EVAL_LABELS = 2000

# spawn keys for the per-purpose seed streams
_S_PRETRAIN_DATA, _S_FINETUNE_DATA, _S_EVAL_DATA, _S_INIT, _S_TRAIN = range(1, 6)


def _strict(cls, doc, where):
    if not isinstance(doc, dict):
        raise ValidationError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    extra = set(doc) - known
    if extra:
        raise ValidationError(f"{where}: unknown keys {sorted(extra)}")
    return doc


@dataclass
class DataConfig:
    input_dim: int = 32
    latent_dim: int | None = 8
    cluster_spread: float = 0.3
    nuisance: float = 2.0
    mean_scale: float = 1.0
    samples_per_class: int = 300
    eval_classes: int = 8
    eval_samples_per_class: int = 100
    eval_shift: float = 0.5
    # None: fine-tuning classes are fresh concepts; otherwise displaced
    # variants of the first ``finetune_concepts`` pre-training concepts
    finetune_shift: float | None = 0.5
    finetune_concepts: int = 8
    gallery_fraction: float = 0.2

    def world(self, seed: int) -> SyntheticWorld:
        return SyntheticWorld(
            self.input_dim, self.latent_dim, self.cluster_spread, self.nuisance, self.mean_scale, seed
        )


@dataclass
class PretrainSpec:
    classes: int
    samples_per_class: int


@dataclass
class SequenceConfig:
    n_tasks: int = 7
    first_task_classes: int = 4
    classes_per_task: int = 2
    initial: PretrainSpec = field(default_factory=lambda: PretrainSpec(8, 50))
    # 1-based task number -> corpus the replacement model is pre-trained on
    replacements: dict = field(
        default_factory=lambda: {3: PretrainSpec(16, 300), 5: PretrainSpec(24, 1000)}
    )
    memory_per_class: int = 20

    @property
    def finetune_classes(self) -> int:
        return self.first_task_classes + (self.n_tasks - 1) * self.classes_per_task

    def task_labels(self) -> list[list[int]]:
        out, nxt = [], FINETUNE_LABELS
        for t in range(self.n_tasks):
            n = self.first_task_classes if t == 0 else self.classes_per_task
            out.append(list(range(nxt, nxt + n)))
            nxt += n
        return out


@dataclass
class EvalConfig:
    metric: str = "cosine"
    def1_pairs: int = 100_000


def _default_pretrain():
    return HOCConfig(lam=1.0, learning_rate=0.05, epochs=30, lr_schedule=[(21, 0.1)])


def _default_hoc():
    # the desk sequence leans harder on the contrastive term than the library default
    return HOCConfig(lam=0.02, tau=10.0, learning_rate=0.001, epochs=30, lr_schedule=[(21, 0.1), (27, 0.01)])


@dataclass
class ExperimentConfig:
    seed: int = 0
    simplex_k: int = 64
    hidden: list = field(default_factory=lambda: [64, 64])
    method: str = "hoc"
    data: DataConfig = field(default_factory=DataConfig)
    sequence: SequenceConfig = field(default_factory=SequenceConfig)
    hoc: HOCConfig = field(default_factory=_default_hoc)
    pretrain: HOCConfig = field(default_factory=_default_pretrain)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.method not in METHODS:
            raise ValidationError(f"method must be one of {METHODS}")
        if self.eval.metric not in METRICS:
            raise ValidationError(f"metric must be one of {METRICS}")
        seq = self.sequence
        if seq.n_tasks < 1 or seq.first_task_classes < 1 or seq.classes_per_task < 1:
            raise ValidationError("sequence needs >= 1 task and >= 1 class per task")
        for t in seq.replacements:
            if not 1 <= t <= seq.n_tasks:
                raise ValidationError(f"replacement at task {t} is outside 1..{seq.n_tasks}")
        corpora = [seq.initial, *seq.replacements.values()]
        if min(c.classes for c in corpora) < 2:
            raise ValidationError("pre-training corpora need at least 2 classes")
        need = max(c.classes for c in corpora) + seq.finetune_classes
        if need > self.simplex_k:
            raise ValidationError(
                f"simplex_k={self.simplex_k} cannot hold {max(c.classes for c in corpora)} "
                f"pre-training plus {seq.finetune_classes} fine-tuning classes"
            )
        if self.data.eval_classes > seq.initial.classes:
            raise ValidationError("eval_classes must not exceed the initial pre-training classes")
        if self.data.eval_classes < 2:
            raise ValidationError("eval_classes must be >= 2")
        return self

    # -- (de)serialization -------------------------------------------------

    def to_dict(self) -> dict:
        seq = self.sequence
        return {
            "seed": self.seed,
            "simplex_k": self.simplex_k,
            "hidden": list(self.hidden),
            "method": self.method,
            "data": asdict(self.data),
            "sequence": {
                "n_tasks": seq.n_tasks,
                "first_task_classes": seq.first_task_classes,
                "classes_per_task": seq.classes_per_task,
                "initial": asdict(seq.initial),
                "replacements": {str(k): asdict(v) for k, v in sorted(seq.replacements.items())},
                "memory_per_class": seq.memory_per_class,
            },
            "hoc": self.hoc.to_dict(),
            "pretrain": self.pretrain.to_dict(),
            "eval": asdict(self.eval),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(_strict(cls, doc, "config"))
        try:
            if "data" in doc:
                doc["data"] = DataConfig(**_strict(DataConfig, doc["data"], "data"))
            if "sequence" in doc:
                s = dict(_strict(SequenceConfig, doc["sequence"], "sequence"))
                if "initial" in s:
                    s["initial"] = PretrainSpec(**_strict(PretrainSpec, s["initial"], "sequence.initial"))
                if "replacements" in s:
                    s["replacements"] = {
                        int(k): PretrainSpec(**_strict(PretrainSpec, v, f"sequence.replacements.{k}"))
                        for k, v in s["replacements"].items()
                    }
                doc["sequence"] = SequenceConfig(**s)
            for key in ("hoc", "pretrain"):
                if key in doc:
                    doc[key] = HOCConfig.from_dict(doc[key])
            if "eval" in doc:
                doc["eval"] = EvalConfig(**_strict(EvalConfig, doc["eval"], "eval"))
            cfg = cls(**doc)
        except TypeError as exc:
            raise ValidationError(f"bad config: {exc}") from exc
        return cfg.validate()

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from exc


def _seed(root: int, *key: int) -> int:
    ss = np.random.SeedSequence(root, spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# ---------------------------------------------------------------------------
# building blocks


def build_corpora(cfg: ExperimentConfig):
    """Pre-training corpora, fine-tuning tasks and the evaluation split.

    Pre-training corpora share their leading classes (same concept seed),
    so a larger corpus extends a smaller one. Evaluation classes are
    displaced copies of the first pre-training concepts, drawn from their
    own seed and labelled apart from every training pool.
    """
    world = cfg.data.world(cfg.seed)
    seq = cfg.sequence
    concept_seed = _seed(cfg.seed, _S_PRETRAIN_DATA)

    def corpus(spec: PretrainSpec, which: int) -> LabeledData:
        # class means come from concept_seed; the noise stream differs per corpus
        means = world.class_means(spec.classes, concept_seed)
        rng = np.random.default_rng(_seed(cfg.seed, _S_PRETRAIN_DATA, which))
        return world.sample(means, spec.samples_per_class, rng, PRETRAIN_LABELS)

    pre = {0: corpus(seq.initial, 0)}
    for t, spec in sorted(seq.replacements.items()):
        pre[t] = corpus(spec, t)

    if cfg.data.finetune_shift is None:
        ft = make_synthetic_dataset(
            seq.finetune_classes,
            cfg.data.samples_per_class,
            cfg.data.input_dim,
            cfg.data.cluster_spread,
            _seed(cfg.seed, _S_FINETUNE_DATA),
            FINETUNE_LABELS,
            world=world,
        )
    else:
        ft = make_variant_dataset(
            world,
            concept_seed,
            seq.finetune_classes,
            cfg.data.finetune_shift,
            cfg.data.samples_per_class,
            _seed(cfg.seed, _S_FINETUNE_DATA),
            FINETUNE_LABELS,
            n_concepts=cfg.data.finetune_concepts,
        )
    tasks = [ft.with_classes(labels) for labels in seq.task_labels()]
    ev = make_variant_dataset(
        world,
        concept_seed,
        cfg.data.eval_classes,
        cfg.data.eval_shift,
        cfg.data.eval_samples_per_class,
        _seed(cfg.seed, _S_EVAL_DATA),
        EVAL_LABELS,
    )
    return pre, tasks, ev


def pretrain_model(cfg: ExperimentConfig, data: LabeledData, cls: SimplexClassifier, which: int, model_id: str):
    """Train a model from scratch; simplex-based unless the method is the replay baseline."""
    sizes = [cfg.data.input_dim, *cfg.hidden, cls.dim]
    model = RepresentationModel.init(sizes, seed=_seed(cfg.seed, _S_INIT, which), model_id=model_id)
    train_seed = _seed(cfg.seed, _S_TRAIN, 10_000 + which)
    if cfg.method == "er_baseline":
        head = LinearHead.init(cls.dim, data.classes, seed=train_seed)
        trained, history, _ = train_model(model, data, None, cfg.pretrain, seed=train_seed, head=head)
    else:
        cls.assign_classes(data.classes, PRETRAIN)
        trained, history, _ = train_model(model, data, cls, replace(cfg.pretrain, lam=1.0), seed=train_seed)
    trained.model_id = model_id
    trained.provenance = "scratch"
    return trained, history


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    report: CompatibilityReport
    steps: list
    pretrained: dict
    pretrain_histories: dict
    classifier: SimplexClassifier
    output_dir: Path | None = None


@dataclass
class PretrainStage:
    classifier: SimplexClassifier
    models: dict
    histories: dict
    tasks: list
    eval_data: LabeledData


def pretrain_stage(cfg: ExperimentConfig) -> PretrainStage:
    """Build every corpus and pre-train the initial and replacement models."""
    cfg.validate()
    pre_data, tasks, ev = build_corpora(cfg)
    cls = build_simplex(cfg.simplex_k)
    models, hist = {}, {}
    for which, data in pre_data.items():
        name = "pretrain_initial" if which == 0 else f"pretrain_task{which:02d}"
        log.info("pre-training %s on %d classes x %d samples", name, len(data.classes), len(data) // len(data.classes))
        try:
            models[which], hist[which] = pretrain_model(cfg, data, cls, which, name)
        except (ValidationError, NumericalError) as exc:
            raise with_context(exc, f"pre-training {name}")
    return PretrainStage(cls, models, hist, tasks, ev)


def sequence_stage(cfg: ExperimentConfig, stage: PretrainStage) -> list[SequenceStep]:
    seq = TaskSequence(
        stage.tasks,
        {t: stage.models[t] for t in cfg.sequence.replacements},
        cfg.sequence.memory_per_class,
    )
    log.info("fine-tuning %d tasks with method=%s", len(stage.tasks), cfg.method)
    return run_sequence(
        seq, stage.classifier, cfg.hoc, cfg.method, _seed(cfg.seed, _S_TRAIN), stage.models[0], stage.eval_data
    )


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Pre-train, run the task sequence, evaluate; persist when ``cfg.output_dir`` is set."""
    t0 = time.perf_counter()
    stage = pretrain_stage(cfg)
    steps = sequence_stage(cfg, stage)
    report = build_report(
        [s.features for s in steps],
        cfg.eval.metric,
        cfg.data.gallery_fraction,
        cfg.eval.def1_pairs,
        seed=cfg.seed,
    )
    result = ExperimentResult(cfg, report, steps, stage.models, stage.histories, stage.classifier)
    if cfg.output_dir:
        result.output_dir = persist(result, Path(cfg.output_dir), time.perf_counter() - t0)
    return result


# ---------------------------------------------------------------------------
# persistence


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def persist(result: ExperimentResult, out: Path, wall_clock: float | None = None) -> Path:
    """Write every artifact plus a manifest of content hashes."""
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(rel, writer):
        p = out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        writer(p)
        written.append(rel)

    put("config.json", lambda p: p.write_text(result.config.to_json()))
    put("classifier.json", result.classifier.save)
    for which, model in sorted(result.pretrained.items()):
        put(f"checkpoints/{model.model_id}.json", model.save)
        put(f"losses/{model.model_id}.csv", lambda p, w=which: write_loss_history(result.pretrain_histories[w], p))
    for step in result.steps:
        put(f"checkpoints/{step.model.model_id}.json", step.model.save)
        put(f"features/{step.model.model_id}.fset", step.features.save)
        put(f"losses/{step.model.model_id}.csv", lambda p, s=step: write_loss_history(s.history, p))
    put("report.json", result.report.save)
    put("matrix.csv", result.report.matrix.to_csv)

    manifest = {
        "config": result.config.to_dict(),
        "artifacts": [{"path": rel, "sha256": _sha256(out / rel)} for rel in written],
        "versions": {
            "simplexcompat": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "wall_clock_seconds": wall_clock,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return out


def verify_manifest(out) -> list[str]:
    """Paths whose content no longer matches the manifest (missing files included)."""
    out = Path(out)
    manifest = json.loads((out / "manifest.json").read_text())
    bad = []
    for entry in manifest["artifacts"]:
        p = out / entry["path"]
        if not p.is_file() or _sha256(p) != entry["sha256"]:
            bad.append(entry["path"])
    return bad


# ---------------------------------------------------------------------------
# ablations

ABLATION_AXES = ("lambda", "tau", "learning_rate", "memory_per_class")


def _with_axis(base: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    cfg = ExperimentConfig.from_dict(base.to_dict())
    cfg.output_dir = None
    if axis == "lambda":
        cfg.hoc = replace(cfg.hoc, lam=float(value))
    elif axis == "tau":
        cfg.hoc = replace(cfg.hoc, tau=float(value))
    elif axis == "learning_rate":
        cfg.hoc = replace(cfg.hoc, learning_rate=float(value))
    elif axis == "memory_per_class":
        n = cfg.data.samples_per_class if value == "all" else int(value)
        cfg.sequence.memory_per_class = n
    else:
        raise ValidationError(f"axis must be one of {ABLATION_AXES}, got {axis!r}")
    return cfg.validate()


@dataclass(frozen=True)
class AblationRow:
    value: object
    ac: object
    aa_final: float


def run_ablation(base: ExperimentConfig, axis: str, values, out_csv=None) -> list[AblationRow]:
    """One full experiment per value on the shared seed."""
    if axis not in ABLATION_AXES:
        raise ValidationError(f"axis must be one of {ABLATION_AXES}, got {axis!r}")
    values = list(values)
    if not values:
        raise ValidationError("ablation needs at least one value")
    cfgs = [_with_axis(base, axis, v) for v in values]
    rows = []
    for v, cfg in zip(values, cfgs):
        log.info("ablation %s=%s", axis, v)
        rep = run_experiment(cfg).report
        rows.append(AblationRow(v, rep.ac, rep.aa_final))
    if out_csv is not None:
        write_ablation_csv(rows, axis, out_csv)
    return rows


def write_ablation_csv(rows, axis, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([axis, "ac", "aa_final"])
        for r in rows:
            w.writerow([r.value, r.ac if isinstance(r.ac, str) else repr(r.ac), repr(r.aa_final)])


# ---------------------------------------------------------------------------
# convergence comparison


@dataclass
class ConvergenceCurves:
    sce: list
    hoc: list

    @staticmethod
    def window_means(history, width: int = 5) -> list[float]:
        vals = [r.loss_total for r in history]
        return [float(np.mean(vals[s : s + width])) for s in range(0, len(vals) - width + 1, width)]


def convergence_experiment(
    cfg: ExperimentConfig, pretrain_classes: int = 5, total_classes: int = 10
) -> ConvergenceCurves:
    """Pre-train on the first classes, then fine-tune on the enlarged set twice: SCE alone and HOC.

    Both runs start from the same pre-trained model and see identical
    batches; HOC regularises against the pre-trained model.
    """
    if not 2 <= pretrain_classes < total_classes:
        raise ValidationError("need 2 <= pretrain_classes < total_classes")
    if total_classes > cfg.simplex_k:
        raise ValidationError(f"simplex_k={cfg.simplex_k} cannot hold {total_classes} classes")
    world = cfg.data.world(cfg.seed)
    data = make_synthetic_dataset(
        total_classes,
        cfg.data.samples_per_class,
        cfg.data.input_dim,
        cfg.data.cluster_spread,
        _seed(cfg.seed, _S_PRETRAIN_DATA),
        world=world,
    )
    cls = build_simplex(cfg.simplex_k)
    first = data.with_classes(range(pretrain_classes))
    base, _ = pretrain_model(replace(cfg, method="hoc"), first, cls, 0, "pretrained")
    cls.assign_classes(range(pretrain_classes, total_classes), PRETRAIN)
    seed = _seed(cfg.seed, _S_TRAIN, 20_000)
    _, sce_hist, _ = train_model(base, data, cls, replace(cfg.hoc, lam=1.0), seed=seed)
    _, hoc_hist, _ = train_model(base, data, cls, cfg.hoc, old_model=base, seed=seed)
    return ConvergenceCurves(sce_hist, hoc_hist)

"""Sequential fine-tuning with replay memory and asynchronous model replacement."""

from __future__ import annotations

from dataclasses import dataclass, field

from .data import LabeledData, ReplayMemory
from .errors import NumericalError, ValidationError, with_context
from .features import FeatureSet, extract_features
from .network import LinearHead, RepresentationModel
from .simplex import FINETUNE, SimplexClassifier
from .training import HOCConfig, train_model

METHODS = ("hoc", "sce_only", "er_baseline")


@dataclass
class TaskSequence:
    """Fine-tuning tasks in order; ``replacements`` maps a 1-based task number to a pre-trained model."""

    tasks: list
    replacements: dict = field(default_factory=dict)
    memory_per_class: int = 20

    def __post_init__(self):
        seen = set()
        for t, task in enumerate(self.tasks, start=1):
            labels = set(task.classes)
            if labels & seen:
                raise ValidationError(f"task {t} reuses classes {sorted(labels & seen)}")
            seen |= labels
        for t in self.replacements:
            if not 1 <= t <= len(self.tasks):
                raise ValidationError(f"replacement at task {t} is outside 1..{len(self.tasks)}")
        if self.memory_per_class < 0:
            raise ValidationError("memory_per_class must be >= 0")


@dataclass
class SequenceStep:
    task: int
    features: FeatureSet
    model: RepresentationModel
    history: list
    replaced: bool


def run_sequence(
    seq: TaskSequence,
    cls: SimplexClassifier,
    cfg: HOCConfig,
    method: str,
    seed: int,
    initial_model: RepresentationModel,
    eval_data: LabeledData,
    model_prefix: str = "task",
) -> list[SequenceStep]:
    """Fine-tune through ``seq`` and extract evaluation features after every task.

    At each task: swap in the scheduled replacement (if any), fine-tune on
    the task data plus replay memory, store the task's first
    ``memory_per_class`` samples per class, extract features on
    ``eval_data``. ``hoc`` regularises against the previous task's model;
    ``sce_only`` uses the fixed simplex alone; ``er_baseline`` trains a
    fresh linear head over all classes seen so far.
    """
    if method not in METHODS:
        raise ValidationError(f"method must be one of {METHODS}, got {method!r}")
    if method != "er_baseline" and initial_model.embedding_dim != cls.dim:
        raise ValidationError(f"initial model is {initial_model.embedding_dim}-d, simplex is {cls.dim}-d")
    task_cfg = cfg if method == "hoc" else HOCConfig(**{**cfg.__dict__, "lam": 1.0})

    memory = ReplayMemory(seq.memory_per_class)
    current = initial_model
    seen: list[int] = []
    steps = []
    for t, task in enumerate(seq.tasks, start=1):
        previous = current
        replaced = t in seq.replacements
        if replaced:
            incoming = seq.replacements[t]
            if incoming.embedding_dim != previous.embedding_dim:
                raise ValidationError(
                    f"task {t}: replacement model is {incoming.embedding_dim}-d, "
                    f"current model is {previous.embedding_dim}-d"
                )
            current = incoming.copy(provenance="replaced")
        seen += [c for c in task.classes if c not in seen]
        task_seed = seed * 1_000_003 + t
        try:
            if method == "er_baseline":
                head = LinearHead.init(current.embedding_dim, seen, seed=task_seed)
                trained, history, _ = train_model(
                    current, task, None, task_cfg, memory=memory, seed=task_seed, head=head
                )
            else:
                cls.assign_classes(task.classes, FINETUNE)
                old = previous if method == "hoc" else None
                trained, history, _ = train_model(
                    current, task, cls, task_cfg, old_model=old, memory=memory, seed=task_seed
                )
        except (ValidationError, NumericalError) as exc:
            raise with_context(exc, f"task {t}")
        trained.model_id = f"{model_prefix}{t:02d}"
        trained.provenance = "replaced" if replaced else "finetuned"
        memory.update(task)
        current = trained
        steps.append(SequenceStep(t, extract_features(trained, eval_data), trained, history, replaced))
    return steps

"""Command-line entry point: ``simplexcompat <group> <command> [options]``.

Exit codes: 0 on success, 1 on invalid input, 2 on numerical failure.
Results go to files (``--out``; ``-`` or no value means standard output
for the CSV-producing commands); logs go to standard error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

from .errors import NumericalError, ValidationError
from .evaluation import METRICS, build_report
from .features import FeatureSet
from .harness import (
    ABLATION_AXES,
    ExperimentConfig,
    pretrain_stage,
    run_ablation,
    run_experiment,
    sequence_stage,
)
from .hyperball import cap_probability_table, theorem_experiment
from .simplex import SimplexClassifier, build_simplex, verify_etf
from .training import write_loss_history

log = logging.getLogger("simplexcompat")

MODE_NAMES = {"same": "same_class", "diff": "different_class", "shift": "shift"}


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


@contextmanager
def _csv_out(target):
    if target in (None, "-"):
        yield csv.writer(sys.stdout, lineterminator="\n")
        return
    path = Path(target)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        yield csv.writer(fh, lineterminator="\n")


def _require_out(args) -> Path:
    if not args.out:
        raise ValidationError("this command needs --out")
    return Path(args.out)


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.output_dir = str(args.out)
    return cfg.validate()


# ---------------------------------------------------------------------------
# handlers


def cmd_simplex_gen(args):
    build_simplex(args.k).save(_require_out(args))


def cmd_simplex_verify(args):
    diag = verify_etf(SimplexClassifier.load(args.input), args.tol)
    log.info(
        "norm deviation %.3e, cosine deviation %.3e, centroid norm %.3e",
        diag.max_norm_deviation,
        diag.max_cosine_deviation,
        diag.centroid_norm,
    )
    if args.out:
        Path(args.out).write_text(
            f"passed={diag.passed}\nmax_norm_deviation={diag.max_norm_deviation!r}\n"
            f"max_cosine_deviation={diag.max_cosine_deviation!r}\ncentroid_norm={diag.centroid_norm!r}\n"
        )
    if not diag.passed:
        raise ValidationError(f"simplex fails the frame checks at tol={args.tol}")


def cmd_mc_cap_prob(args):
    table = cap_probability_table(args.n, args.dims)
    with _csv_out(args.out) as w:
        w.writerow(["n", "d", "theta_rad", "p"])
        for n, d, theta, p in table:
            w.writerow([n, d, repr(theta), repr(p)])


def cmd_mc_distance(args):
    seed = args.seed if args.seed is not None else 0
    kwargs = {}
    if args.shifts is not None:
        kwargs["shifts"] = args.shifts
    rows = theorem_experiment(
        MODE_NAMES[args.mode],
        args.dims,
        r_old=args.r_old,
        r_new=args.r_new,
        simplex_k=args.simplex_k,
        samples=args.samples,
        seed=seed,
        threads=args.threads,
        **kwargs,
    )
    with _csv_out(args.out) as w:
        w.writerow(["mode", "d_or_shift", "mean_kt", "stderr_kt", "mean_kk", "stderr_kk", "samples", "seed"])
        for r in rows:
            key = int(r.key) if r.mode != "shift" else repr(r.key)
            w.writerow(
                [args.mode, key, repr(r.mean_kt), repr(r.stderr_kt), repr(r.mean_kk), repr(r.stderr_kk), r.samples, r.seed]
            )


def cmd_train_pretrain(args):
    cfg = _load_config(args)
    out = _require_out(args)
    stage = pretrain_stage(cfg)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "losses").mkdir(parents=True, exist_ok=True)
    stage.classifier.save(out / "classifier.json")
    for which, m in stage.models.items():
        m.save(out / "checkpoints" / f"{m.model_id}.json")
        write_loss_history(stage.histories[which], out / "losses" / f"{m.model_id}.csv")


def cmd_train_sequence(args):
    cfg = _load_config(args)
    out = _require_out(args)
    stage = pretrain_stage(cfg)
    steps = sequence_stage(cfg, stage)
    for sub in ("checkpoints", "features", "losses"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    stage.classifier.save(out / "classifier.json")
    for s in steps:
        s.model.save(out / "checkpoints" / f"{s.model.model_id}.json")
        s.features.save(out / "features" / f"{s.model.model_id}.fset")
        write_loss_history(s.history, out / "losses" / f"{s.model.model_id}.csv")


def cmd_eval_report(args):
    files = sorted(Path(args.features).glob("*.fset"))
    if not files:
        raise ValidationError(f"no .fset files in {args.features}")
    sets = [FeatureSet.load(f) for f in files]
    report = build_report(sets, args.metric, args.gallery_fraction, args.def1_pairs, seed=args.seed or 0)
    out = _require_out(args)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    report.matrix.to_csv(out / "matrix.csv")
    log.info("AC=%s AA_final=%.4f", report.ac, report.aa_final)


def cmd_experiment_run(args):
    cfg = _load_config(args)
    if not cfg.output_dir:
        raise ValidationError("set output_dir in the config or pass --out")
    result = run_experiment(cfg)
    log.info("AC=%s AA_final=%.4f -> %s", result.report.ac, result.report.aa_final, result.output_dir)


def cmd_experiment_ablate(args):
    cfg = _load_config(args)
    cfg.output_dir = None
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if args.axis != "memory_per_class":
        values = [float(v) for v in values]
    out = _require_out(args)
    out.parent.mkdir(parents=True, exist_ok=True)
    run_ablation(cfg, args.axis, values, out_csv=out)


# ---------------------------------------------------------------------------
# parser


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # accepted both before and after the subcommand; the subcommand copies
    # must not reset values given earlier, hence SUPPRESS
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int, default=d(None), help="override the seed")
    g.add_argument("--threads", type=int, default=d(1), help="worker threads for Monte-Carlo sampling")
    g.add_argument("--out", default=d(None), help="output file or directory")
    g.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = argparse.ArgumentParser(
        prog="simplexcompat", description=__doc__.splitlines()[0], parents=[_global_flags(suppress=False)]
    )
    groups = p.add_subparsers(dest="group", required=True)

    def sub(group, name, func, help_):
        sp = group.add_parser(name, help=help_, parents=[common])
        sp.set_defaults(func=func)
        return sp

    simplex = groups.add_parser("simplex", help="fixed simplex classifiers").add_subparsers(dest="cmd", required=True)
    sp = sub(simplex, "gen", cmd_simplex_gen, "write a fresh K-prototype simplex as JSON")
    sp.add_argument("--k", type=int, required=True)
    sp = sub(simplex, "verify", cmd_simplex_verify, "check a simplex file against the frame properties")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--tol", type=float, default=1e-9)

    mc = groups.add_parser("mc", help="Monte-Carlo and closed-form geometry").add_subparsers(dest="cmd", required=True)
    sp = sub(mc, "cap-prob", cmd_mc_cap_prob, "cap probability table")
    sp.add_argument("--n", type=_int_list, required=True)
    sp.add_argument("--dims", type=_int_list, required=True)
    sp = sub(mc, "distance", cmd_mc_distance, "expected-distance comparison between balls")
    sp.add_argument("--mode", choices=sorted(MODE_NAMES), required=True)
    sp.add_argument("--dims", type=_int_list, required=True)
    sp.add_argument("--r-old", type=float, default=1.0)
    sp.add_argument("--r-new", type=float, default=0.5)
    sp.add_argument("--samples", type=int, default=100_000)
    sp.add_argument("--simplex-k", type=int, default=None)
    sp.add_argument("--shifts", type=_float_list, default=None)

    train = groups.add_parser("train", help="pre-training and task sequences").add_subparsers(dest="cmd", required=True)
    for name, func in (("pretrain", cmd_train_pretrain), ("sequence", cmd_train_sequence)):
        sp = sub(train, name, func, f"run the {name} stage of an experiment config")
        sp.add_argument("--config", required=True)

    ev = groups.add_parser("eval", help="compatibility evaluation").add_subparsers(dest="cmd", required=True)
    sp = sub(ev, "report", cmd_eval_report, "report over the .fset files of a directory, in name order")
    sp.add_argument("--features", required=True)
    sp.add_argument("--metric", choices=METRICS, default="cosine")
    sp.add_argument("--gallery-fraction", type=float, default=0.2)
    sp.add_argument("--def1-pairs", type=int, default=100_000)

    exp = groups.add_parser("experiment", help="end-to-end experiments").add_subparsers(dest="cmd", required=True)
    sp = sub(exp, "run", cmd_experiment_run, "run one experiment and persist every artifact")
    sp.add_argument("--config", required=True)
    sp = sub(exp, "ablate", cmd_experiment_ablate, "sweep one hyper-parameter; writes a CSV")
    sp.add_argument("--config", required=True)
    sp.add_argument("--axis", choices=ABLATION_AXES, required=True)
    sp.add_argument("--values", required=True, help="comma-separated; memory_per_class also accepts 'all'")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.func(args)
    except ValidationError as exc:
        log.error("%s", exc)
        return 1
    except (NumericalError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return 2
    except (OSError, KeyError, ValueError) as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

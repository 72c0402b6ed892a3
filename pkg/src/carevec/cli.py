"""Command-line pipeline: gen -> prep -> train -> eval -> interpret.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every subcommand is deterministic given its inputs and --seed; reports
are emitted as JSON plus CSV.  --threads (or CAREVEC_THREADS) caps the
linear-algebra worker threads and must be applied before numpy loads,
so the heavy modules are imported inside the command handlers.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import CHECKPOINT_FORMAT_VERSION, COHORT_SCHEMA_VERSION, __version__

_VERSION_TEXT = (
    f"carevec {__version__} "
    f"(checkpoint format {CHECKPOINT_FORMAT_VERSION}, cohort schema {COHORT_SCHEMA_VERSION})"
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _apply_thread_cap(argv) -> None:
    """Cap BLAS threads before numpy is first imported."""
    value = os.environ.get("CAREVEC_THREADS")
    for i, arg in enumerate(argv):
        if arg == "--threads" and i + 1 < len(argv):
            value = argv[i + 1]
        elif arg.startswith("--threads="):
            value = arg.split("=", 1)[1]
    if value is None:
        return
    if "numpy" in sys.modules:
        return  # too late to matter; library users manage their own runtime
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(value))


def build_parser() -> _Parser:
    parser = _Parser(prog="carevec", description="Patient/visit/code representations from claims data.")
    parser.add_argument("--version", action="version", version=_VERSION_TEXT)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a synthetic claims corpus with ground truth")
    p.add_argument("--config", help="generator config JSON; defaults used when omitted")
    p.add_argument("--out-claims", required=True)
    p.add_argument("--out-truth", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("prep", help="parse, preprocess, and filter claims into a cohort")
    p.add_argument("--claims", required=True)
    p.add_argument("--codemap", help="JSON code remapping table (null value drops a code)")
    p.add_argument("--window", default="2014-01-01:2015-12-31")
    p.add_argument("--min-visits", type=int, default=2)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("train", help="train a representation model on a cohort")
    p.add_argument("--cohort", required=True)
    p.add_argument("--mode", default="pv_plus", choices=("pv", "pv_plus", "no_patient_vector", "skipgram"))
    p.add_argument("--dim", type=int, default=100, help="embedding, visit, and patient sizes at once")
    p.add_argument("--embedding-dim", type=int)
    p.add_argument("--visit-dim", type=int)
    p.add_argument("--patient-dim", type=int)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--negatives", type=int, default=10)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--window", type=int, default=1, help="visit context window")
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--patience", type=int, default=5, help="early-stop patience; 0 disables")
    p.add_argument("--optimizer", default="adam", choices=("adam", "sgd"))
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--no-clip", action="store_true")
    p.add_argument("--log-counts", action="store_true", help="feed log(1+count) into the patient path")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--split-seed", type=int, help="cohort split seed (defaults to --seed)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log CSV")
    p.add_argument("--timings", action="store_true", help="write real wall times (breaks byte-reproducibility)")
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("eval", help="evaluate a representation on the cost tasks")
    p.add_argument("--model", required=True)
    p.add_argument("--cohort", required=True)
    p.add_argument("--rep", default="pv_plus", help="representation kind; '+' concatenates kinds")
    p.add_argument("--seeds", default="1,2,3,4,5")
    p.add_argument("--percentiles", default="0.5,1,5,10,50")
    p.add_argument("--holdout-year", type=int)
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--csv-metrics", help="per-seed metric CSV")
    p.add_argument("--csv-risk", help="high-risk table CSV")
    p.add_argument("--out-regressor", help="save the first-seed task-1 ridge model JSON")
    p.add_argument("--visit-tasks", action="store_true", help="also run the visit-level cost tasks")
    p.add_argument("--threads", type=int, default=None)

    p = sub.add_parser("interpret", help="coordinate analysis, coherence, and 2-D projections")
    p.add_argument("--model", required=True)
    p.add_argument("--regressor", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--cohort", help="also project patient vectors when given")
    p.add_argument("--top-m", type=int, default=2)
    p.add_argument("--top-n", type=int, default=8)
    p.add_argument("--threads", type=int, default=None)

    return parser


def _cmd_gen(args) -> int:
    from .synthgen import GenConfig, generate, write_claims

    config = GenConfig.load(args.config) if args.config else GenConfig()
    if args.seed is not None:
        config.seed = args.seed
    claims, truth = generate(config)
    write_claims(claims, args.out_claims)
    truth.save(args.out_truth)
    print(f"wrote {len(claims)} claims for {config.n_members} members")
    return 0


def _cmd_prep(args) -> int:
    from .ingest import prepare_cohort
    from .records import CodeMapTable, DateWindow, save_cohort

    window = DateWindow.parse(args.window)
    codemap = CodeMapTable.load(args.codemap) if args.codemap else None
    cohort = prepare_cohort(args.claims, window, min_visits=args.min_visits, codemap=codemap)
    save_cohort(cohort, args.out)
    print(f"wrote {len(cohort)} patient records")
    return 0


def _split(cohort, seed):
    from .ingest import split_dataset

    return split_dataset(cohort, (0.7, 0.1, 0.2), seed=seed)


def _cmd_train(args) -> int:
    from .params import save_checkpoint
    from .records import load_cohort
    from .trainer import TrainConfig, train

    cohort = load_cohort(args.cohort)
    split_seed = args.seed if args.split_seed is None else args.split_seed
    train_part, valid_part, _ = _split(cohort, split_seed)
    config = TrainConfig(
        mode=args.mode,
        minibatch=args.batch,
        window=args.window,
        lam=args.lam,
        k_negatives=args.negatives,
        gamma=args.gamma,
        embedding_dim=args.embedding_dim or args.dim,
        visit_dim=args.visit_dim or args.dim,
        patient_dim=args.patient_dim or args.dim,
        epochs=args.epochs,
        optimizer=args.optimizer,
        learning_rate=args.lr,
        early_stop_patience=args.patience if args.patience > 0 else None,
        clip_norm=None if args.no_clip else args.clip_norm,
        log_counts=args.log_counts,
        seed=args.seed,
    )
    model, log = train((train_part, valid_part), config)
    model.hyper["split_seed"] = split_seed
    model.hyper["split_ratios"] = [0.7, 0.1, 0.2]
    save_checkpoint(model, args.out)
    if args.log:
        log.to_csv(args.log, timings=args.timings)
    print(f"best epoch {log.best_epoch} of {len(log.train_losses)}; checkpoint at {args.out}")
    return 0


def _load_model_checked(model_path, cohort):
    """Load a checkpoint and verify its vocabulary matches the cohort's train split."""
    from .encodings import build_vocabulary
    from .errors import DataError
    from .params import load_checkpoint

    model = load_checkpoint(model_path)
    split_seed = model.hyper.get("split_seed")
    if split_seed is not None:
        train_part, _, _ = _split(cohort, split_seed)
        rebuilt = build_vocabulary(train_part)
        if rebuilt.content_hash() != model.vocab.content_hash():
            raise DataError(
                "vocabulary hash mismatch between the cohort's train split and the checkpoint; "
                "this checkpoint was trained on a different cohort"
            )
    return model


def _cmd_eval(args) -> int:
    from .evaluate import evaluate_representation, representation, save_regressor, visit_cost_tasks
    from .records import load_cohort

    cohort = load_cohort(args.cohort)
    model = _load_model_checked(args.model, cohort)
    seeds = [int(s) for s in args.seeds.split(",") if s]
    percentiles = [float(p) for p in args.percentiles.split(",") if p]
    rep = representation(cohort, args.rep, model)
    report, regressor = evaluate_representation(
        rep, cohort, seeds=seeds, percentiles=percentiles, holdout_year=args.holdout_year
    )
    if args.visit_tasks:
        for name, task in visit_cost_tasks(model, cohort, seeds=seeds).items():
            report.tasks[name] = task
    report.save_json(args.out)
    if args.csv_metrics or args.csv_risk:
        base = os.path.splitext(args.out)[0]
        report.save_csv(args.csv_metrics or f"{base}_metrics.csv", args.csv_risk or f"{base}_risk.csv")
    if args.out_regressor:
        save_regressor(regressor, rep.kind, args.out_regressor)
    task = report.tasks["current_cost"]
    print(f"{rep.kind}: current-cost R^2 {task.r2_mean:.4f} (+/- {task.r2_std:.4f}) over {len(seeds)} seeds")
    return 0


def _cmd_interpret(args) -> int:
    import json

    import numpy as np

    from .evaluate import extract_patient_vectors, load_regressor
    from .interpret import coordinate_report, group_coherence, project_2d, save_coherence, write_projection_csv
    from .params import load_checkpoint
    from .records import load_cohort
    from .synthgen import GroundTruth

    os.makedirs(args.out_dir, exist_ok=True)
    model = load_checkpoint(args.model)
    regressor, rep_kind = load_regressor(args.regressor)
    truth = GroundTruth.load(args.truth)

    report = coordinate_report(model.params, model.vocab, regressor.coef, top_m=args.top_m, top_n=args.top_n)
    report["regressor_representation"] = rep_kind
    with open(os.path.join(args.out_dir, "coordinates.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")

    code_vectors = {code: model.params.W_c[:, idx] for code, idx in model.vocab.code_to_id.items()}
    intra, inter, purity = group_coherence(code_vectors, truth)
    save_coherence(os.path.join(args.out_dir, "coherence.json"), intra, inter, purity)

    codes = model.vocab.id_to_code
    coords = project_2d(model.params.W_c.T)
    tags = [truth.code_group.get(c, "noise") for c in codes]
    write_projection_csv(os.path.join(args.out_dir, "projection_codes.csv"), codes, coords, tags)

    if args.cohort:
        cohort = load_cohort(args.cohort)
        rep = extract_patient_vectors(model, cohort)
        members = sorted(rep.vectors)
        coords = project_2d(np.stack([rep.vectors[m] for m in members]))
        labels = ["chronic" if truth.member_chronic.get(m, False) else "acute" for m in members]
        write_projection_csv(os.path.join(args.out_dir, "projection_patients.csv"), members, coords, labels)

    print(f"coherence: intra {intra:.3f}, inter {inter:.3f}, purity {purity:.3f}")
    return 0


_HANDLERS = {
    "gen": _cmd_gen,
    "prep": _cmd_prep,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "interpret": _cmd_interpret,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    _apply_thread_cap(argv)
    parser = build_parser()
    args = parser.parse_args(argv)

    from .errors import DataError, NumericalError

    try:
        return _HANDLERS[args.command](args)
    except NumericalError as exc:
        sys.stderr.write(f"carevec: numerical failure: {exc}\n")
        return 3
    except DataError as exc:
        sys.stderr.write(f"carevec: data error: {exc}\n")
        return 2
    except FileNotFoundError as exc:
        sys.stderr.write(f"carevec: data error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: gen, train, solve, eval, compare.

Every command is deterministic given its config and seed, runs its own
validation checks, and exits non-zero if any of them fail.  See
docs/report_format.md for the artifact formats.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .benchmarks import gen_dataset, load_dataset_csv, save_dataset_csv, verify_dataset
from .config import load_config_file, resolve
from .harness import compare_methods, evaluate_reports_file, na_predict_graph_from_model, render_table
from .localization import inn_raw_solve, ipage_solve, na_solve, train_na_surrogate
from .reports import config_hash, save_reports
from .sampling import SamplerKind
from .training import TrainedModel, train, write_training_log


class CheckFailed(RuntimeError):
    pass


def _check(ok: bool, message: str) -> None:
    if not ok:
        raise CheckFailed(message)


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")])


def _parse_ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",")]


def _settings(args, seed: int = 0):
    overrides = load_config_file(args.config) if getattr(args, "config", None) else {}
    return resolve(args.task, overrides, paper_scale=getattr(args, "paper_scale", False),
                   seed=seed)


def _localize_cfg(settings, args):
    import dataclasses

    cfg = settings.localize
    updates = {}
    if getattr(args, "m", None) is not None:
        updates["m"] = args.m
    if getattr(args, "steps", None) is not None:
        updates["steps"] = args.steps
    if getattr(args, "lr", None) is not None:
        updates["lr"] = args.lr
    if getattr(args, "sampler", None) is not None:
        updates["sampler"] = SamplerKind(kind=args.sampler, pool=cfg.sampler.pool)
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _run_hash(settings, **extras) -> str:
    blob = settings.canonical()
    blob.update(extras)
    return config_hash(blob)


def _na_pieces(settings, model, args, seed):
    if settings.na_reuse or getattr(args, "na_reuse", False):
        return None, model.stats, na_predict_graph_from_model(model)
    _check(getattr(args, "data", None) is not None,
           "--method na needs --data to train its surrogate (or use --na-reuse)")
    data = load_dataset_csv(args.data, settings.task)
    surrogate, stats = train_na_surrogate(
        data, n_params_target=model.phi_star.size, seed=seed,
        epochs=settings.na_epochs, batch_size=settings.train.batch_size)
    return surrogate, stats, None


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen(args) -> None:
    settings = _settings(args, seed=args.seed)
    n = args.n if args.n is not None else settings.dataset_size
    ds = gen_dataset(settings.task, n, args.seed)
    save_dataset_csv(ds, args.out)
    reloaded = load_dataset_csv(args.out, settings.task)
    residual = verify_dataset(reloaded, settings.task)
    _check(residual < 1e-10, f"stored rows re-verify at {residual:.2e} (limit 1e-10)")
    _check(reloaded.n == n, "row count mismatch after reload")
    print(f"gen: wrote {n} rows for task {settings.task.name} to {args.out} "
          f"(max forward residual {residual:.2e})")


def cmd_train(args) -> None:
    settings = _settings(args, seed=args.seed)
    train_cfg = settings.train
    if args.epochs is not None:
        import dataclasses

        train_cfg = dataclasses.replace(train_cfg, epochs=args.epochs)
    data = load_dataset_csv(args.data, settings.task)
    model = train(data, train_cfg, settings.flow)
    _check(not model.diverged, "training diverged (non-finite loss); checkpoint not written")
    model.save(args.out)
    write_training_log(model, str(args.out) + ".log.csv")
    loaded = TrainedModel.load(args.out)
    _check(np.array_equal(loaded.phi_final, model.phi_final), "checkpoint round trip failed")
    _check(model.best_val_l2 <= model.final_val_l2 + 1e-15,
           "best forward snapshot worse than final parameters")
    print(f"train: {settings.task.name} for {train_cfg.epochs} epochs, "
          f"val L2 best {model.best_val_l2:.5f} final {model.final_val_l2:.5f} -> {args.out}")


def cmd_solve(args) -> None:
    settings = _settings(args, seed=args.seed)
    model = TrainedModel.load(args.model)
    _check(model.task == settings.task.name,
           f"model was trained for '{model.task}', not '{settings.task.name}'")
    y_star = (_parse_floats(args.target) if args.target is not None
              else np.array(settings.task.default_target))
    _check(y_star.size == settings.task.dim_y, "target dimension mismatch")
    cfg = _localize_cfg(settings, args)
    run_hash = _run_hash(settings, command="solve", method=args.method,
                         target=[float(v) for v in y_star], m=cfg.m, steps=cfg.steps,
                         lr=cfg.lr, sampler=cfg.sampler.kind, seed=args.seed)
    if args.method == "ipage":
        rep = ipage_solve(model, y_star, cfg, settings.task, args.seed, run_hash)
    elif args.method == "inn-raw":
        rep = inn_raw_solve(model, y_star, cfg, settings.task, args.seed, run_hash)
    else:
        import dataclasses

        surrogate, stats, predict = _na_pieces(settings, model, args, args.seed)
        na_cfg = dataclasses.replace(settings.na, restarts=cfg.m,
                                     steps=args.steps if args.steps else settings.na.steps,
                                     lr=args.lr if args.lr else settings.na.lr)
        rep = na_solve(surrogate, stats, y_star, na_cfg, settings.task, args.seed,
                       run_hash, predict_graph=predict)
    save_reports([rep], args.out)
    _check(rep.config_hash == run_hash, "config hash missing from report")
    cov = "" if rep.mode_labels is None else (
        f", coverage {len(set(rep.mode_labels) - {0})}/9")
    print(f"solve[{args.method}]: {rep.m} solutions, mean re-sim error "
          f"{rep.mean_error():.5f}{cov} -> {args.out}")


def cmd_eval(args) -> None:
    rows = evaluate_reports_file(args.reports, expected_hash=args.expect_hash)
    table = render_table(rows)
    with open(args.out, "w", newline="\n") as fh:
        fh.write(table)
    rerun = render_table(evaluate_reports_file(args.reports, expected_hash=args.expect_hash))
    _check(rerun == table, "evaluation is not reproducible from stored reports")
    print(table.rstrip("\n"))
    print(f"eval: summary written to {args.out}")


def cmd_compare(args) -> None:
    settings = _settings(args, seed=args.seeds[0])
    model = TrainedModel.load(args.model)
    _check(model.task == settings.task.name,
           f"model was trained for '{model.task}', not '{settings.task.name}'")
    methods = args.methods.split(",")
    cfg = _localize_cfg(settings, args)
    m = args.m if args.m is not None else cfg.m
    run_hash = _run_hash(settings, command="compare", methods=methods, m=m,
                         seeds=args.seeds, scenario=args.scenario)
    na_surrogate = na_stats = na_predict = None
    if "na" in methods:
        na_surrogate, na_stats, na_predict = _na_pieces(settings, model, args, args.seeds[0])
    rows, reports = compare_methods(
        model, settings.task, methods, args.seeds, cfg, m,
        scenario=args.scenario, na_cfg=settings.na, na_surrogate=na_surrogate,
        na_stats=na_stats, na_predict_graph=na_predict,
        n_targets=settings.scenario["many_targets"], config_hash=run_hash)
    reports_path = args.out + ".reports.jsonl"
    summary_path = args.out + ".summary.csv"
    save_reports(reports, reports_path)
    table = render_table(rows)
    with open(summary_path, "w", newline="\n") as fh:
        fh.write(table)
    # auditability: re-evaluating the stored reports must reproduce the table
    audited = render_table(evaluate_reports_file(reports_path, expected_hash=run_hash))
    _check(sorted(audited.splitlines()[1:]) == sorted(table.splitlines()[1:]),
           "stored reports do not reproduce the emitted summary table")
    print(table.rstrip("\n"))
    print(f"compare: wrote {reports_path} and {summary_path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ipage",
        description="Invertible-network inverse solver with localized gradient search")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--task", required=True, choices=("sinewave", "robotic-arm", "ballistics"))
        p.add_argument("--config", help="INI file overriding task defaults")
        p.add_argument("--paper-scale", action="store_true",
                       help="full-size epochs and scenario sizes")

    p = sub.add_parser("gen", help="generate a paired dataset CSV")
    add_common(p)
    p.add_argument("--n", type=int, help="rows (default: task dataset size)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the invertible model on a dataset")
    add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, help="override epoch count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("solve", help="produce inverse solutions for a target")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--target", help="comma-separated target observation")
    p.add_argument("--m", type=int, help="number of solutions")
    p.add_argument("--sampler", choices=("srs", "lhs", "mlhs"))
    p.add_argument("--steps", type=int, help="localization steps")
    p.add_argument("--lr", type=float, help="localization learning rate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=("ipage", "na", "inn-raw"), default="ipage")
    p.add_argument("--data", help="dataset CSV (needed to train the NA surrogate)")
    p.add_argument("--na-reuse", action="store_true",
                   help="NA reuses the model's best forward snapshot")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("eval", help="recompute a summary from stored reports")
    p.add_argument("--reports", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--expect-hash", help="refuse reports whose config hash differs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="run several methods and tabulate them")
    add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--methods", default="ipage,inn-raw")
    p.add_argument("--m", type=int)
    p.add_argument("--sampler", choices=("srs", "lhs", "mlhs"))
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seeds", type=_parse_ints, default=[0])
    p.add_argument("--scenario", choices=("single", "many"), default="single")
    p.add_argument("--data", help="dataset CSV (needed to train the NA surrogate)")
    p.add_argument("--na-reuse", action="store_true")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (CheckFailed, ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

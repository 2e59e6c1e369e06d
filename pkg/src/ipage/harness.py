"""Experiment orchestration: metrics, scenarios, method comparison, evaluation.

Two evaluation scenarios: many fresh targets with few solutions each, and
one fixed target with many solutions.  Per-repeat re-simulation errors are
aggregated as mean plus sample standard deviation across seeded repeats.
Every emitted table is a pure function of the persisted solve reports, so
re-running evaluation on stored reports reproduces it bitwise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .benchmarks import TaskSpec, forward_batch, sample_prior, sinewave_mode_labels
from .gradcore import Var
from .localization import (
    LocalizeConfig,
    NAConfig,
    inn_raw_solve,
    ipage_solve,
    localize,
    na_solve,
    train_na_surrogate,
)
from .reports import SolveReport, load_reports
from .sampling import draw_latents
from .training import TrainedModel

METHODS = ("ipage", "na", "inn-raw")


def resim_error(solutions: np.ndarray, y_star, task: TaskSpec) -> float:
    """Mean squared distance from the true forward image to the target."""
    solutions = np.atleast_2d(np.asarray(solutions, dtype=np.float64))
    if solutions.shape[0] == 0:
        raise ValueError("no solutions to evaluate")
    resim = forward_batch(task, solutions)
    return float(((resim - np.asarray(y_star, dtype=np.float64)) ** 2).sum(axis=1).mean())


def mode_coverage(solutions: np.ndarray, task="sinewave", radius: float = 0.25,
                  y_target: float = 1.2, y_tol: float = 0.05) -> int:
    """Number of solution islands (out of nine) holding at least one solution."""
    name = task.name if isinstance(task, TaskSpec) else task
    if name != "sinewave":
        raise ValueError(f"task '{name}' has no enumerable mode set")
    labels = sinewave_mode_labels(solutions, y_target=y_target, radius=radius, y_tol=y_tol)
    return len(set(labels.tolist()) - {0})


def _coverage_of(report: SolveReport) -> int | None:
    if report.mode_labels is None:
        return None
    return len(set(report.mode_labels) - {0})


# ---------------------------------------------------------------------------
# scenario runners

@dataclass
class ScenarioSummary:
    scenario: str
    task: str
    method: str
    sampler: str
    per_repeat_errors: list
    coverage: list | None
    timings: dict
    reports: list = field(default_factory=list, repr=False)

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_repeat_errors))

    @property
    def std(self) -> float:
        vals = self.per_repeat_errors
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0


def _aggregate(scenario: str, reports: list[SolveReport],
               seeded_errors: list[tuple[int, float]]) -> ScenarioSummary:
    # deterministic reduction: one value per seed, sorted by seed
    per_repeat = [v for _, v in sorted(seeded_errors, key=lambda sv: sv[0])]
    cov = [_coverage_of(r) for r in reports]
    return ScenarioSummary(
        scenario=scenario,
        task=reports[0].task,
        method=reports[0].method,
        sampler=reports[0].sampler,
        per_repeat_errors=per_repeat,
        coverage=None if cov[0] is None else cov,
        timings={
            "inference": sum(r.timings["inference"] for r in reports),
            "localization": sum(r.timings["localization"] for r in reports),
        },
        reports=reports,
    )


def solve_targets(model: TrainedModel, task: TaskSpec, y_targets: np.ndarray, m: int,
                  cfg: LocalizeConfig, seed: int, method: str = "ipage",
                  config_hash: str = "") -> list[SolveReport]:
    """One batched sampling + descent across many targets (m solutions each)."""
    y_targets = np.atleast_2d(np.asarray(y_targets, dtype=np.float64))
    n = y_targets.shape[0]
    net = model.net_final()
    stats = model.stats

    t0 = time.perf_counter()
    z = np.vstack([draw_latents(cfg.sampler, m, net.config.dim_z, [seed, 2, t])
                   for t in range(n)])
    y_rep = np.repeat(stats.norm_y(y_targets), m, axis=0)
    x0, _ = net.inverse_graph(Var(np.concatenate([y_rep, z], axis=1)), Var(net.params))
    x0 = stats.denorm_x(x0.value)
    t1 = time.perf_counter()

    if method == "inn-raw":
        solutions, n_clamped, t2 = x0, 0, t1
    else:
        y_per_row = np.repeat(y_targets, m, axis=0)
        solutions, n_clamped = localize(model, x0, y_per_row, cfg)
        t2 = time.perf_counter()

    from .localization import _finish_report

    reports = []
    for t in range(n):
        rows = slice(t * m, (t + 1) * m)
        # the guard counts flagged rows for the whole stacked batch; attribute
        # the total to the first report so group sums stay correct
        reports.append(_finish_report(
            task, method, cfg.sampler.kind, seed, y_targets[t], solutions[rows],
            (t1 - t0) / n, (t2 - t1) / n, n_clamped=n_clamped if t == 0 else 0,
            config_hash=config_hash))
    return reports


def scenario_single(model: TrainedModel, task: TaskSpec, y_star=None, m: int = 1000,
                    seeds=(0,), cfg: LocalizeConfig | None = None, method: str = "ipage",
                    na_cfg: NAConfig | None = None, na_surrogate=None, na_stats=None,
                    na_predict_graph=None, config_hash: str = "") -> ScenarioSummary:
    """Many solutions conditioned on one fixed observation, repeated per seed."""
    if m < 1:
        raise ValueError("need at least one solution per repeat")
    y_star = np.asarray(task.default_target if y_star is None else y_star, dtype=np.float64)
    cfg = cfg or LocalizeConfig()
    import dataclasses

    cfg = dataclasses.replace(cfg, m=m)
    reports = []
    for seed in seeds:
        if method == "ipage":
            rep = ipage_solve(model, y_star, cfg, task, seed, config_hash)
        elif method == "inn-raw":
            rep = inn_raw_solve(model, y_star, cfg, task, seed, config_hash)
        elif method == "na":
            na = dataclasses.replace(na_cfg or NAConfig(), restarts=m)
            rep = na_solve(na_surrogate, na_stats or model.stats, y_star, na, task, seed,
                           config_hash, predict_graph=na_predict_graph)
        else:
            raise ValueError(f"unknown method '{method}'")
        reports.append(rep)
    return _aggregate("single-target", reports,
                      [(r.seed, r.mean_error()) for r in reports])


def scenario_many(model: TrainedModel, task: TaskSpec, n_targets: int = 1000,
                  seeds=(0,), m: int = 1, cfg: LocalizeConfig | None = None,
                  method: str = "ipage", na_cfg: NAConfig | None = None,
                  na_surrogate=None, na_stats=None, na_predict_graph=None,
                  config_hash: str = "") -> ScenarioSummary:
    """Fresh prior-drawn targets each repeat, m solutions per target."""
    if n_targets < 1:
        raise ValueError("need at least one target")
    cfg = cfg or LocalizeConfig()
    import dataclasses

    all_reports = []
    per_repeat = []
    for seed in seeds:
        xs = sample_prior(task, n_targets, [seed, 1])
        y_targets = forward_batch(task, xs)
        if method == "na":
            na = dataclasses.replace(na_cfg or NAConfig(), restarts=m)
            reports = [na_solve(na_surrogate, na_stats or model.stats, y_t, na, task,
                                seed, config_hash, predict_graph=na_predict_graph)
                       for y_t in y_targets]
        else:
            reports = solve_targets(model, task, y_targets, m, cfg, seed, method,
                                    config_hash)
        all_reports.extend(reports)
        per_repeat.append((seed, float(np.mean([r.mean_error() for r in reports]))))
    return _aggregate("many-targets", all_reports, per_repeat)


def na_predict_graph_from_model(model: TrainedModel):
    """Adapter so the neural adjoint can reuse the INN's best forward snapshot."""
    net = model.net_star()
    phi = Var(net.params)

    def predict(xv: Var) -> Var:
        out, _ = net.forward_graph(xv, phi)
        return gc.col_slice(out, 0, net.config.dim_y)

    return predict


def compare_methods(model: TrainedModel, task: TaskSpec, methods, seeds,
                    cfg: LocalizeConfig, m: int, y_star=None, scenario: str = "single",
                    na_cfg: NAConfig | None = None, na_surrogate=None, na_stats=None,
                    na_predict_graph=None, n_targets: int = 100,
                    config_hash: str = "") -> tuple[list[dict], list[SolveReport]]:
    """Aligned per-method table of error, coverage, and wall-clock split."""
    if len(methods) < 1:
        raise ValueError("need at least one method")
    rows, reports = [], []
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method '{method}'")
        kw = dict(cfg=cfg, method=method, na_cfg=na_cfg, na_surrogate=na_surrogate,
                  na_stats=na_stats, na_predict_graph=na_predict_graph,
                  config_hash=config_hash)
        if scenario == "single":
            summary = scenario_single(model, task, y_star=y_star, m=m, seeds=seeds, **kw)
        elif scenario == "many":
            summary = scenario_many(model, task, n_targets=n_targets, seeds=seeds, m=m, **kw)
        else:
            raise ValueError(f"unknown scenario '{scenario}'")
        rows.append(summary_row(summary))
        reports.extend(summary.reports)
    return rows, reports


# ---------------------------------------------------------------------------
# report evaluation (the auditable path)

SUMMARY_COLUMNS = ("task", "method", "sampler", "n_solves", "q_resim_mean", "q_resim_std",
                   "coverage_mean", "inference_s", "localization_s", "total_s",
                   "n_dropped", "n_clamped")


def summary_row(summary: ScenarioSummary) -> dict:
    t_inf, t_loc = summary.timings["inference"], summary.timings["localization"]
    return {
        "task": summary.task,
        "method": summary.method,
        "sampler": summary.sampler,
        "n_solves": len(summary.reports),
        "q_resim_mean": summary.mean,
        "q_resim_std": summary.std,
        "coverage_mean": (float(np.mean(summary.coverage))
                          if summary.coverage is not None else float("nan")),
        "inference_s": t_inf,
        "localization_s": t_loc,
        "total_s": t_inf + t_loc,
        "n_dropped": sum(r.n_dropped for r in summary.reports),
        "n_clamped": sum(r.n_clamped for r in summary.reports),
    }


def summarize_reports(reports: list[SolveReport]) -> list[dict]:
    """Group stored reports by (task, method, sampler) and aggregate."""
    if not reports:
        raise ValueError("no reports to summarize")
    groups: dict[tuple, list[SolveReport]] = {}
    for rep in reports:
        groups.setdefault((rep.task, rep.method, rep.sampler), []).append(rep)
    rows = []
    for key in sorted(groups):
        reps = groups[key]
        by_seed: dict[int, list] = {}
        for r in reps:
            by_seed.setdefault(r.seed, []).append(r.mean_error())
        per = [(seed, float(np.mean(vals))) for seed, vals in by_seed.items()]
        summary = _aggregate("stored", reps, per)
        rows.append(summary_row(summary))
    return rows


def render_table(rows: list[dict]) -> str:
    """Deterministic CSV rendering of summary rows."""
    lines = [",".join(SUMMARY_COLUMNS)]
    for row in rows:
        cells = []
        for col in SUMMARY_COLUMNS:
            v = row[col]
            cells.append(f"{v:.17g}" if isinstance(v, float) else str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def evaluate_reports_file(path, expected_hash: str | None = None) -> list[dict]:
    """Recompute the summary from persisted reports; refuse on hash mismatch."""
    reports = load_reports(path)
    if not reports:
        raise ValueError(f"{path}: empty report file")
    hashes = {r.config_hash for r in reports}
    if len(hashes) > 1:
        raise ValueError(f"{path}: mixed config hashes {sorted(hashes)}")
    if expected_hash is not None and hashes != {expected_hash}:
        raise ValueError(f"{path}: config hash {hashes.pop()} does not match {expected_hash}")
    return summarize_reports(reports)

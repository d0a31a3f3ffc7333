"""Closed-loop batch metrics and their recomputation from raw logs."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class MetricsReport:
    alpha: float
    n_runs: int
    n_steps: int
    run_avg_stage: list            # time-averaged stage cost per run
    overall_avg_stage: float       # mean of the per-run time averages
    cum_avg_stage: list            # running time average, averaged over runs
    violation_freq: dict           # output component -> per-step frequency list
    violation_total: dict          # output component -> pooled frequency
    branch_counts: dict            # "measured"/"backup" -> count
    decay_margin_mean: list        # per step: mean of V_{k+1}-V_k+stage_k-alpha
    decay_margin_se: list          # per step: standard error of that mean
    aborted_runs: list = field(default_factory=list)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.__dict__, indent=1, default=str))


def _bounded_components(y_lb, y_ub):
    return [c for c in range(len(y_lb))
            if np.isfinite(y_lb[c]) or np.isfinite(y_ub[c])]


def compute_metrics(runs, alpha: float, y_lb, y_ub,
                    norm_half: bool = False,
                    aborted=()) -> MetricsReport:
    """Aggregate a list of closed-loop record lists into one report."""
    n_runs = len(runs)
    n_steps = min(len(r) for r in runs)
    stage = np.array([[rec.stage_cost(norm_half) for rec in run[:n_steps]]
                      for run in runs])
    V = np.array([[rec.V_Nk for rec in run[:n_steps]] for run in runs])
    run_avg = stage.mean(axis=1)
    cum = np.cumsum(stage.mean(axis=0)) / np.arange(1, n_steps + 1)

    viol_freq, viol_total = {}, {}
    for c in _bounded_components(y_lb, y_ub):
        hits = np.array([[float(rec.y_cl[c] > y_ub[c] or rec.y_cl[c] < y_lb[c])
                          for rec in run[:n_steps]] for run in runs])
        viol_freq[c] = hits.mean(axis=0).tolist()
        viol_total[c] = float(hits.mean())

    branches = {"measured": 0, "backup": 0}
    for run in runs:
        for rec in run[:n_steps]:
            branches[rec.branch] += 1

    margins = V[:, 1:] - V[:, :-1] + stage[:, :-1] - alpha
    margin_mean = margins.mean(axis=0)
    margin_se = (margins.std(axis=0, ddof=1) / np.sqrt(n_runs)
                 if n_runs > 1 else np.full(n_steps - 1, np.nan))

    return MetricsReport(
        alpha=alpha, n_runs=n_runs, n_steps=n_steps,
        run_avg_stage=run_avg.tolist(),
        overall_avg_stage=float(run_avg.mean()),
        cum_avg_stage=cum.tolist(),
        violation_freq=viol_freq,
        violation_total=viol_total,
        branch_counts=branches,
        decay_margin_mean=margin_mean.tolist(),
        decay_margin_se=margin_se.tolist(),
        aborted_runs=list(aborted),
    )


def metrics_from_logs(paths, alpha: float, y_lb, y_ub) -> MetricsReport:
    """Independent aggregation path reading the per-run CSV logs.

    Deliberately avoids the in-memory record objects so a report can be
    audited against the raw files.
    """
    from .controller import read_log

    runs = []
    for p in paths:
        rows = read_log(p)
        runs.append(rows)
    n_runs = len(runs)
    n_steps = min(len(r) for r in runs)
    n_y = sum(1 for k in runs[0][0] if k.startswith("y_cl"))
    stage = np.array([[row["stage_cost"] for row in run[:n_steps]] for run in runs])
    V = np.array([[row["V_Nk"] for row in run[:n_steps]] for run in runs])
    run_avg = stage.mean(axis=1)
    cum = np.cumsum(stage.mean(axis=0)) / np.arange(1, n_steps + 1)
    viol_freq, viol_total = {}, {}
    for c in _bounded_components(y_lb, y_ub):
        hits = np.array([[float(row[f"y_cl{c}"] > y_ub[c] or row[f"y_cl{c}"] < y_lb[c])
                          for row in run[:n_steps]] for run in runs])
        viol_freq[c] = hits.mean(axis=0).tolist()
        viol_total[c] = float(hits.mean())
    branches = {"measured": 0, "backup": 0}
    for run in runs:
        for row in run[:n_steps]:
            branches[row["branch"]] += 1
    margins = V[:, 1:] - V[:, :-1] + stage[:, :-1] - alpha
    margin_mean = margins.mean(axis=0)
    margin_se = (margins.std(axis=0, ddof=1) / np.sqrt(n_runs)
                 if n_runs > 1 else np.full(n_steps - 1, np.nan))
    return MetricsReport(
        alpha=alpha, n_runs=n_runs, n_steps=n_steps,
        run_avg_stage=run_avg.tolist(),
        overall_avg_stage=float(run_avg.mean()),
        cum_avg_stage=cum.tolist(),
        violation_freq=viol_freq,
        violation_total=viol_total,
        branch_counts=branches,
        decay_margin_mean=margin_mean.tolist(),
        decay_margin_se=margin_se.tolist(),
    )

"""Command-line front end: collect, synth, simulate, montecarlo, validate.

Exit codes: 0 on success, 2 on infeasibility or violated data assumptions,
3 on validation failures.
"""

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import BenchmarkConfig, load_config
from .controller import ControllerError, audit_log, write_log
from .data import load_trajectory, save_trajectory
from .lti import extended_matrices
from .metrics import compute_metrics
from .pipeline import (alpha_value, build_spec, collect_ocp_data,
                       collect_synthesis_data, excitation_feedback, prepare,
                       run_seed, synthesize_ingredients)
from .terminal import (CalibrationError, SynthesisError, load_ingredients,
                       riccati_oracle, save_ingredients, spectral_radius)


def _load(args) -> BenchmarkConfig:
    cfg = load_config(args.config)
    if getattr(args, "norm_convention", None):
        cfg = replace(cfg, norm_convention=args.norm_convention)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "runs", None) is not None:
        cfg = replace(cfg, runs=args.runs)
    if getattr(args, "steps", None) is not None:
        cfg = replace(cfg, steps=args.steps)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_collect(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    rng = np.random.default_rng(cfg.seed)
    try:
        traj_synth = collect_synthesis_data(cfg, rng)
        feedback = excitation_feedback(cfg, traj_synth)
        traj_ocp = collect_ocp_data(cfg, rng, feedback)
    except (RuntimeError, ValueError) as exc:
        print(f"data collection failed: {exc}", file=sys.stderr)
        return 2
    save_trajectory(traj_synth, out / "synth_data.csv")
    save_trajectory(traj_ocp, out / "ocp_data.csv")
    print(f"wrote {out / 'synth_data.csv'} ({traj_synth.T} steps) and "
          f"{out / 'ocp_data.csv'} ({traj_ocp.T} steps)")
    return 0


def cmd_synth(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    model = cfg.model()
    data_path = Path(args.data) if args.data else out / "synth_data.csv"
    if data_path.exists():
        traj = load_trajectory(data_path, model.n_u, model.n_w, model.n_y)
    else:
        traj = collect_synthesis_data(cfg, np.random.default_rng(cfg.seed))
        save_trajectory(traj, data_path)
    try:
        ti, report = synthesize_ingredients(cfg, traj)
    except (SynthesisError, CalibrationError) as exc:
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return 2
    em = extended_matrices(model)
    Q_tilde = em.E_tilde @ cfg.Q @ em.E_tilde.T
    K_star = riccati_oracle(em, Q_tilde, cfg.R)
    report["riccati_relative_difference"] = float(
        np.linalg.norm(ti.K - K_star, 2) ** 2 / np.linalg.norm(K_star, 2) ** 2)
    report["alpha"] = alpha_value(cfg, ti)
    save_ingredients(ti, out / "ingredients.json")
    (out / "synth_report.json").write_text(json.dumps(report, indent=1))
    print(f"wrote {out / 'ingredients.json'}")
    for key, val in report.items():
        print(f"  {key} = {val}")
    return 0


def _spec_from_files(cfg, out, ingredients_path, data_path):
    model = cfg.model()
    ing = Path(ingredients_path) if ingredients_path else out / "ingredients.json"
    dat = Path(data_path) if data_path else out / "ocp_data.csv"
    if not ing.exists() or not dat.exists():
        spec, ti, report, traj_synth, traj_ocp = prepare(
            cfg, np.random.default_rng(cfg.seed))
        save_trajectory(traj_synth, out / "synth_data.csv")
        save_trajectory(traj_ocp, out / "ocp_data.csv")
        save_ingredients(ti, out / "ingredients.json")
        return spec, ti
    ti = load_ingredients(ing)
    traj = load_trajectory(dat, model.n_u, model.n_w, model.n_y)
    return build_spec(cfg, ti, traj), ti


def cmd_simulate(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    try:
        spec, ti = _spec_from_files(cfg, out, args.ingredients, args.data)
        records = run_seed(cfg, spec, args.run_index, steps=cfg.steps)
    except (ControllerError, SynthesisError, CalibrationError, RuntimeError) as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return 2
    log = out / f"run_{args.run_index:04d}.csv"
    write_log(records, log, cfg.norm_half)
    ok, worst = audit_log(log)
    print(f"wrote {log} ({len(records)} steps); "
          f"branches: {sum(1 for r in records if r.branch == 'backup')} backup; "
          f"selection invariant {'holds' if ok else 'VIOLATED'} "
          f"(worst margin {worst:.3e})")
    return 0 if ok else 2


def _mc_worker(payload):
    cfg, spec, run_index = payload
    try:
        return run_index, run_seed(cfg, spec, run_index), None
    except Exception as exc:  # aborted runs are reported, not fatal
        return run_index, None, str(exc)


def cmd_montecarlo(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    try:
        spec, ti = _spec_from_files(cfg, out, args.ingredients, args.data)
    except (SynthesisError, CalibrationError, RuntimeError) as exc:
        print(f"setup failed: {exc}", file=sys.stderr)
        return 2
    alpha = alpha_value(cfg, ti)
    payloads = [(cfg, spec, r) for r in range(cfg.runs)]
    results = []
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_mc_worker, payloads))
    else:
        results = [_mc_worker(p) for p in payloads]
    runs, aborted = [], []
    for run_index, records, err in sorted(results):
        if err is None:
            runs.append(records)
            write_log(records, out / f"run_{run_index:04d}.csv", cfg.norm_half)
        else:
            aborted.append((run_index, err))
    if not runs:
        print("all runs aborted", file=sys.stderr)
        return 2
    report = compute_metrics(runs, alpha, cfg.y_lb, cfg.y_ub, cfg.norm_half,
                             aborted=aborted)
    report.to_json(out / "metrics.json")
    _write_figures(out, cfg, runs, report)
    print(f"{report.n_runs} runs x {report.n_steps} steps, "
          f"{len(aborted)} aborted")
    print(f"alpha = {alpha:.2f}, time-averaged stage cost = "
          f"{report.overall_avg_stage:.2f}")
    for c, freq in report.violation_total.items():
        print(f"output {c} pooled violation frequency = {freq:.4f}")
    print(f"branch counts: {report.branch_counts}")
    return 0


def _write_figures(out, cfg, runs, report):
    with open(out / "trajectories.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        n_u = runs[0][0].u_cl.shape[0]
        n_y = runs[0][0].y_cl.shape[0]
        wr.writerow(["run", "k"] + [f"u{i}" for i in range(n_u)]
                    + [f"y{i}" for i in range(n_y)])
        for r, records in enumerate(runs):
            for rec in records:
                wr.writerow([r, rec.k] + [repr(float(v)) for v in rec.u_cl]
                            + [repr(float(v)) for v in rec.y_cl])
    snapshot_steps = [k for k in (0, 5, 10, 15, 20, 25) if k < report.n_steps]
    with open(out / "y2_histogram.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "bin_left", "bin_right", "density"])
        for k in snapshot_steps:
            samples = np.array([records[k].y_cl[min(1, runs[0][0].y_cl.shape[0] - 1)]
                                for records in runs])
            dens, edges = np.histogram(samples, bins=12, density=True)
            for d, lo, hi in zip(dens, edges[:-1], edges[1:]):
                wr.writerow([k, repr(float(lo)), repr(float(hi)), repr(float(d))])
    with open(out / "avg_cost_vs_time.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "cumulative_avg_stage", "alpha"])
        for k, v in enumerate(report.cum_avg_stage):
            wr.writerow([k, repr(float(v)), repr(float(report.alpha))])


def cmd_validate(args) -> int:
    from .validate import run_validation
    cfg = _load(args)
    results = run_validation(cfg)
    return 0 if all(ok for _, ok, _ in results) else 3


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sddpc",
        description="Stochastic data-driven output-feedback predictive control")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", default="aircraft",
                       help="built-in name or config file path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--norm-convention", choices=["plain", "half"],
                       default=None, dest="norm_convention")
        if out:
            p.add_argument("--out-dir", default="out")

    p = sub.add_parser("collect", help="record offline excitation data")
    common(p)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("synth", help="synthesize terminal ingredients from data")
    common(p)
    p.add_argument("--data", default=None, help="synthesis trajectory CSV")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("simulate", help="one closed-loop run")
    common(p)
    p.add_argument("--ingredients", default=None)
    p.add_argument("--data", default=None, help="OCP trajectory CSV")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--run-index", type=int, default=0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("montecarlo", help="batch of independent runs + metrics")
    common(p)
    p.add_argument("--ingredients", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--workers", type=int, default=2)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("validate", help="run the validation suite")
    common(p, out=False)
    p.set_defaults(func=cmd_validate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

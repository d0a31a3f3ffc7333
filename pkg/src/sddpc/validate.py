"""Self-contained validation checks over the whole pipeline.

Each check returns (name, passed, detail).  The functions accept the
objects they scrutinize as arguments so tests can inject faults (a
perturbed terminal weight, a wrong tightening factor) and watch the right
check trip.
"""

import tempfile
from pathlib import Path

import numpy as np

from .conic import solve
from .config import BenchmarkConfig, builtin_config
from .controller import run_closed_loop, write_log
from .lti import extended_matrices
from .metrics import compute_metrics, metrics_from_logs
from .ocp import assemble, extract_solution, measured_init
from .pce import build_joint_basis, disturbance_pce, moments, sample_germ_values
from .pipeline import alpha_value, prepare
from .reference import assemble_reference
from .terminal import riccati_oracle, spectral_radius


def check_basis_dimension(cfg: BenchmarkConfig):
    model = cfg.model()
    basis = build_joint_basis(model.n_z + 1, 1 + model.n_w, cfg.N)
    expected = (model.n_z + 1) + cfg.N * model.n_w
    ok = basis.L == expected
    return ("basis-dimension", ok, f"L={basis.L}, expected {expected}")


def check_moments_mc(cfg: BenchmarkConfig, rng, n_samples=100_000):
    model = cfg.model()
    basis = build_joint_basis(model.n_z + 1, 1 + model.n_w, cfg.N)
    w = disturbance_pce(cfg.Sigma_W, basis, 0)
    mean, cov = moments(w, basis)
    draws = sample_germ_values(basis, rng, size=n_samples)
    samples = draws @ w.coeffs.T
    m_hat = samples.mean(axis=0)
    c_hat = np.cov(samples.T)
    ok = True
    detail = []
    for c in range(model.n_w):
        se = np.sqrt(max(cov[c, c], 1e-300) / n_samples)
        if abs(m_hat[c] - mean[c]) > 3 * se + 1e-12:
            ok = False
            detail.append(f"mean[{c}] off")
    for a in range(model.n_w):
        for b in range(model.n_w):
            se = np.sqrt((cov[a, a] * cov[b, b] + cov[a, b] ** 2) / n_samples)
            if abs(np.atleast_2d(c_hat)[a, b] - cov[a, b]) > 3 * se + 1e-12:
                ok = False
                detail.append(f"cov[{a},{b}] off")
    return ("pce-moments-vs-montecarlo", ok, "; ".join(detail) or "within 3 SE")


def check_synthesis(cfg: BenchmarkConfig, ti, report):
    em = extended_matrices(cfg.model())
    Q_tilde = em.E_tilde @ cfg.Q @ em.E_tilde.T
    A_K = ti.A_K
    resid_P = np.linalg.norm(A_K.T @ ti.P @ A_K - ti.P + ti.K.T @ cfg.R @ ti.K
                             + A_K.T @ Q_tilde @ A_K)
    resid_G = np.linalg.norm(A_K.T @ ti.Gamma @ A_K - ti.Gamma
                             + np.eye(A_K.shape[0]))
    rho = spectral_radius(A_K)
    ok = resid_P <= 1e-8 and resid_G <= 1e-8 and rho < 1.0 and ti.gamma > 0.0
    return ("terminal-ingredients-residuals", ok,
            f"lyap_P={resid_P:.2e} lyap_Gamma={resid_G:.2e} rho={rho:.4f} "
            f"gamma={ti.gamma:.3e}")


def check_riccati(cfg: BenchmarkConfig, ti, tol=1e-4):
    em = extended_matrices(cfg.model())
    Q_tilde = em.E_tilde @ cfg.Q @ em.E_tilde.T
    K_star = riccati_oracle(em, Q_tilde, cfg.R)
    rel = (np.linalg.norm(ti.K - K_star, 2) ** 2
           / max(np.linalg.norm(K_star, 2) ** 2, 1e-300))
    return ("feedback-vs-riccati", rel <= tol, f"relative difference {rel:.3e}")


def check_oracle_equivalence(spec, model, rng, instances=5, tol=1e-5):
    worst = 0.0
    for _ in range(instances):
        z0 = 0.3 * rng.standard_normal(model.n_z)
        init = measured_init(z0, spec.basis)
        sol = solve(assemble(spec, init))
        ref = solve(assemble_reference(spec, init, model))
        if sol.is_optimal != ref.is_optimal:
            return ("hankel-vs-model-ocp", False,
                    f"status disagreement at z0={z0}")
        if sol.is_optimal:
            diff = (abs(sol.objective_value - ref.objective_value)
                    / max(1.0, abs(ref.objective_value)))
            worst = max(worst, diff)
    return ("hankel-vs-model-ocp", worst <= tol, f"worst relative gap {worst:.2e}")


def check_chance_conservatism(spec, model, rng, n_samples=10_000, z0=None):
    """Sampled constrained-output realizations of one optimal prediction must
    violate their box no more often than the design risk level allows."""
    if z0 is None:
        z0 = np.zeros(model.n_z)
    sol = solve(assemble(spec, measured_init(z0, spec.basis)))
    if not sol.is_optimal:
        return ("chance-conservatism", False, "nominal problem not solvable")
    ex = extract_solution(spec, sol)
    draws = sample_germ_values(spec.basis, rng, size=n_samples)
    eps = spec.eps_y
    ok = True
    detail = []
    for c in range(spec.n_y):
        lb, ub = spec.y_box.lb[c], spec.y_box.ub[c]
        if not (np.isfinite(lb) or np.isfinite(ub)):
            continue
        for i in range(spec.N):
            coeffs = ex.y[c, spec.T_ini + i, :]
            samples = draws @ coeffs
            freq = float(np.mean((samples > ub) | (samples < lb)))
            bound = eps + 3 * np.sqrt(eps * (1 - eps) / n_samples)
            if freq > bound:
                ok = False
                detail.append(f"y{c} step {i}: {freq:.3f} > {bound:.3f}")
    return ("chance-conservatism", ok, "; ".join(detail) or "all steps within bound")


def check_recursive_feasibility(cfg: BenchmarkConfig, spec, runs=5, steps=20,
                                seed=123):
    model = cfg.model()
    failures = 0
    for r in range(runs):
        try:
            run_closed_loop(spec, model, np.zeros(model.n_z), steps,
                            np.random.default_rng([seed, r]))
        except Exception:
            failures += 1
    return ("recursive-feasibility", failures == 0,
            f"{failures} aborted runs of {runs}")


def check_report_integrity(cfg: BenchmarkConfig, spec, alpha, runs=2, steps=5):
    model = cfg.model()
    batches = [run_closed_loop(spec, model, np.zeros(model.n_z), steps,
                               np.random.default_rng([55, r]))
               for r in range(runs)]
    rep = compute_metrics(batches, alpha, cfg.y_lb, cfg.y_ub, cfg.norm_half)
    with tempfile.TemporaryDirectory() as tmp:
        paths = []
        for r, records in enumerate(batches):
            p = Path(tmp) / f"run{r}.csv"
            write_log(records, p, cfg.norm_half)
            paths.append(p)
        rep2 = metrics_from_logs(paths, alpha, cfg.y_lb, cfg.y_ub)
    same = (np.allclose(rep.run_avg_stage, rep2.run_avg_stage, rtol=0, atol=0)
            and np.allclose(rep.decay_margin_mean, rep2.decay_margin_mean,
                            rtol=0, atol=0)
            and rep.branch_counts == rep2.branch_counts
            and rep.violation_total == rep2.violation_total)
    return ("report-integrity", same, "log recomputation matches" if same
            else "recomputed aggregates differ")


def run_validation(cfg: BenchmarkConfig, verbose=True):
    """Full suite on the given benchmark plus the scalar fixture."""
    rng = np.random.default_rng(cfg.seed)
    results = [check_basis_dimension(cfg), check_moments_mc(cfg, rng)]

    spec, ti, report, traj_synth, traj_ocp = prepare(cfg, np.random.default_rng(cfg.seed))
    results.append(check_synthesis(cfg, ti, report))
    results.append(check_riccati(cfg, ti))

    scal = builtin_config("scalar")
    s_spec, s_ti, _, _, _ = prepare(scal, np.random.default_rng(scal.seed))
    results.append(check_oracle_equivalence(s_spec, scal.model(),
                                            np.random.default_rng(1)))
    results.append(check_chance_conservatism(s_spec, scal.model(),
                                             np.random.default_rng(2)))
    results.append(check_recursive_feasibility(scal, s_spec))
    results.append(check_report_integrity(scal, s_spec, alpha_value(scal, s_ti)))

    if verbose:
        width = max(len(name) for name, _, _ in results)
        for name, ok, detail in results:
            print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    return results

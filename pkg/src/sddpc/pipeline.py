"""End-to-end wiring of the benchmark stages, shared by the CLI and tests."""

import numpy as np

from .config import BenchmarkConfig
from .controller import run_closed_loop
from .data import (Trajectory, build_design_matrices, build_ocp_hankels,
                   collect_data, uniform_input_sampler)
from .lti import extended_matrices
from .ocp import OcpSpec, build_ocp_spec, chance_sigma, gaussian_chance_sigma
from .pce import build_joint_basis
from .terminal import TerminalIngredients, solve_lqr_sdp, spectral_radius, surrogate_M, synthesize


def sigmas(cfg: BenchmarkConfig):
    sig = gaussian_chance_sigma if cfg.gaussian_sigma else chance_sigma
    return sig(cfg.eps_u), sig(cfg.eps_y)


def collect_synthesis_data(cfg: BenchmarkConfig, rng: np.random.Generator) -> Trajectory:
    model = cfg.model()
    sampler = uniform_input_sampler(*cfg.excitation_box())
    return collect_data(model, cfg.T_synth, sampler, rng)


def excitation_feedback(cfg: BenchmarkConfig, traj_synth: Trajectory):
    """Stabilizing gain for collecting long records from unstable plants.

    Open-loop records of an unstable plant blow up past double precision;
    the gain is synthesized from the short record and used purely as
    excitation plumbing (the rank gates still qualify the data).
    """
    model = cfg.model()
    em = extended_matrices(model)
    if spectral_radius(em.A_tilde) < 1.0:
        return None
    dm = build_design_matrices(traj_synth)
    M = surrogate_M(dm, em)
    Q_tilde = em.E_tilde @ cfg.Q @ em.E_tilde.T
    K, _ = solve_lqr_sdp(M, dm.Z_dd, dm.U_dd, Q_tilde, cfg.R, em.E_tilde)
    return K


def collect_ocp_data(cfg: BenchmarkConfig, rng: np.random.Generator,
                     feedback=None) -> Trajectory:
    model = cfg.model()
    sampler = uniform_input_sampler(*cfg.excitation_box())
    return collect_data(model, cfg.T_ocp, sampler, rng, N=cfg.N, feedback=feedback)


def synthesize_ingredients(cfg: BenchmarkConfig, traj_synth: Trajectory):
    model = cfg.model()
    em = extended_matrices(model)
    dm = build_design_matrices(traj_synth)
    sig_u, sig_y = sigmas(cfg)
    return synthesize(dm, em, cfg.Q, cfg.R, cfg.Sigma_W, cfg.u_box(), cfg.y_box(),
                      sig_u, sig_y, eps_z_override=cfg.eps_z)


def build_spec(cfg: BenchmarkConfig, ti: TerminalIngredients,
               traj_ocp: Trajectory) -> OcpSpec:
    model = cfg.model()
    hankels = build_ocp_hankels(traj_ocp, cfg.N, cfg.T_ini, cfg.n_x)
    basis = build_joint_basis(model.n_z + 1, 1 + model.n_w, cfg.N)
    return build_ocp_spec(hankels, basis, ti, cfg.Q, cfg.R, cfg.Sigma_W,
                          cfg.eps_u, cfg.eps_y, cfg.u_box(), cfg.y_box(),
                          gaussian_sigma=cfg.gaussian_sigma,
                          norm_half=cfg.norm_half)


def prepare(cfg: BenchmarkConfig, rng: np.random.Generator):
    """Offline phase end to end: data, ingredients, OCP spec."""
    traj_synth = collect_synthesis_data(cfg, rng)
    feedback = excitation_feedback(cfg, traj_synth)
    traj_ocp = collect_ocp_data(cfg, rng, feedback)
    ti, report = synthesize_ingredients(cfg, traj_synth)
    spec = build_spec(cfg, ti, traj_ocp)
    return spec, ti, report, traj_synth, traj_ocp


def run_seed(cfg: BenchmarkConfig, spec: OcpSpec, run_index: int,
             steps: int | None = None, z0: np.ndarray | None = None):
    """One independent closed-loop run; the seed stream is (seed, run_index)."""
    model = cfg.model()
    rng = np.random.default_rng([cfg.seed, 1000 + run_index])
    if z0 is None:
        z0 = np.zeros(model.n_z)
    return run_closed_loop(spec, model, z0, steps or cfg.steps, rng)


def alpha_value(cfg: BenchmarkConfig, ti: TerminalIngredients) -> float:
    """Asymptotic average-cost level trace(Sigma_W (Q + E' P E))."""
    em = extended_matrices(cfg.model())
    raw = float(np.trace(cfg.Sigma_W @ (cfg.Q + em.E_tilde.T @ ti.P @ em.E_tilde)))
    return 0.5 * raw if cfg.norm_half else raw

"""Named experiments: configuration in, check reports and tables out.

Each runner builds its problem from an ExperimentConfig, executes one
verification scenario, and returns CheckReports plus plot-ready tables.
Numerical preconditions raise with module diagnostics; configuration
mistakes raise ConfigError with the offending field path.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .config import (
    ConfigError,
    ExperimentConfig,
    build_problem,
    get_choice,
    get_expression,
    get_float,
    get_floats,
    get_int,
)
from .cutoff import (
    build_profile,
    cutoff_heat_inequality_check,
    derive_cutoff_constants,
    local_lower_bound_check,
    profile_inequality_check,
)
from .harness import (
    MviProbe,
    boundary_mass_check,
    duality_uniqueness_check,
    mass_evolution_check,
    mvi_ratio_probe,
    mvi_stability_check,
    width_robustness_check,
)
from .meshes import build_mesh
from .metrics import sample_metric
from .operators import volume_integral
from .reports import FAIL, PASS, CheckReport
from .sequences import build_sequence, delta_property_check, positivity_check, \
    run_sequence
from .solver import ProblemSpec, fundamental_solution, solve_forward

RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class ExperimentResult:
    kind: str
    reports: tuple
    tables: tuple  # ((name, header, rows), ...)


def _residual_check(run) -> CheckReport:
    worst = float(run.meta.get("max_solve_residual", np.nan))
    ok = np.isfinite(worst) and worst <= RESIDUAL_TOL
    return CheckReport(check_id="solver.residual",
                       verdict=PASS if ok else FAIL,
                       measured=worst, bound=RESIDUAL_TOL)


def _mass_check(run, spec: ProblemSpec) -> CheckReport:
    if spec.mesh.closed:
        return mass_evolution_check(run, spec)
    return boundary_mass_check(run, spec)


def _mass_table(run):
    rows = [(float(t), float(m)) for t, m in zip(run.times, run.mass)]
    return ("mass", ("tau", "mass"), tuple(rows))


def _state_table(run, name="final_state"):
    mesh = run.mesh
    u = run.values[-1]
    if mesh.dim == 1:
        rows = [(i, float(mesh.x[i]), float(u[i]))
                for i in range(mesh.n_nodes)]
        return (name, ("node", "x", "u"), tuple(rows))
    rows = [(i, float(mesh.x[i]), float(mesh.y[i]), float(u[i]))
            for i in range(mesh.n_nodes)]
    return (name, ("node", "x", "y", "u"), tuple(rows))


def _initial_field(cfg: ExperimentConfig, spec: ProblemSpec) -> np.ndarray:
    expr = get_expression(cfg, "experiment", "initial", spec.mesh.dim)
    args = (spec.mesh.x, 0.0) if spec.mesh.dim == 1 else \
        (spec.mesh.x, spec.mesh.y, 0.0)
    return expr(*args)


def _kernel_run(cfg: ExperimentConfig, spec: ProblemSpec):
    if spec.delta_width is None:
        raise ConfigError("experiment.delta_width: required for kernel runs")
    return fundamental_solution(spec)


def run_solve(cfg: ExperimentConfig) -> ExperimentResult:
    spec = build_problem(cfg)
    run = solve_forward(spec, _initial_field(cfg, spec))
    reports = (_residual_check(run), _mass_check(run, spec))
    return ExperimentResult("solve", reports,
                            (_mass_table(run), _state_table(run)))


def run_kernel(cfg: ExperimentConfig) -> ExperimentResult:
    spec = build_problem(cfg)
    run = _kernel_run(cfg, spec)
    tau1 = get_float(cfg, "check", "tau1",
                     10.0 * float(spec.delta_width) ** 2)
    region = np.ones(spec.mesh.n_nodes, dtype=bool)
    reports = (_residual_check(run), _mass_check(run, spec),
               positivity_check(run, region, tau1, check_id="kernel.positivity"))
    return ExperimentResult("kernel", reports,
                            (_mass_table(run), _state_table(run)))


def run_verify_mass(cfg: ExperimentConfig) -> ExperimentResult:
    spec = build_problem(cfg)
    if cfg.get("experiment", "initial", None) is not None:
        run = solve_forward(spec, _initial_field(cfg, spec))
    else:
        run = _kernel_run(cfg, spec)
    reports = (_residual_check(run), _mass_check(run, spec))
    return ExperimentResult("verify-mass", reports, (_mass_table(run),))


def run_verify_mvi(cfg: ExperimentConfig) -> ExperimentResult:
    spec = build_problem(cfg)
    if spec.mesh.dim != 1:
        raise ConfigError("mesh.topology: refinement scaling is "
                          "one-dimensional")
    factors = cfg.get("check", "refinements", "1,2,4")
    try:
        factors = tuple(int(p) for p in factors.split(","))
    except ValueError as exc:
        raise ConfigError(f"check.refinements: not an integer list: "
                          f"{factors!r}") from exc
    tau0 = get_float(cfg, "check", "mvi_tau0")
    r0 = get_float(cfg, "check", "mvi_r0")
    spread = get_float(cfg, "check", "mvi_spread", 0.2)
    reports, rows = [], []
    for f in factors:
        fine = build_mesh(spec.mesh.topology, spec.mesh.extent,
                          tuple(n * f for n in spec.mesh.node_count),
                          origin=spec.mesh.origin)
        sub = dataclasses.replace(spec, mesh=fine, dt=spec.dt / f,
                                  x0=spec.x0 * f)
        run = fundamental_solution(sub)
        probe = MviProbe(center=sub.x0, tau0=tau0, r0=r0)
        rep = mvi_ratio_probe(run, probe)
        rep = dataclasses.replace(rep, k=f)
        reports.append(rep)
        rows.append((f, rep.measured))
    reports.append(mvi_stability_check(reports, spread_tol=spread))
    return ExperimentResult("verify-mvi", tuple(reports),
                            (("mvi_ratios", ("refinement", "ratio"),
                              tuple(rows)),))


def run_verify_cutoff(cfg: ExperimentConfig) -> ExperimentResult:
    spec = build_problem(cfg)
    r_star = get_float(cfg, "check", "r_star")
    tol_coeff = get_float(cfg, "check", "tol_coeff", 1.0)
    bound_kind = get_choice(cfg, "check", "bound_kind",
                            ("fundamentalSolution", "solutionOnBall"),
                            "fundamentalSolution")
    bound_tol = get_float(cfg, "check", "bound_tol", 1e-3)
    reports = [profile_inequality_check(build_profile())]
    cut = derive_cutoff_constants(spec, r_star)
    reports.append(cutoff_heat_inequality_check(cut, spec,
                                                tol_coeff=tol_coeff))
    run = _kernel_run(cfg, spec)
    reports.append(local_lower_bound_check(run, cut, bound_kind,
                                           tol=bound_tol))
    const_rows = tuple(sorted(cut.as_details().items()))
    s = np.linspace(0.0, 3.0, 61)
    phi = build_profile()
    profile_rows = tuple(zip(s.tolist(), phi(s).tolist()))
    tables = (("cutoff_constants", ("name", "value"), const_rows),
              _mass_table(run),
              ("cutoff_profile", ("s", "phi"), profile_rows))
    return ExperimentResult("verify-cutoff", tuple(reports), tables)


def run_verify_duality(cfg: ExperimentConfig) -> ExperimentResult:
    spec = build_problem(cfg)
    tau_bar = get_float(cfg, "check", "tau_bar")
    tol_dual = get_float(cfg, "check", "tol_dual", 5e-3)
    expr = get_expression(cfg, "check", "phi", spec.mesh.dim)
    args = (spec.mesh.x, tau_bar) if spec.mesh.dim == 1 else \
        (spec.mesh.x, spec.mesh.y, tau_bar)
    phi = expr(*args)
    run = _kernel_run(cfg, spec)
    reports = [_residual_check(run),
               duality_uniqueness_check(spec, phi, tau_bar, run=run,
                                        tol_dual=tol_dual)]
    width = get_float(cfg, "check", "width_test", None)
    if width is not None:
        reports.append(width_robustness_check(spec, width))
    return ExperimentResult("verify-duality", tuple(reports),
                            (_mass_table(run),))


def run_verify_delta(cfg: ExperimentConfig) -> ExperimentResult:
    spec = build_problem(cfg)
    run = _kernel_run(cfg, spec)
    expr = get_expression(cfg, "check", "field", spec.mesh.dim)
    args = (spec.mesh.x, 0.0) if spec.mesh.dim == 1 else \
        (spec.mesh.x, spec.mesh.y, 0.0)
    F = expr(*args)
    taus = get_floats(cfg, "check", "taus", (0.02, 0.05, 0.1))
    c_star = get_float(cfg, "check", "c_star", 1.05)
    tol = get_float(cfg, "check", "delta_tol", 1e-3)
    tau1 = get_float(cfg, "check", "tau1",
                     10.0 * float(spec.delta_width) ** 2)
    region = np.ones(spec.mesh.n_nodes, dtype=bool)
    reports = (delta_property_check(run, spec, F, taus, c_star, tol=tol),
               positivity_check(run, region, tau1))
    rows = []
    for tau in taus:
        j = int(np.argmin(np.abs(run.times - tau)))
        s = sample_metric(run.family, spec.mesh, run.times[j])
        rows.append((float(run.times[j]),
                     float(volume_integral(run.values[j] * F, s, spec.mesh))))
    tables = (("delta_pairings", ("tau", "pairing"), tuple(rows)),
              _mass_table(run))
    return ExperimentResult("verify-delta", reports, tables)


def run_cg(cfg: ExperimentConfig) -> ExperimentResult:
    spec = build_problem(cfg)
    kind = get_choice(cfg, "sequence", "kind",
                      ("conformalPerturbation", "expandingDomains",
                       "potentialDrift"))
    k_max = get_int(cfg, "sequence", "k_max", 5)
    kwargs = dict(
        l0=get_float(cfg, "sequence", "l0", 1.0),
        l_step=get_float(cfg, "sequence", "l_step", 0.5),
        probe_radius=get_float(cfg, "sequence", "probe_radius", None),
        tau1=get_float(cfg, "sequence", "tau1", 0.1),
        c_star=get_float(cfg, "sequence", "c_star", 1.05))
    psi_expr = get_expression(cfg, "sequence", "psi", spec.mesh.dim, None)
    if psi_expr is not None:
        if spec.mesh.dim == 1:
            kwargs["psi"] = lambda x: psi_expr(x, 0.0)
        else:
            kwargs["psi"] = lambda x, y: psi_expr(x, y, 0.0)
    chi = get_expression(cfg, "sequence", "chi", spec.mesh.dim, None)
    if chi is not None:
        kwargs["chi"] = chi
    names = ("drift_delta_x", "drift_delta_y")[:spec.mesh.dim]
    deltas = [get_expression(cfg, "sequence", n, spec.mesh.dim, None)
              for n in names]
    if any(d is not None for d in deltas):
        from .expressions import parse_field
        zero = parse_field("0", dim=spec.mesh.dim)
        kwargs["drift_deltas"] = tuple(d if d is not None else zero
                                       for d in deltas)
    try:
        seq = build_sequence(kind, k_max, spec, **kwargs)
    except ValueError as exc:
        raise ConfigError(f"sequence: {exc}") from exc
    band = None
    lo = get_float(cfg, "check", "ratio_lo", None)
    hi = get_float(cfg, "check", "ratio_hi", None)
    if (lo is None) != (hi is None):
        raise ConfigError("check.ratio_lo: ratio_lo and ratio_hi come "
                          "as a pair")
    if lo is not None:
        band = (lo, hi)
    rep = run_sequence(seq, tol_cg=get_float(cfg, "check", "tol_cg", 1e-2),
                       ratio_band=band)
    header, body = rep.rows()
    tables = (("cg_errors", header, tuple(body)),)
    return ExperimentResult("cg-run", rep.checks, tables)


EXPERIMENT_RUNNERS = {
    "solve": run_solve,
    "kernel": run_kernel,
    "verify-mass": run_verify_mass,
    "verify-mvi": run_verify_mvi,
    "verify-cutoff": run_verify_cutoff,
    "verify-duality": run_verify_duality,
    "verify-delta": run_verify_delta,
    "cg-run": run_cg,
}


def run_experiment(kind: str, cfg: ExperimentConfig) -> ExperimentResult:
    if kind not in EXPERIMENT_RUNNERS:
        raise ConfigError(f"experiment.kind: unknown kind {kind!r}")
    declared = cfg.kind
    if declared is not None and declared != kind:
        raise ConfigError(f"experiment.kind: config declares {declared!r} "
                          f"but {kind!r} was requested")
    return EXPERIMENT_RUNNERS[kind](cfg)

"""Command-line entry point ``smp-lab``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 failed check.
"""

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .absde import (AbsdeProblem, beta_norm, build_adjoint_problem, estimate_absde_constants,
                    fixed_point_solve, solve_absde)
from .artifacts import RunSummary, write_gap_csv, write_process_csv, write_table
from .brownian import sample_brownian
from .delay import pseudo_inverse
from .errors import ConfigurationError, SmpLabError
from .forward import ControlProcess, euler_maruyama, picard_solve
from .lq import (control_distance, feedback_residual, lq_adjoint, lq_forward, lq_solve,
                 optimality_certificate, riccati_reference)
from .parallel import resolve_threads
from .scenario import load_scenario
from .smp import (gateaux_adjoint, gateaux_fd, stationarity_residual,
                  variational_inequality_check)

log = logging.getLogger("smp_lab")

COMMANDS = ("simulate-forward", "solve-absde", "check-smp", "solve-lq", "gradient-check")


class _Stage:
    def __init__(self, summary, name):
        self.summary = summary
        self.name = name

    def __enter__(self):
        self.start = time.perf_counter()

    def __exit__(self, *exc):
        self.summary.time(self.name, time.perf_counter() - self.start)


def _ensemble(sc, threads):
    grid = sc.grid
    delay = sc.delay_map(threads)
    bundle = sample_brownian(grid, sc.n_paths, sc.seed, threads)
    return grid, delay, bundle


def _base_control(sc):
    if sc.check.control is not None:
        if sc.model is not None:
            return sc.control(sc.check.control)
        return ControlProcess.from_function(sc.grid, sc.check.control)
    if sc.model is not None:
        return sc.control()
    return ControlProcess.constant(sc.grid, 0.0)


def _forward(sc, control, delay, bundle, threads):
    if sc.lq is not None:
        return lq_forward(sc.lq, control, bundle, threads=threads)
    return euler_maruyama(sc.model.coefficients, control, delay, bundle, sc.x0)


def cmd_simulate_forward(sc, out, threads, summary):
    sc.require("model-or-lq")
    coeffs = sc.coefficient_set()
    with _Stage(summary, "setup"):
        grid, delay, bundle = _ensemble(sc, threads)
        control = _base_control(sc)
    with _Stage(summary, "euler"):
        ens = euler_maruyama(coeffs, control, delay, bundle, sc.x0)
    with _Stage(summary, "picard"):
        pic, diag = picard_solve(coeffs, control, delay, bundle, sc.x0,
                                 k_max=sc.solver.picard_k_max, tol=sc.solver.picard_tol,
                                 raise_on_fail=False)
    write_process_csv(os.path.join(out, "paths.csv"), grid.nodes, ens.X)
    write_gap_csv(os.path.join(out, "picard_gaps.csv"), diag.gaps)
    scale = np.maximum(np.abs(ens.X), 1.0)
    agreement = float(np.max(np.abs(pic.X - ens.X) / scale))
    summary.add("X_T_mean", float(np.mean(ens.X[-1])))
    summary.add("X_T_var", float(np.var(ens.X[-1])))
    summary.add("picard_iterations", diag.iterations)
    summary.add("picard_final_gap", diag.gaps[-1])
    summary.add("picard_vs_euler", agreement)
    summary.check("picard_converged", diag.converged)
    if diag.converged:
        summary.check("picard_matches_euler", agreement <= 1e-8)


def _absde_problem(sc, grid, delay, bundle, state):
    cfg = sc.absde
    t = grid.nodes
    if "x" in cfg.terminal.used and state is None:
        raise ConfigurationError("absde.terminal uses x but the scenario has no model or lq block")
    x_T = state.X[-1] if state is not None else np.zeros(bundle.n_paths)
    xi = np.broadcast_to(cfg.terminal(x_T, bundle.W[-1]), (bundle.n_paths,)).copy()
    h = cfg.driver
    driver = lambda i, y, z: h(t[i], y, z)
    anticipation, inv = None, None
    if cfg.anticipation is not None:
        lfun = cfg.anticipation
        anticipation = lambda j, y, z: lfun(t[j], y, z)
        inv = pseudo_inverse(delay, threads=None)
    return AbsdeProblem(grid, driver, xi, anticipation, inv)


def cmd_solve_absde(sc, out, threads, summary):
    sc.require("absde")
    with _Stage(summary, "setup"):
        grid, delay, bundle = _ensemble(sc, threads)
        state = None
        if sc.model is not None or sc.lq is not None:
            state = _forward(sc, _base_control(sc), delay, bundle, threads)
        problem = _absde_problem(sc, grid, delay, bundle, state)
        conditioning = state if state is not None else bundle
    basis = sc.solver.basis
    with _Stage(summary, "direct"):
        direct = solve_absde(problem, bundle, conditioning, basis)
    constants = estimate_absde_constants(problem, min(bundle.n_paths, 256), seed=sc.seed)
    with _Stage(summary, "fixed_point"):
        fixed, trace = fixed_point_solve(problem, bundle, conditioning, basis,
                                         beta=sc.solver.beta, k_max=sc.solver.fixed_point_k_max,
                                         tol=sc.solver.fixed_point_tol, raise_on_fail=False)
    write_process_csv(os.path.join(out, "y.csv"), grid.nodes, direct.y)
    write_process_csv(os.path.join(out, "z.csv"), grid.nodes[:-1], direct.z)
    write_gap_csv(os.path.join(out, "fixed_point_gaps.csv"), trace.gaps)
    summary.add("y0_mean", float(np.mean(direct.y[0])))
    summary.add("beta", sc.solver.beta)
    summary.add("beta_norm", beta_norm(direct, sc.solver.beta))
    summary.add("M1", constants.M1)
    summary.add("M2", constants.M2)
    summary.add("contraction_condition", constants.condition)
    summary.add("fixed_point_iterations", trace.iterations)
    summary.add("fixed_point_final_gap", trace.gaps[-1])
    summary.add("direct_vs_fixed_point", beta_norm(direct - fixed, sc.solver.beta))
    summary.check("fixed_point_converged", trace.converged)
    if constants.satisfied and len(trace.gaps) > 1:
        ratios = trace.ratios[np.asarray(trace.gaps[:-1]) > 0]
        summary.check("gap_ratios_below_one", bool((ratios < 1).all()))


def _adjoint_pipeline(sc, threads):
    """Reference control, state, adjoint and delay maps for the SMP checks."""
    grid, delay, bundle = _ensemble(sc, threads)
    basis = sc.solver.basis
    coeffs = sc.coefficient_set()
    control = _base_control(sc)
    state = _forward(sc, control, delay, bundle, threads)
    inv = pseudo_inverse(delay)
    if sc.lq is not None:
        adjoint = lq_adjoint(sc.lq, state, bundle, basis)
    else:
        problem = build_adjoint_problem(coeffs, state, control, delay, inv)
        adjoint = solve_absde(problem, bundle, state, basis)
    return grid, delay, bundle, coeffs, control, state, adjoint, inv


def cmd_check_smp(sc, out, threads, summary):
    sc.require("model-or-lq")
    basis = sc.solver.basis
    with _Stage(summary, "adjoint"):
        if sc.lq is not None and sc.check.control is None:
            grid, delay, bundle = _ensemble(sc, threads)
            sol = lq_solve(sc.lq, bundle, basis, sc.solver.k_max, sc.solver.tol,
                           sc.solver.damping, threads=threads)
            coeffs, control, state, adjoint = (sc.coefficient_set(), sol.control, sol.state,
                                               sol.adjoint)
            inv = pseudo_inverse(delay)
            summary.add("lq_iterations", sol.iterations)
        else:
            grid, delay, bundle, coeffs, control, state, adjoint, inv = _adjoint_pipeline(sc, threads)
    with _Stage(summary, "residual"):
        res = stationarity_residual(coeffs, control, state, adjoint, delay, inv, basis)
        report = variational_inequality_check(res, control, sc.check.candidates, sc.seed,
                                              sc.check.atol)
    write_process_csv(os.path.join(out, "residual.csv"), grid.nodes[:-1], res.r)
    write_table(os.path.join(out, "inequality.csv"),
                ("candidate", "mean", "stderr", "tolerance", "min_product", "passed"),
                [(k, report.means[k], report.stderrs[k], report.tolerances[k], report.minima[k],
                  bool(report.means[k] >= -report.tolerances[k]))
                 for k in range(len(report.means))])
    summary.add("residual_norm", res.summary)
    summary.add("inequality_candidates", len(report.means))
    summary.add("inequality_violations", len(report.violating))
    summary.check("variational_inequality", report.passed)


def cmd_solve_lq(sc, out, threads, summary):
    sc.require("lq")
    lq = sc.lq
    basis = sc.solver.basis
    with _Stage(summary, "setup"):
        grid, delay, bundle = _ensemble(sc, threads)
    with _Stage(summary, "solve"):
        sol = lq_solve(lq, bundle, basis, sc.solver.k_max, sc.solver.tol, sc.solver.damping,
                       threads=threads)
    with _Stage(summary, "certificate"):
        cert = optimality_certificate(lq, sol, bundle, sc.check.perturbations,
                                      sc.check.certificate_eps, sc.seed)
    resid = feedback_residual(lq, sol.control, sol.adjoint, basis, sol.state)
    nodes = grid.nodes
    write_process_csv(os.path.join(out, "control.csv"), nodes[:-1], sol.control.broadcast(bundle.n_paths))
    write_process_csv(os.path.join(out, "state.csv"), nodes, sol.state.X)
    write_process_csv(os.path.join(out, "adjoint_p.csv"), nodes, sol.adjoint.y)
    write_gap_csv(os.path.join(out, "iterations.csv"), sol.changes)
    write_table(os.path.join(out, "certificate.csv"), ("perturbation", "eps", "diff", "stderr", "passed"),
                [(r.index, r.eps, r.diff, r.stderr, r.passed) for r in cert.rows])
    summary.add("J", sol.cost.value)
    summary.add("J_stderr", sol.cost.stderr)
    summary.add("iterations", sol.iterations)
    summary.add("final_change", sol.changes[-1])
    summary.add("feedback_residual", resid)
    if cert.rows:
        summary.add("certificate_min_diff", cert.min_diff)
    summary.add("midpoint_residual", cert.midpoint_residual)
    summary.check("converged", sol.converged)
    summary.check("feedback_residual", resid <= 10 * sc.solver.tol)
    summary.check("certificate", cert.passed)
    if not lq.delay_coupled:
        with _Stage(summary, "riccati"):
            ref = riccati_reference(lq, grid, sc.solver.riccati_steps)
        u_ric = ref.control_on(sol.state)
        rel = control_distance(sol.control, u_ric, bundle.n_paths) / max(
            control_distance(u_ric, ControlProcess.constant(grid, 0.0), bundle.n_paths), 1e-300)
        write_table(os.path.join(out, "riccati.csv"), ("t", "K", "gain"),
                    [(nodes[i], ref.K[i], ref.gain[i]) for i in range(grid.n_steps)])
        summary.add("riccati_rel_diff", rel)
        summary.check("riccati_agreement", rel <= 5e-2)


def cmd_gradient_check(sc, out, threads, summary):
    sc.require("model-or-lq")
    with _Stage(summary, "adjoint"):
        grid, delay, bundle, coeffs, control, state, adjoint, inv = _adjoint_pipeline(sc, threads)
        v = ControlProcess.from_function(grid, sc.check.direction)
        ga = gateaux_adjoint(coeffs, control, v, adjoint, delay, inv, state)
    with _Stage(summary, "finite_difference"):
        fd = gateaux_fd(coeffs, control, v, delay, bundle,
                        sc.check.eps, sc.x0)
    rows = [("adjoint", None, ga.value, ga.stderr), ("adjoint_changed", None, ga.changed, None)]
    rows += [("fd", e, fd.per_eps[e], None) for e in sorted(fd.per_eps)]
    rows.append(("fd_extrapolated", None, fd.value, fd.stderr))
    write_table(os.path.join(out, "gradient.csv"), ("method", "eps", "value", "stderr"), rows)
    rel = abs(ga.value - fd.value) / max(abs(fd.value), 1e-300)
    summary.add("adjoint", ga.value)
    summary.add("adjoint_stderr", ga.stderr)
    summary.add("fd", fd.value)
    summary.add("fd_stderr", fd.stderr)
    summary.add("fd_spread", fd.spread)
    summary.add("rel_err", rel)
    summary.check("gradient_consistency",
                  abs(ga.value - fd.value) <= 3 * (ga.stderr + fd.stderr + fd.spread))


HANDLERS = {
    "simulate-forward": cmd_simulate_forward,
    "solve-absde": cmd_solve_absde,
    "check-smp": cmd_check_smp,
    "solve-lq": cmd_solve_lq,
    "gradient-check": cmd_gradient_check,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="smp-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="scenario JSON file")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--paths", type=int, help="override the number of paths")
        p.add_argument("--out", help="output directory (default: smp_lab_out/<command>)")
        p.add_argument("--threads", type=int, help="worker threads (default: $SMP_LAB_THREADS or 1)")
        p.add_argument("--quiet", action="store_true", help="do not print the summary")
    return parser


def _write_error(out, exc):
    if out is None:
        return
    with open(os.path.join(out, "error.txt"), "w") as fh:
        fh.write(f"{type(exc).__name__}: {exc}\n")
        trace = getattr(exc, "trace", None)
        if trace:
            fh.write("trace = " + ", ".join(repr(float(g)) for g in trace) + "\n")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    out = None
    try:
        threads = resolve_threads(args.threads)
        sc = load_scenario(args.config).with_overrides(args.seed, args.paths)
        out = args.out or os.path.join("smp_lab_out", args.command)
        os.makedirs(out, exist_ok=True)
        summary = RunSummary(args.command, sc)
        HANDLERS[args.command](sc, out, threads, summary)
        summary.write(out)
        if not args.quiet:
            print("\n".join(summary.lines()))
        if not summary.passed:
            failed = [name for name, ok in summary.checks if not ok]
            print(f"smp-lab: failed checks: {', '.join(failed)}", file=sys.stderr)
            return 4
        return 0
    except SmpLabError as exc:
        _write_error(out, exc)
        print(f"smp-lab: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

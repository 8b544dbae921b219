"""Command-line front end: ``dlqg solve | simulate | verify | example-sec4 | dump-config``.

Exit codes: 0 success, 1 configuration error, 2 solver non-convergence,
3 failed property check.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .controller import FINITE, STEADY, SteadyGains, gain_residual, optimal_cost, synthesize
from .estimator import ConvergenceError
from .linalg import SingularMatrixError, flat_names, min_eig, spectral_radius
from .model import ProblemDef, benchmark_problem
from .riccati import are_residuals, forward_iteration, solve_finite_horizon
from .simulator import SimConfig, monte_carlo, rollout, stability_report

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_PROPERTY = 0, 1, 2, 3


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _solve_steady(problem, args):
    return forward_iteration(problem, args.seed_p, args.seed_s, args.seed_cov, args.tol, args.max_iter)


def _write_solve(problem, out, args, prefix=""):
    """Steady-state solve; returns (ss, outputs, converged)."""
    ss, trace = _solve_steady(problem, args)
    outputs = [io.write_trace(out / f"{prefix}riccati_trace.csv", trace),
               io.write_steady(out / f"{prefix}steady_state.csv", ss)]
    if np.all(np.isfinite(ss.Lam)) and np.all(np.isfinite(ss.Ups)):
        outputs.append(io.write_gains(out / f"{prefix}gains.csv", SteadyGains(ss.K, ss.Gamma).schedule(0)))
    return ss, outputs, ss.converged


def cmd_solve(args) -> int:
    problem = io.load_problem(args.config)
    out = _out_dir(args.out_dir)
    ss, outputs, ok = _write_solve(problem, out, args)
    fh = None
    if args.horizon is not None:
        fh = solve_finite_horizon(problem, args.horizon)
        outputs.append(io.write_gains(out / "gains_finite.csv", synthesize(fh.riccati)))
    res = {k: float(v) for k, v in ss.residuals.items()}
    print(f"status: {ss.status} after {ss.iterations} iterations")
    print("residuals: " + ", ".join(f"{k}={v:.3e}" for k, v in res.items()))
    print(f"gains.csv: mode {STEADY}; suboptimal for a finite horizon")
    if fh is not None:
        print(f"gains_finite.csv: mode {FINITE}, N={args.horizon}, "
              f"J*={optimal_cost(problem, fh.riccati, fh.filters):.10g}")
    if not ok:
        print(f"warning: {ss.message}; artifacts written but not converged", file=sys.stderr)
    io.write_manifest(out, "solve", args.config, outputs, status=ss.status, iterations=ss.iterations,
                      residuals=res, tolerances={"tol": args.tol, "max_iter": args.max_iter},
                      seeds={"P": args.seed_p, "S": args.seed_s, "cov": args.seed_cov})
    return EXIT_OK if ok else EXIT_NONCONVERGED


def _gains_for(problem, args, N):
    """Gains plus, for the finite-horizon solve, the theoretical cost."""
    if args.gains != "solve":
        gains = io.read_gains(args.gains, problem)
        if gains.K.shape[0] == 1:
            return SteadyGains(gains.K[0], gains.Gamma[0]), None
        if gains.N < N:
            raise io.ConfigError(f"gains cover k=0..{gains.N} but the horizon needs 0..{N}", args.gains)
        return gains, None
    if args.mode == FINITE:
        fh = solve_finite_horizon(problem, N)
        return synthesize(fh.riccati), optimal_cost(problem, fh.riccati, fh.filters)
    ss, _ = forward_iteration(problem, 3.0, 3.0, 0.1)
    if not ss.converged:
        raise ConvergenceError("steady-state iteration", ss.iterations, ss.residuals.get("last_change", np.nan))
    return SteadyGains(ss.K, ss.Gamma), None


def cmd_simulate(args) -> int:
    problem = io.load_problem(args.config)
    out = _out_dir(args.out_dir)
    gains, J = _gains_for(problem, args, args.horizon)
    record = "full" if args.record == "full" else "summary"
    sim = SimConfig(seed=args.seed, N=args.horizon, replications=args.reps, mode=args.mode, record_level=record)
    summary = monte_carlo(problem, gains, sim, threads=args.threads)
    outputs = [io.write_summary(out / "summary.csv", summary)]
    for traj in summary.trajectories:
        outputs.append(io.write_trajectory(out / "trajectories" / f"traj_{traj.replicate:06d}.csv", traj))
    print(f"cost mean {summary.cost_mean:.10g}  SE {summary.cost_se:.3g}  "
          f"({summary.replications} replications, gains mode {summary.mode})")
    info = {"seed": args.seed, "horizon": args.horizon, "replications": args.reps,
            "cost_mean": summary.cost_mean, "cost_se": summary.cost_se, "rho": summary.rho}
    if J is not None:
        line = f"theoretical optimal cost {J:.10g}"
        if summary.cost_se > 0:
            line += f"  |difference| = {abs(summary.cost_mean - J) / summary.cost_se:.2f} SE"
        print(line)
        info["optimal_cost"] = J
    io.write_manifest(out, "simulate", args.config, outputs, **info)
    return EXIT_OK


def run_checks(problem: ProblemDef, tol: float = 1e-8, gains_file=None, reps: int = 2000,
               horizon: int = 20, seed: int = 0) -> dict:
    """Property suite used by ``verify``; returns name -> {pass, value, threshold}."""
    checks = {}

    def add(name, value, threshold, ok):
        checks[name] = {"pass": bool(ok), "value": float(value), "threshold": float(threshold)}

    ss, _ = forward_iteration(problem, 3.0, 3.0, 0.1)
    add("steady_state_converged", ss.iterations, 200, ss.converged)
    # residuals are compared relative to the size of the matrix they belong to
    scale = {"P": ss.P, "S": ss.S, "Sig2": ss.Sig2, "Sig1": ss.Sig1, "G": ss.G, "G2": ss.G2, "Phi": ss.Phi}
    for key, val in are_residuals(ss, problem).items():
        limit = tol * (1.0 + np.linalg.norm(scale[key]))
        add(f"are_residual_{key}", val, limit, val <= limit)
    add("steady_gap_psd", min_eig(ss.Sig2_filt - ss.Sig1_filt), -tol, min_eig(ss.Sig2_filt - ss.Sig1_filt) >= -tol)

    fh = solve_finite_horizon(problem, horizon)
    sched = synthesize(fh.riccati)
    gap = min(min_eig(a - b) for a, b in zip(fh.filters.Sig2_filt, fh.filters.Sig1_filt))
    add("finite_gap_psd", gap, -tol, gap >= -tol)
    gr = gain_residual(fh.riccati, sched)
    add("gain_equation_residual", gr, tol, gr <= tol)

    if gains_file is not None:
        K = io.read_gains(gains_file, problem).K[0]
    else:
        K = ss.K
    rho = spectral_radius(problem.A - problem.aug.B @ K)
    add("spectral_radius", rho, 1.0, rho < 1.0)
    rep = stability_report(problem, ss, N=horizon)
    add("lyapunov_residual", rep["lyapunov_residual"], tol * (1 + np.linalg.norm(ss.P)),
        rep["lyapunov_residual"] <= tol * (1 + np.linalg.norm(ss.P)))

    J = optimal_cost(problem, fh.riccati, fh.filters)
    summary = monte_carlo(problem, sched, SimConfig(seed=seed, N=horizon, replications=reps, mode=FINITE))
    diff = abs(summary.cost_mean - J)
    # 4 SE at reduced replication counts, with a floor for noise-free problems
    limit = 4.0 * summary.cost_se + 1e-9 * (1.0 + abs(J))
    add("monte_carlo_cost", diff, limit, diff <= limit)
    return checks


def cmd_verify(args) -> int:
    problem = io.load_problem(args.config)
    checks = run_checks(problem, args.tol, args.gains, args.reps, args.horizon, args.seed)
    for name, c in checks.items():
        print(f"{'PASS' if c['pass'] else 'FAIL'}  {name}  value={c['value']:.6g}  threshold={c['threshold']:.6g}")
    ok = all(c["pass"] for c in checks.values())
    if args.out_dir is not None:
        out = _out_dir(args.out_dir)
        path = out / "verify.json"
        path.write_text(json.dumps(checks, indent=2, sort_keys=True) + "\n")
        io.write_manifest(out, "verify", args.config, [path], all_pass=ok,
                          tolerances={"tol": args.tol}, seed=args.seed, replications=args.reps)
    return EXIT_OK if ok else EXIT_PROPERTY


def cmd_example_sec4(args) -> int:
    """Benchmark instance end to end: solve, simulate, verify, figure data."""
    problem = benchmark_problem()
    out = _out_dir(args.out_dir)
    ns = argparse.Namespace(seed_p=3.0, seed_s=3.0, seed_cov=0.1, tol=1e-9, max_iter=10_000)
    ss, outputs, ok = _write_solve(problem, out, ns)
    if not ok:
        print(f"steady-state iteration failed: {ss.message}", file=sys.stderr)
        return EXIT_NONCONVERGED
    _, trace = _solve_steady(problem, ns)
    print(f"P_1..P_3 = {trace.P[1:4, 0, 0].round(4).tolist()}, converged after {ss.iterations} iterations")

    # controlled vs uncontrolled second moment
    gains = SteadyGains(ss.K, ss.Gamma)
    sim = SimConfig(seed=args.seed, N=args.horizon, replications=args.reps, mode=STEADY)
    ctrl = monte_carlo(problem, gains, sim)
    with np.errstate(over="ignore", invalid="ignore"):
        base = monte_carlo(problem, SteadyGains(np.zeros_like(ss.K), np.zeros_like(ss.Gamma)), sim)
    overflow = np.flatnonzero(~np.isfinite(base.Exx[:, 0, 0]))
    rows = [[k, ctrl.Exx[k, 0, 0], base.Exx[k, 0, 0]] for k in range(sim.N + 2)]
    outputs.append(io.write_csv(out / "second_moment.csv", ["k", "Exx_controlled", "Exx_uncontrolled"], rows))
    ratio = base.Exx[10, 0, 0] / ctrl.Exx[10, 0, 0]
    print(f"E[x^2] at k=10: controlled {ctrl.Exx[10, 0, 0]:.4g}, uncontrolled {base.Exx[10, 0, 0]:.4g} "
          f"(ratio {ratio:.3g})")
    if overflow.size:
        print(f"uncontrolled second moment overflows from k={overflow[0]}")

    # estimation error covariances along the iteration
    m = problem.dims.m
    header = ["k", *flat_names("Sig1_filt", (m, m)), *flat_names("Sig2_filt", (m, m)), "gap_min_eig"]
    rows = [[k, *trace.Sig1_filt[k].ravel(), *trace.Sig2_filt[k].ravel(),
             min_eig(trace.Sig2_filt[k] - trace.Sig1_filt[k])] for k in range(trace.P.shape[0])]
    outputs.append(io.write_csv(out / "error_covariance.csv", header, rows))

    # one sample path
    path = rollout(problem, gains, sim, 0)
    outputs.append(io.write_trajectory(out / "sample_path.csv", path))

    checks = run_checks(problem, seed=args.seed)
    vpath = out / "verify.json"
    vpath.write_text(json.dumps(checks, indent=2, sort_keys=True) + "\n")
    outputs.append(vpath)
    failed = [name for name, c in checks.items() if not c["pass"]]
    print("verify: " + ("all pass" if not failed else "FAILED " + ", ".join(failed)))
    io.write_manifest(out, "example-sec4", None, outputs, seed=args.seed, replications=args.reps,
                      horizon=args.horizon, iterations=ss.iterations, status=ss.status,
                      second_moment_ratio_k10=float(ratio))
    return EXIT_PROPERTY if failed or ratio < 10 else EXIT_OK


def cmd_dump_config(args) -> int:
    problem = benchmark_problem() if args.config is None else io.load_problem(args.config)
    text = io.dump_problem(problem)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dlqg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="steady-state iteration, gains and traces")
    p.add_argument("config")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--seed-p", type=float, default=1.0, help="P and S seeds are this value times I")
    p.add_argument("--seed-s", type=float, default=None, help="defaults to --seed-p")
    p.add_argument("--seed-cov", type=float, default=0.1, help="covariance seed for both filters, times I")
    p.add_argument("--horizon", type=int, default=None, help="also write finite-horizon gains for this N")
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="closed-loop Monte Carlo")
    p.add_argument("config")
    p.add_argument("--gains", default="solve", help='gains CSV, or "solve" to synthesize them')
    p.add_argument("--mode", choices=(FINITE, STEADY), default=FINITE)
    p.add_argument("--horizon", type=int, default=20)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--record", choices=("summary", "full"), default="summary")
    p.add_argument("--threads", type=int, default=None, help="default: DLQG_THREADS, 0 = all cores")
    p.add_argument("--out-dir", default="out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run the property checks")
    p.add_argument("config")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--gains", default=None, help="check the spectral radius of these gains instead")
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--horizon", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("example-sec4", help="reproduce the scalar benchmark end to end")
    p.add_argument("--out-dir", default="out_sec4")
    p.add_argument("--reps", type=int, default=10_000)
    p.add_argument("--horizon", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_example_sec4)

    p = sub.add_parser("dump-config", help="write a problem file (the benchmark if no config is given)")
    p.add_argument("config", nargs="?")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_dump_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed_s", 0) is None:
        args.seed_s = args.seed_p
    try:
        return args.func(args)
    except io.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, SingularMatrixError, RuntimeError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())

"""Command-line driver.

Subcommands::

    centers      write the center set of one spacing
    basis        build and save the local Lagrange basis
    weights      write the quadrature weights as an ``index w`` table
    solve        solve one level and export the system
    convergence  run the full ladder and write the report
    cond         tabulate condition numbers over the ladder

The exit status is 0 when every acceptance tolerance of the config is met
and 1 otherwise; usage errors exit with 2.
"""
from __future__ import annotations

import argparse
import os
import sys


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlrbf", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("centers", "basis", "weights", "solve", "convergence", "cond"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="flat key=value config file")
        s.add_argument("--problem", choices=["linear", "exponential", "custom"])
        s.add_argument("--spacing", help="one spacing or a comma-separated list")
        s.add_argument("--epsilon", type=float, help="interaction horizon")
        s.add_argument("--threads", type=int, help="worker threads (default 1)")
        s.add_argument("--out", help="output directory")
        s.add_argument("--quiet", action="store_true", help="suppress progress lines")
    return p


def _load_config(args):
    from .experiment import ExperimentConfig, parse_config_text

    values = {}
    if args.config:
        with open(args.config) as fh:
            values = parse_config_text(fh.read())
    cfg = ExperimentConfig.from_mapping(values)
    spacings = None
    if args.spacing:
        spacings = tuple(float(v) for v in args.spacing.replace(",", " ").split())
    return cfg.updated(problem=args.problem, spacings=spacings, epsilon=args.epsilon,
                       threads=args.threads, out=args.out)


def _limit_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.threads:
        _limit_threads(args.threads)
    try:
        cfg = _load_config(args)
    except (OSError, ValueError) as exc:
        print(f"nlrbf: {exc}", file=sys.stderr)
        return 2
    log = (lambda msg: None) if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    os.makedirs(cfg.out, exist_ok=True)
    return _COMMANDS[args.command](cfg, log)


def _tag(s: float) -> str:
    return f"{s:g}"


def _cmd_centers(cfg, log) -> int:
    from .experiment import prepare_level

    for s in cfg.spacings:
        centers, _, _ = prepare_level(cfg, s)
        path = os.path.join(cfg.out, f"centers_{_tag(s)}.txt")
        centers.save(path)
        log(f"wrote {path} ({len(centers)} centers, h={centers.fill_distance:.4g})")
    return 0


def _cmd_basis(cfg, log) -> int:
    from .experiment import prepare_level

    for s in cfg.spacings:
        _, basis, _ = prepare_level(cfg, s)
        path = os.path.join(cfg.out, f"basis_{_tag(s)}.npz")
        basis.save(path)
        log(f"wrote {path} ({len(basis)} functions, {basis.params.get('patterns')} local systems)")
    return 0


def _cmd_weights(cfg, log) -> int:
    from .experiment import prepare_level

    for s in cfg.spacings:
        _, _, w = prepare_level(cfg, s)
        path = os.path.join(cfg.out, f"weights_{_tag(s)}.txt")
        with open(path, "w") as fh:
            fh.write("index w\n")
            for i, v in enumerate(w):
                fh.write(f"{i} {v:.17g}\n")
        log(f"wrote {path} (sum {w.sum():.12g})")
    return 0


def _cmd_solve(cfg, log) -> int:
    from .experiment import ConvergenceReport, LevelResult, emit_report, run_level
    from .system import export_system

    s = cfg.spacings[0]
    report = ConvergenceReport(cfg)
    try:
        row, extras = run_level(cfg, s)
    except Exception as exc:
        report.rows.append(LevelResult(s, error=f"{type(exc).__name__}: {exc}"))
        report.status = "incomplete"
        report.messages.append(str(exc))
        emit_report(report, cfg.out)
        log(f"level {s} failed: {exc}")
        return 1
    report.rows.append(row)
    report.status = "insufficient points"
    emit_report(report, cfg.out)
    export_system(extras["system"], extras["result"], os.path.join(cfg.out, f"system_{_tag(s)}"))
    log(f"spacing={s} l2={row.l2_error:.4g} cond={row.cond_restricted:.4g} "
        f"multiplier={row.multiplier_err:.3g} fredholm={row.fredholm_res:.3g}")
    checks = report.checks()
    return 0 if checks["cond_bounds"] and checks["fredholm"] else 1


def _cmd_convergence(cfg, log) -> int:
    from .experiment import emit_report, run_experiment

    report = run_experiment(cfg, log)
    emit_report(report, cfg.out)
    if report.slope is not None:
        log(f"slope={report.slope:.4f} status={report.status}")
    else:
        log(f"no slope: {report.status}")
    return 0 if report.passed else 1


def _cmd_cond(cfg, log) -> int:
    from .experiment import make_problem, prepare_level
    from .system import assemble_stiffness, condition_estimate, restricted_stiffness

    problem = make_problem(cfg)
    rows = []
    for s in cfg.spacings:
        centers, basis, w = prepare_level(cfg, s)
        A = assemble_stiffness(basis.center_points, w, problem.kernel)
        rows.append((s, centers.fill_distance, len(basis),
                     condition_estimate(restricted_stiffness(A, basis)), condition_estimate(A)))
        log(f"spacing={s} N={len(basis)} cond_restricted={rows[-1][3]:.4g}")
    path = os.path.join(cfg.out, "cond.csv")
    with open(path, "w") as fh:
        fh.write("spacing,h,N,cond_restricted,cond_full\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) if i != 2 else str(v) for i, v in enumerate(r)) + "\n")
    conds = [r[3] for r in rows]
    ok = all(cfg.cond_min <= c <= cfg.cond_max for c in conds) and conds[-1] < cfg.cond_growth * conds[0]
    return 0 if ok else 1


_COMMANDS = {
    "centers": _cmd_centers,
    "basis": _cmd_basis,
    "weights": _cmd_weights,
    "solve": _cmd_solve,
    "convergence": _cmd_convergence,
    "cond": _cmd_cond,
}


if __name__ == "__main__":
    sys.exit(main())

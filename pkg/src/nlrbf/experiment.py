"""Convergence ladders, slope fitting and report files."""
from __future__ import annotations

import csv
import io
import math
import os
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .basis import build_basis, footprint_radius, neighbor_count
from .geometry import generate_grid, unit_square_problem_domains
from .kernels import BumpKernel, NonlocalKernel, make_coefficient, make_rbf_kernel
from .problems import (ManufacturedProblem, exponential_problem, linear_problem,
                       manufacture_source)
from .quadrature import basis_weights
from .system import (assemble_system, condition_estimate, fredholm_residual, l2_error,
                     multiplier_diagnostic, restricted_stiffness, solve_saddle)

__all__ = [
    "CSV_HEADER",
    "ExperimentConfig",
    "LevelResult",
    "ConvergenceReport",
    "fit_slope",
    "make_problem",
    "prepare_level",
    "run_level",
    "run_experiment",
    "emit_report",
    "parse_config_text",
]

CSV_HEADER = "spacing,h,N,N_I,l2_error,cond_A,multiplier_err,fredholm_res,wall_time_s"

DEFAULT_SLOPE_BOUNDS = {"linear": (2.5, 3.6), "exponential": (1.4, 2.1)}


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings of one convergence study.

    Attributes
    ----------
    problem : {"linear", "exponential", "custom"}
        ``custom`` uses the linear exact solution with the coefficient
        named by ``kappa``.
    spacings : tuple of float
        Grid spacings, strictly decreasing.
    epsilon : float
        Horizon of the interaction kernel.
    kernel, m : str, int
        Radial kernel of the basis.
    kappa : str or None
        Diffusion coefficient override (``linear``, ``exponential``,
        ``constant``); defaults to the problem's own.
    kappa_value : float
        Value of the constant coefficient.
    c_loc : float
        Neighbor-count constant in ``ceil(c_loc (ln N)^2)``.
    K : float or None
        When set, neighbor sets are balls of radius ``K h |log h|`` instead.
    cutoff_factor : float
        Truncation radius as a multiple of the neighbor-set radius.
    band_margin : float
        Extension band beyond the neighbor-set radius, in grid spacings.
    constraint : {"cardinal", "galerkin"}
    l2_panel, l2_order : float, int
        Error quadrature panels and order.
    source_order, source_panels : int
        Gauss-Legendre rule of the manufactured source.
    fredholm_samples : int
    threads : int
    out : str
    slope_min, slope_max : float or None
        Acceptance window of the fitted slope; problem default if None.
    cond_min, cond_max, cond_growth : float
        Acceptance window of the restricted condition numbers and their
        largest allowed growth factor over the ladder.
    fredholm_tol : float
    """

    problem: str = "linear"
    spacings: tuple = (0.04, 0.02, 0.014)
    epsilon: float = 0.125
    kernel: str = "tps"
    m: int = 2
    kappa: str | None = None
    kappa_value: float = 1.0
    c_loc: float = 11.0
    K: float | None = None
    cutoff_factor: float = 1.0
    band_margin: float = 2.0
    constraint: str = "cardinal"
    l2_panel: float = 0.05
    l2_order: int = 5
    source_order: int = 16
    source_panels: int = 4
    fredholm_samples: int = 20
    threads: int = 1
    out: str = "results"
    slope_min: float | None = None
    slope_max: float | None = None
    cond_min: float = 50.0
    cond_max: float = 2000.0
    cond_growth: float = 2.0
    fredholm_tol: float = 1e-6

    def __post_init__(self):
        sp = tuple(float(s) for s in self.spacings)
        object.__setattr__(self, "spacings", sp)
        if not sp:
            raise ValueError("at least one spacing is required")
        if any(s <= 0 for s in sp):
            raise ValueError("spacings must be positive")
        if any(b >= a for a, b in zip(sp, sp[1:])):
            raise ValueError("spacings must be strictly decreasing")
        for name in ("epsilon", "c_loc", "cutoff_factor", "l2_panel", "threads"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.problem not in ("linear", "exponential", "custom"):
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.constraint not in ("cardinal", "galerkin"):
            raise ValueError(f"unknown constraint mode {self.constraint!r}")

    @property
    def slope_bounds(self):
        lo, hi = DEFAULT_SLOPE_BOUNDS.get(self.problem, (-math.inf, math.inf))
        return (lo if self.slope_min is None else self.slope_min,
                hi if self.slope_max is None else self.slope_max)

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        """Build from string or typed values, e.g. a parsed key=value file."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            kwargs[key] = _coerce(key, raw, types[key])
        return cls(**kwargs)

    def updated(self, **changes) -> "ExperimentConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return replace(self, **changes) if changes else self


def _coerce(key, raw, annotation):
    if not isinstance(raw, str):
        return tuple(raw) if key == "spacings" else raw
    text = raw.strip()
    if key == "spacings":
        return tuple(float(v) for v in text.replace(",", " ").split())
    if text.lower() in ("none", ""):
        return None
    ann = str(annotation)
    if "int" in ann and "float" not in ann:
        return int(text)
    if "float" in ann:
        return float(text)
    return text


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected key = value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def fit_slope(points):
    """Least-squares slope of ``log(error)`` against ``log(h)``.

    Parameters
    ----------
    points : sequence of (h, error)

    Returns
    -------
    slope : float
    residual : float
        Largest absolute residual of the fit in natural-log units.

    Examples
    --------
    >>> round(fit_slope([(0.1, 1e-2), (0.05, 2.5e-3)])[0], 12)
    2.0
    """
    pts = np.asarray(list(points), dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        raise ValueError("insufficient points: a slope needs at least two levels")
    if np.any(~np.isfinite(pts)) or np.any(pts <= 0):
        raise ValueError("fit_slope needs positive finite h and error values")
    x = np.log(pts[:, 0])
    y = np.log(pts[:, 1])
    xc = x - x.mean()
    denom = float(xc @ xc)
    if denom == 0:
        raise ValueError("fit_slope needs at least two distinct h values")
    slope = float(xc @ (y - y.mean()) / denom)
    resid = y - (y.mean() + slope * xc)
    return slope, float(np.max(np.abs(resid)))


@dataclass
class LevelResult:
    """Diagnostics of one ladder level."""

    spacing: float
    h: float = math.nan
    n: int = 0
    n_interaction: int = 0
    l2_error: float = math.nan
    cond_restricted: float = math.nan
    cond_full: float = math.nan
    multiplier_err: float = math.nan
    fredholm_res: float = math.nan
    quasi_interp_error: float = math.nan
    negative_weights: int = 0
    patterns: int = 0
    solver_residual: float = math.nan
    wall_time_s: float = math.nan
    error: str | None = None

    def csv_row(self) -> list:
        return [_fmt(self.spacing), _fmt(self.h), str(self.n), str(self.n_interaction),
                _fmt(self.l2_error), _fmt(self.cond_restricted), _fmt(self.multiplier_err),
                _fmt(self.fredholm_res), f"{self.wall_time_s:.3f}"]


def _fmt(v) -> str:
    return repr(float(v))


@dataclass
class ConvergenceReport:
    """Rows of a ladder plus the fitted convergence slope.

    ``status`` is ``ok``, ``insufficient points`` (fewer than two usable
    levels) or ``incomplete`` (a level failed; the rows before it are kept).
    """

    config: ExperimentConfig = field(default_factory=ExperimentConfig)
    rows: list = field(default_factory=list)
    slope: float | None = None
    fit_residual: float | None = None
    status: str = "ok"
    messages: list = field(default_factory=list)

    def checks(self) -> dict:
        """Pass/fail of each acceptance tolerance in the config.

        Slope checks appear only when the report has at least two levels.
        """
        out = {}
        good = [r for r in self.rows if r.error is None]
        if len(good) >= 2:
            lo, hi = self.config.slope_bounds
            out["slope"] = self.slope is not None and lo <= self.slope <= hi
            errs = [r.l2_error for r in good]
            out["errors_decreasing"] = all(b < a for a, b in zip(errs, errs[1:]))
        conds = [r.cond_restricted for r in good]
        out["cond_bounds"] = bool(conds) and all(self.config.cond_min <= c <= self.config.cond_max
                                                 for c in conds)
        out["cond_growth"] = bool(conds) and conds[-1] < self.config.cond_growth * conds[0]
        out["fredholm"] = bool(good) and all(r.fredholm_res <= self.config.fredholm_tol for r in good)
        out["complete"] = self.status != "incomplete"
        return out

    @property
    def passed(self) -> bool:
        """True when the ladder finished with a slope and every check passes."""
        return self.status == "ok" and all(self.checks().values())


def make_problem(config: ExperimentConfig) -> ManufacturedProblem:
    """Manufactured problem selected by the config."""
    if config.problem == "exponential":
        base = exponential_problem(config.epsilon)
    else:
        base = linear_problem(config.epsilon)
    if config.kappa is None:
        return base
    kappa = make_coefficient(config.kappa, config.kappa_value)
    return ManufacturedProblem(config.problem if config.problem != "linear" else "custom",
                               base.exact, NonlocalKernel(BumpKernel(config.epsilon), kappa),
                               base.inner, base.outer)


def prepare_level(config: ExperimentConfig, spacing: float):
    """Centers, basis and quadrature weights of one level."""
    inner, outer = unit_square_problem_domains()
    per_axis = int(np.floor(outer.width / spacing + 1e-9)) + 1
    n_dom = per_axis * per_axis
    kernel = make_rbf_kernel(config.kernel, config.m)
    if config.K is not None:
        h_est = spacing * math.sqrt(2) / 2
        reach = config.K * h_est * abs(math.log(h_est))
        count = None
    else:
        count = neighbor_count(n_dom, config.c_loc)
        reach = footprint_radius(spacing, count)
    centers = generate_grid(outer, spacing, reach + config.band_margin * spacing, inner)
    basis = build_basis(centers, kernel, count=count, c_loc=config.c_loc, K=config.K,
                        cutoff_factor=config.cutoff_factor, threads=config.threads)
    weights = basis_weights(basis, outer, fallback=True)
    return centers, basis, weights


def run_level(config: ExperimentConfig, spacing: float, problem=None, prepared=None,
              with_full_cond: bool = True):
    """Run one level; returns ``(LevelResult, extras)``.

    ``extras`` holds the basis, weights, system and solution for callers
    that want further diagnostics.
    """
    t0 = time.perf_counter()
    problem = problem or make_problem(config)
    centers, basis, weights = prepared or prepare_level(config, spacing)
    f = manufacture_source(problem, basis.center_points, config.source_order, config.source_panels)
    system = assemble_system(basis, weights, problem, f, config.constraint)
    result = solve_saddle(system)
    cuts = ((problem.inner.lo[0], problem.inner.hi[0]), (problem.inner.lo[1], problem.inner.hi[1]))
    row = LevelResult(spacing)
    row.h = centers.fill_distance
    row.n = len(basis)
    row.n_interaction = system.n_constraints
    row.l2_error = l2_error(basis, result.u_coeffs, problem.exact, problem.outer,
                            config.l2_panel, config.l2_order, cuts)
    row.cond_restricted = condition_estimate(restricted_stiffness(system.A, basis))
    if with_full_cond:
        row.cond_full = condition_estimate(system.A)
    row.quasi_interp_error = l2_error(basis, problem.exact(basis.center_points), problem.exact,
                                      problem.outer, config.l2_panel, config.l2_order, cuts)
    row.multiplier_err = multiplier_diagnostic(basis, system, result, problem)
    row.fredholm_res = fredholm_residual(problem, config.fredholm_samples)
    row.negative_weights = int(np.sum(weights < 0))
    row.patterns = int(basis.params.get("patterns", 0))
    row.solver_residual = result.residual
    row.wall_time_s = time.perf_counter() - t0
    extras = {"centers": centers, "basis": basis, "weights": weights, "system": system,
              "result": result, "problem": problem}
    return row, extras


def run_experiment(config: ExperimentConfig, log=None) -> ConvergenceReport:
    """Run the ladder of the config level by level.

    A failing level stops the ladder; the report keeps the finished rows
    and is marked ``incomplete``.
    """
    report = ConvergenceReport(config)
    problem = make_problem(config)
    for s in config.spacings:
        try:
            row, _ = run_level(config, s, problem)
        except Exception as exc:  # report the failure instead of losing earlier rows
            row = LevelResult(s, error=f"{type(exc).__name__}: {exc}")
            report.rows.append(row)
            report.status = "incomplete"
            report.messages.append(f"spacing {s}: {row.error}")
            break
        report.rows.append(row)
        if log:
            log(f"spacing={s} h={row.h:.4g} N={row.n} l2={row.l2_error:.4g} "
                f"cond={row.cond_restricted:.4g} time={row.wall_time_s:.1f}s")
    good = [r for r in report.rows if r.error is None]
    if len(good) >= 2:
        report.slope, report.fit_residual = fit_slope([(r.h, r.l2_error) for r in good])
    elif report.status == "ok":
        report.status = "insufficient points"
    return report


def _csv_text(report: ConvergenceReport) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    for r in report.rows:
        if r.error is None:
            writer.writerow(r.csv_row())
    return buf.getvalue()


def emit_report(report: ConvergenceReport, directory) -> list:
    """Write ``convergence.csv``, ``summary.txt`` and ``plotdata.tsv``.

    ``plotdata.tsv`` holds ``log10(h)`` and ``log10(error)`` per level.
    """
    os.makedirs(directory, exist_ok=True)
    paths = [os.path.join(directory, n) for n in ("convergence.csv", "summary.txt", "plotdata.tsv")]
    with open(paths[0], "w", newline="") as fh:
        fh.write(_csv_text(report))
    good = [r for r in report.rows if r.error is None]
    with open(paths[2], "w") as fh:
        fh.write("log10_h\tlog10_l2_error\n")
        for r in good:
            fh.write(f"{math.log10(r.h)!r}\t{math.log10(r.l2_error)!r}\n")
    lines = [f"problem: {report.config.problem}",
             f"epsilon: {report.config.epsilon!r}",
             f"constraint: {report.config.constraint}",
             f"levels: {len(good)}",
             f"status: {report.status}"]
    if report.slope is not None:
        lines += [f"slope: {report.slope:.6f}", f"fit_residual: {report.fit_residual:.3e}"]
    else:
        lines.append("slope: none (insufficient points)" if report.status != "incomplete"
                     else "slope: none")
    for r in good:
        lines.append(f"spacing {r.spacing!r}: cond_full={r.cond_full!r} "
                     f"quasi_interp_error={r.quasi_interp_error!r} "
                     f"negative_weights={r.negative_weights} patterns={r.patterns} "
                     f"solver_residual={r.solver_residual!r}")
    if report.rows:
        for name, ok in report.checks().items():
            lines.append(f"check {name}: {'pass' if ok else 'FAIL'}")
    lines += [f"note: {m}" for m in report.messages]
    with open(paths[1], "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return paths

"""Saddle-point system, solver and error diagnostics.

The discrete problem seeks ``u_h = sum_j alpha_j b_j`` and a multiplier
``lambda_h = sum_k beta_k b_k`` over interaction-region centers with

    [ A   B ] [alpha]   [rhs]
    [ B^T 0 ] [beta ] = [ 0 ].

``A`` comes from applying the quadrature rule ``Q(f) = sum w_xi f(xi)`` in
both variables of the bilinear form and using ``b_i(xi) ≈ delta``:

    A_ij = -2 w_i w_j gamma(x_i, x_j)   (i != j),    A_ii = -sum_{j != i} A_ij,

so ``A`` is symmetric, sparse on the horizon graph, and annihilates
constants by construction. The right-hand side is ``rhs_i = w_i f(x_i)``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack
from scipy.spatial import cKDTree

from .errors import ConstraintRankError, SingularSystemError, SolverResidualError
from .geometry import Rect2, Region
from .kernels import sigma
from .problems import ManufacturedProblem, manufacture_source, multiplier_exact, piecewise_breaks
from .quadrature import gauss_legendre_1d

__all__ = [
    "SaddleSystem",
    "SolveResult",
    "assemble_stiffness",
    "assemble_constraint",
    "assemble_rhs",
    "assemble_system",
    "solve_saddle",
    "l2_error",
    "error_breaks",
    "condition_estimate",
    "restricted_stiffness",
    "multiplier_diagnostic",
    "fredholm_residual",
    "export_system",
]


@dataclass(frozen=True)
class SaddleSystem:
    """Assembled blocks of the saddle-point system.

    Attributes
    ----------
    A : csr_matrix, shape (N, N)
    B : csr_matrix, shape (N, N_I)
    rhs : ndarray, shape (N,)
    constraint_index : ndarray, shape (N_I,)
        Basis-function index of the center behind each column of ``B``.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    rhs: np.ndarray
    constraint_index: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.B.shape[1]

    def matrix(self) -> sp.csc_matrix:
        """Full symmetric indefinite matrix ``[[A, B], [B^T, 0]]``."""
        return sp.bmat([[self.A, self.B], [self.B.T, None]], format="csc")

    def full_rhs(self) -> np.ndarray:
        return np.concatenate([self.rhs, np.zeros(self.n_constraints)])


@dataclass(frozen=True)
class SolveResult:
    """Solution of the saddle-point system.

    Attributes
    ----------
    u_coeffs : ndarray, shape (N,)
    multiplier_coeffs : ndarray, shape (N_I,)
    residual : float
        ``||K x - rhs||_2 / ||rhs||_2`` (absolute when ``rhs = 0``).
    """

    u_coeffs: np.ndarray
    multiplier_coeffs: np.ndarray
    residual: float


def assemble_stiffness(points, weights, kernel) -> sp.csr_matrix:
    """Stiffness matrix of the cardinal quadrature rule.

    Parameters
    ----------
    points : ndarray, shape (N, 2)
        In-domain centers.
    weights : ndarray, shape (N,)
        Quadrature weights of the centers.
    kernel : NonlocalKernel
    """
    pts = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    n = len(pts)
    pairs = cKDTree(pts).query_pairs(kernel.horizon, output_type="ndarray")
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        g = kernel(pts[i], pts[j])
        keep = g != 0
        i, j, g = i[keep], j[keep], g[keep]
        off = -2.0 * w[i] * w[j] * g
    else:
        i = j = np.zeros(0, dtype=np.int64)
        off = np.zeros(0)
    diag = -(np.bincount(i, weights=off, minlength=n) + np.bincount(j, weights=off, minlength=n))
    rows = np.concatenate([i, j, np.arange(n)])
    cols = np.concatenate([j, i, np.arange(n)])
    vals = np.concatenate([off, off, diag])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    return A


def _constraint_columns(basis):
    return np.flatnonzero(basis.regions == Region.INTERACTION)


def assemble_constraint(basis, weights, inner: Rect2 | None = None, outer: Rect2 | None = None,
                        mode: str = "cardinal", order: int = 5, tile: int = 8):
    """Constraint block pairing basis functions with interaction-region functions.

    Parameters
    ----------
    basis : BasisSet
    weights : ndarray
        Quadrature weights over the outer domain.
    inner, outer : Rect2
        Needed for ``mode="galerkin"``.
    mode : {"cardinal", "galerkin"}
        ``cardinal`` applies the same nodal rule as the stiffness matrix:
        ``B_ik = w_k`` when ``i`` is the ``k``-th interaction center, else 0.
        ``galerkin`` integrates ``b_i b_k`` over the interaction region with
        truncated basis functions and lattice-aligned Gauss-Legendre panels.

    Returns
    -------
    B : csr_matrix, shape (N, N_I)
    constraint_index : ndarray, shape (N_I,)
    """
    cols = _constraint_columns(basis)
    n = len(basis)
    if mode == "cardinal":
        w = np.asarray(weights, dtype=float)
        B = sp.csr_matrix((w[cols], (cols, np.arange(len(cols)))), shape=(n, len(cols)))
        return B, cols
    if mode != "galerkin":
        raise ValueError(f"unknown constraint mode {mode!r}")
    if inner is None or outer is None:
        raise ValueError("galerkin constraint needs the inner and outer rectangles")
    return _galerkin_constraint(basis, inner, outer, order, tile), cols


def _interaction_rule(basis, inner, outer, order):
    """Gauss-Legendre nodes and weights over the frame, aligned to the lattice."""
    s = basis.spacing_hint
    lat = basis.centers.lattice
    cuts = []
    for ax in range(2):
        lines = [outer.lo[ax], outer.hi[ax], inner.lo[ax], inner.hi[ax]]
        if lat is not None:
            k = np.arange(np.ceil((outer.lo[ax] - lat.origin[ax]) / s - 1e-9),
                          np.floor((outer.hi[ax] - lat.origin[ax]) / s + 1e-9) + 1)
            lines.extend(lat.origin[ax] + s * k)
        else:
            lines.extend(np.linspace(outer.lo[ax], outer.hi[ax],
                                     int(np.ceil((outer.hi[ax] - outer.lo[ax]) / s)) + 1))
        lines = np.unique(np.round(np.asarray(lines), 12))
        cuts.append(lines[(lines >= outer.lo[ax]) & (lines <= outer.hi[ax])])
    xs, wx = gauss_legendre_1d(cuts[0], order)
    ys, wy = gauss_legendre_1d(cuts[1], order)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])
    w = np.outer(wx, wy).ravel()
    frame = ~inner.contains(nodes, strict=True, tol=0.0)
    return nodes[frame], w[frame]


def _galerkin_constraint(basis, inner, outer, order, tile):
    nodes, w = _interaction_rule(basis, inner, outer, order)
    cols = _constraint_columns(basis)
    col_pos = np.full(len(basis), -1, dtype=np.int64)
    col_pos[cols] = np.arange(len(cols))
    s = tile * basis.spacing_hint
    keys = np.floor((nodes - np.asarray(outer.lo)) / s).astype(np.int64)
    order_ = np.lexsort((keys[:, 1], keys[:, 0]))
    nodes, w, keys = nodes[order_], w[order_], keys[order_]
    bounds = np.flatnonzero(np.any(np.diff(keys, axis=0) != 0, axis=1)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [len(nodes)]])
    B = np.zeros((len(basis), len(cols)))
    for a, b in zip(starts, ends):
        used, V = basis.function_values(nodes[a:b], dense=True)
        pos = col_pos[used]
        sel = pos >= 0
        if not np.any(sel):
            continue
        block = (V * w[a:b, None]).T @ V[:, sel]
        B[np.ix_(used, pos[sel])] += block
    return sp.csr_matrix(B)


def assemble_rhs(f, weights) -> np.ndarray:
    """Right-hand side ``w_i f_i`` of the cardinal rule."""
    return np.asarray(weights, dtype=float) * np.asarray(f, dtype=float)


def assemble_system(basis, weights, problem: ManufacturedProblem, f=None,
                    constraint: str = "cardinal", order: int = 5) -> SaddleSystem:
    """Assemble all blocks for a manufactured problem."""
    pts = basis.center_points
    if f is None:
        f = manufacture_source(problem, pts)
    A = assemble_stiffness(pts, weights, problem.kernel)
    B, idx = assemble_constraint(basis, weights, problem.inner, problem.outer, constraint, order)
    return SaddleSystem(A, B, assemble_rhs(f, weights), idx)


#: Largest system solved by dense factorization.
DENSE_LIMIT = 9000


def solve_saddle(system: SaddleSystem, tol: float = 1e-10, max_refine: int = 3) -> SolveResult:
    """Direct solve of the saddle-point system with iterative refinement.

    Small or dense systems use a pivoted symmetric indefinite factorization
    (LAPACK ``sytrf``); large sparse ones use sparse LU with partial
    pivoting.

    Raises
    ------
    ConstraintRankError
        If a constraint column vanishes or the factorization breaks down in
        the constraint block.
    SingularSystemError
        If the factorization hits an exact zero pivot elsewhere.
    SolverResidualError
        If the relative residual stays above ``tol`` after refinement.
    """
    B = system.B.tocsc()
    col_norms = np.sqrt(np.asarray(B.multiply(B).sum(axis=0))).ravel()
    if len(col_norms) and col_norms.min() <= 1e-14 * max(col_norms.max(), 1e-300):
        raise ConstraintRankError("constraint rank failure: empty constraint column")
    K = system.matrix()
    rhs = system.full_rhs()
    n = K.shape[0]
    N = system.n
    dense = n <= 2000 or (n <= DENSE_LIMIT and K.nnz > 0.05 * n * n)
    if dense:
        Kd = K.toarray()
        lu, piv, info = lapack.dsytrf(Kd, lower=1)
        if info > 0:
            pivot = info - 1
            if pivot >= N:
                raise ConstraintRankError(f"constraint rank failure: zero pivot {pivot}")
            raise SingularSystemError(f"singular saddle matrix: zero pivot {pivot}", pivot)

        def apply_inverse(r):
            x, _ = lapack.dsytrs(lu, piv, r, lower=1)
            return x
    else:
        try:
            lu = spla.splu(K, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SingularSystemError(f"singular saddle matrix: {exc}") from None
        apply_inverse = lu.solve
    x = apply_inverse(rhs)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("singular saddle matrix: non-finite solution")
    scale = np.linalg.norm(rhs)
    scale = scale if scale > 0 else 1.0
    res = np.linalg.norm(K @ x - rhs) / scale
    for _ in range(max_refine):
        if res <= 0.1 * tol:
            break
        x = x + apply_inverse(rhs - K @ x)
        res = np.linalg.norm(K @ x - rhs) / scale
    if res > tol:
        raise SolverResidualError(f"solver residual {res:.3e} exceeds {tol:.1e}")
    return SolveResult(x[:N], x[N:], float(res))


def error_breaks(region: Rect2, axis: int, panel: float, lattice=None, cuts=()):
    """Panel breakpoints for error integrals along one axis.

    The panels are no longer than ``panel``. They include every lattice line
    inside the region, so kernel singularities sit on panel corners, and the
    given cut lines, so kinks of the exact solution sit on panel edges.
    """
    lo, hi = region.lo[axis], region.hi[axis]
    lines = [lo, hi, *cuts]
    if lattice is not None:
        s = lattice.spacing
        o = lattice.origin[axis]
        k = np.arange(np.ceil((lo - o) / s - 1e-9), np.floor((hi - o) / s + 1e-9) + 1)
        lines.extend(o + s * k)
    b = np.unique(np.round(np.asarray([v for v in lines if lo <= v <= hi]), 12))
    out = [b[0]]
    for a, c in zip(b[:-1], b[1:]):
        m = int(np.ceil((c - a) / panel - 1e-9))
        out.extend(np.linspace(a, c, m + 1)[1:])
    return np.asarray(out)


def l2_error(basis, coeffs, exact, region: Rect2, panel: float = 0.05, order: int = 5,
             cuts=((), ())) -> float:
    """``L2(region)`` norm of ``sum_j coeffs_j b_j - exact``.

    The expansion is evaluated without truncation. Panels are at most
    ``panel`` wide and additionally split at lattice lines and at the given
    per-axis cut lines; each panel gets ``order`` Gauss-Legendre nodes per
    axis.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    lat = basis.centers.lattice
    bx = error_breaks(region, 0, panel, lat, cuts[0])
    by = error_breaks(region, 1, panel, lat, cuts[1])
    xs, wx = gauss_legendre_1d(bx, order)
    ys, wy = gauss_legendre_1d(by, order)
    uh = basis.expansion(coeffs).on_tensor(xs, ys)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    ue = np.asarray(exact(np.column_stack([gx.ravel(), gy.ravel()])), dtype=float).reshape(uh.shape)
    return float(np.sqrt(np.einsum("i,ij,j->", wx, (uh - ue) ** 2, wy)))


def restricted_stiffness(A, basis) -> sp.csr_matrix:
    """Rows and columns of ``A`` belonging to interior centers."""
    idx = np.flatnonzero(basis.regions == Region.INTERIOR)
    return A.tocsr()[idx][:, idx]


def condition_estimate(A, tol: float = 1e-4, maxiter: int = 5000, seed: int = 0) -> float:
    """2-norm condition number by power and inverse iteration.

    The largest singular value comes from power iteration and the smallest
    from inverse iteration with a sparse LU factorization; both stop when
    the estimate changes by less than ``tol`` relative. Symmetric matrices
    are iterated directly, others through ``A^T A``. A numerically singular
    matrix has smallest singular value 0 and condition number ``inf``.
    """
    A = sp.csc_matrix(A, dtype=float)
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if n == 0:
        return 1.0
    symmetric = (A - A.T).count_nonzero() == 0
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal(n)

    def op(v):
        return A @ v if symmetric else A.T @ (A @ v)

    def iterate(apply):
        v = x0 / np.linalg.norm(x0)
        est = 0.0
        for _ in range(maxiter):
            y = apply(v)
            new = abs(float(v @ y))
            ny = np.linalg.norm(y)
            if ny == 0:
                return 0.0
            v = y / ny
            if est > 0 and abs(new - est) <= tol * new:
                return new
            est = new
        return est

    lam_max = iterate(op)
    if lam_max == 0:
        return np.inf
    try:
        lu = spla.splu(A)
    except RuntimeError:
        return np.inf

    def inv(v):
        if symmetric:
            return lu.solve(v)
        return lu.solve(lu.solve(v, trans="T"))

    mu = iterate(inv)
    if not np.isfinite(mu) or mu == 0:
        return np.inf
    lam_min = 1.0 / mu
    if lam_min <= 1e-13 * lam_max:
        return np.inf
    ratio = lam_max / lam_min
    return float(ratio if symmetric else np.sqrt(ratio))


def multiplier_diagnostic(basis, system: SaddleSystem, result: SolveResult,
                          problem: ManufacturedProblem, return_values: bool = False):
    """Relative l2 discrepancy of the discrete multiplier at interaction centers.

    The discrete multiplier ``sum_k beta_k b_k`` is compared with
    ``2 ∫_inner gamma(x, y) u(y) dy`` at every interaction-region center.
    """
    coeffs = np.zeros(len(basis))
    coeffs[system.constraint_index] = result.multiplier_coeffs
    pts = basis.center_points[system.constraint_index]
    lam_h = basis.expansion(coeffs)(pts)
    lam = multiplier_exact(problem, pts)
    den = np.linalg.norm(lam)
    err = np.linalg.norm(lam_h - lam)
    rel = float(err / den) if den > 0 else float(err)
    if return_values:
        return rel, lam_h, lam
    return rel


def fredholm_residual(problem: ManufacturedProblem, samples: int = 20, order: int = 10,
                      panels: int = 6, source_order: int = 16, source_panels: int = 4) -> float:
    """Consistency of the manufactured source with the exact solution.

    At a ``samples x samples`` grid of cell midpoints of the inner region,
    returns ``max |sigma(x) u(x) - ∫_inner gamma(x, y) u(y) dy - f(x)/2|``.
    ``sigma`` and the inner integral use their own Gauss-Legendre rules,
    independent of the one that produced ``f``.
    """
    inner = problem.inner
    t = (np.arange(samples) + 0.5) / samples
    gx, gy = np.meshgrid(inner.lo[0] + t * inner.width, inner.lo[1] + t * inner.height, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    f = manufacture_source(problem, pts, source_order, source_panels)
    sig = sigma(problem.kernel, pts, problem.outer)
    conv = 0.5 * multiplier_exact(problem, pts, order, panels)
    return float(np.max(np.abs(sig * problem.exact(pts) - conv - 0.5 * f)))


def export_system(system: SaddleSystem, result: SolveResult | None, directory) -> list:
    """Write ``A.mtx``, ``B.mtx``, ``rhs.txt`` and, with a result, ``alpha.txt`` and ``beta.txt``."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for name, M in (("A.mtx", system.A), ("B.mtx", system.B)):
        p = os.path.join(directory, name)
        scipy.io.mmwrite(p, sp.coo_matrix(M), precision=17)
        paths.append(p)
    vectors = [("rhs.txt", system.rhs), ("constraint_index.txt", system.constraint_index)]
    if result is not None:
        vectors += [("alpha.txt", result.u_coeffs), ("beta.txt", result.multiplier_coeffs)]
    for name, v in vectors:
        p = os.path.join(directory, name)
        fmt = "%d" if np.issubdtype(np.asarray(v).dtype, np.integer) else "%.17g"
        np.savetxt(p, v, fmt=fmt)
        paths.append(p)
    return paths

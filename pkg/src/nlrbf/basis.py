"""Local Lagrange functions and quasi-interpolation.

A local Lagrange function ``b_xi`` is the kernel interpolant of the data
``delta_{xi, eta}`` on a small neighbor set ``Y_xi`` around the center
``xi``:

    b_xi(x) = sum_{eta in Y_xi} alpha_eta |x - eta| kernel + p(x),

with polynomial moment conditions ``sum alpha_eta q(eta) = 0`` for every
polynomial ``q`` of degree below the kernel order. Neighbor sets hold
``O((log N)^2)`` centers, so each function costs one small dense solve.

On a uniform lattice most neighbor sets are translates of each other. The
builder keys every local system by its rounded neighbor offsets and solves
each distinct system once; the resulting functions are bitwise identical
to solving every system separately with the same offsets.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.signal import fftconvolve
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import LocalSystemError, UnisolvencyError
from .geometry import CenterSet
from .kernels import TpsKernel, make_rbf_kernel

__all__ = [
    "neighbor_count",
    "footprint_radius",
    "monomial_exponents",
    "monomial_matrix",
    "check_unisolvent",
    "local_system_matrix",
    "select_neighbors",
    "build_local_lagrange",
    "evaluate",
    "LocalLagrangeFunction",
    "Expansion",
    "BasisSet",
    "build_basis",
    "quasi_interpolate",
]

BASIS_FORMAT = "nlrbf-basis 1"

#: Local systems whose estimated condition number exceeds this are rejected.
MAX_LOCAL_CONDITION = 1e14
#: Largest accepted infinity-norm residual of a local solve.
MAX_LOCAL_RESIDUAL = 1e-9
#: Smallest accepted area of the spanning triangle, relative to the squared footprint.
MIN_TRIANGLE_AREA = 1e-12


def neighbor_count(n_centers: int, c_loc: float = 11.0) -> int:
    """Neighbor-set size ``min(N, ceil(c_loc * (ln N)**2))``.

    Examples
    --------
    >>> neighbor_count(1444)
    583
    """
    if n_centers < 1:
        raise ValueError("need at least one center")
    return int(min(n_centers, np.ceil(c_loc * np.log(n_centers) ** 2)))


def footprint_radius(spacing: float, count: int) -> float:
    """Radius of a disk holding ``count`` nodes of a lattice with the given spacing."""
    return float(spacing * np.sqrt(count / np.pi))


def monomial_exponents(degree: int) -> tuple:
    """Exponents ``(p, q)`` of ``x**p y**q`` with ``p + q <= degree``, by total degree."""
    return tuple((d - q, q) for d in range(degree + 1) for q in range(d + 1))


def monomial_matrix(points, exponents) -> np.ndarray:
    """Matrix of monomials evaluated at ``points``, one column per exponent."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty((len(p), len(exponents)))
    for k, (a, b) in enumerate(exponents):
        out[:, k] = p[:, 0] ** a * p[:, 1] ** b
    return out


def check_unisolvent(points, degree: int, label="") -> None:
    """Raise :class:`UnisolvencyError` if ``points`` cannot fix a polynomial of ``degree``.

    For linear polynomials the test builds a large spanning triangle (the
    point farthest from the centroid, the point farthest from it, and the
    point farthest from the line through both) and rejects the set when
    its area is below ``MIN_TRIANGLE_AREA`` times the squared diameter.
    Higher degrees use the numerical rank of the monomial matrix.
    """
    if degree < 0:
        return
    p = np.asarray(points, dtype=float)
    n_mono = (degree + 1) * (degree + 2) // 2
    if len(p) < n_mono:
        raise UnisolvencyError(f"unisolvency failure{label}: {len(p)} points for {n_mono} monomials")
    if degree == 0:
        return
    c = p - p.mean(axis=0)
    i0 = int(np.argmax(np.einsum("ij,ij->i", c, c)))
    d0 = p - p[i0]
    i1 = int(np.argmax(np.einsum("ij,ij->i", d0, d0)))
    e = p[i1] - p[i0]
    diam2 = float(e @ e)
    if diam2 == 0:
        raise UnisolvencyError(f"unisolvency failure{label}: all points coincide")
    cross = np.abs(d0[:, 0] * e[1] - d0[:, 1] * e[0])
    area = 0.5 * float(cross.max())
    if area < MIN_TRIANGLE_AREA * diam2:
        raise UnisolvencyError(f"unisolvency failure{label}: points are collinear")
    if degree >= 2:
        s = np.linalg.svd(monomial_matrix(c / np.sqrt(diam2), monomial_exponents(degree)),
                          compute_uv=False)
        if s[-1] < 1e-12 * s[0]:
            raise UnisolvencyError(f"unisolvency failure{label}: monomial matrix is rank deficient")


def _rank_neighbors(points, dists, idx, count, scale):
    """Order candidate neighbors by distance, breaking ties by lower index."""
    qd = np.round(dists / scale, 9)
    order = np.lexsort((idx, qd), axis=-1)
    idx = np.take_along_axis(idx, order, axis=-1)
    qd = np.take_along_axis(qd, order, axis=-1)
    return idx[..., :count], qd


def select_neighbors(center_index: int, centers, count: int, tree=None) -> np.ndarray:
    """The ``count`` centers nearest to ``centers[center_index]``.

    Distances are compared after rounding to nine digits relative to the
    nearest-neighbor spacing; ties are broken by the lower index so the
    choice does not depend on the search structure. ``count`` is clamped to
    the number of centers. The result starts with the center itself.

    Raises
    ------
    UnisolvencyError
        If the selected points are collinear.
    """
    pts = centers.points if isinstance(centers, CenterSet) else np.asarray(centers, dtype=float)
    count = min(int(count), len(pts))
    if count < 1:
        raise ValueError("count must be positive")
    tree = tree if tree is not None else cKDTree(pts)
    idx = _select_batch(pts, tree, pts[[center_index]], count)[0]
    check_unisolvent(pts[idx], 1, f" at center {center_index}")
    return idx


def _select_batch(pts, tree, query, count):
    """Ranked neighbor indices for many query points, shape (len(query), count)."""
    n = len(pts)
    d_nn, _ = tree.query(query[: min(len(query), 64)], k=min(2, n))
    scale = float(np.max(d_nn[:, -1])) if n > 1 else 1.0
    scale = scale if scale > 0 else 1.0
    extra = max(16, count // 4)
    out = np.empty((len(query), count), dtype=np.int64)
    block = max(1, 4_000_000 // (count + extra))
    for start in range(0, len(query), block):
        q = query[start:start + block]
        k = min(n, count + extra)
        while True:
            d, i = tree.query(q, k=k)
            d = np.asarray(d).reshape(len(q), k)
            i = np.asarray(i).reshape(len(q), k)
            ranked, qd = _rank_neighbors(pts, d, i, count, scale)
            # Ties straddling the cut must all be among the candidates.
            if k == n or np.all(qd[:, count - 1] < qd[:, -1]):
                break
            k = min(n, 2 * k)
        out[start:start + block] = ranked
    return out


def local_system_matrix(offsets, kernel, exponents) -> np.ndarray:
    """Symmetric matrix ``[[Phi, P], [P^T, 0]]`` of a local interpolation problem."""
    k = len(offsets)
    n_mono = len(exponents)
    K = np.zeros((k + n_mono, k + n_mono))
    K[:k, :k] = kernel(cdist(offsets, offsets))
    if n_mono:
        P = monomial_matrix(offsets, exponents)
        K[:k, k:] = P
        K[k:, :k] = P.T
    return K


def _local_solve(offsets, self_pos, kernel, exponents):
    """Solve one local Lagrange system.

    Parameters
    ----------
    offsets : ndarray, shape (k, 2)
        Neighbor positions relative to the center.
    self_pos : int
        Position of the center in ``offsets``.

    Returns
    -------
    alpha : ndarray, shape (k,)
        Kernel coefficients in physical units.
    beta : ndarray, shape (n_mono,)
        Coefficients of the centered monomials ``(x - xi)^gamma``.
    rcond : float
        Reciprocal condition estimate of the local matrix.
    """
    k = len(offsets)
    n_mono = len(exponents)
    # Thin-plate splines are scale invariant up to a polynomial, so the
    # system is solved on unit-size offsets and rescaled afterwards.
    ell = float(np.sqrt(np.max(np.einsum("ij,ij->i", offsets, offsets)))) if k > 1 else 1.0
    if not getattr(kernel, "scale_invariant", False) or ell == 0:
        ell = 1.0
    K = local_system_matrix(offsets / ell, kernel, exponents)
    rhs = np.zeros(k + n_mono)
    rhs[self_pos] = 1.0
    anorm = np.linalg.norm(K, 1)
    lu, piv, info = lapack.dsytrf(K, lower=1)
    if info > 0:
        raise LocalSystemError(f"zero pivot {info - 1} in local system")
    rcond, _ = lapack.dsycon(lu, piv, anorm, lower=1)
    if not rcond > 1.0 / MAX_LOCAL_CONDITION:
        raise LocalSystemError(f"local system condition estimate {1 / max(rcond, 1e-300):.3g} exceeds "
                               f"{MAX_LOCAL_CONDITION:.0e}")
    sol, _ = lapack.dsytrs(lu, piv, rhs, lower=1)
    for _ in range(2):
        r = rhs - K @ sol
        if np.max(np.abs(r)) <= 1e-13:
            break
        corr, _ = lapack.dsytrs(lu, piv, r, lower=1)
        sol = sol + corr
    if np.max(np.abs(rhs - K @ sol)) > MAX_LOCAL_RESIDUAL:
        raise LocalSystemError("local solve residual exceeds tolerance")
    m = getattr(kernel, "m", 2)
    alpha = sol[:k] / ell ** (2 * m - 2) if ell != 1.0 else sol[:k].copy()
    if not n_mono:
        return alpha, np.zeros(0), float(rcond)
    if ell == 1.0:
        return alpha, sol[k:].copy(), float(rcond)
    # Rescaling the kernel adds a polynomial of degree < m; recover the
    # physical polynomial part from the interpolation conditions.
    target = -(kernel(cdist(offsets, offsets)) @ alpha)
    target[self_pos] += 1.0
    beta, *_ = np.linalg.lstsq(monomial_matrix(offsets, exponents), target, rcond=None)
    return alpha, beta, float(rcond)


@dataclass(frozen=True)
class LocalLagrangeFunction:
    """One local Lagrange function.

    Attributes
    ----------
    center_index : int
        Index of the center in the full center set.
    center : ndarray, shape (2,)
    neighbor_indices : ndarray
        Indices of the neighbor set, into the full center set.
    neighbor_points : ndarray, shape (k, 2)
    rbf_coeffs : ndarray, shape (k,)
        Coefficient of ``kernel(|x - eta|)`` for each neighbor ``eta``.
    poly_coeffs : ndarray
        Coefficients of the centered monomials ``(x - center)^gamma``.
    exponents : tuple
        Monomial exponents matching ``poly_coeffs``.
    kernel : object
    cutoff : float
        Truncation radius; the function is taken as zero farther away.
    """

    center_index: int
    center: np.ndarray
    neighbor_indices: np.ndarray
    neighbor_points: np.ndarray
    rbf_coeffs: np.ndarray
    poly_coeffs: np.ndarray
    exponents: tuple
    kernel: object = field(default_factory=TpsKernel)
    cutoff: float = np.inf

    def __call__(self, x):
        return evaluate(self, x)

    def untruncated(self, x):
        """Value of the full kernel expansion, ignoring the cutoff."""
        p = np.atleast_2d(np.asarray(x, dtype=float))
        val = self.kernel(cdist(p, self.neighbor_points)) @ self.rbf_coeffs
        if len(self.exponents):
            val = val + monomial_matrix(p - self.center, self.exponents) @ self.poly_coeffs
        return val if np.ndim(x) > 1 else float(val[0])


def evaluate(b: LocalLagrangeFunction, x):
    """Value of a local Lagrange function, zero beyond its truncation radius."""
    p = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.zeros(len(p))
    near = np.hypot(p[:, 0] - b.center[0], p[:, 1] - b.center[1]) <= b.cutoff
    if np.any(near):
        out[near] = b.untruncated(p[near])
    return out if np.ndim(x) > 1 else float(out[0])


def build_local_lagrange(center_index: int, neighbor_indices, centers, kernel=None,
                         cutoff: float = np.inf) -> LocalLagrangeFunction:
    """Solve the local Lagrange system of one center.

    Parameters
    ----------
    center_index : int
        Index of the center within ``centers``.
    neighbor_indices : array_like of int
        Neighbor set; must contain ``center_index``.
    centers : CenterSet or array_like, shape (M, 2)
    kernel : TpsKernel or MaternKernel, optional
        Defaults to the thin-plate spline with ``m = 2``.

    Raises
    ------
    UnisolvencyError, LocalSystemError
    """
    kernel = kernel if kernel is not None else TpsKernel(2)
    pts = centers.points if isinstance(centers, CenterSet) else np.asarray(centers, dtype=float)
    nbr = np.asarray(neighbor_indices, dtype=np.int64)
    hits = np.flatnonzero(nbr == center_index)
    if len(hits) != 1:
        raise ValueError("neighbor set must contain the center exactly once")
    exps = monomial_exponents(kernel.poly_degree)
    label = f" at center {center_index}"
    check_unisolvent(pts[nbr], kernel.poly_degree, label)
    xi = pts[center_index]
    try:
        alpha, beta, _ = _local_solve(pts[nbr] - xi, int(hits[0]), kernel, exps)
    except LocalSystemError as exc:
        raise LocalSystemError(f"{exc}{label}") from None
    return LocalLagrangeFunction(int(center_index), xi.copy(), nbr, pts[nbr].copy(),
                                 alpha, beta, exps, kernel, float(cutoff))


def _global_poly(exponents, centers, coeffs):
    """Global monomial coefficients of ``sum_j sum_g coeffs[j, g] (x - c_j)^g``."""
    out = np.zeros(len(exponents))
    where = {e: i for i, e in enumerate(exponents)}
    cx, cy = centers[:, 0], centers[:, 1]
    for g, (p, q) in enumerate(exponents):
        for i in range(p + 1):
            for k in range(q + 1):
                out[where[(i, k)]] += comb(p, i) * comb(q, k) * float(
                    np.sum(coeffs[:, g] * (-cx) ** (p - i) * (-cy) ** (q - k)))
    return out


class Expansion:
    """Kernel translates on a center set plus a global polynomial.

    ``u(x) = sum_i c_i kernel(|x - x_i|) + sum_g d_g x^g``. Linear
    combinations of local Lagrange functions collapse to this form, which
    evaluates without truncation at a cost independent of the neighbor-set
    size.
    """

    def __init__(self, centers: CenterSet, kernel, coeffs, poly, exponents):
        self.centers = centers
        self.kernel = kernel
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.poly = np.asarray(poly, dtype=float)
        self.exponents = tuple(exponents)

    def _poly_part(self, p):
        if not len(self.exponents):
            return np.zeros(len(p))
        return monomial_matrix(p, self.exponents) @ self.poly

    def __call__(self, points):
        """Values at an ``(M, 2)`` array of points."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        out = self._kernel_sum(p) + self._poly_part(p)
        return out if np.ndim(points) > 1 else float(out[0])

    def _kernel_sum(self, p):
        nz = np.flatnonzero(self.coeffs)
        out = np.zeros(len(p))
        if len(nz):
            c = self.coeffs[nz]
            X = self.centers.points[nz]
            block = max(1, 4_000_000 // len(nz))
            for s in range(0, len(p), block):
                out[s:s + block] = self.kernel(cdist(p[s:s + block], X)) @ c
        return out

    def on_tensor(self, xs, ys, fft_min: int = 2000) -> np.ndarray:
        """Values on the tensor grid ``xs x ys``, shape ``(len(xs), len(ys))``.

        When the centers form a lattice, points sharing a fractional lattice
        offset are evaluated together as one discrete convolution by FFT.
        Small groups fall back to direct summation.
        """
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        lat = self.centers.lattice
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        out = self._poly_part(np.column_stack([gx.ravel(), gy.ravel()])).reshape(len(xs), len(ys))
        if lat is None:
            return out + self._kernel_sum(np.column_stack([gx.ravel(), gy.ravel()])).reshape(out.shape)
        C = self.coeffs.reshape(lat.shape)
        s = lat.spacing
        groups_x = _fraction_groups(xs, lat.origin[0], s)
        groups_y = _fraction_groups(ys, lat.origin[1], s)
        direct_x, direct_y = [], []
        for fx, ix, nx in groups_x:
            for fy, iy, ny in groups_y:
                if len(ix) * len(iy) < fft_min:
                    direct_x.append(ix)
                    direct_y.append(iy)
                    continue
                kx0 = nx.min() - (lat.shape[0] - 1)
                ky0 = ny.min() - (lat.shape[1] - 1)
                kx = np.arange(kx0, nx.max() + 1) + fx
                ky = np.arange(ky0, ny.max() + 1) + fy
                T = self.kernel(s * np.hypot(kx[:, None], ky[None, :]))
                full = fftconvolve(C, T, mode="full")
                out[np.ix_(ix, iy)] += full[np.ix_(nx - kx0, ny - ky0)]
        if direct_x:
            rows = np.concatenate([np.repeat(ix, len(iy)) for ix, iy in zip(direct_x, direct_y)])
            cols = np.concatenate([np.tile(iy, len(ix)) for ix, iy in zip(direct_x, direct_y)])
            out[rows, cols] += self._kernel_sum(np.column_stack([xs[rows], ys[cols]]))
        return out


def _fraction_groups(vals, origin, s):
    """Group coordinates by fractional lattice offset.

    Returns a list of ``(fraction, positions, lattice_cells)``.
    """
    u = (vals - origin) / s
    n = np.floor(u + 1e-9).astype(np.int64)
    f = np.round(u - n, 10)
    keys, inv = np.unique(f, return_inverse=True)
    out = []
    for g, fk in enumerate(keys):
        pos = np.flatnonzero(inv == g)
        # Use the exact mean fraction of the group for the kernel table.
        out.append((float(np.mean(u[pos] - n[pos])), pos, n[pos]))
    return out


class BasisSet:
    """Local Lagrange functions of every center inside the outer domain.

    Coefficients are stored once per distinct local system ("pattern");
    ``pattern_of[j]`` names the system of basis function ``j``.

    Attributes
    ----------
    centers : CenterSet
        All centers including the extension band.
    kernel : TpsKernel or MaternKernel
    domain_indices : ndarray
        Index into ``centers`` of each basis function's center.
    indptr, indices : ndarray
        Neighbor sets in compressed-row form, indices into ``centers``.
    pattern_of : ndarray
    patterns : list of (alpha, beta)
    cutoff : float
        Truncation radius ``R_cut``.
    params : dict
        Footprint parameters used to build the set.
    """

    def __init__(self, centers, kernel, domain_indices, indptr, indices, pattern_of,
                 patterns, cutoff, params=None):
        self.centers = centers
        self.kernel = kernel
        self.domain_indices = np.asarray(domain_indices, dtype=np.int64)
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.pattern_of = np.asarray(pattern_of, dtype=np.int64)
        self.patterns = list(patterns)
        self.cutoff = float(cutoff)
        self.params = dict(params or {})
        self.exponents = monomial_exponents(kernel.poly_degree)
        self._rbf = None

    def __len__(self) -> int:
        return len(self.domain_indices)

    @property
    def center_points(self) -> np.ndarray:
        return self.centers.points[self.domain_indices]

    @property
    def regions(self) -> np.ndarray:
        return self.centers.regions[self.domain_indices]

    @property
    def spacing_hint(self) -> float:
        return 2.0 * self.centers.separation

    @property
    def poly_coeffs(self) -> np.ndarray:
        n_mono = len(self.exponents)
        table = np.array([b for _, b in self.patterns]).reshape(len(self.patterns), n_mono)
        return table[self.pattern_of]

    def neighbors(self, j: int) -> np.ndarray:
        return self.indices[self.indptr[j]:self.indptr[j + 1]]

    def __getitem__(self, j: int) -> LocalLagrangeFunction:
        alpha, beta = self.patterns[self.pattern_of[j]]
        nbr = self.neighbors(j)
        ci = int(self.domain_indices[j])
        return LocalLagrangeFunction(ci, self.centers.points[ci].copy(), nbr.copy(),
                                     self.centers.points[nbr].copy(), alpha.copy(), beta.copy(),
                                     self.exponents, self.kernel, self.cutoff)

    def footprint_radii(self) -> np.ndarray:
        """Distance from each center to its farthest neighbor."""
        rows = np.repeat(np.arange(len(self)), np.diff(self.indptr))
        d = self.centers.points[self.indices] - self.center_points[rows]
        r = np.hypot(d[:, 0], d[:, 1])
        return np.maximum.reduceat(r, self.indptr[:-1]) if len(r) else np.zeros(len(self))

    def rbf_matrix(self) -> sp.csc_matrix:
        """Sparse ``(len(centers), len(self))`` matrix of kernel coefficients."""
        if self._rbf is None:
            data = np.concatenate([self.patterns[p][0] for p in self.pattern_of])
            self._rbf = sp.csc_matrix((data, self.indices, self.indptr),
                                      shape=(len(self.centers), len(self)))
        return self._rbf

    def expansion(self, coeffs) -> Expansion:
        """Collapse ``sum_j coeffs[j] b_j`` into an untruncated :class:`Expansion`."""
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (len(self),):
            raise ValueError(f"expected {len(self)} coefficients")
        c = self.rbf_matrix() @ coeffs
        poly = np.zeros(len(self.exponents))
        if len(self.exponents):
            poly = _global_poly(self.exponents, self.center_points,
                                self.poly_coeffs * coeffs[:, None])
        return Expansion(self.centers, self.kernel, c, poly, self.exponents)

    def function_values(self, points, columns=None, dense=False):
        """Truncated values ``b_j(x)`` of the basis functions at ``points``.

        Parameters
        ----------
        points : ndarray, shape (M, 2)
        columns : array_like of int, optional
            Restrict to these basis functions.
        dense : bool
            Return ``(cols, V)`` with ``V`` dense over the basis functions
            that reach the points, instead of a sparse ``(M, len(self))``
            matrix.

        Notes
        -----
        Offsets ``x - xi_j`` that repeat for functions of the same pattern
        are evaluated once, which is what makes this affordable on lattices.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        cols_all = np.arange(len(self)) if columns is None else np.asarray(columns, dtype=np.int64)
        tree = cKDTree(self.center_points[cols_all])
        hits = tree.query_ball_point(pts, self.cutoff)
        lens = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(pts))
        rows = np.repeat(np.arange(len(pts)), lens)
        cols = cols_all[np.concatenate([np.asarray(h, dtype=np.int64) for h in hits])] \
            if len(rows) else np.zeros(0, dtype=np.int64)
        vals = self._values_at_offsets(pts[rows] - self.center_points[cols], self.pattern_of[cols])
        if dense:
            used, local = np.unique(cols, return_inverse=True)
            V = np.zeros((len(pts), len(used)))
            V[rows, local] = vals
            return used, V
        return sp.csr_matrix((vals, (rows, cols)), shape=(len(pts), len(self)))

    def _values_at_offsets(self, offsets, pids):
        out = np.empty(len(offsets))
        if not len(offsets):
            return out
        unit = 1e-10 * self.spacing_hint
        key = np.column_stack([pids, np.round(offsets / unit).astype(np.int64)])
        uniq, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
        inv = inv.ravel()
        uvals = np.empty(len(uniq))
        for pid in np.unique(uniq[:, 0]):
            sel = np.flatnonzero(uniq[:, 0] == pid)
            alpha, beta = self.patterns[pid]
            j = int(np.flatnonzero(self.pattern_of == pid)[0])
            nbr_off = self.centers.points[self.neighbors(j)] - self.center_points[j]
            off = offsets[first[sel]]
            block = max(1, 4_000_000 // len(alpha))
            for s in range(0, len(sel), block):
                o = off[s:s + block]
                v = self.kernel(cdist(o, nbr_off)) @ alpha
                if len(beta):
                    v += monomial_matrix(o, self.exponents) @ beta
                uvals[sel[s:s + block]] = v
        out[:] = uvals[inv]
        return out

    def save(self, path) -> None:
        """Persist to a ``.npz`` archive with a format header."""
        n_mono = len(self.exponents)
        np.savez_compressed(
            path,
            header=np.array(BASIS_FORMAT),
            kernel=np.array(self.kernel.name),
            m=np.array(self.kernel.m),
            points=self.centers.points,
            regions=self.centers.regions,
            metrics=np.array([self.centers.fill_distance, self.centers.separation]),
            domain_indices=self.domain_indices,
            indptr=self.indptr,
            indices=self.indices,
            rbf_coeffs=self.rbf_matrix().data,
            poly_coeffs=self.poly_coeffs.reshape(len(self), n_mono),
            cutoff=np.array(self.cutoff),
        )

    @classmethod
    def load(cls, path) -> "BasisSet":
        """Read an archive written by :meth:`save`.

        Every center becomes its own pattern; lattice metadata is not kept.
        """
        with np.load(path, allow_pickle=False) as z:
            if str(z["header"]) != BASIS_FORMAT:
                raise ValueError(f"unsupported basis file header {str(z['header'])!r}")
            kernel = make_rbf_kernel(str(z["kernel"]), int(z["m"]))
            h, q = z["metrics"]
            centers = CenterSet(z["points"], z["regions"], float(h), float(q))
            indptr, indices = z["indptr"], z["indices"]
            rbf, poly = z["rbf_coeffs"], z["poly_coeffs"]
            patterns = [(rbf[indptr[j]:indptr[j + 1]].copy(), poly[j].copy())
                        for j in range(len(indptr) - 1)]
            return cls(centers, kernel, z["domain_indices"], indptr, indices,
                       np.arange(len(patterns)), patterns, float(z["cutoff"]))


def build_basis(centers: CenterSet, kernel=None, count: int | None = None, c_loc: float = 11.0,
                radius: float | None = None, K: float | None = None,
                cutoff_factor: float = 1.0, threads: int = 1) -> BasisSet:
    """Build the local Lagrange function of every in-domain center.

    Neighbor sets are chosen among all centers (extension band included).
    Three footprint modes are available:

    * ``count`` given: that many nearest neighbors;
    * ``radius`` or ``K`` given: all centers within ``radius``, or within
      ``K * h * |log h|`` with ``h`` the fill distance;
    * otherwise ``neighbor_count(N, c_loc)`` nearest neighbors, with ``N``
      the number of in-domain centers.

    Parameters
    ----------
    cutoff_factor : float
        Truncation radius as a multiple of the largest footprint radius.
    threads : int
        Worker threads for the local solves.
    """
    kernel = kernel if kernel is not None else TpsKernel(2)
    pts = centers.points
    dom = centers.domain_indices
    if len(dom) == 0:
        raise ValueError("center set has no in-domain centers")
    tree = cKDTree(pts)
    params = {"c_loc": c_loc, "cutoff_factor": cutoff_factor}
    if radius is None and K is not None:
        h = centers.fill_distance
        radius = K * h * abs(np.log(h))
        params["K"] = K
    if radius is not None:
        params["radius"] = float(radius)
        hits = tree.query_ball_point(pts[dom], radius)
        lists = []
        for j, hlist in enumerate(hits):
            h_arr = np.asarray(sorted(hlist), dtype=np.int64)
            d = np.hypot(*(pts[h_arr] - pts[dom[j]]).T)
            lists.append(h_arr[np.lexsort((h_arr, np.round(d / (2 * centers.separation), 9)))])
    else:
        if count is None:
            count = neighbor_count(len(dom), c_loc)
        count = min(int(count), len(pts))
        params["count"] = count
        table = _select_batch(pts, tree, pts[dom], count)
        lists = list(table)
    indptr = np.zeros(len(dom) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(x) for x in lists])
    indices = np.concatenate(lists).astype(np.int64)

    exps = monomial_exponents(kernel.poly_degree)
    unit = 1e-10 * 2 * centers.separation if np.isfinite(centers.separation) else 1e-12
    keys = {}
    jobs = []
    pattern_of = np.empty(len(dom), dtype=np.int64)
    for j in range(len(dom)):
        nbr = indices[indptr[j]:indptr[j + 1]]
        off = pts[nbr] - pts[dom[j]]
        key = np.round(off / unit).astype(np.int64).tobytes()
        pid = keys.get(key)
        if pid is None:
            pid = keys[key] = len(jobs)
            check_unisolvent(pts[nbr], kernel.poly_degree, f" at center {dom[j]}")
            self_pos = np.flatnonzero(nbr == dom[j])
            jobs.append((int(dom[j]), off, int(self_pos[0])))
        pattern_of[j] = pid

    def solve(job):
        ci, off, pos = job
        try:
            alpha, beta, _ = _local_solve(off, pos, kernel, exps)
        except LocalSystemError as exc:
            raise LocalSystemError(f"{exc} at center {ci}") from None
        return alpha, beta

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            patterns = list(pool.map(solve, jobs))
    else:
        patterns = [solve(job) for job in jobs]
    params["patterns"] = len(patterns)
    basis = BasisSet(centers, kernel, dom, indptr, indices, pattern_of, patterns, np.inf, params)
    basis.cutoff = float(cutoff_factor * basis.footprint_radii().max())
    return basis


def quasi_interpolate(f, basis: BasisSet) -> Expansion:
    """Quasi-interpolant ``sum_j f(xi_j) b_j`` of a function of ``(M, 2)`` points."""
    return basis.expansion(np.asarray(f(basis.center_points), dtype=float))

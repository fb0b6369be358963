"""Closed-form polygon integrals of thin-plate splines and quadrature rules.

The integral of ``phi(|x - eta|) = r**2 log r`` over a polygon is reduced to
its boundary with Green's theorem: if ``Delta Phi = phi`` then
``∫_D phi = ∮ grad Phi · n ds``. For a radial ``Phi`` the flux through a
straight edge depends only on the signed distance of ``eta`` to the edge's
line and on the two edge endpoints projected onto it, which gives a
closed-form antiderivative per edge.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .geometry import Polygon, Rect2

__all__ = [
    "segment_f",
    "polyharmonic_potential",
    "polygon_tps_integral",
    "polygon_monomial_moment",
    "centered_moments",
    "QuadratureRule",
    "gauss_legendre_1d",
    "tensor_gauss_legendre",
    "gauss_legendre_cells",
    "basis_weights",
]


def segment_f(z, alpha):
    """Antiderivative in ``z`` of the edge flux of the r² log r potential.

    Returns ``F`` with ``dF/dz = alpha * (z² + alpha²)/16 * (2 log(z² + alpha²) - 1)``,

    ``F(z, a) = (a z³ + 3 a³ z)/144 (6 log(z² + a²) - 7) + a⁴/6 atan(z/a) - a³ z/12``.

    Every term carries a factor of ``alpha``; the value at ``alpha = 0`` is
    defined as the limit 0 so callers need no special case.
    """
    z = np.asarray(z, dtype=float)
    a = np.asarray(alpha, dtype=float)
    r2 = z * z + a * a
    # Where r2 underflows to 0 every factor multiplying the logarithm vanishes too.
    log_r2 = np.log(np.where(r2 > 0, r2, 1.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        val = ((a * z ** 3 + 3 * a ** 3 * z) / 144.0 * (6.0 * log_r2 - 7.0)
               + a ** 4 / 6.0 * np.arctan(z / a) - a ** 3 / 12.0 * z)
    out = np.where(a == 0, 0.0, val)
    return out if out.ndim else float(out)


def polyharmonic_potential(r, k: int = 1):
    """Radial solution ``Phi`` of ``Delta Phi = r**(2k) log r`` in the plane.

    ``Phi = ((k+1) r**(2k+2) log r - r**(2k+2)) / (4 (k+1)**3)``; for ``k = 1``
    this is ``r**4 (2 log r - 1) / 32``.
    """
    r = np.asarray(r, dtype=float)
    p = 2 * k + 2
    with np.errstate(divide="ignore", invalid="ignore"):
        val = ((k + 1) * r ** p * np.log(r) - r ** p) / (4.0 * (k + 1) ** 3)
    out = np.where(r > 0, val, 0.0)
    return out if out.ndim else float(out)


def _as_polygons(domain):
    if isinstance(domain, Rect2):
        return [domain.as_polygon()]
    if isinstance(domain, Polygon):
        return [domain]
    out = []
    for d in domain:
        out.extend(_as_polygons(d))
    return out


def polygon_tps_integral(domain, eta):
    """Exact ``∫_D |x - eta|² log|x - eta| dx`` for a polygon ``D``.

    Parameters
    ----------
    domain : Polygon, Rect2 or list of them
        A list is treated as a union of non-overlapping pieces.
    eta : array_like, shape (2,) or (M, 2)

    Returns
    -------
    float or ndarray of shape (M,)
    """
    pts = np.atleast_2d(np.asarray(eta, dtype=float))
    total = np.zeros(len(pts))
    for poly in _as_polygons(domain):
        starts, ends = poly.edges()
        for A, B in zip(starts, ends):
            d = B - A
            length = np.hypot(d[0], d[1])
            t = d / length
            a = A - pts
            b = B - pts
            alpha = a[:, 0] * t[1] - a[:, 1] * t[0]
            za = a @ t
            zb = b @ t
            total += segment_f(zb, alpha) - segment_f(za, alpha)
    return total if np.ndim(eta) > 1 else float(total[0])


def polygon_monomial_moment(domain, gamma, center=(0.0, 0.0)) -> float:
    """Exact ``∫_D (x - c_x)**p (y - c_y)**q dx`` with ``gamma = (p, q)``.

    Uses ``∫_D x^p y^q = ∮ x^(p+1) y^q / (p+1) dy``; along an edge the
    integrand is a polynomial of degree ``p + q + 1`` in the edge parameter
    and is integrated exactly by Gauss-Legendre.
    """
    p, q = (int(g) for g in gamma)
    if p < 0 or q < 0:
        raise ValueError("multi-index entries must be nonnegative")
    c = np.asarray(center, dtype=float)
    n = (p + q + 2) // 2 + 1
    t, wt = np.polynomial.legendre.leggauss(n)
    t = 0.5 * (t + 1.0)
    wt = 0.5 * wt
    total = 0.0
    for poly in _as_polygons(domain):
        starts, ends = poly.edges()
        for A, B in zip(starts - c, ends - c):
            x = A[0] + t * (B[0] - A[0])
            y = A[1] + t * (B[1] - A[1])
            total += (B[1] - A[1]) * float(np.sum(wt * x ** (p + 1) * y ** q)) / (p + 1)
    return total


def centered_moments(domain, exponents, centers) -> np.ndarray:
    """Moments ``∫_D (x - xi)^gamma`` for many centers ``xi`` at once.

    Raw moments about the origin are computed once and shifted with the
    binomial theorem.

    Returns
    -------
    ndarray, shape (len(centers), len(exponents))
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if len(exponents) == 0:
        return np.zeros((len(centers), 0))
    deg = max(p + q for p, q in exponents)
    raw = {(i, j): polygon_monomial_moment(domain, (i, j))
           for i in range(deg + 1) for j in range(deg + 1 - i)}
    out = np.zeros((len(centers), len(exponents)))
    cx, cy = centers[:, 0], centers[:, 1]
    for k, (p, q) in enumerate(exponents):
        for i in range(p + 1):
            for j in range(q + 1):
                out[:, k] += (comb(p, i) * comb(q, j) * raw[(i, j)]
                              * (-cx) ** (p - i) * (-cy) ** (q - j))
    return out


@dataclass
class QuadratureRule:
    """Nodes and weights of a quadrature rule.

    Attributes
    ----------
    nodes : ndarray, shape (M, 2)
    weights : ndarray, shape (M,)
    tag : str
        Human-readable description of the rule.
    factors : tuple, optional
        ``(xs, wx, ys, wy)`` when the rule is a tensor product, in which case
        ``nodes`` enumerates ``xs`` in the outer loop.
    """

    nodes: np.ndarray
    weights: np.ndarray
    tag: str = "gauss-legendre"
    factors: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.nodes) != len(self.weights):
            raise ValueError("nodes and weights must have the same length")

    def __len__(self) -> int:
        return len(self.weights)

    def integrate(self, f) -> float:
        """Apply the rule to a function of an ``(M, 2)`` point array."""
        return float(self.weights @ np.asarray(f(self.nodes), dtype=float))

    @staticmethod
    def concatenate(rules, tag=None) -> "QuadratureRule":
        rules = list(rules)
        if not rules:
            return QuadratureRule(np.zeros((0, 2)), np.zeros(0), tag or "empty")
        return QuadratureRule(np.vstack([r.nodes for r in rules]),
                              np.concatenate([r.weights for r in rules]),
                              tag or rules[0].tag)


def gauss_legendre_1d(breaks, order: int):
    """Composite Gauss-Legendre nodes and weights over consecutive ``breaks``."""
    breaks = np.asarray(breaks, dtype=float)
    if order < 1:
        raise ValueError("order must be at least 1")
    if np.any(np.diff(breaks) <= 0):
        raise ValueError("breakpoints must be strictly increasing")
    t, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * np.diff(breaks)
    mid = 0.5 * (breaks[1:] + breaks[:-1])
    nodes = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def tensor_gauss_legendre(xbreaks, ybreaks, order: int) -> QuadratureRule:
    """Tensor-product composite Gauss-Legendre rule on a rectangle."""
    xs, wx = gauss_legendre_1d(xbreaks, order)
    ys, wy = gauss_legendre_1d(ybreaks, order)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])
    weights = np.outer(wx, wy).ravel()
    return QuadratureRule(nodes, weights,
                          f"gauss-legendre(order={order}, panels={len(xbreaks) - 1}x{len(ybreaks) - 1})",
                          (xs, wx, ys, wy))


def gauss_legendre_cells(regions, panels_per_axis: int, order: int) -> QuadratureRule:
    """Union of tensor Gauss-Legendre rules, one per rectangle.

    Each rectangle is split into ``panels_per_axis`` equal panels per axis
    with ``order`` nodes per panel and axis, so the rule is exact for
    polynomials of degree ``2 * order - 1`` in each variable.
    """
    if isinstance(regions, Rect2):
        regions = [regions]
    rules = []
    for r in regions:
        rules.append(tensor_gauss_legendre(np.linspace(r.lo[0], r.hi[0], panels_per_axis + 1),
                                           np.linspace(r.lo[1], r.hi[1], panels_per_axis + 1),
                                           order))
    rule = QuadratureRule.concatenate(rules, f"gauss-legendre(order={order}, panels={panels_per_axis})")
    if len(rules) == 1:
        rule.factors = rules[0].factors
    return rule


def _rect_of(poly: Polygon):
    v = poly.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    r = Rect2(lo, hi)
    if len(v) == 4 and np.isclose(poly.signed_area, r.area, rtol=1e-14, atol=0):
        return r
    return None


def basis_weights(basis, domain, fallback: bool = False, gl_order: int = 10) -> np.ndarray:
    """Quadrature weights ``w_xi = ∫_D b_xi`` of every local Lagrange function.

    For thin-plate splines with ``m = 2`` the weights are exact:
    ``w_xi = sum_eta alpha_{eta,xi} J(eta) + sum_gamma beta_{gamma,xi} ∫_D (x - xi)^gamma``
    with ``J`` from :func:`polygon_tps_integral`. The rule
    ``Q(f) = sum f(xi) w_xi`` then integrates every function in the span of
    the basis exactly.

    Parameters
    ----------
    basis : BasisSet
    domain : Polygon, Rect2 or list of them
    fallback : bool
        For other kernels, compute the weights with a lattice-aligned
        Gauss-Legendre rule (rectangular domains only) instead of raising.
    """
    kernel = basis.kernel
    if getattr(kernel, "name", None) != "tps" or kernel.m != 2:
        if not fallback:
            raise ValueError("analytic weights require TPS m=2")
        warnings.warn("analytic weights require TPS m=2; using Gauss-Legendre weights",
                      RuntimeWarning, stacklevel=2)
        return _gl_weights(basis, domain, gl_order)
    J = polygon_tps_integral(_as_polygons(domain), basis.centers.points)
    w = basis.rbf_matrix().T @ J
    if basis.poly_coeffs.shape[1]:
        moments = centered_moments(_as_polygons(domain), basis.exponents, basis.center_points)
        w += np.sum(basis.poly_coeffs * moments, axis=1)
    return w


def _gl_weights(basis, domain, order):
    rects = []
    for poly in _as_polygons(domain):
        r = _rect_of(poly)
        if r is None:
            raise ValueError("Gauss-Legendre fallback weights support rectangles only")
        rects.append(r)
    s = basis.spacing_hint
    w = np.zeros(len(basis))
    for r in rects:
        nx = max(1, int(np.ceil(r.width / s)))
        ny = max(1, int(np.ceil(r.height / s)))
        rule = tensor_gauss_legendre(np.linspace(r.lo[0], r.hi[0], nx + 1),
                                     np.linspace(r.lo[1], r.hi[1], ny + 1), order)
        V = basis.function_values(rule.nodes)
        w += V.T @ rule.weights
    return w

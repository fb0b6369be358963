"""Manufactured volume-constrained nonlocal diffusion problems.

The nonlocal operator is

    L u(x) = ∫_{outer} (u(x) - u(y)) gamma(x, y) dy,

and the weak form ``a(u, v) = <f, v>`` with
``a(u, v) = 1/2 ∫∫ (u(x) - u(y)) (v(x) - v(y)) gamma(x, y) dy dx``
holds for ``f = 2 L u``. Manufactured sources therefore carry the factor 2.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import Rect2, unit_square_problem_domains
from .kernels import BumpKernel, ExponentialCoefficient, LinearCoefficient, NonlocalKernel
from .quadrature import gauss_legendre_1d

__all__ = [
    "ManufacturedProblem",
    "linear_problem",
    "exponential_problem",
    "manufacture_source",
    "apply_operator",
    "multiplier_exact",
    "piecewise_breaks",
]


@dataclass(frozen=True)
class ManufacturedProblem:
    """Exact solution, kernel and geometry of a test problem.

    Attributes
    ----------
    name : str
    exact : callable
        Exact solution on an ``(M, 2)`` array; must vanish outside ``inner``.
    kernel : NonlocalKernel
    inner, outer : Rect2
        Open region where the equation holds and the closed outer domain.
    """

    name: str
    exact: Callable
    kernel: NonlocalKernel
    inner: Rect2
    outer: Rect2

    @property
    def epsilon(self) -> float:
        return self.kernel.horizon


def _inside(points, inner):
    return inner.contains(points, strict=True, tol=0.0)


def linear_problem(epsilon: float = 0.125) -> ManufacturedProblem:
    """``u = (x(1-x))^1.5 (y(1-y))^1.5`` on the unit square with ``kappa = 1 + x + y``."""
    inner, outer = unit_square_problem_domains()

    def u(p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        x, y = p[:, 0], p[:, 1]
        inside = _inside(p, inner)
        xx = np.clip(x * (1 - x), 0, None)
        yy = np.clip(y * (1 - y), 0, None)
        return np.where(inside, (xx * yy) ** 1.5, 0.0)

    return ManufacturedProblem("linear", u, NonlocalKernel(BumpKernel(epsilon), LinearCoefficient()),
                               inner, outer)


def exponential_problem(epsilon: float = 0.125) -> ManufacturedProblem:
    """``u = sin(2 pi x) sin(2 pi y)`` on the unit square with ``kappa = exp(x + y)``."""
    inner, outer = unit_square_problem_domains()

    def u(p):
        p = np.atleast_2d(np.asarray(p, dtype=float))
        inside = _inside(p, inner)
        return np.where(inside, np.sin(2 * np.pi * p[:, 0]) * np.sin(2 * np.pi * p[:, 1]), 0.0)

    return ManufacturedProblem("exponential", u,
                               NonlocalKernel(BumpKernel(epsilon), ExponentialCoefficient()),
                               inner, outer)


def piecewise_breaks(lo, hi, cuts):
    """Sorted breakpoints of ``[lo, hi]`` including every cut strictly inside it."""
    inner = [c for c in cuts if lo < c < hi]
    return np.array([lo, *sorted(inner), hi], dtype=float)


def _box_rule(x, eps, clip: Rect2, cuts_x, cuts_y, panels, order):
    """Tensor Gauss-Legendre rule on the horizon box of ``x`` clipped to ``clip``.

    Sub-rectangles are split at the given cut lines so that functions with
    kinks along those lines are integrated piecewise smoothly.
    """
    box = Rect2(x - eps, x + eps).intersect(clip)
    if box is None:
        return None, None, None, None
    bx = piecewise_breaks(box.lo[0], box.hi[0], cuts_x)
    by = piecewise_breaks(box.lo[1], box.hi[1], cuts_y)
    bx = np.concatenate([np.linspace(a, b, panels + 1)[:-1] for a, b in zip(bx[:-1], bx[1:])] + [bx[-1:]])
    by = np.concatenate([np.linspace(a, b, panels + 1)[:-1] for a, b in zip(by[:-1], by[1:])] + [by[-1:]])
    xs, wx = gauss_legendre_1d(bx, order)
    ys, wy = gauss_legendre_1d(by, order)
    return xs, wx, ys, wy


def apply_operator(problem: ManufacturedProblem, points, order: int = 16, panels: int = 4):
    """``L u`` at arbitrary points by Gauss-Legendre quadrature.

    The horizon box around each point, clipped to the outer domain, is
    split along the edges of the inner region (where ``u`` may have a kink)
    and every piece gets ``panels x panels`` panels of ``order`` nodes.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k = problem.kernel
    cx = (problem.inner.lo[0], problem.inner.hi[0])
    cy = (problem.inner.lo[1], problem.inner.hi[1])
    ux = problem.exact(pts)
    out = np.zeros(len(pts))
    for i, x in enumerate(pts):
        xs, wx, ys, wy = _box_rule(x, k.horizon, problem.outer, cx, cy, panels, order)
        if xs is None:
            continue
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        nodes = np.column_stack([gx.ravel(), gy.ravel()])
        w = np.outer(wx, wy).ravel()
        out[i] = w @ ((ux[i] - problem.exact(nodes)) * k(x, nodes))
    return out


def manufacture_source(problem: ManufacturedProblem, points, order: int = 16, panels: int = 4):
    """Source ``f = 2 L u`` at ``points``, set to zero outside the inner region."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    f = np.zeros(len(pts))
    inside = _inside(pts, problem.inner)
    if np.any(inside):
        f[inside] = 2.0 * apply_operator(problem, pts[inside], order, panels)
    return f


def multiplier_exact(problem: ManufacturedProblem, points, order: int = 8, panels: int = 4):
    """Continuous multiplier ``lambda(x) = 2 ∫_inner gamma(x, y) u(y) dy``.

    This is the value that makes the strong form hold in the interaction
    region; it vanishes at points farther than the horizon from the inner
    region.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k = problem.kernel
    out = np.zeros(len(pts))
    for i, x in enumerate(pts):
        xs, wx, ys, wy = _box_rule(x, k.horizon, problem.inner, (), (), panels, order)
        if xs is None:
            continue
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        nodes = np.column_stack([gx.ravel(), gy.ravel()])
        w = np.outer(wx, wy).ravel()
        out[i] = 2.0 * (w @ (problem.exact(nodes) * k(x, nodes)))
    return out

"""Radial kernels, diffusion coefficients and the nonlocal interaction kernel."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from .geometry import Rect2

__all__ = [
    "tps_eval",
    "matern_eval",
    "matern_normalization",
    "TpsKernel",
    "MaternKernel",
    "BumpKernel",
    "LinearCoefficient",
    "ExponentialCoefficient",
    "ConstantCoefficient",
    "NonlocalKernel",
    "gamma_eval",
    "sigma",
    "make_rbf_kernel",
    "make_coefficient",
]


def tps_eval(m: int, r):
    """Thin-plate spline ``r**(2m-2) * log(r)`` in two dimensions.

    The value at ``r = 0`` is the limit 0.
    """
    if m < 2:
        raise ValueError("thin-plate spline order must satisfy m >= 2")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r > 0, r ** (2 * m - 2) * np.log(r), 0.0)
    return out if out.ndim else float(out)


def matern_normalization(m: int, n: int = 2) -> float:
    """Constant ``C`` making ``C * K_nu(r) * r**nu`` equal 1 at ``r = 0``.

    Here ``nu = m - n/2`` and ``K_nu(r) r**nu -> 2**(nu-1) Gamma(nu)`` as
    ``r -> 0`` for ``nu > 0``.
    """
    nu = m - n / 2
    if nu <= 0:
        raise ValueError("Matérn kernel requires m > n/2")
    return 1.0 / (2.0 ** (nu - 1) * gamma_fn(nu))


def matern_eval(m: int, r, n: int = 2):
    """Matérn kernel ``C * K_nu(r) * r**nu`` with ``nu = m - n/2``, normalized to 1 at 0."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    nu = m - n / 2
    c = matern_normalization(m, n)
    with np.errstate(invalid="ignore", over="ignore"):
        out = np.where(r > 0, c * kv(nu, r) * r ** nu, 1.0)
    # kv underflows to 0 for very large arguments, which is the correct limit.
    out = np.nan_to_num(out, nan=0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class TpsKernel:
    """Thin-plate spline of order ``m`` in the plane.

    Conditionally positive definite of order ``m``: interpolants carry a
    polynomial part of total degree ``m - 1``.
    """

    m: int = 2

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("thin-plate spline order must satisfy m >= 2")

    name = "tps"
    scale_invariant = True

    @property
    def poly_degree(self) -> int:
        return self.m - 1

    def __call__(self, r):
        return tps_eval(self.m, r)


@dataclass(frozen=True)
class MaternKernel:
    """Matérn kernel with smoothness ``m`` (positive definite, no polynomial part)."""

    m: int = 2

    def __post_init__(self):
        matern_normalization(self.m)

    name = "matern"
    scale_invariant = False
    poly_degree = -1

    def __call__(self, r):
        return matern_eval(self.m, r)


@dataclass(frozen=True)
class BumpKernel:
    """Compactly supported bump ``exp(-1 / (1 - r**2 / eps**2))`` for ``r < eps``."""

    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("horizon must be positive")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        t = 1.0 - (r / self.epsilon) ** 2
        with np.errstate(divide="ignore", over="ignore"):
            out = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        return out if out.ndim else float(out)


def _xy(points):
    p = np.asarray(points, dtype=float)
    return p[..., 0], p[..., 1]


@dataclass(frozen=True)
class LinearCoefficient:
    """Diffusion coefficient ``1 + x + y``."""

    name = "linear"

    def __call__(self, points):
        x, y = _xy(points)
        return 1.0 + x + y


@dataclass(frozen=True)
class ExponentialCoefficient:
    """Diffusion coefficient ``exp(x + y)``."""

    name = "exponential"

    def __call__(self, points):
        x, y = _xy(points)
        return np.exp(x + y)


@dataclass(frozen=True)
class ConstantCoefficient:
    """Constant diffusion coefficient."""

    value: float = 1.0
    name = "constant"

    def __call__(self, points):
        x, _ = _xy(points)
        return np.full(np.shape(x), float(self.value))


@dataclass(frozen=True)
class NonlocalKernel:
    """Interaction kernel ``(kappa(x) + kappa(y)) * bump(|x - y|)``."""

    bump: BumpKernel
    kappa: object

    @property
    def horizon(self) -> float:
        return self.bump.epsilon

    def __call__(self, x, y):
        """Kernel values for broadcastable point arrays ``x`` and ``y``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r = np.sqrt(np.sum((x - y) ** 2, axis=-1))
        # Floating-point addition commutes, so gamma(x, y) == gamma(y, x) bitwise.
        return (self.kappa(x) + self.kappa(y)) * self.bump(r)


def gamma_eval(k: NonlocalKernel, x, y) -> float:
    """Kernel value for a single pair of points."""
    return float(k(np.asarray(x, dtype=float), np.asarray(y, dtype=float)))


def sigma(k: NonlocalKernel, x, domain: Rect2, panels: int = 8, order: int = 12):
    """Kernel row integral ``∫_domain gamma(x, y) dy``.

    The integral runs over the horizon box around ``x`` clipped to
    ``domain`` with a tensor Gauss-Legendre rule of ``panels`` panels per
    axis and ``order`` nodes per panel.

    Parameters
    ----------
    x : array_like, shape (2,) or (M, 2)

    Returns
    -------
    float or ndarray
    """
    from .quadrature import tensor_gauss_legendre

    pts = np.atleast_2d(np.asarray(x, dtype=float))
    eps = k.horizon
    out = np.empty(len(pts))
    for i, p in enumerate(pts):
        box = Rect2(p - eps, p + eps).intersect(domain)
        if box is None:
            out[i] = 0.0
            continue
        rule = tensor_gauss_legendre(np.linspace(box.lo[0], box.hi[0], panels + 1),
                                     np.linspace(box.lo[1], box.hi[1], panels + 1), order)
        out[i] = rule.weights @ k(p, rule.nodes)
    return out if np.ndim(x) > 1 else float(out[0])


def make_rbf_kernel(name: str = "tps", m: int = 2):
    """Kernel from its config name (``tps`` or ``matern``)."""
    name = name.lower()
    if name == "tps":
        return TpsKernel(int(m))
    if name == "matern":
        return MaternKernel(int(m))
    raise ValueError(f"unknown kernel {name!r}")


def make_coefficient(name: str, value: float = 1.0):
    """Diffusion coefficient from its config name."""
    name = name.lower()
    if name == "linear":
        return LinearCoefficient()
    if name == "exponential":
        return ExponentialCoefficient()
    if name == "constant":
        return ConstantCoefficient(float(value))
    raise ValueError(f"unknown diffusion coefficient {name!r}")

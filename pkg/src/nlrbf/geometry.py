"""Rectangles, polygons, center sets and fill-distance metrics.

Centers live in the plane. A problem is described by an *inner* open
rectangle Ω where the equation holds and a closed *outer* rectangle Ω̄ that
contains it; the frame Ω̄ minus Ω is the interaction region where the
volume constraint is imposed. Centers outside Ω̄ form an extension band
that only serves as neighbors for local Lagrange functions near the outer
boundary.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import GeometryError

__all__ = [
    "Region",
    "Rect2",
    "Polygon",
    "Lattice",
    "CenterSet",
    "classify_point",
    "classify_points",
    "frame_rectangles",
    "generate_grid",
    "mesh_metrics",
    "separation_radius",
    "unit_square_problem_domains",
]

#: Relative tolerance used to decide that a coordinate sits on a boundary.
BOUNDARY_TOL = 1e-12


class Region(enum.IntEnum):
    """Region tag of a center."""

    INTERIOR = 0
    INTERACTION = 1
    EXTERIOR = 2

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "Region":
        try:
            return cls[label.strip().upper()]
        except KeyError:
            raise GeometryError(f"unknown region tag {label!r}") from None


@dataclass(frozen=True)
class Rect2:
    """Axis-aligned rectangle ``[lo[0], hi[0]] x [lo[1], hi[1]]``."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 2 or len(hi) != 2:
            raise GeometryError("Rect2 corners must be 2D points")
        if not (lo[0] < hi[0] and lo[1] < hi[1]):
            raise GeometryError(f"Rect2 requires lo < hi componentwise, got {lo}, {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def width(self) -> float:
        return self.hi[0] - self.lo[0]

    @property
    def height(self) -> float:
        return self.hi[1] - self.lo[1]

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def scale(self) -> float:
        """Largest side length, used to make tolerances relative."""
        return max(self.width, self.height, abs(self.lo[0]), abs(self.lo[1]),
                   abs(self.hi[0]), abs(self.hi[1]))

    def contains(self, points, strict=False, tol=BOUNDARY_TOL):
        """Membership test for an ``(M, 2)`` array of points.

        With ``strict=True`` the open rectangle is tested and points within
        ``tol * scale`` of the boundary count as outside; otherwise the
        closed rectangle is tested and such points count as inside.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        t = tol * self.scale
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        if strict:
            return np.all((p > lo + t) & (p < hi - t), axis=1)
        return np.all((p >= lo - t) & (p <= hi + t), axis=1)

    def intersect(self, other: "Rect2"):
        """Intersection with another rectangle, or ``None`` if it has no area."""
        lo = (max(self.lo[0], other.lo[0]), max(self.lo[1], other.lo[1]))
        hi = (min(self.hi[0], other.hi[0]), min(self.hi[1], other.hi[1]))
        if lo[0] >= hi[0] or lo[1] >= hi[1]:
            return None
        return Rect2(lo, hi)

    def as_polygon(self) -> "Polygon":
        (x0, y0), (x1, y1) = self.lo, self.hi
        return Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


def _segments_cross(p1, p2, p3, p4) -> bool:
    """True when closed segments p1p2 and p3p4 intersect."""

    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if v == 0 else (1 if v > 0 else -1)

    def on_seg(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    o1, o2 = orient(p1, p2, p3), orient(p1, p2, p4)
    o3, o4 = orient(p3, p4, p1), orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_seg(p1, p2, p3)) or (o2 == 0 and on_seg(p1, p2, p4))
            or (o3 == 0 and on_seg(p3, p4, p1)) or (o4 == 0 and on_seg(p3, p4, p2)))


@dataclass(frozen=True)
class Polygon:
    """Simple polygon with counterclockwise vertices.

    The chain is closed implicitly: the last edge joins the final vertex to
    the first one. A repeated closing vertex is dropped.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise GeometryError("polygon vertices must be an (n, 2) array")
        if len(v) > 1 and np.array_equal(v[0], v[-1]):
            v = v[:-1]
        if len(v) < 3:
            raise GeometryError("polygon needs at least 3 vertices")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        if self.signed_area <= 0:
            raise GeometryError("polygon must be counterclockwise with positive area")
        if not self._is_simple():
            raise GeometryError("polygon is self-intersecting")

    def _is_simple(self) -> bool:
        v = self.vertices
        n = len(v)
        for i in range(n):
            a, b = v[i], v[(i + 1) % n]
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or j == (i + 1) % n:
                    continue
                if _segments_cross(a, b, v[j], v[(j + 1) % n]):
                    return False
        return True

    @property
    def signed_area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    def edges(self):
        """Return ``(starts, ends)`` arrays of shape ``(n, 2)``."""
        return self.vertices, np.roll(self.vertices, -1, axis=0)

    def translated(self, shift) -> "Polygon":
        return Polygon(self.vertices + np.asarray(shift, dtype=float))


def frame_rectangles(inner: Rect2, outer: Rect2) -> list:
    """Split ``outer`` minus ``inner`` into at most eight rectangles.

    The pieces are the four corners and the four edge strips of the frame;
    pieces with zero area are skipped.
    """
    xs = [outer.lo[0], inner.lo[0], inner.hi[0], outer.hi[0]]
    ys = [outer.lo[1], inner.lo[1], inner.hi[1], outer.hi[1]]
    if not (xs[0] <= xs[1] < xs[2] <= xs[3] and ys[0] <= ys[1] < ys[2] <= ys[3]):
        raise GeometryError("inner rectangle must lie inside the outer one")
    pieces = []
    for i in range(3):
        for j in range(3):
            if i == 1 and j == 1:
                continue
            if xs[i] < xs[i + 1] and ys[j] < ys[j + 1]:
                pieces.append(Rect2((xs[i], ys[j]), (xs[i + 1], ys[j + 1])))
    return pieces


def classify_points(points, inner: Rect2, outer: Rect2, tol=BOUNDARY_TOL) -> np.ndarray:
    """Vectorized region tags for an ``(M, 2)`` array.

    Interior means strictly inside the open ``inner`` rectangle; points on
    its boundary belong to the interaction region. Interaction means inside
    the closed ``outer`` rectangle but not interior. Everything else is
    exterior. Boundary decisions use a tolerance of ``tol`` times the
    rectangle scale so that grid points computed in floating point land on
    the intended side.
    """
    p = np.atleast_2d(np.asarray(points, dtype=float))
    tags = np.full(len(p), Region.EXTERIOR, dtype=np.int8)
    tags[outer.contains(p, strict=False, tol=tol)] = Region.INTERACTION
    tags[inner.contains(p, strict=True, tol=tol)] = Region.INTERIOR
    return tags


def classify_point(x, inner: Rect2, outer: Rect2) -> Region:
    """Region tag of a single point.

    Examples
    --------
    >>> inner, outer = unit_square_problem_domains()
    >>> classify_point((1.0, 0.5), inner, outer).label
    'interaction'
    """
    return Region(int(classify_points([x], inner, outer)[0]))


def unit_square_problem_domains():
    """The standard test layout: Ω = (0, 1)² inside Ω̄ = [-1/4, 5/4]²."""
    return Rect2((0.0, 0.0), (1.0, 1.0)), Rect2((-0.25, -0.25), (1.25, 1.25))


@dataclass(frozen=True)
class Lattice:
    """Uniform tensor lattice ``origin + spacing * (i, j)``.

    Point ``(i, j)`` has flat index ``i * shape[1] + j``.
    """

    origin: tuple
    spacing: float
    shape: tuple

    def points(self) -> np.ndarray:
        i = np.arange(self.shape[0])
        j = np.arange(self.shape[1])
        ii, jj = np.meshgrid(i, j, indexing="ij")
        x = self.origin[0] + self.spacing * ii.ravel()
        y = self.origin[1] + self.spacing * jj.ravel()
        return np.column_stack([x, y])


def separation_radius(points) -> float:
    """Half the smallest pairwise distance."""
    p = np.asarray(points, dtype=float)
    if len(p) < 2:
        return np.inf
    d, _ = cKDTree(p).query(p, k=2)
    return 0.5 * float(d[:, 1].min())


def mesh_metrics(points, domain: Rect2, probe_spacing=None):
    """Fill distance, separation radius and mesh ratio.

    Parameters
    ----------
    points : array_like or CenterSet
        Centers. For a :class:`CenterSet` only the centers inside ``domain``
        are used.
    domain : Rect2
        Region over which the fill distance is measured.
    probe_spacing : float, optional
        Spacing of the probe grid; defaults to ``q / 4``.

    Returns
    -------
    h, q, rho : float
        ``h`` is the largest distance from a probe point to its nearest
        center, ``q`` the separation radius and ``rho = h / q``.
    """
    if isinstance(points, CenterSet):
        p = points.points[domain.contains(points.points)]
    else:
        p = np.asarray(points, dtype=float)
    if len(p) == 0:
        raise GeometryError("no centers inside the domain")
    q = separation_radius(p)
    if q == 0:
        raise GeometryError("q = 0: duplicate centers")
    if probe_spacing is None:
        probe_spacing = q / 4 if np.isfinite(q) else min(domain.width, domain.height) / 64
    nx = int(np.ceil(domain.width / probe_spacing)) + 1
    ny = int(np.ceil(domain.height / probe_spacing)) + 1
    tree = cKDTree(p)
    xs = np.linspace(domain.lo[0], domain.hi[0], nx)
    ys = np.linspace(domain.lo[1], domain.hi[1], ny)
    h = 0.0
    # Row blocks keep the probe array small at fine spacings.
    block = max(1, 400_000 // ny)
    for start in range(0, nx, block):
        gx, gy = np.meshgrid(xs[start:start + block], ys, indexing="ij")
        d, _ = tree.query(np.column_stack([gx.ravel(), gy.ravel()]))
        h = max(h, float(d.max()))
    return h, q, h / q


@dataclass(frozen=True)
class CenterSet:
    """Centers with region tags and geometry metrics.

    Attributes
    ----------
    points : ndarray, shape (M, 2)
    regions : ndarray of int8, shape (M,)
        Values of :class:`Region`.
    fill_distance, separation : float
        Metrics of the in-domain centers (tags other than exterior).
    lattice : Lattice, optional
        Set when the points are exactly the nodes of a uniform lattice in
        flat-index order; enables fast convolution-based evaluation.
    """

    points: np.ndarray
    regions: np.ndarray
    fill_distance: float = np.nan
    separation: float = np.nan
    lattice: Lattice | None = field(default=None, compare=False)

    def __post_init__(self):
        p = np.ascontiguousarray(self.points, dtype=float)
        r = np.asarray(self.regions, dtype=np.int8)
        if p.ndim != 2 or p.shape[1] != 2 or len(r) != len(p):
            raise GeometryError("points must be (M, 2) with one region tag each")
        p.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "regions", r)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def mesh_ratio(self) -> float:
        return self.fill_distance / self.separation

    @property
    def domain_indices(self) -> np.ndarray:
        """Indices of centers inside the outer domain, in increasing order."""
        return np.flatnonzero(self.regions != Region.EXTERIOR)

    def indices_of(self, region: Region) -> np.ndarray:
        return np.flatnonzero(self.regions == region)

    def save(self, path) -> None:
        """Write ``x y region_tag`` lines with 17 significant digits."""
        with open(path, "w") as fh:
            for (x, y), tag in zip(self.points, self.regions):
                fh.write(f"{x:.17g} {y:.17g} {Region(int(tag)).label}\n")

    @classmethod
    def load(cls, path, domain: Rect2 | None = None) -> "CenterSet":
        """Read a file written by :meth:`save`.

        Metrics are recomputed over ``domain`` when it is given and left as
        NaN otherwise. Lattice metadata is not stored in the file.
        """
        pts, tags = [], []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            x, y, tag = line.split()
            pts.append((float(x), float(y)))
            tags.append(Region.from_label(tag))
        pts = np.array(pts, dtype=float).reshape(-1, 2)
        h = q = np.nan
        if domain is not None:
            h, q, _ = mesh_metrics(pts[np.array(tags) != Region.EXTERIOR], domain)
        return cls(pts, np.array(tags, dtype=np.int8), h, q)


def generate_grid(domain: Rect2, spacing: float, extension_band: float = 0.0,
                  inner: Rect2 | None = None) -> CenterSet:
    """Uniform grid ``domain.lo + spacing * k`` plus an optional extension band.

    Parameters
    ----------
    domain : Rect2
        Closed outer domain. Grid nodes with ``lo + spacing * k <= hi`` are in
        the domain; the far edge is hit only when the extent is a multiple of
        the spacing.
    spacing : float
        Grid spacing.
    extension_band : float
        Width of the band of extra (exterior) nodes added on every side.
    inner : Rect2, optional
        Open inner region. Nodes strictly inside it are tagged interior and
        the remaining in-domain nodes interaction. Without it, every
        in-domain node is tagged interior.

    Returns
    -------
    CenterSet
        Points in lattice order with measured fill distance and separation
        of the in-domain nodes.
    """
    spacing = float(spacing)
    if not spacing > 0:
        raise GeometryError("spacing must be positive")
    if spacing > min(domain.width, domain.height):
        raise GeometryError("degenerate grid: spacing larger than domain extent")
    if extension_band < 0:
        raise GeometryError("extension band must be nonnegative")
    n_in = [int(np.floor(domain.width / spacing + 1e-9)) + 1,
            int(np.floor(domain.height / spacing + 1e-9)) + 1]
    nb = int(np.ceil(extension_band / spacing - 1e-9)) if extension_band > 0 else 0
    shape = (n_in[0] + 2 * nb, n_in[1] + 2 * nb)
    ii, jj = np.meshgrid(np.arange(shape[0]) - nb, np.arange(shape[1]) - nb, indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    pts = np.column_stack([domain.lo[0] + spacing * ii, domain.lo[1] + spacing * jj])
    in_domain = (ii >= 0) & (ii < n_in[0]) & (jj >= 0) & (jj < n_in[1])
    regions = np.full(len(pts), Region.EXTERIOR, dtype=np.int8)
    if inner is None:
        regions[in_domain] = Region.INTERIOR
    else:
        inside = inner.contains(pts, strict=True)
        regions[in_domain] = Region.INTERACTION
        regions[in_domain & inside] = Region.INTERIOR
    h, q, _ = mesh_metrics(pts[in_domain], domain, probe_spacing=spacing / 8)
    lattice = Lattice((domain.lo[0] - nb * spacing, domain.lo[1] - nb * spacing), spacing, shape)
    return CenterSet(pts, regions, h, q, lattice)

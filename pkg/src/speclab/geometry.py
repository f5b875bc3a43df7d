"""Planar domains: rectangles, disks, and simple polygons.

Value objects describing the domains the rest of the package computes on.
Each domain knows point membership (open set), exact Euclidean distance to
its boundary, its area, and how to rescale itself to unit area.  All types
are immutable and safe to share across threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

Point = tuple[float, float]

# Points closer than this to an edge are treated as boundary (excluded).
_EDGE_TOL = 1e-12


class GeometryError(ValueError):
    """Invalid domain description or point outside the domain."""


def _validate_positive(name: str, value: float) -> None:
    if not (value > 0.0) or not math.isfinite(value):
        raise GeometryError(f"{name} must be strictly positive, got {value!r}")


@dataclass(frozen=True)
class Rectangle:
    """Axis-aligned open rectangle (0, lx) x (0, ly)."""

    lx: float
    ly: float

    kind = "rectangle"

    def __post_init__(self) -> None:
        _validate_positive("lx", self.lx)
        _validate_positive("ly", self.ly)

    def volume(self) -> float:
        return self.lx * self.ly

    def contains(self, p: Point) -> bool:
        x, y = p
        if not (math.isfinite(x) and math.isfinite(y)):
            raise GeometryError(f"point must be finite, got {p!r}")
        return 0.0 < x < self.lx and 0.0 < y < self.ly

    def boundary_distance(self, p: Point) -> float:
        if not self.contains(p):
            raise GeometryError(f"point {p!r} is not inside the domain")
        x, y = p
        return min(x, self.lx - x, y, self.ly - y)

    def rescale_to_unit_volume(self) -> tuple["Rectangle", float]:
        s = 1.0 / math.sqrt(self.volume())
        return Rectangle(self.lx * s, self.ly * s), s

    def bounding_box(self) -> tuple[float, float, float, float]:
        return 0.0, 0.0, self.lx, self.ly

    def diameter(self) -> float:
        return math.hypot(self.lx, self.ly)

    def perimeter(self) -> float:
        return 2.0 * (self.lx + self.ly)

    def as_config(self) -> dict:
        return {"kind": "rectangle", "lx": self.lx, "ly": self.ly}


@dataclass(frozen=True)
class Disk:
    """Open disk of radius r centered at the origin."""

    r: float

    kind = "disk"

    def __post_init__(self) -> None:
        _validate_positive("r", self.r)

    def volume(self) -> float:
        return math.pi * self.r * self.r

    def contains(self, p: Point) -> bool:
        x, y = p
        if not (math.isfinite(x) and math.isfinite(y)):
            raise GeometryError(f"point must be finite, got {p!r}")
        return math.hypot(x, y) < self.r

    def boundary_distance(self, p: Point) -> float:
        if not self.contains(p):
            raise GeometryError(f"point {p!r} is not inside the domain")
        return self.r - math.hypot(*p)

    def rescale_to_unit_volume(self) -> tuple["Disk", float]:
        s = 1.0 / math.sqrt(self.volume())
        return Disk(self.r * s), s

    def bounding_box(self) -> tuple[float, float, float, float]:
        return -self.r, -self.r, self.r, self.r

    def diameter(self) -> float:
        return 2.0 * self.r

    def perimeter(self) -> float:
        return 2.0 * math.pi * self.r

    def as_config(self) -> dict:
        return {"kind": "disk", "r": self.r}


def _segments(vertices: tuple[Point, ...]):
    n = len(vertices)
    for i in range(n):
        yield vertices[i], vertices[(i + 1) % n]


def _point_segment_distance(p: Point, a: Point, b: Point) -> float:
    px, py = p
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    if seg2 == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / seg2
    t = min(1.0, max(0.0, t))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _proper_intersection(a: Point, b: Point, c: Point, d: Point) -> bool:
    # Strict crossing test between open segments ab and cd.
    def orient(p, q, r):
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    o1, o2 = orient(a, b, c), orient(a, b, d)
    o3, o4 = orient(c, d, a), orient(c, d, b)
    return (o1 * o2 < 0.0) and (o3 * o4 < 0.0)


@dataclass(frozen=True, init=False)
class Polygon:
    """Simple (non-self-intersecting) polygon given by its vertex cycle.

    Membership uses even-odd ray casting; points within 1e-12 of an edge
    count as boundary and are excluded from the open set.
    """

    vertices: tuple[Point, ...]

    kind = "polygon"

    def __init__(self, vertices) -> None:
        verts = tuple((float(x), float(y)) for x, y in vertices)
        if len(verts) < 3:
            raise GeometryError(f"polygon needs >= 3 vertices, got {len(verts)}")
        object.__setattr__(self, "vertices", verts)
        for x, y in verts:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise GeometryError("polygon vertices must be finite")
        if abs(self._signed_area()) <= 0.0:
            raise GeometryError("polygon has zero area")
        self._check_simple()

    def _signed_area(self) -> float:
        acc = 0.0
        for (ax, ay), (bx, by) in _segments(self.vertices):
            acc += ax * by - bx * ay
        return 0.5 * acc

    def _check_simple(self) -> None:
        segs = list(_segments(self.vertices))
        n = len(segs)
        for i in range(n):
            for j in range(i + 1, n):
                if j == i or (j + 1) % n == i or (i + 1) % n == j:
                    continue  # adjacent edges share a vertex, skip
                if _proper_intersection(*segs[i], *segs[j]):
                    raise GeometryError("polygon is self-intersecting")

    def volume(self) -> float:
        return abs(self._signed_area())

    def _edge_distance(self, p: Point) -> float:
        return min(_point_segment_distance(p, a, b) for a, b in _segments(self.vertices))

    def contains(self, p: Point) -> bool:
        x, y = p
        if not (math.isfinite(x) and math.isfinite(y)):
            raise GeometryError(f"point must be finite, got {p!r}")
        if self._edge_distance(p) <= _EDGE_TOL:
            return False
        inside = False
        for (ax, ay), (bx, by) in _segments(self.vertices):
            if (ay > y) != (by > y):
                x_cross = ax + (y - ay) * (bx - ax) / (by - ay)
                if x < x_cross:
                    inside = not inside
        return inside

    def boundary_distance(self, p: Point) -> float:
        if not self.contains(p):
            raise GeometryError(f"point {p!r} is not inside the domain")
        return self._edge_distance(p)

    def rescale_to_unit_volume(self) -> tuple["Polygon", float]:
        s = 1.0 / math.sqrt(self.volume())
        return Polygon(tuple((x * s, y * s) for x, y in self.vertices)), s

    def bounding_box(self) -> tuple[float, float, float, float]:
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)

    def diameter(self) -> float:
        vs = self.vertices
        return max(
            math.hypot(a[0] - b[0], a[1] - b[1]) for a in vs for b in vs
        )

    def perimeter(self) -> float:
        return sum(
            math.hypot(b[0] - a[0], b[1] - a[1]) for a, b in _segments(self.vertices)
        )

    def as_config(self) -> dict:
        return {"kind": "polygon", "vertices": [list(v) for v in self.vertices]}


Domain = Rectangle | Disk | Polygon


def l_shape(side: float = 1.0) -> Polygon:
    """Square of the given side with its top-right quarter removed.

    The canonical non-convex test domain: a re-entrant corner at the
    center stresses both membership tests and eigensolvers.
    """
    s = side
    h = 0.5 * side
    return Polygon([(0, 0), (s, 0), (s, h), (h, h), (h, s), (0, s)])


def domain_from_config(cfg: dict) -> Domain:
    """Build a domain from its configuration mapping (kind tag + fields)."""
    try:
        kind = cfg["kind"]
    except KeyError:
        raise GeometryError("domain config needs a 'kind' field") from None
    try:
        if kind == "rectangle":
            return Rectangle(float(cfg["lx"]), float(cfg["ly"]))
        if kind == "disk":
            return Disk(float(cfg["r"]))
        if kind == "polygon":
            return Polygon(cfg["vertices"])
        if kind == "l-shape":
            return l_shape(float(cfg.get("size", 1.0)))
    except KeyError as exc:
        raise GeometryError(f"domain kind {kind!r} needs a {exc.args[0]!r} field") from None
    raise GeometryError(f"unknown domain kind {kind!r}")

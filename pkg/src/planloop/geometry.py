"""Exact 2D predicates over convex polygons, segments, and waypoint paths.

Coordinates are arbitrary-precision rationals, so every predicate here is an
exact decision rather than a tolerance check. Obstacles are closed sets:
touching a boundary counts as a collision.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Iterator, Sequence

MAX_DECIMAL_DIGITS = 12
_COORD_SCALE = 10**MAX_DECIMAL_DIGITS

# Clearance used by the planner oracle and hint placement, expressed as a
# fraction of the workspace diagonal.
DEFAULT_EPSILON = Fraction(1, 1000)


class EmptyPath(ValueError):
    """A path operation was given zero waypoints."""


def as_coord(value: object) -> Fraction:
    """Convert a decimal-like value to an exact rational coordinate.

    Accepts ints, decimal strings, Decimals, floats (via their shortest
    repr), and Fractions. Values needing more than ``MAX_DECIMAL_DIGITS``
    fractional digits are an input error, not something to round silently.
    """
    if isinstance(value, bool):
        raise TypeError(f"not a coordinate: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, Fraction):
        frac = value
    else:
        if isinstance(value, float):
            value = repr(value)
        if isinstance(value, Decimal):
            dec = value
        elif isinstance(value, str):
            try:
                dec = Decimal(value)
            except InvalidOperation as exc:
                raise ValueError(f"not a decimal coordinate: {value!r}") from exc
        else:
            raise TypeError(f"not a coordinate: {value!r}")
        if not dec.is_finite():
            raise ValueError(f"coordinate must be finite: {value!r}")
        frac = Fraction(dec)
    if _COORD_SCALE % frac.denominator != 0:
        raise ValueError(
            f"coordinate {value!r} needs more than {MAX_DECIMAL_DIGITS} fractional digits"
        )
    return frac


def quantize(value: Fraction, digits: int = 9) -> Fraction:
    """Round a rational to the nearest multiple of 10^-digits (ties to even)."""
    scale = 10**digits
    return Fraction(round(value * scale), scale)


def fmt_coord(value: Fraction) -> str:
    """Render a rational with a power-of-ten denominator as a decimal string."""
    num, den = value.numerator, value.denominator
    if den == 1:
        return str(num)
    twos = fives = 0
    rest = den
    while rest % 2 == 0:
        rest //= 2
        twos += 1
    while rest % 5 == 0:
        rest //= 5
        fives += 1
    if rest != 1:
        raise ValueError(f"{value} has no finite decimal representation")
    digits = max(twos, fives)
    scaled = abs(num) * 10**digits // den
    text = str(scaled).rjust(digits + 1, "0")
    whole, frac = text[:-digits], text[-digits:]
    frac = frac.rstrip("0")
    sign = "-" if num < 0 else ""
    return f"{sign}{whole}.{frac}" if frac else f"{sign}{whole}"


@dataclass(frozen=True, order=True)
class Point:
    x: Fraction
    y: Fraction

    @classmethod
    def of(cls, x: object, y: object) -> "Point":
        return cls(as_coord(x), as_coord(y))

    def translate(self, dx: Fraction, dy: Fraction) -> "Point":
        return Point(self.x + dx, self.y + dy)

    def as_floats(self) -> tuple[float, float]:
        return float(self.x), float(self.y)

    def __str__(self) -> str:
        return f"({fmt_coord(self.x)}, {fmt_coord(self.y)})"


def decimal_safe(p: Point, digits: int = 9) -> Point:
    """Return p unchanged if both coordinates have finite decimal forms, else quantize."""

    def ok(f: Fraction) -> bool:
        d = f.denominator
        while d % 2 == 0:
            d //= 2
        while d % 5 == 0:
            d //= 5
        return d == 1

    if ok(p.x) and ok(p.y):
        return p
    return Point(quantize(p.x, digits), quantize(p.y, digits))


@dataclass(frozen=True)
class Segment:
    a: Point
    b: Point

    def is_degenerate(self) -> bool:
        return self.a == self.b


def _cross(o: Point, a: Point, b: Point) -> Fraction:
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)


@dataclass(frozen=True)
class ConvexPolygon:
    """Strictly convex polygon with CCW vertices and a derived half-plane form.

    The region is closed: {p : n . p <= c} for every half-plane (n, c).
    """

    vertices: tuple[Point, ...]

    def __post_init__(self) -> None:
        verts = self.vertices
        if len(verts) < 3:
            raise ValueError("a convex polygon needs at least 3 vertices")
        n = len(verts)
        for i in range(n):
            cross = _cross(verts[i], verts[(i + 1) % n], verts[(i + 2) % n])
            if cross <= 0:
                raise ValueError(
                    "vertices must be strictly convex in counter-clockwise order"
                )

    @classmethod
    def from_points(cls, points: Iterable[object]) -> "ConvexPolygon":
        """Build a polygon from raw vertices, normalizing the representation.

        Accepts Points or (x, y) pairs of decimal-likes. Consecutive
        duplicates and collinear vertices are dropped, and clockwise input is
        reversed; genuinely non-convex input raises ValueError.
        """
        verts: list[Point] = []
        for item in points:
            if isinstance(item, Point):
                verts.append(item)
            else:
                x, y = item  # type: ignore[misc]
                verts.append(Point.of(x, y))
        # drop consecutive duplicates, including around the wrap
        deduped: list[Point] = []
        for v in verts:
            if not deduped or v != deduped[-1]:
                deduped.append(v)
        if len(deduped) > 1 and deduped[0] == deduped[-1]:
            deduped.pop()
        if len(deduped) < 3:
            raise ValueError("a convex polygon needs at least 3 distinct vertices")
        area2 = sum(
            deduped[i].x * deduped[(i + 1) % len(deduped)].y
            - deduped[(i + 1) % len(deduped)].x * deduped[i].y
            for i in range(len(deduped))
        )
        if area2 == 0:
            raise ValueError("polygon has zero area")
        if area2 < 0:
            deduped.reverse()
        # drop collinear vertices until stable
        changed = True
        while changed and len(deduped) >= 3:
            changed = False
            for i in range(len(deduped)):
                prev = deduped[i - 1]
                cur = deduped[i]
                nxt = deduped[(i + 1) % len(deduped)]
                if _cross(prev, cur, nxt) == 0:
                    del deduped[i]
                    changed = True
                    break
        return cls(tuple(deduped))

    @cached_property
    def halfplanes(self) -> tuple[tuple[Fraction, Fraction, Fraction], ...]:
        planes = []
        n = len(self.vertices)
        for i in range(n):
            a = self.vertices[i]
            b = self.vertices[(i + 1) % n]
            ex, ey = b.x - a.x, b.y - a.y
            nx, ny = ey, -ex  # outward normal for CCW orientation
            planes.append((nx, ny, nx * a.x + ny * a.y))
        return tuple(planes)

    @cached_property
    def bbox(self) -> tuple[Fraction, Fraction, Fraction, Fraction]:
        xs = [v.x for v in self.vertices]
        ys = [v.y for v in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)

    def edges(self) -> Iterator[Segment]:
        n = len(self.vertices)
        for i in range(n):
            yield Segment(self.vertices[i], self.vertices[(i + 1) % n])

    def translate(self, dx: Fraction, dy: Fraction) -> "ConvexPolygon":
        return ConvexPolygon(tuple(v.translate(dx, dy) for v in self.vertices))


def contains(poly: ConvexPolygon, p: Point) -> bool:
    """Closed containment: boundary points count as inside."""
    return all(nx * p.x + ny * p.y <= c for nx, ny, c in poly.halfplanes)


def contains_strict(poly: ConvexPolygon, p: Point) -> bool:
    """Open containment: true only for interior points."""
    return all(nx * p.x + ny * p.y < c for nx, ny, c in poly.halfplanes)


def segment_intersects(seg: Segment, poly: ConvexPolygon) -> bool:
    """Exact closed intersection test between a segment and a convex polygon.

    Decided as one-variable linear feasibility: the segment parameter t must
    satisfy every half-plane constraint; the polygon is hit iff the
    intersection of the per-half-plane t-intervals meets [0, 1].
    """
    lo, hi = Fraction(0), Fraction(1)
    dx = seg.b.x - seg.a.x
    dy = seg.b.y - seg.a.y
    for nx, ny, c in poly.halfplanes:
        alpha = nx * seg.a.x + ny * seg.a.y
        beta = nx * dx + ny * dy
        if beta == 0:
            if alpha > c:
                return False
        elif beta > 0:
            bound = (c - alpha) / beta
            if bound < hi:
                hi = bound
        else:
            bound = (c - alpha) / beta
            if bound > lo:
                lo = bound
        if lo > hi:
            return False
    return True


def polygons_intersect(a: ConvexPolygon, b: ConvexPolygon) -> bool:
    """Exact closed intersection test between two convex polygons (SAT)."""
    for poly in (a, b):
        for nx, ny, _ in poly.halfplanes:
            amin, amax = _project(a, nx, ny)
            bmin, bmax = _project(b, nx, ny)
            if amax < bmin or bmax < amin:
                return False
    return True


def _project(poly: ConvexPolygon, nx: Fraction, ny: Fraction) -> tuple[Fraction, Fraction]:
    values = [nx * v.x + ny * v.y for v in poly.vertices]
    return min(values), max(values)


def _segment_distance_squared(a: Point, b: Point, p: Point) -> Fraction:
    abx, aby = b.x - a.x, b.y - a.y
    apx, apy = p.x - a.x, p.y - a.y
    denom = abx * abx + aby * aby
    if denom == 0:
        return apx * apx + apy * apy
    t = (apx * abx + apy * aby) / denom
    if t < 0:
        t = Fraction(0)
    elif t > 1:
        t = Fraction(1)
    cx = a.x + t * abx
    cy = a.y + t * aby
    return (p.x - cx) ** 2 + (p.y - cy) ** 2


def distance_squared(poly: ConvexPolygon, p: Point) -> Fraction:
    """Exact squared Euclidean distance from a point to a closed polygon."""
    if contains(poly, p):
        return Fraction(0)
    return min(_segment_distance_squared(e.a, e.b, p) for e in poly.edges())


def centroid(poly: ConvexPolygon) -> Point:
    n = len(poly.vertices)
    x = sum(v.x for v in poly.vertices) / n
    y = sum(v.y for v in poly.vertices) / n
    return Point(x, y)


def clearance_squared(workspace: ConvexPolygon, epsilon: Fraction) -> Fraction:
    """Squared world-unit clearance for an epsilon given as diagonal fraction."""
    xlo, ylo, xhi, yhi = workspace.bbox
    return epsilon * epsilon * ((xhi - xlo) ** 2 + (yhi - ylo) ** 2)


def clearance_distance(workspace: ConvexPolygon, epsilon: Fraction) -> float:
    return float(clearance_squared(workspace, epsilon)) ** 0.5


PathCandidate = Sequence[Point]


def path_length(path: PathCandidate) -> int:
    """Number of segments in a waypoint path (waypoint count minus one)."""
    if len(path) == 0:
        raise EmptyPath("path has no waypoints")
    return len(path) - 1


def path_segments(path: PathCandidate) -> Iterator[Segment]:
    for a, b in zip(path, path[1:]):
        yield Segment(a, b)


@dataclass(frozen=True)
class VerificationReport:
    """Exact findings for one candidate path against one problem."""

    starts_in_initial: bool
    ends_in_goal: bool
    segment_collisions: tuple[tuple[int, int], ...]

    @property
    def is_correct(self) -> bool:
        return self.starts_in_initial and self.ends_in_goal and not self.segment_collisions


def verify_path(problem, path: PathCandidate) -> VerificationReport:
    """Check a candidate path exactly against a problem's sets.

    Lists every (segment_index, obstacle_index) intersecting pair in
    lexicographic order. Raises EmptyPath for a zero-waypoint candidate.
    """
    if len(path) == 0:
        raise EmptyPath("path has no waypoints")
    starts = contains(problem.initial, path[0])
    ends = contains(problem.goal, path[-1])
    collisions = tuple(
        (i, j)
        for i, seg in enumerate(path_segments(path))
        for j, obstacle in enumerate(problem.obstacles)
        if segment_intersects(seg, obstacle)
    )
    return VerificationReport(starts, ends, collisions)


def convex_hull(points: Iterable[Point]) -> list[Point]:
    """Convex hull in CCW order (monotone chain); collinear points dropped."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts
    lower: list[Point] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]

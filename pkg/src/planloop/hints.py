"""Solver-generated feedback artifacts for a problem and candidate path:
collision findings, free-space waypoints on vertical slices, the longest
correct prefix, and a deterministic raster rendering."""

from __future__ import annotations

import io
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from PIL import Image

from planloop.geometry import (
    DEFAULT_EPSILON,
    ConvexPolygon,
    EmptyPath,
    PathCandidate,
    Point,
    clearance_squared,
    contains,
    distance_squared,
    path_segments,
    quantize,
    segment_intersects,
    verify_path,
)

_POINT_DIGITS = 9


@dataclass(frozen=True)
class SegmentCollision:
    segment_index: int
    obstacle_index: int
    start: Point
    end: Point


@dataclass(frozen=True)
class CollisionHint:
    starts_in_initial: bool
    ends_in_goal: bool
    colliding_segments: tuple[SegmentCollision, ...]


@dataclass(frozen=True)
class SliceHint:
    slice_x: Fraction
    safe_points: tuple[Point, ...]


@dataclass(frozen=True)
class FreeSpaceHint:
    slices: tuple[SliceHint, ...]

    @property
    def points(self) -> tuple[Point, ...]:
        return tuple(p for s in self.slices for p in s.safe_points)


@dataclass(frozen=True)
class PrefixHint:
    prefix: tuple[Point, ...]


@dataclass(frozen=True)
class ImageHint:
    data: bytes
    width: int
    height: int


@dataclass(frozen=True)
class HintBundle:
    collision: CollisionHint | None = None
    free_space: FreeSpaceHint | None = None
    prefix: PrefixHint | None = None
    image: ImageHint | None = None

    @property
    def is_empty(self) -> bool:
        return (
            self.collision is None
            and self.free_space is None
            and self.prefix is None
            and self.image is None
        )


def collision_hint(problem, path: PathCandidate) -> CollisionHint:
    """Mirror of verify_path with segment endpoints attached to each hit."""
    report = verify_path(problem, path)
    collisions = tuple(
        SegmentCollision(i, j, path[i], path[i + 1])
        for i, j in report.segment_collisions
    )
    return CollisionHint(report.starts_in_initial, report.ends_in_goal, collisions)


def prefix_hint(problem, path: PathCandidate) -> PrefixHint:
    """Longest leading sub-path that starts in I and is collision-free."""
    if len(path) == 0:
        raise EmptyPath("path has no waypoints")
    if not contains(problem.initial, path[0]):
        return PrefixHint(())
    keep = 1
    for seg in path_segments(path):
        if any(segment_intersects(seg, obs) for obs in problem.obstacles):
            break
        keep += 1
    return PrefixHint(tuple(path[:keep]))


def _blocked_interval(
    x: Fraction, ylo: Fraction, yhi: Fraction, poly: ConvexPolygon
) -> tuple[Fraction, Fraction] | None:
    """y-interval where the vertical line at x meets the closed polygon."""
    lo, hi = Fraction(0), Fraction(1)
    dy = yhi - ylo
    for nx, ny, c in poly.halfplanes:
        alpha = nx * x + ny * ylo
        beta = ny * dy
        if beta == 0:
            if alpha > c:
                return None
        elif beta > 0:
            hi = min(hi, (c - alpha) / beta)
        else:
            lo = max(lo, (c - alpha) / beta)
        if lo > hi:
            return None
    return ylo + lo * dy, ylo + hi * dy


def free_space_hint(
    problem, slice_count: int = 5, epsilon: Fraction = DEFAULT_EPSILON
) -> FreeSpaceHint:
    """Obstacle-free waypoints on evenly spaced vertical slice lines.

    Each slice contributes the midpoint of every maximal free interval on
    its center line, kept only if it clears every obstacle by at least the
    epsilon distance (so points are usable under closed-obstacle semantics).
    """
    if slice_count < 1:
        raise ValueError("slice_count must be positive")
    xlo, ylo, xhi, yhi = problem.workspace.bbox
    eps2 = clearance_squared(problem.workspace, epsilon)
    slices = []
    for s in range(slice_count):
        x = xlo + (xhi - xlo) * Fraction(2 * s + 1, 2 * slice_count)
        blocked = sorted(
            interval
            for obs in problem.obstacles
            if (interval := _blocked_interval(x, ylo, yhi, obs)) is not None
        )
        free: list[tuple[Fraction, Fraction]] = []
        cursor = ylo
        for b0, b1 in blocked:
            if b0 > cursor:
                free.append((cursor, b0))
            cursor = max(cursor, b1)
        if cursor < yhi:
            free.append((cursor, yhi))
        points = []
        qx = quantize(x, _POINT_DIGITS)
        for f0, f1 in free:
            p = Point(qx, quantize((f0 + f1) / 2, _POINT_DIGITS))
            if not contains(problem.workspace, p):
                continue
            if any(distance_squared(obs, p) < eps2 for obs in problem.obstacles):
                continue
            points.append(p)
        slices.append(SliceHint(qx, tuple(points)))
    return FreeSpaceHint(tuple(slices))


COLOR_BACKGROUND = (255, 255, 255)
COLOR_INITIAL = (0, 0, 255)
COLOR_GOAL = (0, 160, 0)
COLOR_OBSTACLE = (255, 0, 0)
COLOR_PATH = (0, 0, 0)


@dataclass(frozen=True)
class RenderSettings:
    width: int = 512
    height: int = 512
    path_width: float = 3.0
    waypoint_radius: float = 4.0


def _fill_polygon(
    buf: np.ndarray,
    poly: ConvexPolygon,
    color: tuple[int, int, int],
    xs: np.ndarray,
    ys: np.ndarray,
) -> None:
    mask = np.ones((buf.shape[0], buf.shape[1]), dtype=bool)
    for nx, ny, c in poly.halfplanes:
        mask &= float(nx) * xs[None, :] + float(ny) * ys[:, None] <= float(c)
    buf[mask] = color


def render_image(problem, path: PathCandidate | None = None, settings: RenderSettings | None = None) -> ImageHint:
    """Rasterize a problem (and optionally a path) deterministically.

    Uniform world-to-pixel scale with flipped y; initial set blue, goal
    green, obstacles red, path black with waypoint dots, white background.
    """
    settings = settings or RenderSettings()
    width, height = settings.width, settings.height
    xlo, ylo, xhi, yhi = problem.workspace.bbox
    world_w, world_h = float(xhi - xlo), float(yhi - ylo)
    scale = min(width / world_w, height / world_h)
    off_x = (width - world_w * scale) / 2.0
    off_y = (height - world_h * scale) / 2.0

    # world coordinates of pixel centers; row 0 is the top of the image
    cols = np.arange(width, dtype=np.float64) + 0.5
    rows = np.arange(height, dtype=np.float64) + 0.5
    xs = (cols - off_x) / scale + float(xlo)
    ys = (height - rows - off_y) / scale + float(ylo)

    buf = np.empty((height, width, 3), dtype=np.uint8)
    buf[:, :] = COLOR_BACKGROUND
    for obstacle in problem.obstacles:
        _fill_polygon(buf, obstacle, COLOR_OBSTACLE, xs, ys)
    _fill_polygon(buf, problem.initial, COLOR_INITIAL, xs, ys)
    _fill_polygon(buf, problem.goal, COLOR_GOAL, xs, ys)

    if path is not None and len(path) > 0:
        px = np.array([(float(p.x) - float(xlo)) * scale + off_x for p in path])
        py = np.array([height - ((float(p.y) - float(ylo)) * scale + off_y) for p in path])
        cx = np.arange(width, dtype=np.float64) + 0.5
        cy = np.arange(height, dtype=np.float64) + 0.5
        half = settings.path_width / 2.0
        for i in range(len(path) - 1):
            _stamp_segment(buf, cx, cy, px[i], py[i], px[i + 1], py[i + 1], half)
        for i in range(len(path)):
            _stamp_disk(buf, cx, cy, px[i], py[i], settings.waypoint_radius)

    image = Image.fromarray(buf, "RGB")
    out = io.BytesIO()
    image.save(out, format="PNG", compress_level=6)
    return ImageHint(out.getvalue(), width, height)


def _stamp_segment(buf, cx, cy, x0, y0, x1, y1, half) -> None:
    lo_c = max(0, int(min(x0, x1) - half - 1))
    hi_c = min(buf.shape[1], int(max(x0, x1) + half + 2))
    lo_r = max(0, int(min(y0, y1) - half - 1))
    hi_r = min(buf.shape[0], int(max(y0, y1) + half + 2))
    if lo_c >= hi_c or lo_r >= hi_r:
        return
    gx = cx[lo_c:hi_c][None, :]
    gy = cy[lo_r:hi_r][:, None]
    dx, dy = x1 - x0, y1 - y0
    denom = dx * dx + dy * dy
    if denom == 0.0:
        t = np.zeros_like(gx * gy)
    else:
        t = np.clip(((gx - x0) * dx + (gy - y0) * dy) / denom, 0.0, 1.0)
    dist2 = (gx - (x0 + t * dx)) ** 2 + (gy - (y0 + t * dy)) ** 2
    mask = dist2 <= half * half
    region = buf[lo_r:hi_r, lo_c:hi_c]
    region[mask] = COLOR_PATH


def _stamp_disk(buf, cx, cy, x0, y0, radius) -> None:
    lo_c = max(0, int(x0 - radius - 1))
    hi_c = min(buf.shape[1], int(x0 + radius + 2))
    lo_r = max(0, int(y0 - radius - 1))
    hi_r = min(buf.shape[0], int(y0 + radius + 2))
    if lo_c >= hi_c or lo_r >= hi_r:
        return
    gx = cx[lo_c:hi_c][None, :]
    gy = cy[lo_r:hi_r][:, None]
    mask = (gx - x0) ** 2 + (gy - y0) ** 2 <= radius * radius
    region = buf[lo_r:hi_r, lo_c:hi_c]
    region[mask] = COLOR_PATH

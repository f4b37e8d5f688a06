"""Independent oracles used by the tests: dense segment sampling, a fine-grid
BFS solvability check, Monte Carlo clearance estimates, and an exhaustive
short-path search. None of these share code paths with the implementations
they check."""

from __future__ import annotations

import math
import random
from fractions import Fraction

import numpy as np
from scipy import ndimage

from planloop.geometry import (
    DEFAULT_EPSILON,
    ConvexPolygon,
    Point,
    Segment,
    clearance_distance,
    quantize,
    segment_intersects,
)
from planloop.problems import GeneratorConfig, Problem, generate_random, problem_center


def _float_halfplanes(poly: ConvexPolygon) -> tuple[np.ndarray, np.ndarray]:
    planes = np.array([[float(nx), float(ny), float(c)] for nx, ny, c in poly.halfplanes])
    norms = np.sqrt(planes[:, 0] ** 2 + planes[:, 1] ** 2)
    return planes, norms


def sampled_interior_hit(seg: Segment, poly: ConvexPolygon, samples: int = 10_000) -> bool:
    """Does any of `samples` evenly spaced segment points lie strictly inside?

    Uses a small normalized margin so floating-point noise cannot claim a
    boundary point as interior; grazing contacts are deliberately missed.
    """
    ax, ay = seg.a.as_floats()
    bx, by = seg.b.as_floats()
    t = np.linspace(0.0, 1.0, samples)
    px = ax + t * (bx - ax)
    py = ay + t * (by - ay)
    planes, norms = _float_halfplanes(poly)
    margins = (
        planes[:, 0][:, None] * px[None, :]
        + planes[:, 1][:, None] * py[None, :]
        - planes[:, 2][:, None]
    ) / norms[:, None]
    return bool(np.any(np.all(margins < -1e-9, axis=0)))


def boundary_samples(poly: ConvexPolygon, samples: int = 1000, seed: int = 0) -> np.ndarray:
    """Monte Carlo boundary points of a polygon, shape (samples, 2)."""
    rng = np.random.default_rng(seed)
    verts = np.array([v.as_floats() for v in poly.vertices])
    nxt = np.roll(verts, -1, axis=0)
    edges = rng.integers(0, len(verts), size=samples)
    t = rng.random(samples)[:, None]
    return verts[edges] * (1.0 - t) + nxt[edges] * t


def min_boundary_distance(p: Point, poly: ConvexPolygon, samples: int = 1000, seed: int = 0) -> float:
    """Monte Carlo estimate of the distance from p to the polygon boundary."""
    pts = boundary_samples(poly, samples, seed)
    px, py = p.as_floats()
    return float(np.sqrt(np.min((pts[:, 0] - px) ** 2 + (pts[:, 1] - py) ** 2)))


def _polygon_distance_field(xs: np.ndarray, ys: np.ndarray, poly: ConvexPolygon) -> np.ndarray:
    """Distance from every (ys x xs) grid point to the closed polygon."""
    X = xs[None, :]
    Y = ys[:, None]
    planes, _ = _float_halfplanes(poly)
    inside = np.ones((ys.size, xs.size), dtype=bool)
    for nx, ny, c in planes:
        inside &= nx * X + ny * Y <= c
    dist = np.full((ys.size, xs.size), np.inf)
    verts = [v.as_floats() for v in poly.vertices]
    n = len(verts)
    for i in range(n):
        (x0, y0), (x1, y1) = verts[i], verts[(i + 1) % n]
        dx, dy = x1 - x0, y1 - y0
        denom = dx * dx + dy * dy
        t = ((X - x0) * dx + (Y - y0) * dy) / denom
        t = np.clip(t, 0.0, 1.0)
        d = np.sqrt((X - (x0 + t * dx)) ** 2 + (Y - (y0 + t * dy)) ** 2)
        dist = np.minimum(dist, d)
    dist[inside] = 0.0
    return dist


def grid_bfs_solvable(
    problem: Problem, pitch: float | None = None, min_clearance: float | None = None
) -> bool:
    """Fine-grid connectivity decision, independent of the visibility graph.

    Grid points are free when their clearance from every obstacle exceeds
    ``min_clearance`` (default just above the pitch, which makes every
    8-neighbor hop provably collision-free). Start/goal centers snap to the
    nearest free grid point; the snap segments are checked exactly.
    """
    eps_dist = clearance_distance(problem.workspace, DEFAULT_EPSILON)
    if pitch is None:
        pitch = eps_dist / 2.0
    clearance = min_clearance if min_clearance is not None else pitch * 1.01
    xlo, ylo, xhi, yhi = (float(v) for v in problem.workspace.bbox)
    nx = int(math.ceil((xhi - xlo) / pitch)) + 1
    ny = int(math.ceil((yhi - ylo) / pitch)) + 1
    xs = np.linspace(xlo, xhi, nx)
    ys = np.linspace(ylo, yhi, ny)
    step_x = xs[1] - xs[0] if nx > 1 else pitch
    step_y = ys[1] - ys[0] if ny > 1 else pitch

    free = np.ones((ny, nx), dtype=bool)
    margin = clearance + max(step_x, step_y)
    for poly in problem.obstacles:
        bxlo, bylo, bxhi, byhi = (float(v) for v in poly.bbox)
        c0 = max(0, int((bxlo - margin - xlo) / step_x))
        c1 = min(nx, int((bxhi + margin - xlo) / step_x) + 2)
        r0 = max(0, int((bylo - margin - ylo) / step_y))
        r1 = min(ny, int((byhi + margin - ylo) / step_y) + 2)
        if c0 >= c1 or r0 >= r1:
            continue
        dist = _polygon_distance_field(xs[c0:c1], ys[r0:r1], poly)
        free[r0:r1, c0:c1] &= dist > clearance

    labels, _ = ndimage.label(free, structure=np.ones((3, 3), dtype=int))

    def snap(point: Point) -> int | None:
        px, py = point.as_floats()
        ci = int(round((px - xlo) / step_x))
        ri = int(round((py - ylo) / step_y))
        best = None
        for dr in range(-3, 4):
            for dc in range(-3, 4):
                r, c = ri + dr, ci + dc
                if not (0 <= r < ny and 0 <= c < nx) or not free[r, c]:
                    continue
                d = math.hypot(xs[c] - px, ys[r] - py)
                if best is None or d < best[0]:
                    best = (d, r, c)
        if best is None:
            return None
        _, r, c = best
        snap_point = Point(
            quantize(Fraction(repr(float(xs[c]))), 9), quantize(Fraction(repr(float(ys[r]))), 9)
        )
        hop = Segment(point, snap_point)
        if any(segment_intersects(hop, obs) for obs in problem.obstacles):
            return None
        return int(labels[r, c])

    start_label = snap(problem_center(problem.initial))
    goal_label = snap(problem_center(problem.goal))
    if start_label is None or goal_label is None:
        return False
    return start_label == goal_label


def best_short_path_cost(problem: Problem, grid_n: int = 21, max_segments: int = 3) -> float | None:
    """Exhaustive shortest cost over paths of up to `max_segments` segments
    whose intermediate waypoints come from a grid_n x grid_n lattice."""
    xlo, ylo, xhi, yhi = problem.workspace.bbox
    lattice = [
        Point(xlo + (xhi - xlo) * Fraction(i, grid_n - 1), ylo + (yhi - ylo) * Fraction(j, grid_n - 1))
        for i in range(grid_n)
        for j in range(grid_n)
    ]
    start = problem_center(problem.initial)
    goal = problem_center(problem.goal)

    def clear(a: Point, b: Point) -> bool:
        seg = Segment(a, b)
        return not any(segment_intersects(seg, obs) for obs in problem.obstacles)

    def dist(a: Point, b: Point) -> float:
        return math.hypot(float(a.x - b.x), float(a.y - b.y))

    best = dist(start, goal) if clear(start, goal) else None
    if max_segments < 2:
        return best

    from_start = [p for p in lattice if clear(start, p)]
    to_goal = {p: clear(p, goal) for p in lattice}
    for p in from_start:
        if to_goal[p]:
            cost = dist(start, p) + dist(p, goal)
            if best is None or cost < best:
                best = cost
    if max_segments < 3:
        return best

    d_start = {p: dist(start, p) for p in from_start}
    d_goal = {p: dist(p, goal) for p in lattice if to_goal[p]}
    for p in from_start:
        for q in d_goal:
            if p == q:
                continue
            cost = d_start[p] + dist(p, q) + d_goal[q]
            if best is not None and cost >= best:
                continue
            if clear(p, q):
                best = cost
    return best


def fuzz_problem(rng: random.Random, max_obstacles: int = 3) -> Problem:
    """Random problem for property fuzzing; k=0 gives an obstacle-free one."""
    k = rng.randrange(max_obstacles + 1)
    if k == 0:
        from planloop.problems import GENERATED_GOAL, GENERATED_INITIAL, GENERATED_WORKSPACE

        return Problem(
            name=f"fuzz-empty-{rng.randrange(10**6)}",
            workspace=GENERATED_WORKSPACE,
            initial=GENERATED_INITIAL,
            goal=GENERATED_GOAL,
            obstacles=(),
        )
    return generate_random(GeneratorConfig(obstacle_count=k, seed=rng.randrange(2**31)))


def fuzz_path(rng: random.Random, lo: float = 0.0, hi: float = 10.0) -> tuple[Point, ...]:
    count = rng.randrange(1, 7)
    return tuple(
        Point(
            quantize(Fraction(repr(rng.uniform(lo, hi))), 3),
            quantize(Fraction(repr(rng.uniform(lo, hi))), 3),
        )
        for _ in range(count)
    )


def fuzz_polygon(rng: random.Random, cx: float, cy: float, radius: float) -> ConvexPolygon:
    """Random convex quad/triangle around (cx, cy)."""
    from planloop.geometry import convex_hull

    while True:
        pts = [
            Point(
                quantize(Fraction(repr(cx + rng.uniform(-radius, radius))), 3),
                quantize(Fraction(repr(cy + rng.uniform(-radius, radius))), 3),
            )
            for _ in range(4)
        ]
        hull = convex_hull(pts)
        if len(hull) >= 3:
            return ConvexPolygon.from_points(hull)

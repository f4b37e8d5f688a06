"""Problem data model, on-disk JSON format, the handcrafted suite, and the
randomized benchmark generator."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from planloop.geometry import (
    ConvexPolygon,
    Point,
    as_coord,
    centroid,
    contains,
    convex_hull,
    fmt_coord,
    polygons_intersect,
    quantize,
)


class ParseError(ValueError):
    """The problem document is malformed."""


class InvalidProblem(ValueError):
    """The document parsed but violates a problem invariant."""


class GenerationExhausted(RuntimeError):
    """The random generator ran out of regeneration attempts."""


class CannotBlock(RuntimeError):
    """No full-width slab can separate the initial set from the goal."""


@dataclass(frozen=True)
class Problem:
    """A 2D planning instance: workspace, initial set, goal set, obstacles.

    The workspace is an axis-aligned rectangle; every other set is a convex
    polygon contained in it. The initial and goal sets never intersect an
    obstacle (obstacles may overlap each other).
    """

    name: str
    workspace: ConvexPolygon
    initial: ConvexPolygon
    goal: ConvexPolygon
    obstacles: tuple[ConvexPolygon, ...]
    tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        _require_rectangle(self.workspace)
        for label, poly in (("initial set", self.initial), ("goal set", self.goal)):
            if not _polygon_inside(poly, self.workspace):
                raise InvalidProblem(f"{label} is not inside the workspace")
        for j, obstacle in enumerate(self.obstacles):
            if not _polygon_inside(obstacle, self.workspace):
                raise InvalidProblem(f"obstacle {j} is not inside the workspace")
            if polygons_intersect(self.initial, obstacle):
                raise InvalidProblem(f"initial set intersects obstacle {j}")
            if polygons_intersect(self.goal, obstacle):
                raise InvalidProblem(f"goal set intersects obstacle {j}")


def _require_rectangle(poly: ConvexPolygon) -> None:
    if len(poly.vertices) != 4:
        raise InvalidProblem("workspace must be an axis-aligned rectangle")
    xs = {v.x for v in poly.vertices}
    ys = {v.y for v in poly.vertices}
    if len(xs) != 2 or len(ys) != 2:
        raise InvalidProblem("workspace must be an axis-aligned rectangle")
    expected = {(x, y) for x in xs for y in ys}
    if {(v.x, v.y) for v in poly.vertices} != expected:
        raise InvalidProblem("workspace must be an axis-aligned rectangle")


def _polygon_inside(poly: ConvexPolygon, container: ConvexPolygon) -> bool:
    return all(contains(container, v) for v in poly.vertices)


def _polygon_from_doc(entry: object, label: str) -> ConvexPolygon:
    if not isinstance(entry, list) or len(entry) < 3:
        raise ParseError(f"{label} must be an array of at least 3 [x, y] pairs")
    pairs = []
    for pair in entry:
        if not isinstance(pair, list) or len(pair) != 2:
            raise ParseError(f"{label} contains a malformed vertex: {pair!r}")
        try:
            pairs.append(Point.of(pair[0], pair[1]))
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{label} contains a bad coordinate: {exc}") from exc
    try:
        return ConvexPolygon.from_points(pairs)
    except ValueError as exc:
        raise InvalidProblem(f"{label} is not a valid convex polygon: {exc}") from exc


def load_problem(document: str) -> Problem:
    """Parse a problem JSON document and validate every invariant."""
    try:
        doc = json.loads(document, parse_float=str)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("problem document must be a JSON object")
    missing = {"name", "workspace", "initial", "goal", "obstacles"} - doc.keys()
    if missing:
        raise ParseError(f"missing fields: {sorted(missing)}")
    name = doc["name"]
    if not isinstance(name, str) or not name:
        raise ParseError("name must be a non-empty string")
    tags = doc.get("tags", [])
    if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
        raise ParseError("tags must be an array of strings")
    obstacles_doc = doc["obstacles"]
    if not isinstance(obstacles_doc, list):
        raise ParseError("obstacles must be an array of polygons")
    workspace = _polygon_from_doc(doc["workspace"], "workspace")
    initial = _polygon_from_doc(doc["initial"], "initial")
    goal = _polygon_from_doc(doc["goal"], "goal")
    obstacles = tuple(
        _polygon_from_doc(entry, f"obstacle {j}") for j, entry in enumerate(obstacles_doc)
    )
    return Problem(
        name=name,
        workspace=workspace,
        initial=initial,
        goal=goal,
        obstacles=obstacles,
        tags=tuple(tags),
    )


def _polygon_doc(poly: ConvexPolygon) -> list[list[str]]:
    return [[fmt_coord(v.x), fmt_coord(v.y)] for v in poly.vertices]


def serialize_problem(problem: Problem) -> str:
    """Canonical JSON form; coordinates as decimal strings to stay exact."""
    doc = {
        "name": problem.name,
        "workspace": _polygon_doc(problem.workspace),
        "initial": _polygon_doc(problem.initial),
        "goal": _polygon_doc(problem.goal),
        "obstacles": [_polygon_doc(o) for o in problem.obstacles],
        "tags": list(problem.tags),
    }
    return json.dumps(doc, indent=2) + "\n"


SUITE_NAMES = (
    "Box Boundary",
    "Easy",
    "Wall",
    "Box",
    "Canyon",
    "Diagonal Wall",
    "Curve",
    "Spiral",
    "Maze",
    "Scots",
)


def handcrafted_suite() -> list[Problem]:
    """The 10 handcrafted problems in increasing-difficulty order."""
    suite_dir = resources.files("planloop").joinpath("data/suite")
    problems = []
    for entry in sorted(suite_dir.iterdir(), key=lambda e: e.name):
        if entry.name.endswith(".json"):
            problems.append(load_problem(entry.read_text(encoding="utf-8")))
    return problems


def suite_problem(name: str) -> Problem:
    for problem in handcrafted_suite():
        if problem.name == name:
            return problem
    raise KeyError(f"no suite problem named {name!r}")


@dataclass(frozen=True)
class GeneratorConfig:
    """Settings for the tiled random-problem generator."""

    obstacle_count: int
    grid_tiles: int = 9
    overlap: Fraction = Fraction(1, 5)
    seed: int = 0
    require_solvable: bool = False
    max_regeneration_attempts: int = 20

    def __post_init__(self) -> None:
        if self.obstacle_count < 1:
            raise ValueError("obstacle_count must be positive")
        if self.grid_tiles <= self.obstacle_count:
            raise ValueError("grid_tiles must exceed obstacle_count")
        overlap = as_coord(self.overlap)
        if not 0 <= overlap <= 1:
            raise ValueError("overlap must be in [0, 1]")
        object.__setattr__(self, "overlap", overlap)
        if self.max_regeneration_attempts < 1:
            raise ValueError("max_regeneration_attempts must be positive")


# Canonical frame for generated problems; handcrafted files carry their own.
GENERATED_WORKSPACE = ConvexPolygon.from_points([(0, 0), (10, 0), (10, 10), (0, 10)])
GENERATED_INITIAL = ConvexPolygon.from_points(
    [("0.5", "0.5"), ("1.5", "0.5"), ("1.5", "1.5"), ("0.5", "1.5")]
)
GENERATED_GOAL = ConvexPolygon.from_points(
    [("8.5", "8.5"), ("9.5", "8.5"), ("9.5", "9.5"), ("8.5", "9.5")]
)

_SAMPLE_DIGITS = 6


def grid_tiles(workspace: ConvexPolygon, n: int) -> list[ConvexPolygon]:
    """First n cells, row-major from the bottom-left, of a near-square grid."""
    xlo, ylo, xhi, yhi = workspace.bbox
    cols = math.isqrt(n)
    if cols * cols < n:
        cols += 1
    rows = -(-n // cols)
    width = (xhi - xlo) / cols
    height = (yhi - ylo) / rows
    tiles = []
    for index in range(n):
        r, c = divmod(index, cols)
        x0 = xlo + c * width
        y0 = ylo + r * height
        tiles.append(
            ConvexPolygon.from_points(
                [
                    Point(x0, y0),
                    Point(x0 + width, y0),
                    Point(x0 + width, y0 + height),
                    Point(x0, y0 + height),
                ]
            )
        )
    return tiles


def _expand_tile(
    tile: ConvexPolygon, overlap: Fraction, workspace: ConvexPolygon
) -> tuple[Fraction, Fraction, Fraction, Fraction]:
    # expanded about the tile center, clipped so obstacles stay in-workspace
    xlo, ylo, xhi, yhi = tile.bbox
    wxlo, wylo, wxhi, wyhi = workspace.bbox
    cx = (xlo + xhi) / 2
    cy = (ylo + yhi) / 2
    factor = 1 + overlap
    return (
        max(cx + (xlo - cx) * factor, wxlo),
        max(cy + (ylo - cy) * factor, wylo),
        min(cx + (xhi - cx) * factor, wxhi),
        min(cy + (yhi - cy) * factor, wyhi),
    )


def _sample_coord(rng: random.Random, lo: Fraction, hi: Fraction) -> Fraction:
    value = quantize(Fraction(repr(float(lo) + rng.random() * float(hi - lo))), _SAMPLE_DIGITS)
    return min(max(value, lo), hi)


def _sample_obstacle(
    rng: random.Random,
    tile: ConvexPolygon,
    overlap: Fraction,
    workspace: ConvexPolygon,
    keep_clear: tuple[ConvexPolygon, ...],
) -> ConvexPolygon:
    xlo, ylo, xhi, yhi = _expand_tile(tile, overlap, workspace)
    for _ in range(100):
        points = [
            Point(_sample_coord(rng, xlo, xhi), _sample_coord(rng, ylo, yhi))
            for _ in range(4)
        ]
        hull = convex_hull(points)
        if len(hull) < 3:
            continue
        polygon = ConvexPolygon.from_points(hull)
        if any(polygons_intersect(polygon, region) for region in keep_clear):
            continue
        return polygon
    raise GenerationExhausted("could not sample a usable obstacle hull in its tile")


def generate_random(config: GeneratorConfig) -> Problem:
    """Generate one random problem: k convex obstacles, one per grid tile.

    Deterministic for a given config. Tiles overlapping the initial or goal
    set are never used; each obstacle is the convex hull of 4 points sampled
    uniformly in its overlap-expanded tile.
    """
    from planloop import oracle  # imported here to keep module load acyclic

    rng = random.Random(config.seed)
    workspace = GENERATED_WORKSPACE
    initial = GENERATED_INITIAL
    goal = GENERATED_GOAL
    tiles = grid_tiles(workspace, config.grid_tiles)
    eligible = [
        tile
        for tile in tiles
        if not polygons_intersect(tile, initial) and not polygons_intersect(tile, goal)
    ]
    if len(eligible) < config.obstacle_count:
        raise GenerationExhausted(
            f"only {len(eligible)} tiles clear of the initial/goal sets, "
            f"need {config.obstacle_count}"
        )
    name = f"random-k{config.obstacle_count}-s{config.seed}"
    for _ in range(config.max_regeneration_attempts):
        chosen = rng.sample(range(len(eligible)), config.obstacle_count)
        obstacles = tuple(
            _sample_obstacle(rng, eligible[i], config.overlap, workspace, (initial, goal))
            for i in chosen
        )
        problem = Problem(
            name=name,
            workspace=workspace,
            initial=initial,
            goal=goal,
            obstacles=obstacles,
            tags=("generated",),
        )
        if not config.require_solvable or oracle.solvable(problem):
            return problem
    raise GenerationExhausted(
        f"no solvable problem found in {config.max_regeneration_attempts} attempts"
    )


def make_unsolvable_variant(problem: Problem, seed: int) -> Problem:
    """Augment a solvable problem with a full-width slab separating I from G.

    The slab spans the whole workspace across one axis and sits strictly
    inside the gap between the initial and goal sets, so the variant is
    unsolvable by construction (and verified so by the oracle).
    """
    from planloop import oracle

    if not oracle.solvable(problem):
        raise ValueError("problem is already unsolvable")
    rng = random.Random(seed)
    xlo, ylo, xhi, yhi = problem.workspace.bbox
    ixlo, iylo, ixhi, iyhi = problem.initial.bbox
    gxlo, gylo, gxhi, gyhi = problem.goal.bbox

    def band(lo: Fraction, hi: Fraction) -> tuple[Fraction, Fraction]:
        gap = hi - lo
        u = quantize(Fraction(repr(0.25 + 0.2 * rng.random())), _SAMPLE_DIGITS)
        v = quantize(Fraction(repr(0.55 + 0.2 * rng.random())), _SAMPLE_DIGITS)
        return lo + gap * u, lo + gap * v

    slab = None
    if iyhi < gylo:
        b0, b1 = band(iyhi, gylo)
        slab = ConvexPolygon.from_points(
            [Point(xlo, b0), Point(xhi, b0), Point(xhi, b1), Point(xlo, b1)]
        )
    elif gyhi < iylo:
        b0, b1 = band(gyhi, iylo)
        slab = ConvexPolygon.from_points(
            [Point(xlo, b0), Point(xhi, b0), Point(xhi, b1), Point(xlo, b1)]
        )
    elif ixhi < gxlo:
        b0, b1 = band(ixhi, gxlo)
        slab = ConvexPolygon.from_points(
            [Point(b0, ylo), Point(b1, ylo), Point(b1, yhi), Point(b0, yhi)]
        )
    elif gxhi < ixlo:
        b0, b1 = band(gxhi, ixlo)
        slab = ConvexPolygon.from_points(
            [Point(b0, ylo), Point(b1, ylo), Point(b1, yhi), Point(b0, yhi)]
        )
    if slab is None:
        raise CannotBlock("initial and goal sets leave no axis-aligned gap for a slab")
    variant = Problem(
        name=f"{problem.name}-unsolvable",
        workspace=problem.workspace,
        initial=problem.initial,
        goal=problem.goal,
        obstacles=problem.obstacles + (slab,),
        tags=problem.tags + ("unsolvable-variant",),
    )
    if oracle.solvable(variant):
        raise CannotBlock("separating slab failed to block the problem")
    return variant


def problem_center(poly: ConvexPolygon) -> Point:
    """Vertex centroid, the canonical interior reference point of a set."""
    return centroid(poly)

"""Deterministic classical planner used as ground truth.

Builds a visibility graph over the obstacle vertices pushed outward by an
epsilon clearance, searches it for the shortest path, and verifies every
returned path with the exact geometry kernel before handing it out.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from planloop.geometry import (
    DEFAULT_EPSILON,
    Point,
    Segment,
    as_coord,
    centroid,
    clearance_distance,
    contains,
    decimal_safe,
    quantize,
    segment_intersects,
    verify_path,
)

MIN_EUCLIDEAN = "min_euclidean_length"
MIN_SEGMENTS = "min_segments"

_NODE_DIGITS = 9


class UnsolvableInBatch(ValueError):
    """A fine-tune export batch contained unsolvable problems."""

    def __init__(self, names: Sequence[str]):
        self.names = tuple(names)
        super().__init__(f"unsolvable problems in batch: {', '.join(self.names)}")


@dataclass(frozen=True)
class OracleConfig:
    epsilon: Fraction = DEFAULT_EPSILON
    objective: str = MIN_EUCLIDEAN

    def __post_init__(self) -> None:
        epsilon = as_coord(self.epsilon)
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        object.__setattr__(self, "epsilon", epsilon)
        if self.objective not in (MIN_EUCLIDEAN, MIN_SEGMENTS):
            raise ValueError(f"unknown objective {self.objective!r}")


@dataclass(frozen=True)
class OracleResult:
    solvable: bool
    path: tuple[Point, ...] | None
    cost: Fraction | None


def _inflated_vertices(problem, eps_dist: float) -> list[Point]:
    nodes = []
    for obstacle in problem.obstacles:
        verts = obstacle.vertices
        n = len(verts)
        for i in range(n):
            v = verts[i]
            prev = verts[(i - 1) % n]
            nxt = verts[(i + 1) % n]
            vx, vy = float(v.x), float(v.y)
            ax, ay = float(prev.x) - vx, float(prev.y) - vy
            bx, by = float(nxt.x) - vx, float(nxt.y) - vy
            la = math.sqrt(ax * ax + ay * ay)
            lb = math.sqrt(bx * bx + by * by)
            if la == 0 or lb == 0:
                continue
            # outward bisector: opposite of the interior edge-direction sum
            ox, oy = -(ax / la + bx / lb), -(ay / la + by / lb)
            norm = math.sqrt(ox * ox + oy * oy)
            if norm == 0:
                continue
            px = vx + eps_dist * ox / norm
            py = vy + eps_dist * oy / norm
            node = Point(
                quantize(Fraction(repr(px)), _NODE_DIGITS),
                quantize(Fraction(repr(py)), _NODE_DIGITS),
            )
            if not contains(problem.workspace, node):
                continue
            if any(contains(obs, node) for obs in problem.obstacles):
                continue
            nodes.append(node)
    return nodes


def _visible(problem, a: Point, b: Point) -> bool:
    seg = Segment(a, b)
    return not any(segment_intersects(seg, obs) for obs in problem.obstacles)


def plan(problem, config: OracleConfig | None = None) -> OracleResult:
    """Find a shortest correct path or decide that none exists.

    Nodes are the initial/goal centers plus the epsilon-inflated obstacle
    corners; edges join mutually visible nodes. Ties break on lexicographic
    node order, so the result is deterministic. A returned path is always
    re-verified by the exact checker before this function returns it.
    """
    config = config or OracleConfig()
    eps_dist = clearance_distance(problem.workspace, config.epsilon)
    start = decimal_safe(centroid(problem.initial), _NODE_DIGITS)
    goal = decimal_safe(centroid(problem.goal), _NODE_DIGITS)
    nodes = sorted({start, goal, *_inflated_vertices(problem, eps_dist)})
    index = {node: i for i, node in enumerate(nodes)}
    start_i, goal_i = index[start], index[goal]

    adjacency: list[list[tuple[int, float]]] = [[] for _ in nodes]
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            if _visible(problem, nodes[i], nodes[j]):
                if config.objective == MIN_SEGMENTS:
                    weight = 1.0
                else:
                    dx = float(nodes[j].x - nodes[i].x)
                    dy = float(nodes[j].y - nodes[i].y)
                    weight = math.sqrt(dx * dx + dy * dy)
                adjacency[i].append((j, weight))
                adjacency[j].append((i, weight))

    dist = [math.inf] * len(nodes)
    parent = [-1] * len(nodes)
    dist[start_i] = 0.0
    heap = [(0.0, start_i)]
    visited = [False] * len(nodes)
    while heap:
        d, i = heapq.heappop(heap)
        if visited[i]:
            continue
        visited[i] = True
        if i == goal_i:
            break
        for j, w in adjacency[i]:
            nd = d + w
            if nd < dist[j]:
                dist[j] = nd
                parent[j] = i
                heapq.heappush(heap, (nd, j))

    if not visited[goal_i] and start_i != goal_i:
        return OracleResult(False, None, None)

    waypoints = [goal_i]
    while waypoints[-1] != start_i:
        waypoints.append(parent[waypoints[-1]])
    path = tuple(nodes[i] for i in reversed(waypoints))
    report = verify_path(problem, path)
    if not report.is_correct:
        raise RuntimeError("oracle produced a path that fails exact verification")
    if config.objective == MIN_SEGMENTS:
        cost = Fraction(len(path) - 1)
    else:
        cost = quantize(Fraction(repr(dist[goal_i])), _NODE_DIGITS)
    return OracleResult(True, path, cost)


def solvable(problem, config: OracleConfig | None = None) -> bool:
    """Decide solvability (complete only up to the epsilon clearance)."""
    return plan(problem, config).solvable


def export_finetune_dataset(
    problems: Sequence, config: OracleConfig | None = None, chat_envelope: bool = False
) -> str:
    """Render problem/solution training records as JSON Lines.

    One record per problem in input order; completions hold the oracle path
    as a bare waypoint array with no explanation text.
    """
    from planloop import llm

    config = config or OracleConfig()
    results = [(problem, plan(problem, config)) for problem in problems]
    bad = [problem.name for problem, result in results if not result.solvable]
    if bad:
        raise UnsolvableInBatch(bad)
    lines = []
    for problem, result in results:
        messages = llm.initial_prompt(problem)
        completion = llm.format_waypoints(result.path)
        if chat_envelope:
            record = {
                "messages": [
                    {"role": message.role, "content": message.text}
                    for message in messages
                ]
                + [{"role": "assistant", "content": completion}]
            }
        else:
            prompt = "\n\n".join(message.text for message in messages)
            record = {"prompt": prompt, "completion": completion}
        lines.append(json.dumps(record))
    return "\n".join(lines) + "\n" if lines else ""

"""Closed-loop 2D path-planning benchmark harness.

Exact convex-polygon verification, a visibility-graph planner oracle,
solver-generated hints, provider-agnostic LLM agents, and the experiment
loop that ties them together.
"""

__version__ = "0.1.0"

from planloop.geometry import (
    ConvexPolygon,
    Point,
    Segment,
    VerificationReport,
    contains,
    path_length,
    segment_intersects,
    verify_path,
)
from planloop.problems import GeneratorConfig, Problem, generate_random, handcrafted_suite, load_problem
from planloop.oracle import OracleConfig, OracleResult, plan, solvable

__all__ = [
    "ConvexPolygon",
    "GeneratorConfig",
    "OracleConfig",
    "OracleResult",
    "Point",
    "Problem",
    "Segment",
    "VerificationReport",
    "contains",
    "generate_random",
    "handcrafted_suite",
    "load_problem",
    "path_length",
    "plan",
    "segment_intersects",
    "solvable",
    "verify_path",
    "__version__",
]

from __future__ import annotations

import pytest

from planloop.problems import Problem, handcrafted_suite
from planloop.geometry import ConvexPolygon


def make_problem(name="test", obstacles=(), initial=None, goal=None, workspace=None) -> Problem:
    return Problem(
        name=name,
        workspace=workspace
        or ConvexPolygon.from_points([(0, 0), (10, 0), (10, 10), (0, 10)]),
        initial=initial
        or ConvexPolygon.from_points(
            [("0.5", "0.5"), ("1.5", "0.5"), ("1.5", "1.5"), ("0.5", "1.5")]
        ),
        goal=goal
        or ConvexPolygon.from_points(
            [("8.5", "8.5"), ("9.5", "8.5"), ("9.5", "9.5"), ("8.5", "9.5")]
        ),
        obstacles=tuple(
            o if isinstance(o, ConvexPolygon) else ConvexPolygon.from_points(o)
            for o in obstacles
        ),
    )


@pytest.fixture(scope="session")
def suite() -> list[Problem]:
    return handcrafted_suite()


@pytest.fixture
def empty_problem() -> Problem:
    return make_problem("empty")


@pytest.fixture
def wall_problem() -> Problem:
    # single slab blocking the straight line between the set centers
    return make_problem(
        "wall-style", obstacles=[[(0, "4.5"), ("7.5", "4.5"), ("7.5", "5.5"), (0, "5.5")]]
    )

"""Aggregate run records into S%, N, PL rows and render them as tables.

N and PL average over successful runs only; a group with no successes
renders them as "-". Every claimed success is re-verified against its
embedded problem before it counts.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from planloop.geometry import verify_path
from planloop.loop import RunRecord

logger = logging.getLogger(__name__)

BY_PROBLEM = "by_problem"
BY_OBSTACLE_COUNT = "by_obstacle_count"


class EmptyInput(ValueError):
    """aggregate() was given no records."""


@dataclass(frozen=True)
class MetricsRow:
    group: str
    success_rate: Fraction  # percentage in [0, 100]
    mean_iterations_success: Fraction | None
    mean_path_length_success: Fraction | None
    run_count: int


def _record_success(record: RunRecord) -> bool:
    if not record.success:
        return False
    if record.final_path is None:
        logger.warning("record for %s claims success without a path", record.problem_name)
        return False
    report = verify_path(record.problem, record.final_path)
    if not report.is_correct:
        logger.warning(
            "record for %s claims success but its path fails re-verification",
            record.problem_name,
        )
        return False
    return True


def aggregate(records: Sequence[RunRecord], grouping: str = BY_PROBLEM) -> list[MetricsRow]:
    """Group records and compute S%, N, PL exactly (rationals, no floats)."""
    if not records:
        raise EmptyInput("no records to aggregate")
    if grouping not in (BY_PROBLEM, BY_OBSTACLE_COUNT):
        raise ValueError(f"unknown grouping {grouping!r}")

    groups: dict[object, list[RunRecord]] = {}
    order: list[object] = []
    for record in records:
        key: object
        if grouping == BY_PROBLEM:
            key = record.problem_name
        else:
            key = len(record.problem.obstacles)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(record)
    if grouping == BY_OBSTACLE_COUNT:
        order = sorted(order)  # ascending obstacle count

    rows = []
    for key in order:
        group_records = groups[key]
        runs = len(group_records)
        successes = [r for r in group_records if _record_success(r)]
        rate = Fraction(100 * len(successes), runs)
        if successes:
            mean_iters = Fraction(sum(r.iterations_used for r in successes), len(successes))
            mean_length = Fraction(
                sum(r.final_path_length for r in successes), len(successes)
            )
        else:
            mean_iters = None
            mean_length = None
        label = key if grouping == BY_PROBLEM else f"{key} Obs"
        rows.append(MetricsRow(str(label), rate, mean_iters, mean_length, runs))
    return rows


def _round_int(value: Fraction) -> int:
    # half-up
    return int((value + Fraction(1, 2)).__floor__())


def _fmt_one_decimal(value: Fraction | None) -> str:
    if value is None:
        return "-"
    scaled = _round_int(value * 10)
    return f"{scaled // 10}.{scaled % 10}"


def render_table(rows: Sequence[MetricsRow], format: str = "csv") -> str:
    """CSV (RFC-4180 quoting) or Markdown table of metric rows."""
    header = ["group", "S%", "N", "PL"]
    body = [
        [
            row.group,
            str(_round_int(row.success_rate)),
            _fmt_one_decimal(row.mean_iterations_success),
            _fmt_one_decimal(row.mean_path_length_success),
        ]
        for row in rows
    ]
    if format == "csv":
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(body)
        return out.getvalue()
    if format == "markdown":
        lines = [
            "| " + " | ".join(header) + " |",
            "| " + " | ".join("---" for _ in header) + " |",
        ]
        lines.extend("| " + " | ".join(row) + " |" for row in body)
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown table format {format!r}")

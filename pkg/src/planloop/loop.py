"""Closed-loop controller: propose, verify, hint, re-prompt.

Runs one agent against one problem under an iteration budget, capturing a
full transcript, and fans experiments out over a bounded worker pool with a
serialized results sink.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

from planloop.geometry import Point, VerificationReport, fmt_coord, verify_path
from planloop.hints import (
    CollisionHint,
    FreeSpaceHint,
    HintBundle,
    ImageHint,
    PrefixHint,
    SegmentCollision,
    SliceHint,
    collision_hint,
    free_space_hint,
    prefix_hint,
    render_image,
)
from planloop.llm import (
    NO_HINT_RETRY_TEXT,
    SYNTAX_RETRY_TEXT,
    AgentConfig,
    ChatMessage,
    ResponseParseError,
    build_agent,
    feedback_prompt,
    initial_prompt,
    parse_response,
)
from planloop.problems import Problem, load_problem, serialize_problem


@dataclass(frozen=True)
class HintStrategy:
    collision: bool = False
    free_space: bool = False
    prefix: bool = False
    image: bool = False
    slice_count: int = 5

    def __post_init__(self) -> None:
        if self.slice_count < 1:
            raise ValueError("slice_count must be positive")

    @property
    def enabled(self) -> bool:
        return self.collision or self.free_space or self.prefix or self.image

    @property
    def name(self) -> str:
        for name, preset in STRATEGY_PRESETS.items():
            if preset == self:
                return name
        return "custom"

    @classmethod
    def from_name(cls, name: str) -> "HintStrategy":
        try:
            return STRATEGY_PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown strategy {name!r}") from None


STRATEGY_PRESETS = {
    "none": HintStrategy(),
    "C": HintStrategy(collision=True),
    "CFP": HintStrategy(collision=True, free_space=True, prefix=True),
    "CFPI": HintStrategy(collision=True, free_space=True, prefix=True, image=True),
}

# Budgets the experiments default to: 10 repeats with a 20-iteration cap for
# the handcrafted suite, single repeats with a 5-iteration cap for random
# problem batches.
HANDCRAFTED_REPEATS = 10
HANDCRAFTED_MAX_ITERATIONS = 20
RANDOM_MAX_ITERATIONS = 5


@dataclass(frozen=True)
class TranscriptStep:
    response_text: str
    candidate: tuple[Point, ...] | None
    report: VerificationReport | None
    bundle: HintBundle | None
    parse_error: str | None


@dataclass(frozen=True)
class RunRecord:
    problem_name: str
    strategy: HintStrategy
    agent: str
    iterations_used: int
    success: bool
    final_path: tuple[Point, ...] | None
    final_path_length: int | None
    transcript: tuple[TranscriptStep, ...]
    wall_time: float
    parse_failures: int
    problem: Problem
    error: str | None = None


class AgentError(RuntimeError):
    """An agent failed mid-run; carries the partial record."""

    def __init__(self, message: str, record: RunRecord):
        self.record = record
        super().__init__(message)


def build_bundle(problem, path, strategy: HintStrategy) -> HintBundle | None:
    if not strategy.enabled:
        return None
    return HintBundle(
        collision=collision_hint(problem, path) if strategy.collision else None,
        free_space=(
            free_space_hint(problem, strategy.slice_count) if strategy.free_space else None
        ),
        prefix=prefix_hint(problem, path) if strategy.prefix else None,
        image=render_image(problem, path) if strategy.image else None,
    )


def run_single(problem, strategy: HintStrategy, agent, max_iterations: int) -> RunRecord:
    """Drive one closed-loop run until success or budget exhaustion.

    Iterations count model responses; a response that fails to parse still
    consumes budget and elicits a fixed syntax reminder. Success is decided
    by the exact verifier, never by the agent.
    """
    if max_iterations < 1:
        raise ValueError("max_iterations must be at least 1")
    started = time.perf_counter()
    messages = initial_prompt(problem, strategy)
    transcript: list[TranscriptStep] = []
    parse_failures = 0
    iterations = 0
    success = False
    final_path: tuple[Point, ...] | None = None

    def make_record(error: str | None = None) -> RunRecord:
        return RunRecord(
            problem_name=problem.name,
            strategy=strategy,
            agent=getattr(agent, "name", repr(agent)),
            iterations_used=iterations,
            success=success,
            final_path=final_path,
            final_path_length=len(final_path) - 1 if final_path else None,
            transcript=tuple(transcript),
            wall_time=time.perf_counter() - started,
            parse_failures=parse_failures,
            problem=problem,
            error=error,
        )

    while iterations < max_iterations:
        try:
            text = agent.respond(messages)
        except Exception as exc:
            raise AgentError(f"agent failed: {exc}", make_record(str(exc))) from exc
        iterations += 1
        messages.append(ChatMessage("assistant", text))
        try:
            parsed = parse_response(text)
        except ResponseParseError as exc:
            parse_failures += 1
            transcript.append(TranscriptStep(text, None, None, None, str(exc)))
            messages.append(ChatMessage("user", SYNTAX_RETRY_TEXT))
            continue
        path = parsed.waypoints
        report = verify_path(problem, path)
        if report.is_correct:
            transcript.append(TranscriptStep(text, path, report, None, None))
            success = True
            final_path = path
            break
        bundle = build_bundle(problem, path, strategy)
        transcript.append(TranscriptStep(text, path, report, bundle, None))
        if bundle is None:
            messages.append(ChatMessage("user", NO_HINT_RETRY_TEXT))
        else:
            messages.append(feedback_prompt(bundle))
    return make_record()


@dataclass(frozen=True)
class ExperimentConfig:
    problems: tuple[Problem, ...]
    strategy: HintStrategy
    agent: AgentConfig
    repeats_per_problem: int = 1
    max_iterations: int = HANDCRAFTED_MAX_ITERATIONS
    seed: int = 0

    def __post_init__(self) -> None:
        if self.repeats_per_problem < 1:
            raise ValueError("repeats_per_problem must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


Sink = Callable[[RunRecord], None]


def run_experiment(
    config: ExperimentConfig, sink: Sink | None = None, workers: int = 1
) -> list[RunRecord]:
    """Run every (problem, repeat) pair and return records in job order.

    Records are streamed to the sink as runs finish (sink calls are
    serialized); the returned list keeps (problem order, repeat index)
    regardless of execution interleaving. Agent failures are captured as
    failed records annotated with the error rather than aborting the batch.
    """
    jobs = [
        (pi, repeat, problem)
        for pi, problem in enumerate(config.problems)
        for repeat in range(config.repeats_per_problem)
    ]
    sink_lock = threading.Lock()

    def emit(record: RunRecord) -> None:
        if sink is not None:
            with sink_lock:
                sink(record)

    def run_job(job) -> RunRecord:
        pi, repeat, problem = job
        agent = build_agent(config.agent, seed=config.seed + pi * 1009 + repeat)
        try:
            record = run_single(problem, config.strategy, agent, config.max_iterations)
        except AgentError as exc:
            record = exc.record
        emit(record)
        return record

    if workers <= 1:
        return [run_job(job) for job in jobs]
    results: dict[tuple[int, int], RunRecord] = {}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(run_job, job): job for job in jobs}
        for future, job in futures.items():
            results[(job[0], job[1])] = future.result()
    return [results[(pi, repeat)] for pi, repeat, _ in jobs]


# ---------------------------------------------------------------------------
# JSONL serialization of records

def _point_doc(p: Point) -> list[str]:
    return [fmt_coord(p.x), fmt_coord(p.y)]


def _path_doc(path: Sequence[Point] | None) -> list[list[str]] | None:
    if path is None:
        return None
    return [_point_doc(p) for p in path]


def _report_doc(report: VerificationReport | None):
    if report is None:
        return None
    return {
        "starts_in_initial": report.starts_in_initial,
        "ends_in_goal": report.ends_in_goal,
        "segment_collisions": [list(pair) for pair in report.segment_collisions],
    }


def _bundle_doc(bundle: HintBundle | None):
    if bundle is None:
        return None
    doc: dict = {"collision": None, "free_space": None, "prefix": None, "image": None}
    if bundle.collision is not None:
        doc["collision"] = {
            "starts_in_initial": bundle.collision.starts_in_initial,
            "ends_in_goal": bundle.collision.ends_in_goal,
            "colliding_segments": [
                [hit.segment_index, hit.obstacle_index, _point_doc(hit.start), _point_doc(hit.end)]
                for hit in bundle.collision.colliding_segments
            ],
        }
    if bundle.free_space is not None:
        doc["free_space"] = {
            "slices": [
                {"x": fmt_coord(s.slice_x), "points": _path_doc(s.safe_points)}
                for s in bundle.free_space.slices
            ]
        }
    if bundle.prefix is not None:
        doc["prefix"] = {"waypoints": _path_doc(bundle.prefix.prefix)}
    if bundle.image is not None:
        doc["image"] = {
            "width": bundle.image.width,
            "height": bundle.image.height,
            "sha256": hashlib.sha256(bundle.image.data).hexdigest(),
        }
    return doc


def record_to_json(record: RunRecord) -> dict:
    """JSON document for one record. wall_time is volatile and deliberately
    excluded so result files are byte-for-byte reproducible."""
    strategy = record.strategy
    return {
        "problem_name": record.problem_name,
        "strategy": {
            "name": strategy.name,
            "collision": strategy.collision,
            "free_space": strategy.free_space,
            "prefix": strategy.prefix,
            "image": strategy.image,
            "slice_count": strategy.slice_count,
        },
        "agent": record.agent,
        "iterations_used": record.iterations_used,
        "success": record.success,
        "final_path": _path_doc(record.final_path),
        "final_path_length": record.final_path_length,
        "parse_failures": record.parse_failures,
        "error": record.error,
        "transcript": [
            {
                "response_text": step.response_text,
                "candidate": _path_doc(step.candidate),
                "report": _report_doc(step.report),
                "bundle": _bundle_doc(step.bundle),
                "parse_error": step.parse_error,
            }
            for step in record.transcript
        ],
        "problem": json.loads(serialize_problem(record.problem)),
    }


def record_to_json_line(record: RunRecord) -> str:
    return json.dumps(record_to_json(record)) + "\n"


def _path_from_doc(doc) -> tuple[Point, ...] | None:
    if doc is None:
        return None
    return tuple(Point.of(x, y) for x, y in doc)


def _report_from_doc(doc) -> VerificationReport | None:
    if doc is None:
        return None
    return VerificationReport(
        doc["starts_in_initial"],
        doc["ends_in_goal"],
        tuple((int(i), int(j)) for i, j in doc["segment_collisions"]),
    )


def _bundle_from_doc(doc) -> HintBundle | None:
    if doc is None:
        return None
    collision = None
    if doc.get("collision") is not None:
        c = doc["collision"]
        collision = CollisionHint(
            c["starts_in_initial"],
            c["ends_in_goal"],
            tuple(
                SegmentCollision(int(i), int(j), Point.of(*a), Point.of(*b))
                for i, j, a, b in c["colliding_segments"]
            ),
        )
    free_space = None
    if doc.get("free_space") is not None:
        free_space = FreeSpaceHint(
            tuple(
                SliceHint(Point.of(s["x"], 0).x, _path_from_doc(s["points"]) or ())
                for s in doc["free_space"]["slices"]
            )
        )
    prefix = None
    if doc.get("prefix") is not None:
        prefix = PrefixHint(_path_from_doc(doc["prefix"]["waypoints"]) or ())
    image = None
    if doc.get("image") is not None:
        image = ImageHint(b"", doc["image"]["width"], doc["image"]["height"])
    return HintBundle(collision, free_space, prefix, image)


def record_from_json(doc: dict) -> RunRecord:
    """Rebuild a RunRecord from its JSONL form (image bytes are not kept in
    the sink, only their hash, so reconstructed image hints carry no data)."""
    s = doc["strategy"]
    strategy = HintStrategy(
        collision=s["collision"],
        free_space=s["free_space"],
        prefix=s["prefix"],
        image=s["image"],
        slice_count=s["slice_count"],
    )
    return RunRecord(
        problem_name=doc["problem_name"],
        strategy=strategy,
        agent=doc["agent"],
        iterations_used=doc["iterations_used"],
        success=doc["success"],
        final_path=_path_from_doc(doc["final_path"]),
        final_path_length=doc["final_path_length"],
        transcript=tuple(
            TranscriptStep(
                step["response_text"],
                _path_from_doc(step["candidate"]),
                _report_from_doc(step["report"]),
                _bundle_from_doc(step["bundle"]),
                step["parse_error"],
            )
            for step in doc["transcript"]
        ),
        wall_time=0.0,
        parse_failures=doc["parse_failures"],
        problem=load_problem(json.dumps(doc["problem"])),
        error=doc.get("error"),
    )


def load_records(text: str) -> list[RunRecord]:
    return [record_from_json(json.loads(line)) for line in text.splitlines() if line.strip()]

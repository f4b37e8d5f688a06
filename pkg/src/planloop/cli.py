"""Command-line entry point for the whole pipeline.

Exit codes: 0 success, 2 usage or missing file, 3 credentials/transport,
4 domain error (invalid problem, generation exhausted, unsolvable batch).
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
import time
from pathlib import Path

from planloop import __version__
from planloop.geometry import EmptyPath, fmt_coord, verify_path
from planloop.hints import RenderSettings, collision_hint, free_space_hint, prefix_hint, render_image
from planloop.llm import (
    ENV_KEYS,
    AgentConfig,
    AuthError,
    LlmError,
    ProviderError,
    RateLimited,
    Timeout,
    format_waypoints,
    parse_response,
)
from planloop.loop import (
    AgentError,
    ExperimentConfig,
    HintStrategy,
    load_records,
    record_to_json_line,
    run_experiment,
)
from planloop.metrics import BY_OBSTACLE_COUNT, BY_PROBLEM, EmptyInput, aggregate, render_table
from planloop.oracle import (
    MIN_EUCLIDEAN,
    MIN_SEGMENTS,
    OracleConfig,
    UnsolvableInBatch,
    export_finetune_dataset,
    plan,
)
from planloop.problems import (
    CannotBlock,
    GenerationExhausted,
    GeneratorConfig,
    InvalidProblem,
    ParseError,
    Problem,
    generate_random,
    handcrafted_suite,
    load_problem,
    serialize_problem,
    suite_problem,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_TRANSPORT = 3
EXIT_DOMAIN = 4

_DOMAIN_ERRORS = (
    ParseError,
    InvalidProblem,
    GenerationExhausted,
    CannotBlock,
    UnsolvableInBatch,
    EmptyPath,
)
_TRANSPORT_ERRORS = (AuthError, RateLimited, Timeout, ProviderError, LlmError, AgentError)


def _load_problem_file(path: str) -> Problem:
    return load_problem(Path(path).read_text(encoding="utf-8"))


def _resolve_problems(spec: str) -> list[Problem]:
    """A problem source: 'suite', a directory of .json files, or a
    comma-separated list of files and suite problem names."""
    if spec == "suite":
        return handcrafted_suite()
    path = Path(spec)
    if path.is_dir():
        files = sorted(path.glob("*.json"))
        if not files:
            raise FileNotFoundError(f"no problem files in {spec}")
        return [load_problem(f.read_text(encoding="utf-8")) for f in files]
    problems = []
    for part in spec.split(","):
        part = part.strip()
        p = Path(part)
        if p.is_file():
            problems.append(load_problem(p.read_text(encoding="utf-8")))
            continue
        try:
            problems.append(suite_problem(part))
        except KeyError:
            raise FileNotFoundError(f"no such problem file or suite name: {part}") from None
    return problems


def _parse_path_arg(value: str):
    """Waypoints from an inline array or @file indirection."""
    if value.startswith("@"):
        value = Path(value[1:]).read_text(encoding="utf-8")
    return parse_response(value).waypoints


def _parse_agent_spec(spec: str) -> AgentConfig:
    provider, sep, model = spec.partition(":")
    if not sep or not model:
        raise ValueError(f"agent spec must look like provider:model, got {spec!r}")
    return AgentConfig(provider=provider, model_id=model)


def cmd_run(args) -> int:
    problems = _resolve_problems(args.problems)
    strategy = HintStrategy.from_name(args.strategy)
    agent = _parse_agent_spec(args.agent)
    if agent.provider != "scripted" and not os.environ.get(ENV_KEYS[agent.provider], ""):
        raise AuthError(f"set {ENV_KEYS[agent.provider]} to use provider {agent.provider}")
    config = ExperimentConfig(
        problems=tuple(problems),
        strategy=strategy,
        agent=agent,
        repeats_per_problem=args.repeats,
        max_iterations=args.max_iters,
        seed=args.seed,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    started_at = datetime.datetime.now(datetime.timezone.utc).isoformat()
    with out.open("w", encoding="utf-8") as sink_file:
        records = run_experiment(
            config, sink=lambda r: sink_file.write(record_to_json_line(r)), workers=args.workers
        )
    meta = {
        "version": __version__,
        "problems": [p.name for p in problems],
        "strategy": strategy.name,
        "agent": agent.summary,
        "repeats_per_problem": args.repeats,
        "max_iterations": args.max_iters,
        "seed": args.seed,
        "workers": args.workers,
        "records": len(records),
        "started": started_at,
        "finished": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "wall_time_total": time.perf_counter() - started,
    }
    Path(str(out) + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    successes = sum(1 for r in records if r.success)
    print(f"{len(records)} runs, {successes} successes -> {out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(args.n_instances):
        config = GeneratorConfig(
            obstacle_count=args.k,
            grid_tiles=args.grid_tiles,
            overlap=args.overlap,
            seed=args.seed + i,
            require_solvable=args.require_solvable,
        )
        problem = generate_random(config)
        path = out_dir / f"{problem.name}.json"
        path.write_text(serialize_problem(problem), encoding="utf-8")
        print(path)
    return EXIT_OK


def cmd_verify(args) -> int:
    problem = _load_problem_file(args.problem)
    path = _parse_path_arg(args.path)
    report = verify_path(problem, path)
    print(f"starts_in_initial: {report.starts_in_initial}")
    print(f"ends_in_goal: {report.ends_in_goal}")
    for i, j in report.segment_collisions:
        a, b = path[i], path[i + 1]
        print(
            f"segment {i} from ({fmt_coord(a.x)}, {fmt_coord(a.y)}) to "
            f"({fmt_coord(b.x)}, {fmt_coord(b.y)}) intersects obstacle {j}"
        )
    print("correct" if report.is_correct else "incorrect")
    return EXIT_OK if report.is_correct else 1


def cmd_hint(args) -> int:
    problem = _load_problem_file(args.problem)
    doc: dict = {}
    fs = free_space_hint(problem, args.slices)
    doc["free_space"] = {
        "slices": [
            {
                "x": fmt_coord(s.slice_x),
                "points": [[fmt_coord(p.x), fmt_coord(p.y)] for p in s.safe_points],
            }
            for s in fs.slices
        ]
    }
    if args.path is not None:
        path = _parse_path_arg(args.path)
        ch = collision_hint(problem, path)
        doc["collision"] = {
            "starts_in_initial": ch.starts_in_initial,
            "ends_in_goal": ch.ends_in_goal,
            "colliding_segments": [
                [h.segment_index, h.obstacle_index] for h in ch.colliding_segments
            ],
        }
        ph = prefix_hint(problem, path)
        doc["prefix"] = [[fmt_coord(p.x), fmt_coord(p.y)] for p in ph.prefix]
    text = json.dumps(doc, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return EXIT_OK


def cmd_render(args) -> int:
    problem = _load_problem_file(args.problem)
    path = _parse_path_arg(args.path) if args.path is not None else None
    settings = RenderSettings(width=args.width, height=args.height)
    image = render_image(problem, path, settings)
    Path(args.out).write_bytes(image.data)
    print(f"{args.out} ({image.width}x{image.height})")
    return EXIT_OK


def cmd_oracle(args) -> int:
    problem = _load_problem_file(args.problem)
    config = OracleConfig(epsilon=args.epsilon, objective=args.objective)
    result = plan(problem, config)
    if args.decide:
        print("solvable" if result.solvable else "unsolvable")
        return EXIT_OK
    if not result.solvable:
        print("unsolvable")
        return EXIT_OK
    print(format_waypoints(result.path))
    print(f"cost: {fmt_coord(result.cost)}")
    return EXIT_OK


def cmd_export_finetune(args) -> int:
    problems = _resolve_problems(args.problems)
    text = export_finetune_dataset(problems, chat_envelope=args.chat)
    Path(args.out).write_text(text, encoding="utf-8")
    print(f"{len(problems)} records -> {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    records = load_records(Path(args.results).read_text(encoding="utf-8"))
    rows = aggregate(records, args.group)
    text = render_table(rows, args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planloop",
        description="Closed-loop 2D path-planning benchmark harness.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a closed-loop experiment")
    run.add_argument("--problems", required=True, help="'suite', a directory, or files/names")
    run.add_argument("--strategy", required=True, choices=["none", "C", "CFP", "CFPI"])
    run.add_argument("--agent", required=True, help="provider:model, e.g. scripted:follow-free-space")
    run.add_argument("--repeats", type=int, default=1)
    run.add_argument("--max-iters", type=int, default=20)
    run.add_argument("--out", required=True, help="results JSONL path")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--seed", type=int, default=0)
    run.set_defaults(handler=cmd_run)

    gen = sub.add_parser("generate", help="generate random problems")
    gen.add_argument("--k", type=int, required=True, help="obstacles per problem")
    gen.add_argument("--n-instances", type=int, default=1)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--grid-tiles", type=int, default=9)
    gen.add_argument("--overlap", default="0.2")
    gen.add_argument("--require-solvable", action="store_true")
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(handler=cmd_generate)

    verify = sub.add_parser("verify", help="verify a path against a problem")
    verify.add_argument("problem", help="problem JSON file")
    verify.add_argument("--path", required=True, help="inline waypoint array or @file")
    verify.set_defaults(handler=cmd_verify)

    hint = sub.add_parser("hint", help="compute hints for a problem (and path)")
    hint.add_argument("problem")
    hint.add_argument("--path", help="inline waypoint array or @file")
    hint.add_argument("--slices", type=int, default=5)
    hint.add_argument("--out")
    hint.set_defaults(handler=cmd_hint)

    render = sub.add_parser("render", help="render a problem (and path) to PNG")
    render.add_argument("problem")
    render.add_argument("--path", help="inline waypoint array or @file")
    render.add_argument("--out", required=True)
    render.add_argument("--width", type=int, default=512)
    render.add_argument("--height", type=int, default=512)
    render.set_defaults(handler=cmd_render)

    oracle = sub.add_parser("oracle", help="plan with the reference planner")
    oracle.add_argument("problem")
    oracle.add_argument("--decide", action="store_true", help="print solvable/unsolvable only")
    oracle.add_argument("--epsilon", default="0.001")
    oracle.add_argument("--objective", choices=[MIN_EUCLIDEAN, MIN_SEGMENTS], default=MIN_EUCLIDEAN)
    oracle.set_defaults(handler=cmd_oracle)

    export = sub.add_parser("export-finetune", help="export problem/solution training records")
    export.add_argument("--problems", required=True)
    export.add_argument("--out", required=True)
    export.add_argument("--chat", action="store_true", help="chat-message envelope records")
    export.set_defaults(handler=cmd_export_finetune)

    report = sub.add_parser("report", help="aggregate a results JSONL into a table")
    report.add_argument("results")
    report.add_argument("--group", choices=[BY_PROBLEM, BY_OBSTACLE_COUNT], default=BY_PROBLEM)
    report.add_argument("--format", choices=["csv", "markdown"], default="csv")
    report.add_argument("--out")
    report.set_defaults(handler=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        if args.command == "generate" and args.k < 1:
            parser.error("--k must be at least 1")
        return args.handler(args)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except _TRANSPORT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except EmptyInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()

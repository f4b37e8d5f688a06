"""Provider-agnostic chat interface: prompt construction, response parsing,
HTTP clients with retry and rate limiting, and deterministic scripted agents
for offline testing."""

from __future__ import annotations

import base64
import json
import os
import random
import re
import threading
import time
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from typing import Callable, Protocol, Sequence

from planloop.geometry import PathCandidate, Point, decimal_safe, fmt_coord, quantize
from planloop.hints import HintBundle, ImageHint, render_image

Role = str  # "system" | "user" | "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    text: str
    image: ImageHint | None = None

    def __post_init__(self) -> None:
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.image is not None and self.role != "user":
            raise ValueError("images may only be attached to user messages")


PROVIDERS = ("gemini", "gpt4o", "claude", "scripted")

ENV_KEYS = {
    "gemini": "GEMINI_API_KEY",
    "gpt4o": "OPENAI_API_KEY",
    "claude": "ANTHROPIC_API_KEY",
}


@dataclass(frozen=True)
class AgentConfig:
    provider: str
    model_id: str
    temperature: float | None = None
    timeout: float = 60.0
    max_retries: int = 3
    script: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.provider not in PROVIDERS:
            raise ValueError(f"unknown provider {self.provider!r}")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")

    @property
    def summary(self) -> str:
        return f"{self.provider}:{self.model_id}"


class ResponseParseError(ValueError):
    """The model reply did not contain a usable waypoint array."""


class NoPathFound(ResponseParseError):
    pass


class MalformedPair(ResponseParseError):
    pass


class EmptyBundle(ValueError):
    """feedback_prompt was given a bundle with no hints."""


class LlmError(RuntimeError):
    pass


class AuthError(LlmError):
    pass


class RateLimited(LlmError):
    pass


class Timeout(LlmError):
    pass


class ProviderError(LlmError):
    def __init__(self, message: str, status: int | None = None, body: str = ""):
        self.status = status
        self.body = body[:500]
        super().__init__(message)


@dataclass(frozen=True)
class ParsedResponse:
    waypoints: tuple[Point, ...]
    raw_text: str


# ---------------------------------------------------------------------------
# waypoint array formatting and extraction

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_PAIR = rf"\[\s*{_NUMBER}\s*,\s*{_NUMBER}\s*\]"
_PAIR_ARRAY_RE = re.compile(rf"\[\s*{_PAIR}(?:\s*,\s*{_PAIR})*\s*,?\s*\]")
_NUMBER_RE = re.compile(_NUMBER)


def format_waypoints(path: PathCandidate) -> str:
    """Canonical bracketed-array syntax for a waypoint sequence."""
    return "[" + ", ".join(f"[{fmt_coord(p.x)}, {fmt_coord(p.y)}]" for p in path) + "]"


def extract_waypoint_arrays(text: str) -> list[tuple[Point, ...]]:
    """All syntactically valid arrays of [x, y] pairs found in the text."""
    arrays = []
    for match in _PAIR_ARRAY_RE.finditer(text):
        numbers = _NUMBER_RE.findall(match.group())
        try:
            points = tuple(
                Point.of(numbers[i], numbers[i + 1]) for i in range(0, len(numbers), 2)
            )
        except ValueError:
            continue
        arrays.append(points)
    return arrays


def _balanced_arrays(text: str) -> list[str]:
    regions = []
    depth = 0
    start = -1
    for i, ch in enumerate(text):
        if ch == "[":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "]" and depth > 0:
            depth -= 1
            if depth == 0:
                regions.append(text[start : i + 1])
    return regions


def parse_response(raw: str) -> ParsedResponse:
    """Extract the last valid array of [x, y] pairs from a model reply.

    Tolerates surrounding prose, code fences, and whitespace. Raises
    NoPathFound when no array is present and MalformedPair when arrays exist
    but none consists of numeric pairs.
    """
    arrays = extract_waypoint_arrays(raw)
    if arrays:
        return ParsedResponse(arrays[-1], raw)
    for region in _balanced_arrays(raw):
        try:
            parsed = json.loads(region)
        except json.JSONDecodeError:
            continue
        if isinstance(parsed, list):
            raise MalformedPair("array found but its entries are not numeric [x, y] pairs")
    raise NoPathFound("no waypoint array in response")


# ---------------------------------------------------------------------------
# prompt construction

@lru_cache(maxsize=1)
def _worked_example() -> tuple[object, tuple[Point, ...]]:
    from planloop.problems import load_problem

    doc = resources.files("planloop").joinpath("data/worked_example.json").read_text("utf-8")
    data = json.loads(doc, parse_float=str)
    problem = load_problem(json.dumps(data["problem"]))
    solution = tuple(Point.of(x, y) for x, y in data["solution"])
    return problem, solution


def _polygon_array(poly) -> str:
    return format_waypoints(poly.vertices)


def describe_problem(problem) -> str:
    """Plain-text enumeration of a problem's sets, obstacle order preserved."""
    lines = [
        f"Workspace vertices: {_polygon_array(problem.workspace)}",
        f"Initial set vertices: {_polygon_array(problem.initial)}",
        f"Goal set vertices: {_polygon_array(problem.goal)}",
    ]
    if problem.obstacles:
        for j, obstacle in enumerate(problem.obstacles):
            lines.append(f"Obstacle {j} vertices: {_polygon_array(obstacle)}")
    else:
        lines.append("There are no obstacles.")
    return "\n".join(lines)


def _system_text() -> str:
    example_problem, solution = _worked_example()
    return "\n".join(
        [
            "You are solving 2D path planning problems.",
            "A problem gives a workspace, an initial set, a goal set, and zero or more",
            "obstacles; every set is a convex polygon listed by its vertices.",
            "Propose a path as a sequence of waypoints. A path is correct when its first",
            "waypoint lies inside the initial set, its last waypoint lies inside the goal",
            "set, and no straight segment between consecutive waypoints touches any",
            "obstacle. Obstacle boundaries count as collisions, so keep clearance.",
            "Explain your reasoning briefly, then end your reply with a single line",
            "containing only the waypoint array, like [[1, 1], [5, 2], [9, 9]].",
            "",
            "Example problem:",
            describe_problem(example_problem),
            "A correct answer for the example:",
            format_waypoints(solution),
        ]
    )


def initial_prompt(problem, strategy=None) -> list[ChatMessage]:
    """System message (task, response syntax, worked example) plus the user
    message stating the concrete problem; attaches a render when the hint
    strategy includes images."""
    image = None
    if strategy is not None and getattr(strategy, "image", False):
        image = render_image(problem)
    user_text = "\n".join(
        [
            "Solve this path planning problem.",
            describe_problem(problem),
            "Find a correct path from the initial set to the goal set.",
        ]
    )
    return [
        ChatMessage("system", _system_text()),
        ChatMessage("user", user_text, image),
    ]


SYNTAX_RETRY_TEXT = (
    "Your reply did not contain a path in the required syntax. Answer again and "
    "end with a single line containing only the waypoint array, like [[1, 1], [9, 9]]."
)

NO_HINT_RETRY_TEXT = "Your path is not correct. Propose a new path in the required syntax."


def feedback_prompt(bundle: HintBundle) -> ChatMessage:
    """Verbalize a hint bundle with fixed wording templates."""
    if bundle.is_empty:
        raise EmptyBundle("refusing to build feedback from an empty bundle")
    lines = ["Your path is not correct."]
    if bundle.collision is not None:
        c = bundle.collision
        if not c.starts_in_initial:
            lines.append("It does not start inside the initial set.")
        if not c.ends_in_goal:
            lines.append("It does not end inside the goal set.")
        for hit in c.colliding_segments:
            lines.append(
                f"Segment {hit.segment_index} from ({fmt_coord(hit.start.x)}, "
                f"{fmt_coord(hit.start.y)}) to ({fmt_coord(hit.end.x)}, "
                f"{fmt_coord(hit.end.y)}) intersects obstacle {hit.obstacle_index}."
            )
    if bundle.free_space is not None:
        lines.append(
            f"These points are in free space: {format_waypoints(bundle.free_space.points)}"
        )
    if bundle.prefix is not None:
        if bundle.prefix.prefix:
            lines.append(
                f"Your path is correct up to and including waypoint "
                f"{len(bundle.prefix.prefix)}: {format_waypoints(bundle.prefix.prefix)}"
            )
        else:
            lines.append(
                "No prefix of your path is correct: it does not start inside the initial set."
            )
    if bundle.image is not None:
        lines.append("An image of the problem and your last path is attached.")
    lines.append("Propose a new complete path in the required syntax.")
    return ChatMessage("user", "\n".join(lines), bundle.image)


# ---------------------------------------------------------------------------
# provider transport

class _TokenBucket:
    """Steady-rate limiter: one request per 60/rate_per_minute seconds."""

    def __init__(self, rate_per_minute: float, clock=time.monotonic, sleep=time.sleep):
        self.interval = 60.0 / rate_per_minute
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next_free = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = self._clock()
            wait = self._next_free - now
            if wait > 0:
                self._sleep(wait)
                now = self._next_free
            self._next_free = max(now, self._next_free) + self.interval


_rate_limiters: dict[str, _TokenBucket] = {}
_rate_lock = threading.Lock()
_DEFAULT_RPM = 60.0


def set_rate_limit(provider: str, requests_per_minute: float) -> None:
    with _rate_lock:
        _rate_limiters[provider] = _TokenBucket(requests_per_minute)


def _limiter(provider: str) -> _TokenBucket:
    with _rate_lock:
        if provider not in _rate_limiters:
            _rate_limiters[provider] = _TokenBucket(_DEFAULT_RPM)
        return _rate_limiters[provider]


def _image_b64(image: ImageHint) -> str:
    return base64.b64encode(image.data).decode("ascii")


def _build_request(config: AgentConfig, key: str, messages: Sequence[ChatMessage]):
    if config.provider == "gpt4o":
        url = "https://api.openai.com/v1/chat/completions"
        headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        payload_messages = []
        for m in messages:
            if m.image is None:
                content: object = m.text
            else:
                content = [
                    {"type": "text", "text": m.text},
                    {
                        "type": "image_url",
                        "image_url": {"url": "data:image/png;base64," + _image_b64(m.image)},
                    },
                ]
            payload_messages.append({"role": m.role, "content": content})
        payload: dict = {"model": config.model_id, "messages": payload_messages}
        if config.temperature is not None:
            payload["temperature"] = config.temperature
        return url, headers, payload

    if config.provider == "claude":
        url = "https://api.anthropic.com/v1/messages"
        headers = {
            "x-api-key": key,
            "anthropic-version": "2023-06-01",
            "Content-Type": "application/json",
        }
        system_parts = [m.text for m in messages if m.role == "system"]
        payload_messages = []
        for m in messages:
            if m.role == "system":
                continue
            blocks: list[dict] = [{"type": "text", "text": m.text}]
            if m.image is not None:
                blocks.append(
                    {
                        "type": "image",
                        "source": {
                            "type": "base64",
                            "media_type": "image/png",
                            "data": _image_b64(m.image),
                        },
                    }
                )
            payload_messages.append({"role": m.role, "content": blocks})
        payload = {
            "model": config.model_id,
            "max_tokens": 4096,
            "messages": payload_messages,
        }
        if system_parts:
            payload["system"] = "\n\n".join(system_parts)
        if config.temperature is not None:
            payload["temperature"] = config.temperature
        return url, headers, payload

    if config.provider == "gemini":
        url = (
            "https://generativelanguage.googleapis.com/v1beta/models/"
            f"{config.model_id}:generateContent"
        )
        headers = {"x-goog-api-key": key, "Content-Type": "application/json"}
        system_parts = [m.text for m in messages if m.role == "system"]
        contents = []
        for m in messages:
            if m.role == "system":
                continue
            parts: list[dict] = [{"text": m.text}]
            if m.image is not None:
                parts.append(
                    {"inline_data": {"mime_type": "image/png", "data": _image_b64(m.image)}}
                )
            contents.append(
                {"role": "model" if m.role == "assistant" else "user", "parts": parts}
            )
        payload = {"contents": contents}
        if system_parts:
            payload["system_instruction"] = {"parts": [{"text": "\n\n".join(system_parts)}]}
        if config.temperature is not None:
            payload["generationConfig"] = {"temperature": config.temperature}
        return url, headers, payload

    raise ValueError(f"no HTTP transport for provider {config.provider!r}")


def _extract_text(provider: str, body: dict) -> str:
    try:
        if provider == "gpt4o":
            return body["choices"][0]["message"]["content"]
        if provider == "claude":
            return "".join(
                block["text"] for block in body["content"] if block.get("type") == "text"
            )
        if provider == "gemini":
            parts = body["candidates"][0]["content"]["parts"]
            return "".join(part.get("text", "") for part in parts)
    except (KeyError, IndexError, TypeError) as exc:
        raise ProviderError(f"unexpected {provider} response shape: {exc}") from exc
    raise ValueError(f"no response extractor for provider {provider!r}")


class _TransportTimeout(Exception):
    pass


class _TransportFailure(Exception):
    pass


def _default_send(url: str, headers: dict, payload: dict, timeout: float):
    import httpx

    try:
        response = httpx.post(url, headers=headers, json=payload, timeout=timeout)
    except httpx.TimeoutException as exc:
        raise _TransportTimeout(str(exc)) from exc
    except httpx.TransportError as exc:
        raise _TransportFailure(str(exc)) from exc
    try:
        body = response.json()
    except ValueError:
        body = {}
    return response.status_code, body, response.text


SendFn = Callable[[str, dict, dict, float], tuple]


class HttpClient:
    """One provider endpoint with retry, backoff, and rate limiting."""

    def __init__(self, config: AgentConfig, send: SendFn | None = None, sleep=time.sleep):
        self.config = config
        self._send = send or _default_send
        self._sleep = sleep

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        config = self.config
        key = os.environ.get(ENV_KEYS[config.provider], "")
        if not key:
            raise AuthError(
                f"missing credential: set {ENV_KEYS[config.provider]} for provider "
                f"{config.provider}"
            )
        url, headers, payload = _build_request(config, key, messages)
        last_error: Exception | None = None
        for attempt in range(config.max_retries + 1):
            if attempt > 0:
                self._sleep(min(0.5 * 2 ** (attempt - 1), 8.0))
            _limiter(config.provider).acquire()
            try:
                status, body, text = self._send(url, headers, payload, config.timeout)
            except _TransportTimeout as exc:
                last_error = Timeout(f"request timed out: {exc}")
                continue
            except _TransportFailure as exc:
                last_error = ProviderError(f"transport failure: {exc}")
                continue
            if status == 200:
                return _extract_text(config.provider, body)
            if status in (401, 403):
                raise AuthError(f"{config.provider} rejected the credential (HTTP {status})")
            if status == 429:
                last_error = RateLimited(f"{config.provider} rate limited (HTTP 429)")
                continue
            if 500 <= status < 600:
                last_error = ProviderError(
                    f"{config.provider} server error (HTTP {status})", status, text
                )
                continue
            raise ProviderError(f"{config.provider} error (HTTP {status})", status, text)
        assert last_error is not None
        raise last_error


class ScriptedClient:
    """Test double that replays queued replies."""

    def __init__(self, replies: Sequence[str]):
        self._replies = list(replies)

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        if not self._replies:
            raise ProviderError("scripted client has no queued replies left")
        return self._replies.pop(0)


def make_client(config: AgentConfig, send: SendFn | None = None):
    if config.provider == "scripted":
        return ScriptedClient(config.script)
    return HttpClient(config, send=send)


def complete(config: AgentConfig, messages: Sequence[ChatMessage], send: SendFn | None = None) -> str:
    """Send one chat completion request and return the assistant text."""
    return make_client(config, send=send).complete(messages)


# ---------------------------------------------------------------------------
# agents

class Agent(Protocol):
    name: str

    def respond(self, messages: Sequence[ChatMessage]) -> str: ...


@dataclass
class ApiAgent:
    config: AgentConfig

    @property
    def name(self) -> str:
        return self.config.summary

    def respond(self, messages: Sequence[ChatMessage]) -> str:
        return complete(self.config, messages)


def _parse_labeled_array(text: str, label_re: str) -> tuple[Point, ...] | None:
    match = re.search(label_re + r":\s*(\[.*?\]\])", text, re.DOTALL)
    if match is None:
        return None
    arrays = extract_waypoint_arrays(match.group(1))
    return arrays[0] if arrays else None


def _vertex_center(points: Sequence[Point]) -> Point:
    n = len(points)
    center = Point(sum(p.x for p in points) / n, sum(p.y for p in points) / n)
    return decimal_safe(center)  # triangle centers would not format otherwise


def _problem_anchors(messages: Sequence[ChatMessage]) -> tuple[Point, Point, str]:
    user_messages = [m for m in messages if m.role == "user"]
    if not user_messages:
        raise ValueError("no user message with a problem statement")
    text = user_messages[0].text
    initial = _parse_labeled_array(text, r"Initial set vertices")
    goal = _parse_labeled_array(text, r"Goal set vertices")
    if initial is None or goal is None:
        raise ValueError("problem statement is missing initial/goal vertex arrays")
    return _vertex_center(initial), _vertex_center(goal), text


def _reply(path: Sequence[Point]) -> str:
    return f"Proposed path:\n{format_waypoints(path)}"


class EchoFixedPathAgent:
    """Always answers with the same configured path; never adapts."""

    def __init__(self, path: Sequence[Point]):
        self.path = tuple(path)
        self.name = "scripted:echo-fixed-path"

    def respond(self, messages: Sequence[ChatMessage]) -> str:
        return _reply(self.path)


class RandomWalkAgent:
    """Seeded random waypoints between the initial and goal centers."""

    def __init__(self, seed: int):
        self.seed = seed
        self.name = f"scripted:random-walk@{seed}"

    def respond(self, messages: Sequence[ChatMessage]) -> str:
        start, goal, problem_text = _problem_anchors(messages)
        workspace = _parse_labeled_array(problem_text, r"Workspace vertices") or (
            Point.of(0, 0),
            Point.of(10, 10),
        )
        xs = [p.x for p in workspace]
        ys = [p.y for p in workspace]
        attempt = sum(1 for m in messages if m.role == "assistant")
        rng = random.Random(self.seed * 100003 + attempt)
        middle = [
            Point(
                quantize(Fraction(repr(rng.uniform(float(min(xs)), float(max(xs))))), 3),
                quantize(Fraction(repr(rng.uniform(float(min(ys)), float(max(ys))))), 3),
            )
            for _ in range(2 + attempt % 3)
        ]
        return _reply([start, *middle, goal])


class FollowFreeSpaceAgent:
    """Chains free-space hint points slice by slice toward the goal.

    First attempt is the straight line between the set centers. After
    feedback, the candidate is the initial center, one safe point per slice
    in travel order (nearest to the previous waypoint), then the goal
    center. The correct-prefix hint pinpoints the slice where the last
    candidate failed; an odometer over per-slice choices explores the
    alternatives deterministically.
    """

    _FREE_RE = r"These points are in free space"
    _PREFIX_RE = r"Your path is correct up to and including waypoint \d+"

    def __init__(self) -> None:
        self.name = "scripted:follow-free-space"
        self._choices: dict[int, int] = {}
        self._last_candidate: tuple[Point, ...] | None = None
        self._last_positions: list[int] = []

    def respond(self, messages: Sequence[ChatMessage]) -> str:
        start, goal, _ = _problem_anchors(messages)
        user_messages = [m for m in messages if m.role == "user"]
        feedback = user_messages[-1].text if len(user_messages) > 1 else None
        free_points = (
            _parse_labeled_array(feedback, self._FREE_RE) if feedback else None
        )
        if feedback is None or free_points is None:
            candidate = (start, goal)
            self._last_candidate = candidate
            self._last_positions = []
            return _reply(candidate)

        prefix = _parse_labeled_array(feedback, self._PREFIX_RE) or ()
        self._advance_odometer(len(prefix))

        slices: dict[Fraction, list[Point]] = {}
        for p in free_points:
            slices.setdefault(p.x, []).append(p)
        ascending = goal.x >= start.x
        xs = sorted(slices, reverse=not ascending)
        # the slice at the start's own x matters: box-like exits go up first
        ahead = [x for x in xs if (x >= start.x if ascending else x <= start.x)]

        waypoints = [start]
        positions = []
        for pos, x in enumerate(ahead):
            candidates = sorted(
                slices[x],
                key=lambda p: (
                    (p.x - waypoints[-1].x) ** 2 + (p.y - waypoints[-1].y) ** 2,
                    p.y,
                    p.x,
                ),
            )
            if not candidates:
                continue
            pick = candidates[self._choices.get(pos, 0) % len(candidates)]
            waypoints.append(pick)
            positions.append(pos)
        waypoints.append(goal)
        candidate = tuple(waypoints)
        self._last_candidate = candidate
        self._last_positions = positions
        self._slice_sizes = {pos: len(slices[x]) for pos, x in enumerate(ahead)}
        return _reply(candidate)

    def _advance_odometer(self, prefix_len: int) -> None:
        if self._last_candidate is None or not self._last_positions:
            return
        first_missing = max(1, min(prefix_len, len(self._last_candidate) - 1))
        # waypoint i of the last candidate came from slice position i - 1
        slot = min(first_missing - 1, len(self._last_positions) - 1)
        sizes = getattr(self, "_slice_sizes", {})
        while slot >= 0:
            pos = self._last_positions[slot]
            self._choices[pos] = self._choices.get(pos, 0) + 1
            if self._choices[pos] < sizes.get(pos, 1):
                return
            self._choices[pos] = 0
            slot -= 1
        # full wrap: start over from the all-nearest chain


def scripted_agent(policy: str, seed: int = 0):
    """Build a deterministic offline agent from a policy spec string.

    Policies: ``echo-fixed-path@[[x, y], ...]``, ``follow-free-space``,
    ``random-walk`` or ``random-walk@SEED``.
    """
    name, _, arg = policy.partition("@")
    if name == "echo-fixed-path":
        arrays = extract_waypoint_arrays(arg)
        if not arrays:
            raise ValueError("echo-fixed-path needs a waypoint array argument")
        return EchoFixedPathAgent(arrays[0])
    if name == "follow-free-space":
        return FollowFreeSpaceAgent()
    if name == "random-walk":
        return RandomWalkAgent(int(arg) if arg else seed)
    raise ValueError(f"unknown scripted policy {name!r}")


def build_agent(config: AgentConfig, seed: int = 0):
    """Agent for a config: scripted policies offline, HTTP providers live."""
    if config.provider == "scripted":
        return scripted_agent(config.model_id, seed=seed)
    return ApiAgent(config)

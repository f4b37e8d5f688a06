from __future__ import annotations

import random
from fractions import Fraction

import pytest

from planloop.geometry import Point, quantize
from planloop.hints import HintBundle, collision_hint, free_space_hint, prefix_hint, render_image
from planloop.llm import (
    AgentConfig,
    AuthError,
    ChatMessage,
    EmptyBundle,
    MalformedPair,
    NoPathFound,
    ProviderError,
    RateLimited,
    ScriptedClient,
    _TokenBucket,
    _TransportFailure,
    _TransportTimeout,
    Timeout,
    build_agent,
    complete,
    feedback_prompt,
    format_waypoints,
    initial_prompt,
    parse_response,
    scripted_agent,
)
from planloop.loop import HintStrategy
from conftest import make_problem


def P(x, y) -> Point:
    return Point.of(x, y)


class TestParseResponse:
    def test_prose_then_array(self):
        parsed = parse_response("thoughts... [[0, 0], [5, 5]]")
        assert parsed.waypoints == (P(0, 0), P(5, 5))

    def test_last_array_wins(self):
        parsed = parse_response("first [[1, 1], [2, 2]] then [[3, 3], [4, 4]]")
        assert parsed.waypoints == (P(3, 3), P(4, 4))

    def test_no_array_raises(self):
        with pytest.raises(NoPathFound):
            parse_response("I cannot solve this")

    def test_malformed_pairs_raise(self):
        with pytest.raises(MalformedPair):
            parse_response('the answer is ["a", "b"]')

    def test_code_fence_tolerated(self):
        parsed = parse_response("```json\n[[1.5, 2], [3, 4.25]]\n```")
        assert parsed.waypoints == (P("1.5", 2), P(3, "4.25"))

    def test_multiline_array(self):
        parsed = parse_response("[\n  [1, 2],\n  [3, 4]\n]")
        assert parsed.waypoints == (P(1, 2), P(3, 4))

    def test_trailing_comma_tolerated(self):
        parsed = parse_response("[[1, 2], [3, 4],]")
        assert parsed.waypoints == (P(1, 2), P(3, 4))

    def test_single_waypoint(self):
        assert parse_response("[[5, 5]]").waypoints == (P(5, 5),)

    def test_negative_and_scientific(self):
        parsed = parse_response("[[-1.5, 2e1]]")
        assert parsed.waypoints == (Point(Fraction(-3, 2), Fraction(20)),)

    def test_round_trip_fuzz(self):
        rng = random.Random(71)
        templates = [
            "Reasoning first.\n{array}\n",
            "```\n{array}\n```",
            "I'll go around: {array}. Done.",
            "Option A [[0, 0], [1, 1]] is bad; final answer:\n{array}",
            "{array}",
        ]
        for _ in range(1000):
            count = rng.randrange(1, 8)
            path = tuple(
                Point(
                    quantize(Fraction(repr(rng.uniform(-20, 20))), rng.randrange(0, 4)),
                    quantize(Fraction(repr(rng.uniform(-20, 20))), rng.randrange(0, 4)),
                )
                for _ in range(count)
            )
            text = rng.choice(templates).format(array=format_waypoints(path))
            assert parse_response(text).waypoints == path


class TestPrompts:
    def test_initial_prompt_is_two_messages(self, empty_problem):
        messages = initial_prompt(empty_problem)
        assert [m.role for m in messages] == ["system", "user"]
        assert messages[0].image is None and messages[1].image is None

    def test_obstacle_order_preserved(self):
        problem = make_problem(
            "ordered",
            obstacles=[
                [(2, 2), (3, 2), (3, 3), (2, 3)],
                [(6, 6), (7, 6), (7, 7), (6, 7)],
            ],
        )
        text = initial_prompt(problem)[1].text
        assert text.index("Obstacle 0") < text.index("Obstacle 1")
        assert text.index("[[2, 2]") < text.index("[[6, 6]")

    def test_worked_example_solution_included(self, empty_problem):
        from planloop.llm import _worked_example

        _, solution = _worked_example()
        system = initial_prompt(empty_problem)[0].text
        assert format_waypoints(solution) in system

    def test_deterministic(self, empty_problem):
        a = initial_prompt(empty_problem)
        b = initial_prompt(empty_problem)
        assert [(m.role, m.text) for m in a] == [(m.role, m.text) for m in b]

    def test_image_attached_when_strategy_says_so(self, empty_problem):
        messages = initial_prompt(empty_problem, HintStrategy.from_name("CFPI"))
        assert messages[1].image is not None

    def test_image_only_on_user_messages(self, empty_problem):
        image = render_image(empty_problem)
        with pytest.raises(ValueError):
            ChatMessage("assistant", "hi", image)


class TestFeedbackPrompt:
    def test_collision_names_segment_and_obstacle(self, wall_problem):
        hint = collision_hint(wall_problem, (P(1, 1), P(9, 9)))
        message = feedback_prompt(HintBundle(collision=hint))
        assert "Segment 0" in message.text
        assert "obstacle 0" in message.text
        assert "(1, 1)" in message.text and "(9, 9)" in message.text

    def test_prefix_quotes_exactly_its_waypoints(self, empty_problem):
        bundle = HintBundle(prefix=prefix_hint(empty_problem, (P(1, 1), P(2, 2))))
        message = feedback_prompt(bundle)
        assert "up to and including waypoint 2" in message.text
        assert "[[1, 1], [2, 2]]" in message.text

    def test_free_space_lists_points(self, empty_problem):
        bundle = HintBundle(free_space=free_space_hint(empty_problem, 2))
        message = feedback_prompt(bundle)
        assert "These points are in free space:" in message.text

    def test_image_attached(self, empty_problem):
        bundle = HintBundle(image=render_image(empty_problem))
        assert feedback_prompt(bundle).image is not None

    def test_empty_bundle_raises(self):
        with pytest.raises(EmptyBundle):
            feedback_prompt(HintBundle())


def _messages():
    return [ChatMessage("system", "s"), ChatMessage("user", "u")]


class TestComplete:
    def test_scripted_queued_reply(self):
        config = AgentConfig(provider="scripted", model_id="replies", script=("R",))
        assert complete(config, _messages()) == "R"

    def test_scripted_client_consumes_queue(self):
        client = ScriptedClient(["a", "b"])
        assert client.complete(_messages()) == "a"
        assert client.complete(_messages()) == "b"
        with pytest.raises(ProviderError):
            client.complete(_messages())

    def test_missing_credential_is_auth_error(self, monkeypatch):
        monkeypatch.delenv("OPENAI_API_KEY", raising=False)
        config = AgentConfig(provider="gpt4o", model_id="gpt-4o")
        with pytest.raises(AuthError):
            complete(config, _messages())

    def test_retry_twice_then_success(self, monkeypatch):
        monkeypatch.setenv("OPENAI_API_KEY", "k")
        calls = []

        def send(url, headers, payload, timeout):
            calls.append(url)
            if len(calls) < 3:
                raise _TransportFailure("connection reset")
            return 200, {"choices": [{"message": {"content": "ok"}}]}, ""

        from planloop.llm import HttpClient

        client = HttpClient(
            AgentConfig(provider="gpt4o", model_id="gpt-4o", max_retries=3),
            send=send,
            sleep=lambda s: None,
        )
        assert client.complete(_messages()) == "ok"
        assert len(calls) == 3

    def test_rate_limited_after_retries(self, monkeypatch):
        monkeypatch.setenv("OPENAI_API_KEY", "k")

        def send(url, headers, payload, timeout):
            return 429, {}, "slow down"

        from planloop.llm import HttpClient

        client = HttpClient(
            AgentConfig(provider="gpt4o", model_id="gpt-4o", max_retries=1),
            send=send,
            sleep=lambda s: None,
        )
        with pytest.raises(RateLimited):
            client.complete(_messages())

    def test_timeout_surfaces(self, monkeypatch):
        monkeypatch.setenv("GEMINI_API_KEY", "k")

        def send(url, headers, payload, timeout):
            raise _TransportTimeout("deadline")

        from planloop.llm import HttpClient

        client = HttpClient(
            AgentConfig(provider="gemini", model_id="gemini-1.5-pro", max_retries=1),
            send=send,
            sleep=lambda s: None,
        )
        with pytest.raises(Timeout):
            client.complete(_messages())

    def test_hard_error_is_provider_error(self, monkeypatch):
        monkeypatch.setenv("ANTHROPIC_API_KEY", "k")

        def send(url, headers, payload, timeout):
            return 400, {}, "bad request"

        from planloop.llm import HttpClient

        client = HttpClient(
            AgentConfig(provider="claude", model_id="claude-3-5-sonnet"),
            send=send,
            sleep=lambda s: None,
        )
        with pytest.raises(ProviderError) as excinfo:
            client.complete(_messages())
        assert excinfo.value.status == 400

    def test_auth_rejection_is_not_retried(self, monkeypatch):
        monkeypatch.setenv("OPENAI_API_KEY", "bad")
        calls = []

        def send(url, headers, payload, timeout):
            calls.append(1)
            return 401, {}, ""

        from planloop.llm import HttpClient

        client = HttpClient(
            AgentConfig(provider="gpt4o", model_id="gpt-4o", max_retries=3),
            send=send,
            sleep=lambda s: None,
        )
        with pytest.raises(AuthError):
            client.complete(_messages())
        assert len(calls) == 1


class TestRequestShapes:
    def test_openai_payload(self, monkeypatch, empty_problem):
        from planloop.llm import _build_request

        messages = initial_prompt(empty_problem, HintStrategy.from_name("CFPI"))
        url, headers, payload = _build_request(
            AgentConfig(provider="gpt4o", model_id="gpt-4o", temperature=0.5), "KEY", messages
        )
        assert "openai.com" in url
        assert headers["Authorization"] == "Bearer KEY"
        assert payload["model"] == "gpt-4o"
        assert payload["temperature"] == 0.5
        assert payload["messages"][0]["role"] == "system"
        image_part = payload["messages"][1]["content"][1]
        assert image_part["image_url"]["url"].startswith("data:image/png;base64,")

    def test_claude_payload_moves_system_out(self, empty_problem):
        from planloop.llm import _build_request

        messages = initial_prompt(empty_problem)
        url, headers, payload = _build_request(
            AgentConfig(provider="claude", model_id="c"), "KEY", messages
        )
        assert "anthropic.com" in url
        assert headers["x-api-key"] == "KEY"
        assert "system" in payload
        assert all(m["role"] != "system" for m in payload["messages"])
        assert payload["max_tokens"] > 0

    def test_gemini_payload_roles(self, empty_problem):
        from planloop.llm import _build_request

        messages = initial_prompt(empty_problem) + [ChatMessage("assistant", "try this")]
        url, headers, payload = _build_request(
            AgentConfig(provider="gemini", model_id="gemini-1.5-pro"), "KEY", messages
        )
        assert "generativelanguage.googleapis.com" in url
        assert payload["contents"][0]["role"] == "user"
        assert payload["contents"][1]["role"] == "model"
        assert "system_instruction" in payload

    def test_temperature_omitted_by_default(self, empty_problem):
        from planloop.llm import _build_request

        for provider in ("gpt4o", "claude", "gemini"):
            _, _, payload = _build_request(
                AgentConfig(provider=provider, model_id="m"), "KEY", initial_prompt(empty_problem)
            )
            assert "temperature" not in payload
            assert "generationConfig" not in payload


class TestTokenBucket:
    def test_serializes_bursts(self):
        now = [0.0]
        sleeps = []

        def clock():
            return now[0]

        def sleep(s):
            sleeps.append(s)
            now[0] += s

        bucket = _TokenBucket(60, clock=clock, sleep=sleep)  # 1 per second
        bucket.acquire()  # immediate
        bucket.acquire()  # must wait ~1s
        bucket.acquire()
        assert len(sleeps) == 2
        assert all(abs(s - 1.0) < 1e-9 for s in sleeps)


class TestScriptedAgents:
    def test_echo_fixed_path_never_adapts(self, empty_problem):
        agent = scripted_agent("echo-fixed-path@[[1, 1], [9, 9]]")
        messages = initial_prompt(empty_problem)
        first = agent.respond(messages)
        second = agent.respond(messages + [ChatMessage("user", "anything")])
        assert first == second
        assert "[[1, 1], [9, 9]]" in first

    def test_random_walk_reproducible(self, empty_problem):
        messages = initial_prompt(empty_problem)
        a = scripted_agent("random-walk@7").respond(messages)
        b = scripted_agent("random-walk@7").respond(messages)
        assert a == b
        c = scripted_agent("random-walk@8").respond(messages)
        assert a != c

    def test_follow_free_space_first_move_is_straight(self, empty_problem):
        agent = scripted_agent("follow-free-space")
        reply = agent.respond(initial_prompt(empty_problem))
        assert parse_response(reply).waypoints == (P(1, 1), P(9, 9))

    def test_unknown_policy_rejected(self):
        with pytest.raises(ValueError):
            scripted_agent("clairvoyant")

    def test_build_agent_dispatch(self):
        api = build_agent(AgentConfig(provider="gpt4o", model_id="gpt-4o"))
        assert api.name == "gpt4o:gpt-4o"
        scripted = build_agent(AgentConfig(provider="scripted", model_id="follow-free-space"))
        assert scripted.name == "scripted:follow-free-space"

"""Chat-completion backends: an oracle-backed deterministic mock and a live HTTP client."""

from __future__ import annotations

import enum
import hashlib
import itertools
import math
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import httpx

from . import oracle
from .oracle import Plan
from .prompts import (
    PROPOSE_MARKER,
    VOTE_MARKER,
    ChatMessage,
    Method,
    candidates_in_prompt,
    chain_in_prompt,
    distinct_moves,
    plan_chain,
    render_exemplar,
    render_proposals,
)
from .puzzles import (
    ArithmeticState,
    DropWaterState,
    GrassState,
    MinimalGrassInstance,
    NumberPathState,
    PuzzleInstance,
    StateParseError,
    divisor_pairs,
    grass_area,
    parse_state,
    render_state,
)
from .trace import Chain, ChainError, Link, parse_chain_text, parse_operation


class BackendError(RuntimeError):
    """Base for failures that end up recorded on a trial instead of aborting a suite."""

    code = "backend"


class TransportError(BackendError):
    code = "network"


class AuthenticationError(BackendError):
    code = "auth"


class RefusalError(BackendError):
    code = "refusal"


class MockError(BackendError):
    code = "mock"


@dataclass(frozen=True)
class CompletionParams:
    temperature: float = 0.2
    max_output_tokens: int = 4096
    seed_hint: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class Usage:
    input_tokens: int = 0
    output_tokens: int = 0

    def __add__(self, other: "Usage") -> "Usage":
        return Usage(self.input_tokens + other.input_tokens, self.output_tokens + other.output_tokens)

    def to_dict(self) -> dict:
        return {"input_tokens": self.input_tokens, "output_tokens": self.output_tokens}

    @classmethod
    def from_dict(cls, d: dict) -> "Usage":
        return cls(int(d["input_tokens"]), int(d["output_tokens"]))


def estimate_tokens(text: str) -> int:
    """Rough token count: ceil(utf-8 bytes / 4). Not any provider's tokenizer."""
    return math.ceil(len(text.encode("utf-8")) / 4)


class Corruption(str, enum.Enum):
    WRONG_ANSWER = "WrongAnswer"
    ILLEGAL_TRANSITION = "IllegalTransition"
    MALFORMED = "Malformed"


@dataclass(frozen=True)
class MockConfig:
    error_rate: float = 0.0
    corruption_mode: Corruption = Corruption.WRONG_ANSWER
    master_seed: int = 0
    branch_cap: int = 3
    detour_count: int = 2
    propose_cap: int = 16

    def __post_init__(self):
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError("error_rate must lie in [0, 1]")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        if self.branch_cap < 1 or self.detour_count < 0 or self.propose_cap < 1:
            raise ValueError("branch_cap and propose_cap must be positive, detour_count non-negative")
        object.__setattr__(self, "corruption_mode", Corruption(self.corruption_mode))


@dataclass(frozen=True)
class CallContext:
    """What the mock needs to know about a call; the live backend ignores it."""

    method: Method
    instance: PuzzleInstance
    instance_key: str
    trial: int = 0
    ordinal: int = 0


@dataclass(frozen=True)
class CallRow:
    """One wire attempt; failed attempts that were retried keep their own row."""

    usage: Usage
    retried: bool = False
    error: Optional[str] = None


@dataclass
class Completion:
    text: str
    usage: Usage
    rows: list[CallRow] = field(default_factory=list)


def message_tokens(messages: Sequence[ChatMessage]) -> int:
    return sum(estimate_tokens(m.content) for m in messages)


# ---------------------------------------------------------------------------
# mock


def coin(*parts) -> float:
    """Uniform [0, 1) from a keyed hash; no shared RNG state."""
    digest = hashlib.blake2b("\x1f".join(map(str, parts)).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64


def _perturb_state(state):
    if isinstance(state, DropWaterState):
        return DropWaterState(state.level_a + 1, state.level_b)
    if isinstance(state, NumberPathState):
        return NumberPathState(state.value + 1)
    if isinstance(state, ArithmeticState):
        vals = list(state.remaining)
        vals[-1] += 1
        return ArithmeticState(tuple(vals))
    dims = list(state.dims)
    i = next(i for i, d in enumerate(dims) if d is not None)
    w, h = dims[i]
    dims[i] = (w + 1, h)
    return GrassState(tuple(dims))


def _wrong_plan(instance: PuzzleInstance, gold: Plan) -> Optional[Plan]:
    """A legal plan of the gold length that does not solve the instance."""
    if isinstance(instance, MinimalGrassInstance):
        best = oracle.solve_minimal_grass(instance).grass_area
        for dims in itertools.product(*(divisor_pairs(a) for a in instance.areas)):
            if grass_area(instance.areas, dims) != best:
                return oracle.grass_plan(instance, oracle.GrassSolution(tuple(dims), grass_area(instance.areas, dims)))
        return None

    def dfs(state, moves):
        if len(moves) == len(gold):
            return None if instance.is_goal(state, len(moves)) else list(moves)
        for move in distinct_moves(instance, state):
            found = dfs(instance.apply(state, move), moves + [move])
            if found is not None:
                return found
        return None

    moves = dfs(instance.initial_state(), [])
    return oracle.replay(instance, moves) if moves is not None else None


def _replace_summary(text: str, old: Chain, new: Chain) -> str:
    head, sep, tail = text.rpartition(old.render())
    return head + new.render() + tail if sep else text


def _corrupt(instance: PuzzleInstance, method: Method, gold: Plan, text: str, mode: Corruption) -> str:
    gold_chain = plan_chain(instance, gold)
    if mode is Corruption.MALFORMED:
        # no summary, and the last step block is cut so no goal-reaching line survives
        lines = text.rstrip("\n").split("\n")
        cut = max((i for i, line in enumerate(lines) if line.startswith("Step ")), default=0)
        return "\n".join(lines[:cut]).rstrip("\n") + "\n"
    if mode is Corruption.WRONG_ANSWER:
        wrong = _wrong_plan(instance, gold)
        if wrong is not None:
            if method is Method.COT:
                return render_exemplar(instance, wrong, Method.COT)
            return _replace_summary(text, gold_chain, plan_chain(instance, wrong))
        # no legal wrong plan exists: misstate the final state instead
        mode = Corruption.ILLEGAL_TRANSITION
        k = len(gold.states) - 1
    else:
        k = max(1, (len(gold.moves) + 1) // 2)
    links = list(gold_chain.links)
    bad = render_state(_perturb_state(gold.states[k]))
    links[k - 1] = Link(links[k - 1].operation, bad)
    return _replace_summary(text, gold_chain, Chain(gold_chain.initial, tuple(links)))


class MockBackend:
    """Answers from the oracle; corruption is decided by a hash of (seed, instance, trial)."""

    name = "mock"

    def __init__(self, config: MockConfig = MockConfig()):
        self.config = config
        self._plans: dict[str, Optional[Plan]] = {}
        self._lock = threading.Lock()

    def _gold(self, ctx: CallContext) -> Optional[Plan]:
        with self._lock:
            if ctx.instance_key not in self._plans:
                self._plans[ctx.instance_key] = oracle.solve(ctx.instance)
            return self._plans[ctx.instance_key]

    def corrupted(self, ctx: CallContext) -> bool:
        return coin(self.config.master_seed, "trial", ctx.instance_key, ctx.trial) < self.config.error_rate

    def respond(self, messages: Sequence[ChatMessage], ctx: CallContext) -> str:
        last = messages[-1].content
        if PROPOSE_MARKER in last:
            return self._propose(last, ctx)
        if VOTE_MARKER in last:
            return self._vote(last, ctx)
        gold = self._gold(ctx)
        if gold is None:
            raise MockError(f"instance {ctx.instance_key} has no solution to imitate")
        cfg = self.config
        text = render_exemplar(ctx.instance, gold, ctx.method, cfg.branch_cap, cfg.detour_count)
        if self.corrupted(ctx):
            text = _corrupt(ctx.instance, ctx.method, gold, text, cfg.corruption_mode)
        return text

    def _propose(self, prompt: str, ctx: CallContext) -> str:
        chain_text = chain_in_prompt(prompt)
        if chain_text is None:
            return "I cannot find the current chain."
        chain = parse_chain_text(chain_text)
        instance = ctx.instance
        state = instance.initial_state()
        for link in chain.links:
            state = instance.apply(state, parse_operation(instance, state, link.operation))
        lines = render_proposals(instance, chain, state)
        cap = self.config.propose_cap
        if len(lines) > cap:
            # truncation keeps every successor from which the goal is still reachable
            depth = len(chain.links) + 1
            keyed = []
            for line, move in zip(lines, distinct_moves(instance, state)):
                keyed.append((not oracle.viable(instance, instance.apply(state, move), depth), line))
            keep = {line for _, line in sorted(keyed, key=lambda kv: kv[0])[:cap]}
            lines = [line for line in lines if line in keep]
        return "\n".join(lines)

    def _vote(self, prompt: str, ctx: CallContext) -> str:
        instance = ctx.instance
        out = []
        for i, text in enumerate(candidates_in_prompt(prompt), 1):
            try:
                chain = parse_chain_text(text)
                state = parse_state(instance.kind, chain.final or "")
                good = oracle.viable(instance, state, len(chain.links))
            except (ChainError, StateParseError, ValueError):
                good = False
            if coin(self.config.master_seed, "vote", ctx.instance_key, ctx.trial, ctx.ordinal, i) < self.config.error_rate:
                good = not good
            out.append(f"Candidate {i}: value = {100 if good else 0}")
        return "\n".join(out)

    def complete(self, messages: Sequence[ChatMessage], params: CompletionParams, ctx: CallContext) -> Completion:
        if not messages:
            raise ValueError("no messages to send")
        text = self.respond(messages, ctx)
        usage = Usage(message_tokens(messages), estimate_tokens(text))
        return Completion(text, usage, [CallRow(usage)])


# ---------------------------------------------------------------------------
# live


@dataclass(frozen=True)
class LiveConfig:
    base_url: str
    model: str
    api_key_env: str = "OPENAI_API_KEY"
    max_in_flight: int = 4
    requests_per_minute: float = 60.0
    max_attempts: int = 5
    backoff_base: float = 1.0
    timeout: float = 120.0


class LiveBackend:
    """Chat-completions over HTTP with retries, an in-flight bound and an rpm throttle."""

    name = "live"

    def __init__(self, config: LiveConfig, transport: Optional[httpx.BaseTransport] = None, sleep=time.sleep):
        key = os.environ.get(config.api_key_env)
        if not key:
            raise AuthenticationError(f"environment variable {config.api_key_env} is not set")
        self.config = config
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            headers={"Authorization": f"Bearer {key}"},
            timeout=config.timeout,
            transport=transport,
        )
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._throttle = threading.Lock()
        self._next_slot = 0.0
        self._sleep = sleep

    def _wait_turn(self) -> None:
        if self.config.requests_per_minute <= 0:
            return
        gap = 60.0 / self.config.requests_per_minute
        with self._throttle:
            now = time.monotonic()
            wait = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + gap
        if wait > 0:
            self._sleep(wait)

    def _payload(self, messages, params: CompletionParams) -> dict:
        body = {
            "model": self.config.model,
            "messages": [m.to_dict() for m in messages],
            "temperature": params.temperature,
            "max_tokens": params.max_output_tokens,
        }
        if params.seed_hint is not None:
            body["seed"] = params.seed_hint
        return body

    def complete(self, messages: Sequence[ChatMessage], params: CompletionParams, ctx: Optional[CallContext] = None) -> Completion:
        if not messages:
            raise ValueError("no messages to send")
        rows: list[CallRow] = []
        body = self._payload(messages, params)
        last_error = "no attempt made"
        for attempt in range(self.config.max_attempts):
            if attempt:
                self._sleep(self.config.backoff_base * 2 ** (attempt - 1) * (1 + random.random() * 0.1))
            self._wait_turn()
            with self._slots:
                try:
                    resp = self._client.post("/chat/completions", json=body)
                except httpx.TransportError as exc:
                    last_error = f"transport: {exc}"
                    rows.append(CallRow(Usage(), retried=True, error=last_error))
                    continue
            if resp.status_code in (401, 403):
                raise AuthenticationError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                rows.append(CallRow(_usage_of(resp), retried=True, error=last_error))
                continue
            if resp.status_code >= 400:
                raise RefusalError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            data = resp.json()
            usage = _usage_of(resp)
            choice = (data.get("choices") or [{}])[0]
            text = (choice.get("message") or {}).get("content")
            if choice.get("finish_reason") == "content_filter" or not text:
                raise RefusalError("provider returned no content")
            rows.append(CallRow(usage))
            return Completion(text, usage, rows)
        raise TransportError(f"gave up after {self.config.max_attempts} attempts ({last_error})")

    def close(self) -> None:
        self._client.close()


def _usage_of(resp: httpx.Response) -> Usage:
    try:
        u = resp.json().get("usage") or {}
    except ValueError:
        return Usage()
    return Usage(int(u.get("prompt_tokens", 0)), int(u.get("completion_tokens", 0)))

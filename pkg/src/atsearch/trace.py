"""Parsing, linting and scoring of model responses.

Four text formats are understood: ATS-BFS (scenario-numbered levels),
ATS-DFS (attempts with explicit step-backs), CoT (a numbered chain) and the
flattened ToT episode. Scoring only looks at the summary chain (or a
fallback chain recovered from the body); structural checks are advisory.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Union

from . import oracle
from .puzzles import (
    ArithmeticInstance,
    ArithmeticMove,
    DropWaterInstance,
    DropWaterMove,
    GrassMove,
    MinimalGrassInstance,
    NumberPathInstance,
    NumberPathMove,
    PuzzleError,
    PuzzleInstance,
    StateParseError,
    grass_area,
    parse_number,
    parse_state,
    format_number,
)


class TraceFormat(str, enum.Enum):
    BFS = "ats_bfs"
    DFS = "ats_dfs"
    COT = "cot"
    TOT_FLAT = "tot_flat"


class FailureReason(str, enum.Enum):
    NO_SUMMARY = "NoSummary"
    PARSE_ERROR = "ParseError"
    ILLEGAL_TRANSITION = "IllegalTransition"
    STEP_BUDGET_EXCEEDED = "StepBudgetExceeded"
    GOAL_NOT_MET = "GoalNotMet"
    NOT_OPTIMAL = "NotOptimal"
    BACKEND_ERROR = "BackendError"


@dataclass(frozen=True)
class Verdict:
    correct: bool
    failure_reason: Optional[FailureReason] = None
    details: str = ""

    def __post_init__(self):
        if self.correct and self.failure_reason is not None:
            raise ValueError("a correct verdict carries no failure reason")

    @classmethod
    def ok(cls) -> "Verdict":
        return cls(True)

    @classmethod
    def fail(cls, reason: FailureReason, details: str = "") -> "Verdict":
        return cls(False, reason, details)

    def to_dict(self) -> dict:
        return {
            "correct": self.correct,
            "failure_reason": self.failure_reason.value if self.failure_reason else None,
            "details": self.details,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        reason = d.get("failure_reason")
        return cls(d["correct"], FailureReason(reason) if reason else None, d.get("details", ""))


@dataclass(frozen=True)
class Issue:
    code: str
    message: str
    line_no: int = 0


# ---------------------------------------------------------------------------
# chains


class ChainError(ValueError):
    pass


@dataclass(frozen=True)
class Link:
    operation: str
    state: Optional[str]


@dataclass(frozen=True)
class Chain:
    initial: str
    links: tuple[Link, ...] = ()

    def __len__(self) -> int:
        return len(self.links)

    @property
    def states(self) -> list[Optional[str]]:
        return [self.initial] + [link.state for link in self.links]

    @property
    def final(self) -> Optional[str]:
        return self.links[-1].state if self.links else self.initial

    def extend(self, link: Link) -> "Chain":
        return Chain(self.initial, self.links + (link,))

    def render(self) -> str:
        parts = [self.initial]
        for link in self.links:
            parts.append(f"({link.operation})")
            if link.state is not None:
                parts.append(link.state)
        return " -> ".join(parts)


_TOKEN = re.compile(r"\[[^\[\]\n]*\]|\([^()\n]*\)")
_META_OP = re.compile(r"^\s*(?:value\s*=|revised\b)", re.I)
_NUMBER_TOKEN = re.compile(r"-?\d+(?:\.\d+)?")


def canonical_text(text: str) -> str:
    """Whitespace-free, number-normalized form used for structural comparison."""

    def num(m):
        try:
            return format_number(parse_number(m.group(0)))
        except (ValueError, ZeroDivisionError):
            return m.group(0)

    return _NUMBER_TOKEN.sub(num, re.sub(r"\s+", "", text)).replace("×", "*").replace("−", "-")


def tokenize(text: str) -> list[tuple[str, str]]:
    """('S', '[..]') for states, ('O', 'op') for parenthesised operations."""
    out = []
    for m in _TOKEN.finditer(text):
        tok = m.group(0)
        if tok.startswith("["):
            out.append(("S", tok))
        elif not _META_OP.match(tok[1:-1]):
            out.append(("O", tok[1:-1].strip()))
    return out


def chain_from_tokens(tokens: list[tuple[str, str]]) -> Chain:
    if not tokens or tokens[0][0] != "S":
        raise ChainError("a chain must start with a state")
    initial = tokens[0][1]
    links: list[Link] = []
    pending: Optional[str] = None
    for kind, value in tokens[1:]:
        if kind == "O":
            if pending is not None:
                links.append(Link(pending, None))
            pending = value
            continue
        if pending is not None:
            links.append(Link(pending, value))
            pending = None
            continue
        last = links[-1].state if links else initial
        # "[s]\n [s] -> ..." joins two segments of one chain
        if last is None or canonical_text(last) != canonical_text(value):
            raise ChainError(f"state {value} follows {last} without an operation")
    if pending is not None:
        links.append(Link(pending, None))
    return Chain(initial, tuple(links))


def clean_chain_text(text: str) -> str:
    return text.replace("\\n", " ").replace('"', " ").strip().rstrip(",").strip()


def parse_chain_text(text: str) -> Chain:
    return chain_from_tokens(tokenize(clean_chain_text(text)))


def render_cot(chain: Chain) -> str:
    """Numbered steps followed by a summary block."""
    blocks = []
    for k, link in enumerate(chain.links, 1):
        blocks.append(f"Step {k}\n{chain.states[k - 1]} -> ({link.operation}) -> {link.state}")
    blocks.append(f"Summary\n{chain.render()}")
    return "\n\n".join(blocks) + "\n"


def chain_key(chain: Chain) -> tuple:
    return (
        canonical_text(chain.initial),
        tuple((canonical_text(link.operation), canonical_text(link.state or "")) for link in chain.links),
    )


# ---------------------------------------------------------------------------
# operation grammar


class OperationParseError(ValueError):
    pass


def _load_grammar() -> dict:
    raw = json.loads(resources.files("atsearch").joinpath("data/op_grammar.json").read_text(encoding="utf-8"))
    num = raw["num"]
    return {
        kind: [(entry["move"], re.compile(entry["pattern"].replace("{num}", num))) for entry in raw[kind]]
        for kind in ("drop_water", "number_path", "arithmetic", "minimal_grass")
    }


OP_GRAMMAR = _load_grammar()


def _normalize_op(text: str) -> str:
    text = text.strip().lower().replace("×", "*").replace("÷", "/").replace("−", "-")
    return re.sub(r"\s+", " ", text)


def parse_operation(instance: PuzzleInstance, state, text: str):
    """Turn operation text into a Move for ``state``.

    Raises OperationParseError for text outside the grammar and PuzzleError when
    the text is well formed but inconsistent with the state (wrong operand or result).
    """
    norm = _normalize_op(text)
    for name, pattern in OP_GRAMMAR[instance.kind.value]:
        m = pattern.match(norm)
        if m:
            return _build_move(instance, state, name, m.groupdict())
    raise OperationParseError(f"unrecognized operation {text!r}")


def _build_move(instance, state, name, g):
    if isinstance(instance, DropWaterInstance):
        x, y = g.get("x"), g.get("y")
        if name == "fill":
            return DropWaterMove.FILL_A if x == "a" else DropWaterMove.FILL_B
        if name == "empty":
            return DropWaterMove.EMPTY_A if x == "a" else DropWaterMove.EMPTY_B
        if x == y:
            raise OperationParseError("cannot pour a bottle into itself")
        return DropWaterMove.POUR_A_B if x == "a" else DropWaterMove.POUR_B_A
    if isinstance(instance, NumberPathInstance):
        move = NumberPathMove.DOUBLE if name == "double" else NumberPathMove.ADD_ONE
        if g.get("v") is not None and parse_number(g["v"]) != state.value:
            raise PuzzleError(f"operand {g['v']} is not the current number {state.value}")
        result = 2 * state.value if move is NumberPathMove.DOUBLE else state.value + 1
        if g.get("r") is not None and parse_number(g["r"]) != result:
            raise PuzzleError(f"stated result {g['r']} but the operation gives {result}")
        return move
    if isinstance(instance, ArithmeticInstance):
        op = "*" if g["op"] == "x" else g["op"]
        move = ArithmeticMove(parse_number(g["x"]), parse_number(g["y"]), op)
        if g.get("r") is not None:
            if op == "/" and move.right == 0:
                raise PuzzleError("division by zero")
            if parse_number(g["r"]) != move.result():
                raise PuzzleError(f"stated result {g['r']} but {move} = {format_number(move.result())}")
        return move
    if isinstance(instance, MinimalGrassInstance):
        if g.get("i"):
            building = int(g["i"])
        else:
            free = [i for i, d in enumerate(state.dims) if d is None]
            if not free:
                raise PuzzleError("all buildings already have dimensions")
            building = free[0] + 1
        return GrassMove(building, int(g["w"]), int(g["h"]))
    raise OperationParseError(f"no grammar for {type(instance).__name__}")


# ---------------------------------------------------------------------------
# trace AST


@dataclass
class ScenarioLine:
    scenario_id: Optional[tuple[int, ...]]
    path: tuple[str, ...]
    operation: Optional[str]
    new_state: Optional[str]
    line_no: int = 0

    @property
    def id_text(self) -> str:
        return ".".join(map(str, self.scenario_id)) if self.scenario_id else ""


@dataclass
class StepBlock:
    number: int
    revised: bool = False
    lines: list[ScenarioLine] = field(default_factory=list)
    line_no: int = 0


@dataclass
class BacktrackMarker:
    resumed_state: str
    line_no: int = 0


@dataclass
class Trace:
    format: TraceFormat
    events: list[Union[StepBlock, BacktrackMarker]] = field(default_factory=list)
    summary: Optional[Chain] = None
    summary_error: Optional[str] = None
    diagnostics: list[Issue] = field(default_factory=list)

    @property
    def steps(self) -> list[StepBlock]:
        return [e for e in self.events if isinstance(e, StepBlock)]

    @property
    def backtracks(self) -> list[BacktrackMarker]:
        return [e for e in self.events if isinstance(e, BacktrackMarker)]


_STEP = re.compile(r"^\s*step\s+(\d+)\s*(\(\s*revised\s*\))?\s*[:.]?\s*(.*)$", re.I)
_SUMMARY = re.compile(r"^\s*#*\s*summary\b\s*:?\s*(.*)$", re.I)
_SCENARIO = re.compile(r"^\s*scenario\s+(\d+(?:\.\d+)*)\.?\s*[,:]?\s*(.*)$", re.I)
_RESUME = re.compile(r"now it is\s*(\[[^\[\]\n]*\])", re.I)


def _scenario_line(tokens, scenario_id, line_no) -> ScenarioLine:
    op_positions = [i for i, (k, _) in enumerate(tokens) if k == "O"]
    if not op_positions:
        return ScenarioLine(scenario_id, tuple(v for _, v in tokens), None, None, line_no)
    last = op_positions[-1]
    path = tuple(v for k, v in tokens[:last] if k == "S")
    after = [v for k, v in tokens[last + 1 :] if k == "S"]
    return ScenarioLine(scenario_id, path, tokens[last][1], after[0] if after else None, line_no)


def parse_trace(text, fmt: TraceFormat) -> Trace:
    """Total, best-effort parse; anything unrecognized becomes a diagnostic."""
    fmt = TraceFormat(fmt)
    if isinstance(text, (bytes, bytearray)):
        text = bytes(text).decode("utf-8", errors="replace")
    if fmt is TraceFormat.TOT_FLAT:
        return _tot_flat_trace(text)
    trace = Trace(fmt)
    if not text.strip():
        trace.diagnostics.append(Issue("empty", "empty response"))
        return trace
    current: Optional[StepBlock] = None
    awaiting_summary = False

    def set_summary(body: str, line_no: int):
        try:
            trace.summary = chain_from_tokens(tokenize(body))
            trace.summary_error = None
        except ChainError as exc:
            trace.summary_error = f"line {line_no}: {exc}"
            trace.diagnostics.append(Issue("bad-summary", str(exc), line_no))

    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if awaiting_summary:
            awaiting_summary = False
            if "[" in line:
                set_summary(line, line_no)
                continue
        m = _SUMMARY.match(line)
        if m:
            if "[" in m.group(1):
                set_summary(m.group(1), line_no)
            else:
                awaiting_summary = True
            continue
        m = _STEP.match(line)
        if m:
            current = StepBlock(int(m.group(1)), bool(m.group(2)), [], line_no)
            trace.events.append(current)
            rest = m.group(3)
            if "[" in rest:
                current.lines.append(_scenario_line(tokenize(rest), None, line_no))
            continue
        if "step back" in line.lower():
            resumed = _RESUME.findall(line)
            if not resumed:
                trace.diagnostics.append(Issue("backtrack-without-state", line.strip(), line_no))
            if resumed:
                # consecutive step-backs collapse into one marker at the last resumed state
                if trace.events and isinstance(trace.events[-1], BacktrackMarker):
                    trace.events[-1] = BacktrackMarker(resumed[-1], trace.events[-1].line_no)
                else:
                    trace.events.append(BacktrackMarker(resumed[-1], line_no))
            current = None
            continue
        scenario_id = None
        body = line
        m = _SCENARIO.match(line)
        if m:
            scenario_id = tuple(int(p) for p in m.group(1).split("."))
            body = m.group(2)
        tokens = tokenize(body)
        if not tokens or tokens[0][0] != "S":
            trace.diagnostics.append(Issue("unrecognized", line.strip()[:120], line_no))
            continue
        if current is None:
            trace.diagnostics.append(Issue("outside-step", "chain line outside a step block", line_no))
            current = StepBlock(0, False, [], line_no)
            trace.events.append(current)
        current.lines.append(_scenario_line(tokens, scenario_id, line_no))
    if awaiting_summary:
        trace.summary_error = "summary header without a chain"
        trace.diagnostics.append(Issue("bad-summary", trace.summary_error))
    return trace


# ---------------------------------------------------------------------------
# flattened ToT episodes


@dataclass
class TotFlatRound:
    step: int
    input_line: str = ""
    current: list[Chain] = field(default_factory=list)
    candidates: list[tuple[Chain, float]] = field(default_factory=list)
    chosen: list[Chain] = field(default_factory=list)


@dataclass
class TotFlatDoc:
    rounds: list[TotFlatRound] = field(default_factory=list)
    summary: Optional[Chain] = None
    diagnostics: list[Issue] = field(default_factory=list)

    def structure(self) -> tuple:
        """Comparable form: chains by canonical key, values rounded to one decimal."""
        return (
            tuple(
                (
                    r.step,
                    r.input_line.strip(),
                    tuple(chain_key(c) for c in r.current),
                    tuple((chain_key(c), round(v, 1)) for c, v in r.candidates),
                    tuple(chain_key(c) for c in r.chosen),
                )
                for r in self.rounds
            ),
            chain_key(self.summary) if self.summary else None,
        )


_TOT_STEP = re.compile(r"^\s*#\s*step\s*=\s*(\d+)\s*$", re.I)
_TOT_VALUE = re.compile(r"\(\s*value\s*=\s*(-?\d+(?:\.\d+)?)\s*\)", re.I)
_SECTIONS = (
    ("the current states are", "current"),
    ("from these states", "candidates"),
    ("then we choose", "chosen"),
)


def format_value(v: float) -> str:
    text = f"{v:.1f}"
    return text[:-2] if text.endswith(".0") else text


def render_tot_flat(input_line: str, rounds: list[TotFlatRound], summary: Optional[Chain]) -> str:
    blocks = []
    for r in rounds:
        lines = [f"# step = {r.step}", f"The input is {input_line}", "The current states are:"]
        lines += [c.render() for c in r.current]
        lines.append("From these states, we can achieve these new states:")
        lines += [f"{c.render()} (value = {format_value(v)})" for c, v in r.candidates]
        lines.append("Then we choose the new states with largest values:")
        lines += [c.render() for c in r.chosen]
        blocks.append("\n".join(lines))
    tail = "# Summary\n" + (summary.render() if summary else "")
    return "\n\n".join(blocks + [tail]) + "\n"


def parse_tot_flat(text: str) -> TotFlatDoc:
    doc = TotFlatDoc()
    section = None
    rnd: Optional[TotFlatRound] = None
    for line_no, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped:
            continue
        m = _TOT_STEP.match(stripped)
        if m:
            rnd = TotFlatRound(int(m.group(1)))
            doc.rounds.append(rnd)
            section = None
            continue
        if re.match(r"^#\s*summary\b", stripped, re.I):
            section = "summary"
            continue
        low = stripped.lower()
        if low.startswith("the input is"):
            if rnd is not None:
                rnd.input_line = stripped[len("the input is") :].strip()
            continue
        hit = next((name for prefix, name in _SECTIONS if low.startswith(prefix)), None)
        if hit:
            section = hit
            continue
        value = None
        vm = _TOT_VALUE.search(stripped)
        if vm:
            value = float(vm.group(1))
            stripped = stripped[: vm.start()] + stripped[vm.end() :]
        try:
            chain = parse_chain_text(stripped)
        except ChainError as exc:
            doc.diagnostics.append(Issue("unrecognized", f"{exc}: {stripped[:80]}", line_no))
            continue
        if section == "summary":
            doc.summary = chain
        elif rnd is None or section is None:
            doc.diagnostics.append(Issue("outside-round", stripped[:80], line_no))
        elif section == "candidates":
            rnd.candidates.append((chain, value if value is not None else 0.0))
        else:
            getattr(rnd, section).append(chain)
    return doc


def _tot_flat_trace(text: str) -> Trace:
    doc = parse_tot_flat(text)
    trace = Trace(TraceFormat.TOT_FLAT, summary=doc.summary, diagnostics=list(doc.diagnostics))
    for r in doc.rounds:
        block = StepBlock(r.step + 1)
        for chain, _ in r.candidates:
            block.lines.append(
                ScenarioLine(None, tuple(s for s in chain.states[:-1] if s), chain.links[-1].operation if chain.links else None, chain.final)
            )
        trace.events.append(block)
    if not text.strip():
        trace.diagnostics.append(Issue("empty", "empty response"))
    return trace


# ---------------------------------------------------------------------------
# verification


def _replay(instance: PuzzleInstance, chain: Chain):
    """Simulate a chain. Returns (final_state, n_moves, failure Verdict or None)."""
    kind = instance.kind
    try:
        state = parse_state(kind, chain.initial)
    except StateParseError as exc:
        return None, 0, Verdict.fail(FailureReason.PARSE_ERROR, f"initial state {chain.initial}: {exc}")
    if state != instance.initial_state():
        return None, 0, Verdict.fail(FailureReason.ILLEGAL_TRANSITION, f"initial state {chain.initial} is not the puzzle start")
    for i, link in enumerate(chain.links, 1):
        try:
            move = parse_operation(instance, state, link.operation)
        except OperationParseError as exc:
            return None, i, Verdict.fail(FailureReason.PARSE_ERROR, f"link {i}: {exc}")
        except PuzzleError as exc:
            return None, i, Verdict.fail(FailureReason.ILLEGAL_TRANSITION, f"link {i}: {exc}")
        try:
            nxt = instance.apply(state, move)
        except PuzzleError as exc:
            return None, i, Verdict.fail(FailureReason.ILLEGAL_TRANSITION, f"link {i}: {exc}")
        if link.state is not None:
            try:
                stated = parse_state(kind, link.state)
            except StateParseError as exc:
                return None, i, Verdict.fail(FailureReason.PARSE_ERROR, f"link {i} state {link.state}: {exc}")
            if stated != nxt:
                return None, i, Verdict.fail(
                    FailureReason.ILLEGAL_TRANSITION, f"link {i}: ({link.operation}) does not lead to {link.state}"
                )
        state = nxt
    return state, len(chain.links), None


def verify_chain(instance: PuzzleInstance, chain: Chain) -> Verdict:
    """Replay the chain under the puzzle rules and check budget, goal and optimality."""
    state, n, failure = _replay(instance, chain)
    if failure is not None:
        return failure
    budget = getattr(instance, "max_steps_n", None) or getattr(instance, "steps_n", None)
    if budget is not None and n > budget:
        return Verdict.fail(FailureReason.STEP_BUDGET_EXCEEDED, f"{n} operations exceed the limit of {budget}")
    if not instance.is_goal(state, n):
        return Verdict.fail(FailureReason.GOAL_NOT_MET, f"final state {chain.final or '?'} after {n} operations")
    if isinstance(instance, MinimalGrassInstance):
        best = oracle.solve_minimal_grass(instance).grass_area
        got = grass_area(instance.areas, state.dims)
        if got != best:
            return Verdict.fail(FailureReason.NOT_OPTIMAL, f"grass area {got}, optimum is {best}")
    return Verdict.ok()


def _reaches_goal(instance: PuzzleInstance, chain: Chain) -> bool:
    state, n, failure = _replay(instance, chain)
    return failure is None and instance.is_goal(state, n)


def _bfs_candidates(trace: Trace):
    by_id: dict[tuple, ScenarioLine] = {}
    for step in trace.steps:
        for line in step.lines:
            if line.scenario_id:
                by_id.setdefault(line.scenario_id, line)
    for step in reversed(trace.steps):
        for line in step.lines:
            if not line.scenario_id or line.operation is None or not line.path:
                continue
            ancestry = [by_id.get(line.scenario_id[:k]) for k in range(1, len(line.scenario_id))]
            if any(a is None or a.operation is None for a in ancestry):
                continue
            first = ancestry[0] if ancestry else line
            links = [Link(a.operation, a.new_state) for a in ancestry] + [Link(line.operation, line.new_state)]
            yield Chain(first.path[0], tuple(links))


def _dfs_final_path(trace: Trace) -> Optional[Chain]:
    initial: Optional[str] = None
    links: list[Link] = []
    for event in trace.events:
        if isinstance(event, BacktrackMarker):
            states = [initial] + [l.state for l in links]
            keys = [canonical_text(s) if s else None for s in states]
            target = canonical_text(event.resumed_state)
            if target in keys:
                links = links[: len(keys) - 1 - keys[::-1].index(target)]
            continue
        for line in event.lines:
            if line.operation is None or not line.path:
                continue
            if initial is None:
                initial = line.path[0]
            depth = max(len(line.path) - 1, 0)
            links = links[:depth] + [Link(line.operation, line.new_state)]
    if initial is None:
        return None
    return Chain(initial, tuple(links))


def _linear_chain(trace: Trace) -> Optional[Chain]:
    initial: Optional[str] = None
    links: list[Link] = []
    for step in trace.steps:
        for line in step.lines:
            if line.operation is None or not line.path:
                continue
            if initial is None:
                initial = line.path[0]
            links.append(Link(line.operation, line.new_state))
    return Chain(initial, tuple(links)) if initial is not None else None


def extract_answer(trace: Trace, instance: PuzzleInstance) -> Optional[Chain]:
    """Summary chain if present, otherwise a goal-reaching chain recovered from the body."""
    if trace.summary is not None:
        return trace.summary
    if trace.format is TraceFormat.BFS:
        for chain in _bfs_candidates(trace):
            if _reaches_goal(instance, chain):
                return chain
        return None
    candidate = _dfs_final_path(trace) if trace.format is TraceFormat.DFS else _linear_chain(trace)
    if candidate is not None and _reaches_goal(instance, candidate):
        return candidate
    return None


def score_response(instance: PuzzleInstance, text, fmt: TraceFormat) -> Verdict:
    trace = parse_trace(text, fmt)
    chain = extract_answer(trace, instance)
    if chain is None:
        if trace.summary_error:
            return Verdict.fail(FailureReason.PARSE_ERROR, trace.summary_error)
        return Verdict.fail(FailureReason.NO_SUMMARY, "no summary chain and no goal-reaching chain in the body")
    return verify_chain(instance, chain)


# ---------------------------------------------------------------------------
# structure lint


def _same_state(instance, a: str, b: str) -> bool:
    try:
        return parse_state(instance.kind, a) == parse_state(instance.kind, b)
    except StateParseError:
        return canonical_text(a) == canonical_text(b)


def _check_transition(instance, line: ScenarioLine) -> tuple[Optional[str], Optional[str]]:
    """Returns (problem, resulting state text)."""
    from .puzzles import render_state

    if line.operation is None or not line.path:
        return None, line.new_state
    try:
        state = parse_state(instance.kind, line.path[-1])
        move = parse_operation(instance, state, line.operation)
        nxt = instance.apply(state, move)
    except (StateParseError, OperationParseError, PuzzleError) as exc:
        return f"({line.operation}) from {line.path[-1]}: {exc}", line.new_state
    if line.new_state is not None:
        if not _same_state(instance, line.new_state, render_state(nxt)):
            return f"({line.operation}) from {line.path[-1]} gives {render_state(nxt)}, not {line.new_state}", line.new_state
        return None, line.new_state
    return None, render_state(nxt)


def lint_structure(trace: Trace, instance: PuzzleInstance) -> list[Issue]:
    """Advisory checks on numbering, ancestry, transitions and backtracking."""
    from .puzzles import render_state

    issues: list[Issue] = []
    initial_text = render_state(instance.initial_state())
    if trace.format is TraceFormat.BFS:
        seen: dict[tuple, ScenarioLine] = {}
        for step in trace.steps:
            fresh = {}
            for line in step.lines:
                problem, _ = _check_transition(instance, line)
                if problem:
                    issues.append(Issue("illegal-transition", problem, line.line_no))
                sid = line.scenario_id
                if sid is None:
                    issues.append(Issue("missing-scenario-id", "scenario line without an id", line.line_no))
                    continue
                if len(sid) != step.number:
                    issues.append(Issue("depth-mismatch", f"scenario {line.id_text} under Step {step.number}", line.line_no))
                if len(sid) > 1:
                    parent = seen.get(sid[:-1])
                    if parent is None:
                        issues.append(Issue("orphan-parent", f"scenario {line.id_text} has no parent scenario", line.line_no))
                    elif parent.new_state and line.path and not _same_state(instance, parent.new_state, line.path[-1]):
                        issues.append(Issue("path-mismatch", f"scenario {line.id_text} does not continue its parent", line.line_no))
                elif line.path and not _same_state(instance, line.path[0], initial_text):
                    issues.append(Issue("wrong-start", f"scenario {line.id_text} does not start at {initial_text}", line.line_no))
                fresh[sid] = line
            seen.update(fresh)
        return issues

    if trace.format is TraceFormat.DFS:
        stack: list[str] = []
        expected: Optional[int] = None
        for event in trace.events:
            if isinstance(event, BacktrackMarker):
                idx = next((i for i in range(len(stack) - 1, -1, -1) if _same_state(instance, stack[i], event.resumed_state)), None)
                if idx is None:
                    issues.append(Issue("dangling-backtrack", f"{event.resumed_state} is not on the current path", event.line_no))
                    continue
                stack = stack[: idx + 1]
                expected = idx + 1
                continue
            if expected is not None and event.number != expected:
                issues.append(Issue("revision-depth", f"Step {event.number} after stepping back to depth {expected - 1}", event.line_no))
            if event.revised and expected is None:
                issues.append(Issue("revision-without-backtrack", f"Step {event.number} (revised) without a step back", event.line_no))
            expected = None
            for line in event.lines:
                problem, result = _check_transition(instance, line)
                if problem:
                    issues.append(Issue("illegal-transition", problem, line.line_no))
                if len(line.path) != event.number:
                    issues.append(Issue("depth-mismatch", f"Step {event.number} line with {len(line.path)} states", line.line_no))
                if stack and not all(_same_state(instance, a, b) for a, b in zip(line.path, stack)):
                    issues.append(Issue("path-mismatch", "line does not extend the current path", line.line_no))
                stack = list(line.path) + ([result] if result else [])
        return issues

    for step in trace.steps:
        for line in step.lines:
            problem, _ = _check_transition(instance, line)
            if problem:
                issues.append(Issue("illegal-transition", problem, line.line_no))
    return issues

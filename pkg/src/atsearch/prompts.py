"""Chat message assembly: system prompts, few-shot exemplars, CoT and ToT prompts."""

from __future__ import annotations

import enum
import json
import random
import re
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

from . import oracle
from .oracle import Plan
from .puzzles import (
    DropWaterInstance,
    PuzzleInstance,
    PuzzleKind,
    render_move,
    render_problem,
    render_state,
)
from .trace import Chain, Link, TraceFormat, lint_structure, parse_trace, render_cot, score_response


class Method(str, enum.Enum):
    COT = "CoT"
    ATS_BFS = "ATS_BFS"
    ATS_DFS = "ATS_DFS"
    TOT = "ToT"


class Shot(str, enum.Enum):
    ZERO = "zero_shot"
    FEW = "few_shot"


TRACE_FORMATS = {
    Method.COT: TraceFormat.COT,
    Method.ATS_BFS: TraceFormat.BFS,
    Method.ATS_DFS: TraceFormat.DFS,
    Method.TOT: TraceFormat.TOT_FLAT,
}

COT_INSTRUCTION = (
    "Let's think step by step. Write each step as [state] -> (operation) -> [new state], "
    "then finish with a line 'Summary' followed by the whole solution chain."
)
ATS_REMINDER = "Follow the response format above and finish with a line 'Summary: ' followed by the whole solution chain."


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise PromptError(f"unknown role {self.role!r}")
        if not self.content:
            raise PromptError("message content must be non-empty")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass(frozen=True)
class ExemplarSet:
    kind: PuzzleKind
    method: Method
    examples: tuple[tuple[str, str], ...]
    instance_ids: tuple[int, ...] = ()


def _data(name: str) -> str:
    return resources.files("atsearch").joinpath("data", name).read_text(encoding="utf-8")


_SYSTEM_FILES = {Method.ATS_BFS: "ats_bfs_system.txt", Method.ATS_DFS: "ats_dfs_system.txt"}
TOT_TEMPLATES = json.loads(_data("tot_templates.json"))


def system_prompt(method: Method) -> str:
    method = Method(method)
    if method not in _SYSTEM_FILES:
        raise PromptError(f"{method.value} has no system prompt")
    return _data(_SYSTEM_FILES[method]).rstrip("\n")


def _user_turn(method: Method, instance: PuzzleInstance) -> str:
    problem = render_problem(instance)
    if method is Method.COT:
        return f"{problem}\n{COT_INSTRUCTION}"
    return f"{problem}\n{ATS_REMINDER}"


def build_messages(
    method: Method,
    shot: Shot,
    instance: PuzzleInstance,
    exemplars: Optional[ExemplarSet] = None,
) -> list[ChatMessage]:
    method, shot = Method(method), Shot(shot)
    if method is Method.TOT:
        raise PromptError("ToT prompts are built per round; use tot_propose_prompt / tot_vote_prompt")
    if shot is Shot.ZERO:
        if method is Method.COT:
            return [ChatMessage("user", _user_turn(method, instance))]
        return [ChatMessage("system", system_prompt(method)), ChatMessage("user", _user_turn(method, instance))]
    if exemplars is None:
        raise PromptError("few-shot prompting needs an exemplar set")
    if exemplars.kind is not instance.kind or exemplars.method is not method:
        raise PromptError(
            f"exemplars are for {exemplars.kind.value}/{exemplars.method.value}, "
            f"target is {instance.kind.value}/{method.value}"
        )
    messages = []
    for problem, response in exemplars.examples:
        messages.append(ChatMessage("user", problem))
        messages.append(ChatMessage("assistant", response))
    messages.append(ChatMessage("user", render_problem(instance)))
    return messages


# ---------------------------------------------------------------------------
# exemplar rendering


def plan_chain(instance: PuzzleInstance, plan: Plan) -> Chain:
    links = tuple(
        Link(render_move(instance, s, m), render_state(t)) for s, m, t in zip(plan.states, plan.moves, plan.states[1:])
    )
    return Chain(render_state(plan.states[0]), links)


def distinct_moves(instance: PuzzleInstance, state) -> list:
    """Legal moves in canonical order, dropping no-ops and duplicate successors."""
    seen, out = {state}, []
    for move in instance.legal_moves(state):
        if isinstance(instance, DropWaterInstance) and instance.is_redundant(state, move):
            continue
        nxt = instance.apply(state, move)
        if nxt in seen:
            continue
        seen.add(nxt)
        out.append(move)
    return out


def _render_cot(instance, plan: Plan) -> str:
    return render_cot(plan_chain(instance, plan))


@dataclass
class _Node:
    sid: tuple[int, ...]
    path: tuple[str, ...]
    state: object
    gold: bool


def _render_bfs(instance, plan: Plan, branch_cap: int, line_cap: int = 12) -> str:
    root = _Node((), (render_state(plan.states[0]),), plan.states[0], True)
    frontier = [root]
    blocks = []
    for depth, gold_move in enumerate(plan.moves):
        # gold parent first so its children are never squeezed out by the line cap
        ordered = sorted(frontier, key=lambda n: not n.gold)
        budget = line_cap
        children: dict[tuple, list] = {}
        for node in ordered:
            moves = distinct_moves(instance, node.state)
            if node.gold:
                others = [m for m in moves if m != gold_move][:branch_cap]
                chosen = sorted([gold_move] + others, key=moves.index) if gold_move in moves else [gold_move] + others
            else:
                chosen = moves[: min(branch_cap, max(budget, 0))]
            chosen = chosen[: max(budget, 1 if node.gold else 0)]
            if node.gold and gold_move not in chosen:
                chosen[-1:] = [gold_move]
            budget -= len(chosen)
            children[node.sid] = chosen
        lines, nxt_frontier = [], []
        for node in frontier:
            for i, move in enumerate(children.get(node.sid, []), 1):
                nxt = instance.apply(node.state, move)
                child = _Node(node.sid + (i,), node.path + (render_state(nxt),), nxt, node.gold and move == gold_move)
                op = render_move(instance, node.state, move)
                lines.append(f"scenario {'.'.join(map(str, child.sid))}, {'->'.join(node.path)}-> ({op}) {child.path[-1]}")
                nxt_frontier.append(child)
        blocks.append(f"Step {depth + 1}\n" + "\n".join(lines))
        frontier = nxt_frontier
    blocks.append(f"Summary: {plan_chain(instance, plan).render()}")
    return "\n\n".join(blocks) + "\n"


def _dfs_line(path: list[str], op: str, new: str) -> str:
    return " -> ".join(path) + f" -> ({op}) {new}"


def _render_dfs(instance, plan: Plan, detour_count: int) -> str:
    start = plan.states[0]
    start_text = render_state(start)
    gold_first = plan.moves[0]
    dead = [
        m
        for m in distinct_moves(instance, start)
        if m != gold_first and not oracle.viable(instance, instance.apply(start, m), 1)
    ][:detour_count]
    blocks: list[str] = []
    for d, move in enumerate(dead):
        state = instance.apply(start, move)
        path = [start_text]
        blocks.append(f"Step 1{' (revised)' if d else ''}\n" + _dfs_line(path, render_move(instance, start, move), render_state(state)))
        path.append(render_state(state))
        depth = 1
        if len(plan.moves) > 1:
            follow = distinct_moves(instance, state)
            if follow:
                nxt = instance.apply(state, follow[0])
                blocks.append("Step 2\n" + _dfs_line(path, render_move(instance, state, follow[0]), render_state(nxt)))
                depth = 2
        if depth == 2:
            blocks.append(f"This is not the goal. Let's step back. Now it is {path[-1]}.")
            blocks.append(f"Let's step back. Now it is {start_text}.")
        else:
            blocks.append(f"This is not the goal. Let's step back. Now it is {start_text}.")
    path = [start_text]
    for k, (s, m, t) in enumerate(zip(plan.states, plan.moves, plan.states[1:]), 1):
        header = f"Step {k}{' (revised)' if k == 1 and dead else ''}"
        blocks.append(f"{header}\n" + _dfs_line(path, render_move(instance, s, m), render_state(t)))
        path.append(render_state(t))
    blocks.append(f"Summary: {plan_chain(instance, plan).render()}")
    return "\n\n".join(blocks) + "\n"


def render_exemplar(
    instance: PuzzleInstance, plan: Plan, method: Method, branch_cap: int = 3, detour_count: int = 2
) -> str:
    """Render an oracle plan as a response in the method's trace format."""
    method = Method(method)
    if plan.states[0] != instance.initial_state():
        raise PromptError("plan does not start at the instance's initial state")
    if method is Method.COT:
        return _render_cot(instance, plan)
    if method is Method.ATS_BFS:
        return _render_bfs(instance, plan, branch_cap)
    if method is Method.ATS_DFS:
        return _render_dfs(instance, plan, detour_count)
    raise PromptError("ToT responses are multi-round; see render_proposals")


def check_exemplar(instance: PuzzleInstance, text: str, method: Method) -> None:
    fmt = TRACE_FORMATS[Method(method)]
    verdict = score_response(instance, text, fmt)
    if not verdict.correct:
        raise PromptError(f"exemplar does not score correct: {verdict.failure_reason} {verdict.details}")
    issues = lint_structure(parse_trace(text, fmt), instance)
    if issues:
        raise PromptError(f"exemplar has lint issues: {issues}")


# ---------------------------------------------------------------------------
# ToT prompts


PROPOSE_MARKER = "You are the proposer."
VOTE_MARKER = "You are the evaluator."
VOTE_LABELS = {"sure": 100.0, "likely": 50.0, "impossible": 0.0}


def render_proposals(instance: PuzzleInstance, chain: Chain, state, cap: Optional[int] = None) -> list[str]:
    lines = []
    for move in distinct_moves(instance, state):
        nxt = instance.apply(state, move)
        lines.append(chain.extend(Link(render_move(instance, state, move), render_state(nxt))).render())
    return lines if cap is None else lines[:cap]


def tot_propose_prompt(
    instance: PuzzleInstance, chain: Chain, exemplars: Optional[ExemplarSet] = None
) -> list[ChatMessage]:
    text = TOT_TEMPLATES["propose"].format(
        problem=render_problem(instance), hint=TOT_TEMPLATES["hints"][instance.kind.value], chain=chain.render()
    )
    messages = []
    if exemplars is not None:
        for prompt, response in exemplars.examples:
            messages += [ChatMessage("user", prompt), ChatMessage("assistant", response)]
    return messages + [ChatMessage("user", text)]


def tot_vote_prompt(instance: PuzzleInstance, candidates: Sequence[Chain]) -> list[ChatMessage]:
    if not candidates:
        raise PromptError("nothing to evaluate")
    listing = "\n".join(f"Candidate {i}: {c.render()}" for i, c in enumerate(candidates, 1))
    return [ChatMessage("user", TOT_TEMPLATES["vote"].format(problem=render_problem(instance), candidates=listing))]


_VOTE_LINE = re.compile(
    r"candidate\s*(\d+)\s*[:.)-]?.*?(?:value\s*=\s*(-?\d+(?:\.\d+)?)|\b(sure|likely|impossible)\b)", re.I
)


def parse_votes(text: str, n_candidates: int) -> list[Optional[float]]:
    """Per-candidate value from one evaluator reply; None where the reply is silent."""
    values: list[Optional[float]] = [None] * n_candidates
    for line in text.splitlines():
        m = _VOTE_LINE.search(line)
        if not m:
            continue
        idx = int(m.group(1)) - 1
        if not 0 <= idx < n_candidates or values[idx] is not None:
            continue
        if m.group(2) is not None:
            values[idx] = min(max(float(m.group(2)), 0.0), 100.0)
        else:
            values[idx] = VOTE_LABELS[m.group(3).lower()]
    return values


def chain_in_prompt(text: str) -> Optional[str]:
    m = re.search(r"^Current chain:\n(.+)$", text, re.M)
    return m.group(1) if m else None


def candidates_in_prompt(text: str) -> list[str]:
    return re.findall(r"^Candidate \d+: (.+)$", text, re.M)


# ---------------------------------------------------------------------------
# exemplar sets


def build_exemplars(
    kind: PuzzleKind,
    method: Method,
    train_entries: Sequence,
    count: int = 4,
    seed: int = 0,
    branch_cap: int = 3,
    detour_count: int = 2,
) -> ExemplarSet:
    """Few-shot exemplars from train entries, each checked to score correct and lint clean."""
    kind, method = PuzzleKind(kind), Method(method)
    pool = [e for e in train_entries if e.instance.kind is kind]
    order = random.Random(seed).sample(range(len(pool)), len(pool))
    examples, ids = [], []
    for idx in order:
        if len(examples) == count:
            break
        entry = pool[idx]
        plan = oracle.solve(entry.instance)
        if plan is None or len(plan) == 0:
            continue
        if method is Method.TOT:
            chain = Chain(render_state(plan.states[0]))
            prompt = tot_propose_prompt(entry.instance, chain)[-1].content
            response = "\n".join(render_proposals(entry.instance, chain, plan.states[0]))
        else:
            response = render_exemplar(entry.instance, plan, method, branch_cap, detour_count)
            check_exemplar(entry.instance, response, method)
            prompt = render_problem(entry.instance)
        examples.append((prompt, response))
        ids.append(entry.id)
    if len(examples) < count:
        raise PromptError(f"only {len(examples)} usable exemplar instances for {kind.value}")
    return ExemplarSet(kind, method, tuple(examples), tuple(ids))

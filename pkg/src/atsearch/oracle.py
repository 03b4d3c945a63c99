"""Exact brute-force solvers used as ground truth everywhere else."""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

from .puzzles import (
    ArithmeticInstance,
    DropWaterInstance,
    DropWaterMove,
    DropWaterState,
    GrassMove,
    GrassState,
    MinimalGrassInstance,
    NumberPathInstance,
    NumberPathMove,
    PuzzleInstance,
    divisor_pairs,
    grass_area,
)


@dataclass(frozen=True)
class Plan:
    moves: tuple
    states: tuple

    def __post_init__(self):
        if len(self.states) != len(self.moves) + 1:
            raise ValueError("a plan has exactly one more state than moves")

    def __len__(self) -> int:
        return len(self.moves)


@dataclass(frozen=True)
class GrassSolution:
    dims: tuple[tuple[int, int], tuple[int, int], tuple[int, int]]
    grass_area: int


def replay(instance: PuzzleInstance, moves) -> Plan:
    states = [instance.initial_state()]
    for move in moves:
        states.append(instance.apply(states[-1], move))
    return Plan(tuple(moves), tuple(states))


# ---------------------------------------------------------------------------
# Drop Water


def _jug_bfs(instance: DropWaterInstance, start: DropWaterState):
    parent = {start: None}
    depth = {start: 0}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        for move in DropWaterMove:
            t = instance.apply(s, move)
            if t not in parent:
                parent[t] = (s, move)
                depth[t] = depth[s] + 1
                queue.append(t)
    return parent, depth


def _path_to(parent, state) -> tuple[list, list]:
    moves, states = [], [state]
    while parent[state] is not None:
        state, move = parent[state]
        moves.append(move)
        states.append(state)
    return moves[::-1], states[::-1]


def solve_drop_water(instance: DropWaterInstance) -> Optional[Plan]:
    """Shortest plan reaching the target in either bottle within the step cap."""
    start = instance.initial_state()
    parent, depth = _jug_bfs(instance, start)
    # BFS discovery order breaks ties by move-enum order
    for state in parent:
        if instance.target_c in (state.level_a, state.level_b):
            if depth[state] > instance.max_steps_n:
                return None
            moves, states = _path_to(parent, state)
            return Plan(tuple(moves), tuple(states))
    return None


@lru_cache(maxsize=4096)
def _jug_distances(cap_a: int, cap_b: int, target_c: int) -> dict:
    """Min remaining moves to reach target_c from every state (reverse BFS via forward edges)."""
    inst = DropWaterInstance(cap_a, cap_b, target_c, 1)
    states = [DropWaterState(a, b) for a in range(cap_a + 1) for b in range(cap_b + 1)]
    preds: dict = {s: [] for s in states}
    for s in states:
        for move in DropWaterMove:
            preds[inst.apply(s, move)].append(s)
    dist = {s: 0 for s in states if target_c in (s.level_a, s.level_b)}
    queue = deque(dist)
    while queue:
        s = queue.popleft()
        for p in preds[s]:
            if p not in dist:
                dist[p] = dist[s] + 1
                queue.append(p)
    return dist


def drop_water_distance(instance: DropWaterInstance, state: DropWaterState) -> Optional[int]:
    return _jug_distances(instance.cap_a, instance.cap_b, instance.target_c).get(state)


@lru_cache(maxsize=4096)
def _jug_min_steps_table(cap_a: int, cap_b: int) -> dict[int, int]:
    _, depth = _jug_bfs(DropWaterInstance(cap_a, cap_b, 1, 1), DropWaterState(0, 0))
    table: dict[int, int] = {}
    for state, k in depth.items():
        for c in (state.level_a, state.level_b):
            if c > 0 and k < table.get(c, k + 1):
                table[c] = k
    return table


def min_steps_drop_water(cap_a: int, cap_b: int, target_c: int) -> Optional[int]:
    """Shortest operation count to hold target_c in either bottle, ignoring any cap."""
    return _jug_min_steps_table(cap_a, cap_b).get(target_c)


# ---------------------------------------------------------------------------
# Number Path


def solve_number_path(instance: NumberPathInstance) -> Optional[Plan]:
    """First exactly-n sequence in Double-before-AddOne order."""
    for moves in itertools.product((NumberPathMove.DOUBLE, NumberPathMove.ADD_ONE), repeat=instance.steps_n):
        plan = replay(instance, moves)
        if plan.states[-1].value == instance.goal_b:
            return plan
    return None


def number_path_reachable(value: int, goal: int, remaining: int) -> bool:
    if remaining == 0:
        return value == goal
    if value > goal:
        return False
    return number_path_reachable(2 * value, goal, remaining - 1) or number_path_reachable(
        value + 1, goal, remaining - 1
    )


# ---------------------------------------------------------------------------
# Arithmetic


def _arith_search(instance: ArithmeticInstance, state, depth_left: int):
    if depth_left == 0:
        return [] if instance.is_goal(state) else None
    for move in instance.legal_moves(state):
        nxt = instance.apply(state, move)
        rest = _arith_search(instance, nxt, depth_left - 1)
        if rest is not None:
            return [move, *rest]
    return None


def arithmetic_solvable_from(instance: ArithmeticInstance, state) -> bool:
    return _arith_search(instance, state, len(state.remaining) - 1) is not None


def solve_arithmetic(instance: ArithmeticInstance) -> Optional[Plan]:
    moves = _arith_search(instance, instance.initial_state(), 2)
    if moves is None:
        return None
    return replay(instance, moves)


# ---------------------------------------------------------------------------
# Minimal Grass


def _grass_candidates(areas):
    return itertools.product(*(divisor_pairs(a) for a in areas))


def solve_minimal_grass(instance: MinimalGrassInstance) -> GrassSolution:
    """Exhaustive over divisor pairs; ties go to the lexicographically smallest dims."""
    best = min(_grass_candidates(instance.areas), key=lambda dims: (grass_area(instance.areas, dims), dims))
    return GrassSolution(tuple(best), grass_area(instance.areas, best))


def grass_optimal_completion(instance: MinimalGrassInstance, state: GrassState) -> Optional[int]:
    """Best grass area over completions of a partial assignment."""
    choices = [[d] if d is not None else divisor_pairs(a) for a, d in zip(instance.areas, state.dims)]
    return min(grass_area(instance.areas, dims) for dims in itertools.product(*choices))


def grass_plan(instance: MinimalGrassInstance, solution: GrassSolution) -> Plan:
    moves = [GrassMove(i + 1, w, h) for i, (w, h) in enumerate(solution.dims)]
    return replay(instance, moves)


# ---------------------------------------------------------------------------


def solve(instance: PuzzleInstance) -> Optional[Plan]:
    """Gold plan for any puzzle (Minimal Grass: one assignment move per building)."""
    if isinstance(instance, DropWaterInstance):
        return solve_drop_water(instance)
    if isinstance(instance, NumberPathInstance):
        return solve_number_path(instance)
    if isinstance(instance, ArithmeticInstance):
        return solve_arithmetic(instance)
    return grass_plan(instance, solve_minimal_grass(instance))


def viable(instance: PuzzleInstance, state, n_moves: int) -> bool:
    """Whether a goal (an optimal one for Minimal Grass) is still reachable from ``state``."""
    if isinstance(instance, DropWaterInstance):
        d = drop_water_distance(instance, state)
        return d is not None and n_moves + d <= instance.max_steps_n
    if isinstance(instance, NumberPathInstance):
        remaining = instance.steps_n - n_moves
        return remaining >= 0 and number_path_reachable(state.value, instance.goal_b, remaining)
    if isinstance(instance, ArithmeticInstance):
        return arithmetic_solvable_from(instance, state)
    return grass_optimal_completion(instance, state) == solve_minimal_grass(instance).grass_area

"""The four puzzles: instances, states, moves, transitions and text rendering.

Every instance type exposes the same small surface (``initial_state``,
``legal_moves``, ``apply``, ``is_goal``) and the module-level functions
dispatch on the instance so callers never need to switch on the kind.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Union

SNAP_DENOMINATOR = 10**6
SNAP_REL_TOL = 1e-9


class PuzzleKind(str, enum.Enum):
    DROP_WATER = "drop_water"
    NUMBER_PATH = "number_path"
    ARITHMETIC = "arithmetic"
    MINIMAL_GRASS = "minimal_grass"


class PuzzleError(ValueError):
    """Instance/state/move mismatch or an illegal move."""


class StateParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


# ---------------------------------------------------------------------------
# numbers


def format_number(x: Fraction) -> str:
    """Integers print bare; other rationals as the shortest float literal."""
    if x.denominator == 1:
        return str(x.numerator)
    return repr(float(x))


def parse_number(text: str) -> Fraction:
    """Parse a decimal literal, snapping float renderings back to small rationals."""
    text = text.strip().replace("−", "-")
    exact = Fraction(text)
    if exact.denominator == 1:
        return exact
    snapped = exact.limit_denominator(SNAP_DENOMINATOR)
    if abs(snapped - exact) <= SNAP_REL_TOL * abs(exact):
        return snapped
    return exact


# ---------------------------------------------------------------------------
# Drop Water


class DropWaterMove(str, enum.Enum):
    FILL_A = "fill A"
    FILL_B = "fill B"
    EMPTY_A = "empty A"
    EMPTY_B = "empty B"
    POUR_A_B = "pour A into B"
    POUR_B_A = "pour B into A"


@dataclass(frozen=True)
class DropWaterState:
    level_a: int
    level_b: int


@dataclass(frozen=True)
class DropWaterInstance:
    cap_a: int
    cap_b: int
    target_c: int
    max_steps_n: int

    kind = PuzzleKind.DROP_WATER

    def __post_init__(self):
        if min(self.cap_a, self.cap_b, self.target_c, self.max_steps_n) <= 0:
            raise PuzzleError(f"non-positive parameter in {self}")

    def params(self) -> dict:
        return {"a": self.cap_a, "b": self.cap_b, "c": self.target_c, "n": self.max_steps_n}

    def initial_state(self) -> DropWaterState:
        return DropWaterState(0, 0)

    def check_state(self, state) -> None:
        if not isinstance(state, DropWaterState):
            raise PuzzleError(f"expected DropWaterState, got {type(state).__name__}")
        if not (0 <= state.level_a <= self.cap_a and 0 <= state.level_b <= self.cap_b):
            raise PuzzleError(f"state {state} outside capacities ({self.cap_a}, {self.cap_b})")

    def legal_moves(self, state: DropWaterState) -> list[DropWaterMove]:
        self.check_state(state)
        # no-op moves are legal; see is_redundant
        return list(DropWaterMove)

    def apply(self, state: DropWaterState, move) -> DropWaterState:
        self.check_state(state)
        if not isinstance(move, DropWaterMove):
            raise PuzzleError(f"illegal move {move!r} for Drop Water")
        a, b = state.level_a, state.level_b
        if move is DropWaterMove.FILL_A:
            return DropWaterState(self.cap_a, b)
        if move is DropWaterMove.FILL_B:
            return DropWaterState(a, self.cap_b)
        if move is DropWaterMove.EMPTY_A:
            return DropWaterState(0, b)
        if move is DropWaterMove.EMPTY_B:
            return DropWaterState(a, 0)
        if move is DropWaterMove.POUR_A_B:
            t = min(a, self.cap_b - b)
            return DropWaterState(a - t, b + t)
        t = min(b, self.cap_a - a)
        return DropWaterState(a + t, b - t)

    def is_redundant(self, state: DropWaterState, move: DropWaterMove) -> bool:
        return self.apply(state, move) == state

    def is_goal(self, state: DropWaterState, n_moves: Optional[int] = None) -> bool:
        if n_moves is not None and n_moves > self.max_steps_n:
            return False
        return self.target_c in (state.level_a, state.level_b)

    def render_problem(self) -> str:
        return (
            f"You have two empty bottles without scales, bottle A with a capacity of {self.cap_a} liters "
            f"and bottle B with a capacity of {self.cap_b} liters, and a large water reservoir. "
            f"Get exactly {self.target_c} liters of water in either bottle within {self.max_steps_n} operations. "
            "Each operation either fills a bottle completely, empties a bottle completely, "
            "or pours water from one bottle into the other until one is full or the other is empty.\n"
            "Write states as [water in A, water in B] and operations as (fill A), (empty B), (pour A into B).\n"
            f"The input is {self.input_line()}"
        )

    def input_line(self) -> str:
        return f"{self.cap_a} {self.cap_b} {self.target_c} {self.max_steps_n}"


# ---------------------------------------------------------------------------
# Number Path


class NumberPathMove(str, enum.Enum):
    DOUBLE = "x2"
    ADD_ONE = "+1"


@dataclass(frozen=True)
class NumberPathState:
    value: int


@dataclass(frozen=True)
class NumberPathInstance:
    start_a: int
    goal_b: int
    steps_n: int = 4

    kind = PuzzleKind.NUMBER_PATH

    def __post_init__(self):
        if self.steps_n <= 0 or self.start_a < 0 or self.goal_b <= 0:
            raise PuzzleError(f"invalid parameters in {self}")
        if self.start_a >= self.goal_b:
            raise PuzzleError(f"start {self.start_a} must be below goal {self.goal_b}")

    def params(self) -> dict:
        return {"a": self.start_a, "b": self.goal_b, "n": self.steps_n}

    def initial_state(self) -> NumberPathState:
        return NumberPathState(self.start_a)

    def check_state(self, state) -> None:
        if not isinstance(state, NumberPathState):
            raise PuzzleError(f"expected NumberPathState, got {type(state).__name__}")

    def legal_moves(self, state: NumberPathState) -> list[NumberPathMove]:
        self.check_state(state)
        return [NumberPathMove.DOUBLE, NumberPathMove.ADD_ONE]

    def apply(self, state: NumberPathState, move) -> NumberPathState:
        self.check_state(state)
        if move is NumberPathMove.DOUBLE:
            return NumberPathState(2 * state.value)
        if move is NumberPathMove.ADD_ONE:
            return NumberPathState(state.value + 1)
        raise PuzzleError(f"illegal move {move!r} for Number Path")

    def is_redundant(self, state, move) -> bool:
        return False

    def is_goal(self, state: NumberPathState, n_moves: Optional[int] = None) -> bool:
        # exactly steps_n moves are required
        return n_moves == self.steps_n and state.value == self.goal_b

    def render_problem(self) -> str:
        return (
            f"Starting from the number {self.start_a}, reach the number {self.goal_b} "
            f"using a sequence of exactly {self.steps_n} operations. "
            "Each operation either doubles the current number (x2) or adds one to it (+1).\n"
            "Write states as [number] and operations as (x2) or (+1).\n"
            f"The input is {self.input_line()}"
        )

    def input_line(self) -> str:
        return f"{self.start_a} {self.goal_b} {self.steps_n}"


# ---------------------------------------------------------------------------
# Arithmetic

ARITH_OPS = ("+", "-", "*", "/")


@dataclass(frozen=True)
class ArithmeticMove:
    left: Fraction
    right: Fraction
    op: str

    def result(self) -> Fraction:
        if self.op == "+":
            return self.left + self.right
        if self.op == "-":
            return self.left - self.right
        if self.op == "*":
            return self.left * self.right
        if self.op == "/":
            if self.right == 0:
                raise PuzzleError("division by zero")
            return self.left / self.right
        raise PuzzleError(f"unknown operator {self.op!r}")

    def __str__(self) -> str:
        return f"{format_number(self.left)} {self.op} {format_number(self.right)}"


@dataclass(frozen=True, eq=False)
class ArithmeticState:
    """Remaining numbers. Order is kept for rendering; equality is multiset equality."""

    remaining: tuple[Fraction, ...]

    def key(self) -> tuple[Fraction, ...]:
        return tuple(sorted(self.remaining))

    def __eq__(self, other):
        if not isinstance(other, ArithmeticState):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        return hash(self.key())


def _remove_operands(remaining: tuple[Fraction, ...], x: Fraction, y: Fraction) -> Optional[list[Fraction]]:
    rest = list(remaining)
    for v in (x, y):
        if v not in rest:
            return None
        rest.remove(v)
    return rest


@dataclass(frozen=True)
class ArithmeticInstance:
    numbers: tuple[int, int, int]
    goal_n: int

    kind = PuzzleKind.ARITHMETIC

    def __post_init__(self):
        object.__setattr__(self, "numbers", tuple(self.numbers))
        if len(self.numbers) != 3 or min(self.numbers) <= 0 or self.goal_n <= 0:
            raise PuzzleError(f"invalid parameters in {self}")

    def params(self) -> dict:
        return {"numbers": list(self.numbers), "n": self.goal_n}

    def initial_state(self) -> ArithmeticState:
        return ArithmeticState(tuple(Fraction(x) for x in self.numbers))

    def check_state(self, state) -> None:
        if not isinstance(state, ArithmeticState):
            raise PuzzleError(f"expected ArithmeticState, got {type(state).__name__}")
        if not 1 <= len(state.remaining) <= 3:
            raise PuzzleError(f"state {state} must hold 1 to 3 numbers")

    def legal_moves(self, state: ArithmeticState) -> list[ArithmeticMove]:
        self.check_state(state)
        vals = state.remaining
        pairs = sorted({(vals[i], vals[j]) for i in range(len(vals)) for j in range(len(vals)) if i != j})
        moves = []
        for x, y in pairs:
            for op in ARITH_OPS:
                if op == "/" and y == 0:
                    continue
                moves.append(ArithmeticMove(x, y, op))
        return moves

    def apply(self, state: ArithmeticState, move) -> ArithmeticState:
        self.check_state(state)
        if not isinstance(move, ArithmeticMove) or move.op not in ARITH_OPS:
            raise PuzzleError(f"illegal move {move!r} for Arithmetic")
        rest = _remove_operands(state.remaining, move.left, move.right)
        if rest is None:
            raise PuzzleError(f"operands of {move} not both available in {render_state(state)}")
        if move.op == "/" and move.right == 0:
            raise PuzzleError("division by zero")
        return ArithmeticState((move.result(), *rest))

    def is_redundant(self, state, move) -> bool:
        return False

    def is_goal(self, state: ArithmeticState, n_moves: Optional[int] = None) -> bool:
        return len(state.remaining) == 1 and state.remaining[0] == self.goal_n

    def render_problem(self) -> str:
        nums = " ".join(str(x) for x in self.numbers)
        return (
            f"Use the numbers {nums} and basic arithmetic operations (+ - * /) to obtain {self.goal_n}. "
            "In each step pick two of the remaining numbers and combine them with one operation; "
            "every number must be used exactly once.\n"
            "Write states as the list of remaining numbers, e.g. [2, 3, 10], "
            "and operations as (x op y = z).\n"
            f"The input is {self.input_line()}"
        )

    def input_line(self) -> str:
        return " ".join(str(x) for x in (*self.numbers, self.goal_n))


# ---------------------------------------------------------------------------
# Minimal Grass

Dims = tuple[int, int]


@dataclass(frozen=True)
class GrassMove:
    building: int  # 1-based
    width: int
    height: int


@dataclass(frozen=True)
class GrassState:
    dims: tuple[Optional[Dims], Optional[Dims], Optional[Dims]] = (None, None, None)

    def complete(self) -> bool:
        return all(d is not None for d in self.dims)


def divisor_pairs(area: int) -> list[Dims]:
    return [(w, area // w) for w in range(1, area + 1) if area % w == 0]


def grass_area(areas: tuple[int, int, int], dims) -> int:
    """Green space of a staircase layout: bounding box (sum of widths) x (sum of heights) minus floors."""
    return sum(w for w, _ in dims) * sum(h for _, h in dims) - sum(areas)


@dataclass(frozen=True)
class MinimalGrassInstance:
    areas: tuple[int, int, int]

    kind = PuzzleKind.MINIMAL_GRASS

    def __post_init__(self):
        object.__setattr__(self, "areas", tuple(self.areas))
        if len(self.areas) != 3 or min(self.areas) <= 0:
            raise PuzzleError(f"invalid parameters in {self}")

    def params(self) -> dict:
        return {"areas": list(self.areas)}

    def initial_state(self) -> GrassState:
        return GrassState()

    def check_state(self, state) -> None:
        if not isinstance(state, GrassState):
            raise PuzzleError(f"expected GrassState, got {type(state).__name__}")
        for area, d in zip(self.areas, state.dims):
            if d is not None and d[0] * d[1] != area:
                raise PuzzleError(f"dims {d} do not cover area {area}")

    def legal_moves(self, state: GrassState) -> list[GrassMove]:
        self.check_state(state)
        return [
            GrassMove(i + 1, w, h)
            for i, area in enumerate(self.areas)
            if state.dims[i] is None
            for w, h in divisor_pairs(area)
        ]

    def apply(self, state: GrassState, move) -> GrassState:
        self.check_state(state)
        if not isinstance(move, GrassMove) or not 1 <= move.building <= 3:
            raise PuzzleError(f"illegal move {move!r} for Minimal Grass")
        i = move.building - 1
        if state.dims[i] is not None:
            raise PuzzleError(f"building {move.building} already has dimensions")
        if move.width <= 0 or move.height <= 0 or move.width * move.height != self.areas[i]:
            raise PuzzleError(f"{move.width} x {move.height} does not cover area {self.areas[i]}")
        dims = list(state.dims)
        dims[i] = (move.width, move.height)
        return GrassState(tuple(dims))

    def is_redundant(self, state, move) -> bool:
        return False

    def is_goal(self, state: GrassState, n_moves: Optional[int] = None) -> bool:
        return state.complete()

    def render_problem(self) -> str:
        a, b, c = self.areas
        return (
            f"Three rectangular buildings have floor areas of {a}, {b} and {c} square units. "
            "Choose integer dimensions (width x height) for each building and place them so that "
            "they do not block each other's view horizontally or vertically. "
            "The rest of their bounding box becomes green space; minimize the green space area.\n"
            "Write states as [dims of building 1, dims of building 2, dims of building 3] with ? for "
            "undecided buildings, e.g. [2x2, ?, ?], and operations as (building 1 = 2 x 2).\n"
            f"The input is {self.input_line()}"
        )

    def input_line(self) -> str:
        return " ".join(str(x) for x in self.areas)


PuzzleInstance = Union[DropWaterInstance, NumberPathInstance, ArithmeticInstance, MinimalGrassInstance]
PuzzleState = Union[DropWaterState, NumberPathState, ArithmeticState, GrassState]
Move = Union[DropWaterMove, NumberPathMove, ArithmeticMove, GrassMove]

INSTANCE_TYPES = {
    PuzzleKind.DROP_WATER: DropWaterInstance,
    PuzzleKind.NUMBER_PATH: NumberPathInstance,
    PuzzleKind.ARITHMETIC: ArithmeticInstance,
    PuzzleKind.MINIMAL_GRASS: MinimalGrassInstance,
}


def instance_from_params(kind: PuzzleKind, params: dict) -> PuzzleInstance:
    kind = PuzzleKind(kind)
    if kind is PuzzleKind.DROP_WATER:
        return DropWaterInstance(params["a"], params["b"], params["c"], params["n"])
    if kind is PuzzleKind.NUMBER_PATH:
        return NumberPathInstance(params["a"], params["b"], params["n"])
    if kind is PuzzleKind.ARITHMETIC:
        return ArithmeticInstance(tuple(params["numbers"]), params["n"])
    return MinimalGrassInstance(tuple(params["areas"]))


# ---------------------------------------------------------------------------
# dispatching API


def legal_moves(instance: PuzzleInstance, state: PuzzleState) -> list:
    return instance.legal_moves(state)


def apply_move(instance: PuzzleInstance, state: PuzzleState, move) -> PuzzleState:
    """Apply ``move``; raises PuzzleError with a reason when the move is not legal."""
    return instance.apply(state, move)


def is_goal(instance: PuzzleInstance, state: PuzzleState, n_moves: Optional[int] = None) -> bool:
    return instance.is_goal(state, n_moves)


def render_problem(instance: PuzzleInstance) -> str:
    return instance.render_problem()


def render_state(state: PuzzleState) -> str:
    if isinstance(state, DropWaterState):
        return f"[{state.level_a}, {state.level_b}]"
    if isinstance(state, NumberPathState):
        return f"[{state.value}]"
    if isinstance(state, ArithmeticState):
        return "[" + ", ".join(format_number(x) for x in state.remaining) + "]"
    if isinstance(state, GrassState):
        return "[" + ", ".join("?" if d is None else f"{d[0]}x{d[1]}" for d in state.dims) + "]"
    raise PuzzleError(f"not a puzzle state: {state!r}")


_NUM = re.compile(r"\s*([-−]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)\s*$")
_DIMS = re.compile(r"\s*(\d+)\s*[x×*]\s*(\d+)\s*$")
_UNSET = re.compile(r"\s*[?_\-]?\s*$")


def _split_brackets(text: str) -> list[tuple[str, int]]:
    start = len(text) - len(text.lstrip())
    body = text.strip()
    if not body.startswith("["):
        raise StateParseError("state must start with '['", start)
    if not body.endswith("]"):
        raise StateParseError("state must end with ']'", start + len(body) - 1)
    inner = body[1:-1]
    if "[" in inner or "]" in inner:
        raise StateParseError("nested bracket", start + 1 + min(i for i in (inner.find("["), inner.find("]")) if i >= 0))
    items, offset = [], start + 1
    for piece in inner.split(","):
        items.append((piece, offset))
        offset += len(piece) + 1
    return items


def parse_state(kind: PuzzleKind, text: str) -> PuzzleState:
    """Inverse of render_state; tolerant of whitespace and float-rendered rationals."""
    kind = PuzzleKind(kind)
    items = _split_brackets(text)
    if kind is PuzzleKind.MINIMAL_GRASS:
        if len(items) != 3:
            raise StateParseError("expected three building entries", items[0][1])
        dims = []
        for piece, off in items:
            m = _DIMS.match(piece)
            if m:
                dims.append((int(m.group(1)), int(m.group(2))))
            elif _UNSET.match(piece):
                dims.append(None)
            else:
                raise StateParseError(f"bad dimensions {piece.strip()!r}", off)
        return GrassState(tuple(dims))
    if len(items) == 1 and not items[0][0].strip():
        raise StateParseError("empty state", items[0][1])
    values = []
    for piece, off in items:
        m = _NUM.match(piece)
        if not m:
            raise StateParseError(f"bad number {piece.strip()!r}", off)
        try:
            values.append(parse_number(m.group(1)))
        except (ValueError, ZeroDivisionError):
            raise StateParseError(f"bad number {piece.strip()!r}", off) from None
    if kind is PuzzleKind.ARITHMETIC:
        return ArithmeticState(tuple(values))
    if any(v.denominator != 1 for v in values):
        raise StateParseError("expected integers", items[0][1])
    if kind is PuzzleKind.DROP_WATER:
        if len(values) != 2:
            raise StateParseError("expected two bottle levels", items[0][1])
        return DropWaterState(int(values[0]), int(values[1]))
    if len(values) != 1:
        raise StateParseError("expected a single number", items[0][1])
    return NumberPathState(int(values[0]))


def render_move(instance: PuzzleInstance, state: PuzzleState, move) -> str:
    """Operation text (without parentheses) in the form the trace grammar accepts."""
    if isinstance(move, DropWaterMove):
        return move.value
    if isinstance(move, NumberPathMove):
        return move.value
    if isinstance(move, ArithmeticMove):
        return f"{move} = {format_number(move.result())}"
    if isinstance(move, GrassMove):
        return f"building {move.building} = {move.width} x {move.height}"
    raise PuzzleError(f"not a move: {move!r}")

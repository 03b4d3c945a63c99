from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from atsearch.puzzles import (
    ArithmeticInstance,
    ArithmeticMove,
    ArithmeticState,
    DropWaterInstance,
    DropWaterMove,
    DropWaterState,
    GrassMove,
    GrassState,
    MinimalGrassInstance,
    NumberPathInstance,
    NumberPathMove,
    NumberPathState,
    PuzzleError,
    PuzzleKind,
    StateParseError,
    divisor_pairs,
    format_number,
    grass_area,
    instance_from_params,
    parse_number,
    parse_state,
    render_move,
    render_state,
)

caps = st.integers(1, 30)


@st.composite
def jug_case(draw):
    a, b = draw(caps), draw(caps)
    state = DropWaterState(draw(st.integers(0, a)), draw(st.integers(0, b)))
    return DropWaterInstance(a, b, 1, 4), state


@given(jug_case(), st.sampled_from(list(DropWaterMove)))
def test_pour_conserves_water_and_respects_capacity(case, move):
    inst, state = case
    nxt = inst.apply(state, move)
    assert 0 <= nxt.level_a <= inst.cap_a and 0 <= nxt.level_b <= inst.cap_b
    if move in (DropWaterMove.POUR_A_B, DropWaterMove.POUR_B_A):
        assert nxt.level_a + nxt.level_b == state.level_a + state.level_b
        # a pour stops when the source is empty or the destination full
        src, dst, dcap = (
            (nxt.level_a, nxt.level_b, inst.cap_b) if move is DropWaterMove.POUR_A_B else (nxt.level_b, nxt.level_a, inst.cap_a)
        )
        assert src == 0 or dst == dcap


def test_drop_water_noop_moves_are_legal_but_redundant():
    inst = DropWaterInstance(6, 4, 2, 2)
    s = inst.initial_state()
    assert len(inst.legal_moves(s)) == 6
    assert inst.is_redundant(s, DropWaterMove.EMPTY_A)
    assert not inst.is_redundant(s, DropWaterMove.FILL_A)


def test_drop_water_rejects_out_of_range_state():
    with pytest.raises(PuzzleError):
        DropWaterInstance(3, 5, 4, 2).apply(DropWaterState(4, 0), DropWaterMove.FILL_B)


def test_drop_water_goal_respects_budget():
    inst = DropWaterInstance(6, 4, 2, 2)
    assert inst.is_goal(DropWaterState(2, 4), 2)
    assert not inst.is_goal(DropWaterState(2, 4), 3)
    assert inst.is_goal(DropWaterState(0, 2))


def test_number_path_needs_exact_step_count():
    inst = NumberPathInstance(3, 12, 4)
    assert inst.is_goal(NumberPathState(12), 4)
    assert not inst.is_goal(NumberPathState(12), 3)
    assert inst.apply(NumberPathState(3), NumberPathMove.DOUBLE) == NumberPathState(6)
    assert inst.apply(NumberPathState(3), NumberPathMove.ADD_ONE) == NumberPathState(4)
    with pytest.raises(PuzzleError):
        NumberPathInstance(5, 5, 4)


@given(st.lists(st.integers(-20, 20), min_size=2, max_size=3))
def test_arithmetic_moves_shrink_state_by_one(values):
    inst = ArithmeticInstance((1, 2, 3), 6)
    state = ArithmeticState(tuple(Fraction(v) for v in values))
    moves = inst.legal_moves(state)
    assert all(not (m.op == "/" and m.right == 0) for m in moves)
    for m in moves:
        assert len(inst.apply(state, m).remaining) == len(values) - 1


def test_arithmetic_move_count_distinct_numbers():
    # 6 ordered pairs x 4 operators
    assert len(ArithmeticInstance((2, 3, 10), 16).legal_moves(ArithmeticInstance((2, 3, 10), 16).initial_state())) == 24


def test_arithmetic_move_count_repeated_numbers():
    # ordered pairs over values {1,1,7}: (1,1), (1,7), (7,1)
    inst = ArithmeticInstance((1, 1, 7), 8)
    assert len(inst.legal_moves(inst.initial_state())) == 12


def test_arithmetic_division_by_zero_excluded():
    inst = ArithmeticInstance((1, 1, 7), 8)
    state = ArithmeticState((Fraction(0), Fraction(7)))
    assert ArithmeticMove(Fraction(7), Fraction(0), "/") not in inst.legal_moves(state)
    with pytest.raises(PuzzleError):
        inst.apply(state, ArithmeticMove(Fraction(7), Fraction(0), "/"))


def test_arithmetic_result_goes_first_and_state_is_multiset():
    inst = ArithmeticInstance((2, 3, 10), 16)
    s = inst.apply(inst.initial_state(), ArithmeticMove(Fraction(2), Fraction(10), "+"))
    assert render_state(s) == "[12, 3]"
    assert s == ArithmeticState((Fraction(3), Fraction(12)))


def test_arithmetic_exact_fractions():
    inst = ArithmeticInstance((2, 3, 10), 16)
    s = inst.apply(inst.initial_state(), ArithmeticMove(Fraction(10), Fraction(3), "/"))
    assert s.remaining[0] == Fraction(10, 3)
    assert render_state(s) == "[3.3333333333333335, 2]"
    assert parse_state(PuzzleKind.ARITHMETIC, "[2, 3.3333333333333335]") == s


@given(st.fractions(min_value=-1000, max_value=1000, max_denominator=50))
def test_number_format_round_trip(x):
    assert parse_number(format_number(x)) == x


def test_grass_area_staircase():
    assert grass_area((4, 4, 4), ((2, 2), (2, 2), (2, 2))) == 24
    assert grass_area((4, 4, 4), ((1, 4), (1, 4), (1, 4))) == 24
    assert grass_area((1, 1, 1), ((1, 1),) * 3) == 6


def test_grass_moves_and_apply():
    inst = MinimalGrassInstance((4, 6, 9))
    s = inst.initial_state()
    assert len(inst.legal_moves(s)) == len(divisor_pairs(4)) + len(divisor_pairs(6)) + len(divisor_pairs(9))
    s = inst.apply(s, GrassMove(1, 2, 2))
    assert render_state(s) == "[2x2, ?, ?]"
    with pytest.raises(PuzzleError):
        inst.apply(s, GrassMove(1, 1, 4))
    with pytest.raises(PuzzleError):
        inst.apply(s, GrassMove(2, 4, 2))


states = st.one_of(
    st.builds(DropWaterState, st.integers(0, 30), st.integers(0, 30)),
    st.builds(NumberPathState, st.integers(0, 500)),
    st.builds(
        ArithmeticState,
        st.lists(st.fractions(min_value=-100, max_value=100, max_denominator=12), min_size=1, max_size=3).map(tuple),
    ),
    st.builds(
        GrassState,
        st.tuples(*[st.one_of(st.none(), st.tuples(st.integers(1, 15), st.integers(1, 15)))] * 3),
    ),
)

KIND_OF = {
    DropWaterState: PuzzleKind.DROP_WATER,
    NumberPathState: PuzzleKind.NUMBER_PATH,
    ArithmeticState: PuzzleKind.ARITHMETIC,
    GrassState: PuzzleKind.MINIMAL_GRASS,
}


@given(states)
def test_state_render_parse_round_trip(state):
    kind = KIND_OF[type(state)]
    assert parse_state(kind, render_state(state)) == state


@pytest.mark.parametrize(
    "kind,text,offset",
    [
        (PuzzleKind.DROP_WATER, "3, 4]", 0),
        (PuzzleKind.DROP_WATER, "[3, x]", 3),
        (PuzzleKind.NUMBER_PATH, "[1, 2]", 1),
        (PuzzleKind.MINIMAL_GRASS, "[2x2, 3y3, ?]", 5),
    ],
)
def test_parse_state_errors_carry_offset(kind, text, offset):
    with pytest.raises(StateParseError) as info:
        parse_state(kind, text)
    assert info.value.offset == offset


def test_render_move_forms():
    inst = ArithmeticInstance((2, 3, 10), 16)
    s = inst.initial_state()
    assert render_move(inst, s, ArithmeticMove(Fraction(2), Fraction(3), "*")) == "2 * 3 = 6"
    assert render_move(DropWaterInstance(6, 4, 2, 2), DropWaterState(0, 0), DropWaterMove.POUR_A_B) == "pour A into B"
    assert render_move(MinimalGrassInstance((4, 6, 9)), GrassState(), GrassMove(1, 2, 2)) == "building 1 = 2 x 2"


@pytest.mark.parametrize(
    "inst",
    [DropWaterInstance(6, 4, 2, 2), NumberPathInstance(3, 12, 4), ArithmeticInstance((1, 1, 7), 8), MinimalGrassInstance((4, 6, 9))],
)
def test_params_round_trip(inst):
    assert instance_from_params(inst.kind, inst.params()) == inst
    assert inst.render_problem().endswith(f"The input is {inst.input_line()}")

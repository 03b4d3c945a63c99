import hashlib

import pytest

from atsearch import oracle
from atsearch.prompts import (
    ChatMessage,
    Method,
    PromptError,
    Shot,
    VOTE_MARKER,
    PROPOSE_MARKER,
    build_exemplars,
    build_messages,
    candidates_in_prompt,
    chain_in_prompt,
    check_exemplar,
    parse_votes,
    render_exemplar,
    system_prompt,
    tot_propose_prompt,
    tot_vote_prompt,
)
from atsearch.llm import estimate_tokens
from atsearch.puzzles import PuzzleKind, render_problem
from atsearch.trace import Chain, parse_chain_text

from conftest import fixture_text

SYSTEM_SHA256 = {
    Method.ATS_BFS: "5620ca12cd118848f600b5779fde5cabb37fb1f629d6bcea36da66b26617a90e",
    Method.ATS_DFS: "899d00be73db005bd95fa600d574b630e492e54939e8d4edeaa98d0be0ded171",
}


@pytest.mark.parametrize("method", [Method.ATS_BFS, Method.ATS_DFS])
def test_system_prompt_files_are_frozen(method):
    from importlib import resources

    name = {Method.ATS_BFS: "ats_bfs_system.txt", Method.ATS_DFS: "ats_dfs_system.txt"}[method]
    raw = resources.files("atsearch").joinpath("data", name).read_bytes()
    assert hashlib.sha256(raw).hexdigest() == SYSTEM_SHA256[method]
    assert system_prompt(method) == raw.decode().rstrip("\n")


def test_system_prompt_content():
    assert system_prompt(Method.ATS_BFS).startswith("When you are solve a puzzle")
    assert "Step 3 (revised)" in system_prompt(Method.ATS_DFS)
    assert estimate_tokens(system_prompt(Method.ATS_BFS)) == 209
    assert estimate_tokens(system_prompt(Method.ATS_DFS)) == 159
    with pytest.raises(PromptError):
        system_prompt(Method.COT)


def test_zero_shot_shapes(inst_2_3_10):
    msgs = build_messages(Method.ATS_BFS, Shot.ZERO, inst_2_3_10)
    assert [m.role for m in msgs] == ["system", "user"]
    assert render_problem(inst_2_3_10) in msgs[1].content
    assert [m.role for m in build_messages(Method.COT, Shot.ZERO, inst_2_3_10)] == ["user"]
    with pytest.raises(PromptError):
        build_messages(Method.TOT, Shot.ZERO, inst_2_3_10)


@pytest.mark.parametrize("method", [Method.COT, Method.ATS_BFS, Method.ATS_DFS])
def test_few_shot_shape(splits, method):
    ds = splits[PuzzleKind.ARITHMETIC]
    ex = build_exemplars(PuzzleKind.ARITHMETIC, method, ds.train, seed=3)
    msgs = build_messages(method, Shot.FEW, ds.test[0].instance, ex)
    assert len(msgs) == 9
    assert "system" not in {m.role for m in msgs}
    assert [m.role for m in msgs[:-1]] == ["user", "assistant"] * 4
    assert msgs[-1].content == render_problem(ds.test[0].instance)


def test_few_shot_guards(splits, inst_2_3_10):
    ex = build_exemplars(PuzzleKind.ARITHMETIC, Method.COT, splits[PuzzleKind.ARITHMETIC].train)
    with pytest.raises(PromptError):
        build_messages(Method.ATS_BFS, Shot.FEW, inst_2_3_10, ex)
    with pytest.raises(PromptError):
        build_messages(Method.COT, Shot.FEW, inst_2_3_10, None)
    with pytest.raises(PromptError):
        ChatMessage("tool", "x")
    with pytest.raises(PromptError):
        ChatMessage("user", "")


def test_system_prompt_is_task_agnostic(splits):
    for method in (Method.ATS_BFS, Method.ATS_DFS):
        seen = set()
        for ds in splits.values():
            for e in ds.test[:10]:
                msgs = build_messages(method, Shot.ZERO, e.instance)
                seen.add(msgs[0].content)
                assert render_problem(e.instance) not in msgs[0].content
                assert e.instance.input_line() not in msgs[0].content
        assert len(seen) == 1


@pytest.mark.parametrize("kind", list(PuzzleKind))
@pytest.mark.parametrize("method", list(Method))
def test_exemplars_come_from_train(splits, kind, method):
    ds = splits[kind]
    ex = build_exemplars(kind, method, ds.train, seed=11)
    train_ids = {e.id for e in ds.train}
    assert len(ex.examples) == 4 and set(ex.instance_ids) <= train_ids
    assert ex == build_exemplars(kind, method, ds.train, seed=11)


def test_cot_exemplar_matches_fixture(inst_2_3_10):
    plan = oracle.solve(inst_2_3_10)
    assert render_exemplar(inst_2_3_10, plan, Method.COT) == fixture_text("d3_cot.txt")


@pytest.mark.parametrize("method", [Method.ATS_BFS, Method.ATS_DFS, Method.COT])
def test_rendered_exemplars_score_and_lint_clean(splits, method):
    for ds in splits.values():
        for e in ds.train[:25]:
            check_exemplar(e.instance, render_exemplar(e.instance, oracle.solve(e.instance), method), method)


def test_dfs_exemplar_backtracks(inst_1_1_7):
    text = render_exemplar(inst_1_1_7, oracle.solve(inst_1_1_7), Method.ATS_DFS)
    assert "Let's step back" in text and "(revised)" in text


def test_tot_prompts(inst_2_3_10):
    chain = parse_chain_text("[2, 3, 10] -> (2 * 3 = 6) -> [6, 10]")
    propose = tot_propose_prompt(inst_2_3_10, chain)[-1].content
    assert PROPOSE_MARKER in propose and chain_in_prompt(propose) == chain.render()
    vote = tot_vote_prompt(inst_2_3_10, [chain, Chain("[2, 3, 10]")])[-1].content
    assert VOTE_MARKER in vote
    assert candidates_in_prompt(vote) == [chain.render(), "[2, 3, 10]"]
    with pytest.raises(PromptError):
        tot_vote_prompt(inst_2_3_10, [])


def test_parse_votes():
    text = "Candidate 1: sure\ncandidate 2 - value = 23.3\nCandidate 2: value=99\nCandidate 9: sure\nnoise"
    assert parse_votes(text, 3) == [100.0, 23.3, None]
    assert parse_votes("Candidate 1: likely\nCandidate 2: value = 250", 2) == [50.0, 100.0]
    assert parse_votes("", 2) == [None, None]

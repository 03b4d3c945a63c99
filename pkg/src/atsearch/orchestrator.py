"""Run methods over instances and aggregate scored records into reports."""

from __future__ import annotations

import csv
import enum
import hashlib
import io
import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Optional, Sequence

from .datasets import DatasetSplit, Entry
from .llm import BackendError, CallContext, CompletionParams, Usage
from .prompts import (
    ExemplarSet,
    Method,
    Shot,
    TRACE_FORMATS,
    build_exemplars,
    build_messages,
    tot_propose_prompt,
    tot_vote_prompt,
    parse_votes,
)
from .puzzles import (
    ArithmeticInstance,
    DropWaterInstance,
    MinimalGrassInstance,
    NumberPathInstance,
    PuzzleInstance,
    PuzzleKind,
    instance_from_params,
    render_state,
)
from .trace import (
    Chain,
    ChainError,
    FailureReason,
    TotFlatRound,
    Verdict,
    chain_key,
    canonical_text,
    parse_chain_text,
    render_tot_flat,
    score_response,
    verify_chain,
)


class Cost(str, enum.Enum):
    LOW = "low"
    HIGH = "high"
    CUSTOM = "custom"


class Selection(str, enum.Enum):
    FIRST_CORRECT = "first_correct"
    MAJORITY = "majority"


_PRESETS = {Cost.LOW: (1, 1, 0.2), Cost.HIGH: (3, 5, 0.7)}


@dataclass(frozen=True)
class RunSetting:
    """Low cost is one trial / width 1 at temperature 0.2; high cost is k=3 / width 5 at 0.7.

    ``custom`` lifts the presets, e.g. for generating fine-tuning data with k=5 or width 2.
    """

    shot: Shot = Shot.ZERO
    cost: Cost = Cost.LOW
    self_consistency_k: Optional[int] = None
    tot_width: Optional[int] = None
    voters: int = 3
    params: Optional[CompletionParams] = None
    selection: Selection = Selection.FIRST_CORRECT

    def __post_init__(self):
        object.__setattr__(self, "shot", Shot(self.shot))
        object.__setattr__(self, "cost", Cost(self.cost))
        object.__setattr__(self, "selection", Selection(self.selection))
        if self.cost is not Cost.CUSTOM:
            k, width, temp = _PRESETS[self.cost]
            for name, want in (("self_consistency_k", k), ("tot_width", width)):
                got = getattr(self, name)
                if got is None:
                    object.__setattr__(self, name, want)
                elif got != want:
                    raise ValueError(f"{self.cost.value} cost fixes {name} = {want}, got {got}")
            if self.params is None:
                object.__setattr__(self, "params", CompletionParams(temperature=temp))
        else:
            if self.self_consistency_k is None:
                object.__setattr__(self, "self_consistency_k", 1)
            if self.tot_width is None:
                object.__setattr__(self, "tot_width", 1)
            if self.params is None:
                object.__setattr__(self, "params", CompletionParams(temperature=0.7))
        if self.self_consistency_k < 1 or self.tot_width < 1 or self.voters < 1:
            raise ValueError("k, width and voters must be positive")

    @property
    def label(self) -> str:
        base = f"{self.shot.value}/{self.cost.value}"
        if self.cost is Cost.CUSTOM:
            base += f"(k={self.self_consistency_k},w={self.tot_width})"
        return base

    def to_dict(self) -> dict:
        return {
            "shot": self.shot.value,
            "cost": self.cost.value,
            "self_consistency_k": self.self_consistency_k,
            "tot_width": self.tot_width,
            "voters": self.voters,
            "temperature": self.params.temperature,
            "max_output_tokens": self.params.max_output_tokens,
            "selection": self.selection.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunSetting":
        return cls(
            shot=d["shot"],
            cost=d["cost"],
            self_consistency_k=d["self_consistency_k"],
            tot_width=d["tot_width"],
            voters=d.get("voters", 3),
            params=CompletionParams(d["temperature"], d.get("max_output_tokens", 4096)),
            selection=d.get("selection", "first_correct"),
        )


@dataclass
class Trial:
    messages_digest: str
    response: str
    verdict: Verdict
    usage: Usage
    calls: int = 1
    retried_calls: int = 0
    error: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "messages_digest": self.messages_digest,
            "response": self.response,
            "verdict": self.verdict.to_dict(),
            "usage": self.usage.to_dict(),
            "calls": self.calls,
            "retried_calls": self.retried_calls,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trial":
        return cls(
            d["messages_digest"],
            d["response"],
            Verdict.from_dict(d["verdict"]),
            Usage.from_dict(d["usage"]),
            d.get("calls", 1),
            d.get("retried_calls", 0),
            d.get("error"),
        )


@dataclass
class RunRecord:
    kind: PuzzleKind
    instance_id: int
    params: dict
    method: Method
    setting: RunSetting
    trials: list[Trial]
    selected_trial: int
    final_verdict: Verdict
    episode_log: Optional[list] = None
    error: Optional[str] = None

    def __post_init__(self):
        if self.trials and not 0 <= self.selected_trial < len(self.trials):
            raise ValueError("selected_trial out of range")

    @property
    def total_usage(self) -> Usage:
        return sum((t.usage for t in self.trials), Usage())

    @property
    def instance(self) -> PuzzleInstance:
        return instance_from_params(self.kind, self.params)

    @property
    def response(self) -> str:
        return self.trials[self.selected_trial].response if self.trials else ""

    def sort_key(self) -> tuple:
        return (self.kind.value, self.method.value, self.setting.label, self.instance_id)

    def to_dict(self) -> dict:
        return {
            "record_type": "run",
            "kind": self.kind.value,
            "id": self.instance_id,
            "params": self.params,
            "method": self.method.value,
            "setting": self.setting.to_dict(),
            "trials": [t.to_dict() for t in self.trials],
            "selected_trial": self.selected_trial,
            "final_verdict": self.final_verdict.to_dict(),
            "total_usage": self.total_usage.to_dict(),
            "episode_log": self.episode_log,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        rec = cls(
            kind=PuzzleKind(d["kind"]),
            instance_id=int(d["id"]),
            params=d["params"],
            method=Method(d["method"]),
            setting=RunSetting.from_dict(d["setting"]),
            trials=[Trial.from_dict(t) for t in d["trials"]],
            selected_trial=int(d["selected_trial"]),
            final_verdict=Verdict.from_dict(d["final_verdict"]),
            episode_log=d.get("episode_log"),
            error=d.get("error"),
        )
        if rec.total_usage != Usage.from_dict(d["total_usage"]):
            raise ValueError(f"record {rec.kind.value}:{rec.instance_id} usage does not add up")
        return rec


def instance_key(kind: PuzzleKind, instance_id: int) -> str:
    return f"{PuzzleKind(kind).value}:{instance_id}"


def digest_messages(messages) -> str:
    payload = json.dumps([m.to_dict() for m in messages], sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# single-message methods


def _one_trial(method, entry: Entry, setting: RunSetting, backend, exemplars, trial: int) -> Trial:
    messages = build_messages(method, setting.shot, entry.instance, exemplars)
    digest = digest_messages(messages)
    ctx = CallContext(method, entry.instance, instance_key(entry.instance.kind, entry.id), trial)
    try:
        comp = backend.complete(messages, setting.params, ctx)
    except BackendError as exc:
        return Trial(digest, "", Verdict.fail(FailureReason.BACKEND_ERROR, str(exc)), Usage(), error=f"{exc.code}: {exc}")
    verdict = score_response(entry.instance, comp.text, TRACE_FORMATS[method])
    retried = sum(1 for r in comp.rows if r.retried)
    return Trial(digest, comp.text, verdict, comp.usage, calls=max(len(comp.rows), 1), retried_calls=retried)


def _answer_key(instance: PuzzleInstance, trial: Trial, method: Method):
    from .trace import extract_answer, parse_trace

    chain = extract_answer(parse_trace(trial.response, TRACE_FORMATS[method]), instance)
    return canonical_text(chain.final) if chain is not None and chain.final else None


def select_trial(instance: PuzzleInstance, method: Method, trials: Sequence[Trial], selection: Selection) -> int:
    if selection is Selection.FIRST_CORRECT:
        return next((i for i, t in enumerate(trials) if t.verdict.correct), 0)
    keys = [_answer_key(instance, t, method) for t in trials]
    counts = Counter(k for k in keys if k is not None)
    if not counts:
        return 0
    top = max(counts.values())
    return next(i for i, k in enumerate(keys) if k is not None and counts[k] == top)


def _run_trials(method, entry: Entry, setting: RunSetting, backend, exemplars, k: int) -> RunRecord:
    trials = [_one_trial(method, entry, setting, backend, exemplars, t) for t in range(k)]
    chosen = select_trial(entry.instance, method, trials, setting.selection)
    return RunRecord(
        entry.instance.kind, entry.id, entry.instance.params(), method, setting, trials, chosen, trials[chosen].verdict
    )


def run_self_consistency(
    method: Method, entry: Entry, setting: RunSetting, backend, exemplars: Optional[ExemplarSet] = None
) -> RunRecord:
    """k independent trials (distinct trial indices); the selected one decides the verdict."""
    return _run_trials(Method(method), entry, setting, backend, exemplars, setting.self_consistency_k)


def run_single(method: Method, entry: Entry, setting: RunSetting, backend, exemplars=None) -> RunRecord:
    """Exactly one backend call, whatever k the setting carries."""
    return _run_trials(Method(method), entry, setting, backend, exemplars, 1)


# ---------------------------------------------------------------------------
# ToT controller


PROPOSE_CAP = 16  # distinct candidates taken per kept chain per round


def tot_depth(instance: PuzzleInstance) -> int:
    if isinstance(instance, DropWaterInstance):
        return instance.max_steps_n
    if isinstance(instance, NumberPathInstance):
        return instance.steps_n
    if isinstance(instance, ArithmeticInstance):
        return len(instance.numbers) - 1
    if isinstance(instance, MinimalGrassInstance):
        return 3
    raise TypeError(type(instance).__name__)


def _extend(kept: Chain, chain: Chain) -> Optional[Chain]:
    """A proposal counts when it is the kept chain plus one operation (or that operation alone)."""
    if len(chain.links) == len(kept.links) + 1:
        head = Chain(chain.initial, chain.links[:-1])
        if chain_key(head) == chain_key(kept):
            return chain
    if len(chain.links) == 1 and kept.final and canonical_text(chain.initial) == canonical_text(kept.final):
        return kept.extend(chain.links[0])
    return None


def select_top(values: Sequence[float], width: int) -> list[int]:
    """Indices of the ``width`` best values; ties go to earlier proposals."""
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    return sorted(order[:width])


@dataclass
class _Episode:
    usage: Usage = Usage()
    calls: int = 0
    retried: int = 0
    ordinal: int = 0
    diagnostics: list = field(default_factory=list)

    def call(self, backend, messages, params, ctx_base: CallContext):
        ctx = replace(ctx_base, ordinal=self.ordinal)
        self.ordinal += 1
        comp = backend.complete(messages, params, ctx)
        self.usage = self.usage + comp.usage
        self.calls += max(len(comp.rows), 1)
        self.retried += sum(1 for r in comp.rows if r.retried)
        return comp.text


def run_tot(entry: Entry, setting: RunSetting, backend, exemplars: Optional[ExemplarSet] = None, trial: int = 0) -> RunRecord:
    """Propose / vote / keep-top-width rounds; usage sums every call in the episode."""
    instance = entry.instance
    width = setting.tot_width
    ctx = CallContext(Method.TOT, instance, instance_key(instance.kind, entry.id), trial)
    ep = _Episode()
    kept = [Chain(render_state(instance.initial_state()))]
    rounds: list[TotFlatRound] = []
    reached: list[Chain] = []
    error = None
    try:
        for r in range(tot_depth(instance)):
            candidates: list[Chain] = []
            seen = set()
            for chain in kept:
                text = ep.call(backend, tot_propose_prompt(instance, chain, exemplars), setting.params, ctx)
                taken = 0
                for line in text.splitlines():
                    if not line.strip():
                        continue
                    try:
                        cand = _extend(chain, parse_chain_text(line))
                    except ChainError as exc:
                        ep.diagnostics.append(f"round {r}: dropped {line[:80]!r}: {exc}")
                        continue
                    if cand is None:
                        ep.diagnostics.append(f"round {r}: dropped {line[:80]!r}: does not extend the kept chain")
                        continue
                    if chain_key(cand) in seen:
                        continue
                    if taken == PROPOSE_CAP:
                        ep.diagnostics.append(f"round {r}: proposals truncated at {PROPOSE_CAP} for {chain.render()}")
                        break
                    seen.add(chain_key(cand))
                    candidates.append(cand)
                    taken += 1
            if not candidates:
                ep.diagnostics.append(f"round {r}: no usable proposals")
                break
            totals = [0.0] * len(candidates)
            for _ in range(setting.voters):
                text = ep.call(backend, tot_vote_prompt(instance, candidates), setting.params, ctx)
                for i, v in enumerate(parse_votes(text, len(candidates))):
                    totals[i] += v or 0.0
            values = [t / setting.voters for t in totals]
            chosen = [candidates[i] for i in select_top(values, width)]
            rounds.append(TotFlatRound(r, instance.input_line(), list(kept), list(zip(candidates, values)), chosen))
            reached += [c for c in candidates if verify_chain(instance, c).correct]
            kept = chosen
    except BackendError as exc:
        error = f"{exc.code}: {exc}"

    finals = kept + [c for c in reached if chain_key(c) not in {chain_key(k) for k in kept}]
    verdicts = [verify_chain(instance, c) for c in finals if c.links]
    winner_idx = next((i for i, v in enumerate(verdicts) if v.correct), None)
    summary = finals[winner_idx] if winner_idx is not None else (kept[0] if kept and kept[0].links else None)
    text = render_tot_flat(instance.input_line(), rounds, summary)
    if error is not None:
        verdict = Verdict.fail(FailureReason.BACKEND_ERROR, error)
    elif winner_idx is not None:
        verdict = verdicts[winner_idx]
    elif verdicts:
        verdict = verdicts[0]
    else:
        verdict = Verdict.fail(FailureReason.NO_SUMMARY, "no chain survived the episode")
    log = [
        {
            "step": rd.step,
            "current": [c.render() for c in rd.current],
            "candidates": [[c.render(), round(v, 6)] for c, v in rd.candidates],
            "chosen": [c.render() for c in rd.chosen],
        }
        for rd in rounds
    ]
    trial_rec = Trial(
        digest_messages(tot_propose_prompt(instance, Chain(render_state(instance.initial_state())), exemplars)),
        text,
        verdict,
        ep.usage,
        calls=ep.calls,
        retried_calls=ep.retried,
        error=error,
    )
    episode = {"width": width, "voters": setting.voters, "rounds": log, "diagnostics": ep.diagnostics}
    return RunRecord(instance.kind, entry.id, instance.params(), Method.TOT, setting, [trial_rec], 0, verdict, episode, error)


def episode_rounds(record: RunRecord) -> list[TotFlatRound]:
    """Rebuild the round structure of a persisted ToT record."""
    inst = record.instance
    out = []
    for rd in (record.episode_log or {}).get("rounds", []):
        out.append(
            TotFlatRound(
                rd["step"],
                inst.input_line(),
                [parse_chain_text(c) for c in rd["current"]],
                [(parse_chain_text(c), float(v)) for c, v in rd["candidates"]],
                [parse_chain_text(c) for c in rd["chosen"]],
            )
        )
    return out


def run_method(method: Method, entry: Entry, setting: RunSetting, backend, exemplars=None) -> RunRecord:
    method = Method(method)
    if method is Method.TOT:
        return run_tot(entry, setting, backend, exemplars)
    return run_self_consistency(method, entry, setting, backend, exemplars)


# ---------------------------------------------------------------------------
# suites and reports


@dataclass(frozen=True)
class PriceTable:
    input_per_1k: float = 0.0
    output_per_1k: float = 0.0

    def fee(self, input_tokens, output_tokens) -> float:
        return (float(input_tokens) * self.input_per_1k + float(output_tokens) * self.output_per_1k) / 1000.0


@dataclass
class ReportRow:
    task: str
    method: str
    setting: str
    n: int
    correct: int
    errors: int
    input_tokens: int
    output_tokens: int
    fee: float

    @property
    def accuracy(self) -> float:
        return 100.0 * self.correct / self.n if self.n else 0.0

    @property
    def mean_input_tokens(self) -> Fraction:
        return Fraction(self.input_tokens, self.n) if self.n else Fraction(0)

    @property
    def mean_output_tokens(self) -> Fraction:
        return Fraction(self.output_tokens, self.n) if self.n else Fraction(0)

    @property
    def mean_fee(self) -> float:
        return self.fee / self.n if self.n else 0.0


@dataclass
class Report:
    rows: list[ReportRow]

    HEADER = ("task", "method", "setting", "n", "accuracy", "mean_input_tokens", "mean_output_tokens", "mean_fee", "errors")

    def _cells(self, row: ReportRow) -> list[str]:
        return [
            row.task,
            row.method,
            row.setting,
            str(row.n),
            f"{row.accuracy:.1f}",
            f"{float(row.mean_input_tokens):.2f}",
            f"{float(row.mean_output_tokens):.2f}",
            f"{row.mean_fee:.6f}",
            str(row.errors),
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.HEADER)
        for row in self.rows:
            writer.writerow(self._cells(row))
        return buf.getvalue()

    def to_text(self) -> str:
        table = [list(self.HEADER)] + [self._cells(r) for r in self.rows]
        widths = [max(len(r[i]) for r in table) for i in range(len(self.HEADER))]
        lines = []
        for j, r in enumerate(table):
            lines.append("  ".join(c.ljust(w) if i < 3 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip())
            if j == 0:
                lines.append("  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"

    def points_csv(self) -> str:
        """(method, setting, mean fee, accuracy) per task, for cost/accuracy plots."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("task", "method", "setting", "mean_fee", "mean_total_tokens", "accuracy"))
        for r in self.rows:
            total = float(r.mean_input_tokens + r.mean_output_tokens)
            writer.writerow((r.task, r.method, r.setting, f"{r.mean_fee:.6f}", f"{total:.2f}", f"{r.accuracy:.1f}"))
        return buf.getvalue()


def build_report(records: Sequence[RunRecord], prices: PriceTable = PriceTable()) -> Report:
    groups: dict[tuple, list[RunRecord]] = {}
    for rec in sorted(records, key=RunRecord.sort_key):
        groups.setdefault((rec.kind.value, rec.method.value, rec.setting.label), []).append(rec)
    rows = []
    for (task, method, setting), recs in groups.items():
        usage = sum((r.total_usage for r in recs), Usage())
        rows.append(
            ReportRow(
                task,
                method,
                setting,
                len(recs),
                sum(r.final_verdict.correct for r in recs),
                sum(1 for r in recs if r.error or any(t.error for t in r.trials)),
                usage.input_tokens,
                usage.output_tokens,
                prices.fee(usage.input_tokens, usage.output_tokens),
            )
        )
    return Report(rows)


@dataclass(frozen=True)
class Job:
    method: Method
    setting: RunSetting


def _error_record(method, entry: Entry, setting: RunSetting, exc: Exception) -> RunRecord:
    verdict = Verdict.fail(FailureReason.BACKEND_ERROR, f"{type(exc).__name__}: {exc}")
    trial = Trial("", "", verdict, Usage(), calls=0, error=str(exc))
    return RunRecord(entry.instance.kind, entry.id, entry.instance.params(), Method(method), setting, [trial], 0, verdict, error=str(exc))


def evaluate_suite(
    splits: Sequence[DatasetSplit],
    jobs: Sequence[Job],
    backend,
    concurrency_limit: int = 4,
    exemplar_seed: int = 0,
    limit: Optional[int] = None,
    on_record: Optional[Callable[[RunRecord], None]] = None,
) -> list[RunRecord]:
    """Run every job on every test entry; the returned list is in canonical order."""
    exemplar_cache: dict[tuple, ExemplarSet] = {}
    work = []
    for ds in splits:
        entries = sorted(ds.test, key=lambda e: e.id)[:limit]
        for job in jobs:
            ex = None
            if job.setting.shot is Shot.FEW:
                key = (ds.kind, job.method)
                if key not in exemplar_cache:
                    exemplar_cache[key] = build_exemplars(ds.kind, job.method, ds.train, seed=exemplar_seed)
                ex = exemplar_cache[key]
            work += [(job, e, ex) for e in entries]

    def run(item):
        job, entry, ex = item
        try:
            rec = run_method(job.method, entry, job.setting, backend, ex)
        except Exception as exc:  # a broken instance must not sink the suite
            rec = _error_record(job.method, entry, job.setting, exc)
        if on_record is not None:
            on_record(rec)
        return rec

    if concurrency_limit <= 1:
        records = [run(w) for w in work]
    else:
        with ThreadPoolExecutor(max_workers=concurrency_limit) as pool:
            records = list(pool.map(run, work))
    return sorted(records, key=RunRecord.sort_key)


def write_records(records: Sequence[RunRecord], path) -> int:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in sorted(records, key=RunRecord.sort_key):
            fh.write(json.dumps(rec.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
    return len(records)


def read_records(path) -> list[RunRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(RunRecord.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad run record ({exc})") from None
    return out


def rescore(record: RunRecord) -> RunRecord:
    """Score stored responses again without any backend call."""
    inst = record.instance
    trials = []
    for t in record.trials:
        if t.error:
            trials.append(t)
            continue
        trials.append(replace(t, verdict=score_response(inst, t.response, TRACE_FORMATS[record.method])))
    chosen = 0 if record.method is Method.TOT else select_trial(inst, record.method, trials, record.setting.selection)
    return replace(record, trials=trials, selected_trial=chosen, final_verdict=trials[chosen].verdict)

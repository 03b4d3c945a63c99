"""Turn scored run records into instruction-tuning pairs."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

from .llm import estimate_tokens
from .orchestrator import RunRecord, episode_rounds
from .prompts import Method, TRACE_FORMATS
from .puzzles import PuzzleKind, render_problem
from .trace import TraceFormat, extract_answer, parse_trace, render_cot, render_tot_flat, score_response

TOT_TOKEN_CAP = 3000
TOT_MAX_WIDTH = 2


class TunedType(str, enum.Enum):
    ATS = "ATS_tuned"
    COT = "CoT_tuned"
    TOT = "ToT_tuned"


TARGET_FORMATS = {TunedType.ATS: None, TunedType.COT: TraceFormat.COT, TunedType.TOT: TraceFormat.TOT_FLAT}


class ExportError(ValueError):
    pass


@dataclass(frozen=True)
class FinetuneRecord:
    prompt: str
    target: str
    tuned_type: TunedType
    source: Method
    kind: PuzzleKind
    instance_id: int
    params: dict

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt,
            "target": self.target,
            "tuned_type": self.tuned_type.value,
            "source": self.source.value,
            "kind": self.kind.value,
            "id": self.instance_id,
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FinetuneRecord":
        return cls(
            d["prompt"],
            d["target"],
            TunedType(d["tuned_type"]),
            Method(d["source"]),
            PuzzleKind(d["kind"]),
            int(d["id"]),
            d["params"],
        )

    @property
    def target_format(self) -> TraceFormat:
        fmt = TARGET_FORMATS[self.tuned_type]
        return fmt if fmt is not None else TRACE_FORMATS[self.source]


def filter_correct(records: Iterable[RunRecord]) -> list[RunRecord]:
    return [r for r in records if r.final_verdict.correct]


def _require_correct(record: RunRecord) -> None:
    if not record.final_verdict.correct:
        raise ExportError(f"{record.kind.value}:{record.instance_id} is not a correct record")


def to_cot_record(record: RunRecord) -> FinetuneRecord:
    """Prune a correct response (any format) down to its solution chain."""
    _require_correct(record)
    inst = record.instance
    chain = extract_answer(parse_trace(record.response, TRACE_FORMATS[record.method]), inst)
    if chain is None or any(link.state is None for link in chain.links):
        raise ExportError(f"{record.kind.value}:{record.instance_id}: no complete chain to extract")
    return FinetuneRecord(render_problem(inst), render_cot(chain), TunedType.COT, record.method, record.kind, record.instance_id, record.params)


def to_ats_record(record: RunRecord) -> FinetuneRecord:
    _require_correct(record)
    if record.method not in (Method.ATS_BFS, Method.ATS_DFS):
        raise ExportError(f"ATS-tuned data needs an ATS source, got {record.method.value}")
    return FinetuneRecord(
        render_problem(record.instance), record.response, TunedType.ATS, record.method, record.kind, record.instance_id, record.params
    )


def to_tot_flat_record(record: RunRecord, token_cap: int = TOT_TOKEN_CAP) -> FinetuneRecord:
    _require_correct(record)
    if record.method is not Method.TOT or not record.episode_log:
        raise ExportError("flattened ToT data needs a ToT episode")
    width = record.episode_log.get("width", record.setting.tot_width)
    if width > TOT_MAX_WIDTH:
        raise ExportError(f"episode width {width} exceeds {TOT_MAX_WIDTH}")
    inst = record.instance
    summary = parse_trace(record.response, TraceFormat.TOT_FLAT).summary
    target = render_tot_flat(inst.input_line(), episode_rounds(record), summary)
    if estimate_tokens(target) > token_cap:
        raise ExportError(f"flattened episode has ~{estimate_tokens(target)} tokens, cap is {token_cap}")
    return FinetuneRecord(render_problem(inst), target, TunedType.TOT, Method.TOT, record.kind, record.instance_id, record.params)


TRANSFORMS = {TunedType.ATS: to_ats_record, TunedType.COT: to_cot_record, TunedType.TOT: to_tot_flat_record}
SOURCES = {
    TunedType.ATS: (Method.ATS_BFS, Method.ATS_DFS),
    TunedType.COT: (Method.ATS_BFS, Method.ATS_DFS, Method.TOT, Method.COT),
    TunedType.TOT: (Method.TOT,),
}


@dataclass
class ExportResult:
    records: list[FinetuneRecord]
    dropped_incorrect: int
    rejected: list[str]
    skipped_source: int = 0


def export(records: Sequence[RunRecord], tuned_type: TunedType) -> ExportResult:
    """filter_correct, transform, then re-score every target.

    Records from methods that cannot feed ``tuned_type`` are skipped and counted;
    transform or re-score failures are reported per record.
    """
    tuned_type = TunedType(tuned_type)
    usable = [r for r in records if r.method in SOURCES[tuned_type]]
    good = filter_correct(usable)
    out, rejected = [], []
    for rec in good:
        try:
            ft = TRANSFORMS[tuned_type](rec)
        except ExportError as exc:
            rejected.append(f"{rec.kind.value}:{rec.instance_id} ({rec.method.value}): {exc}")
            continue
        verdict = score_response(rec.instance, ft.target, ft.target_format)
        if not verdict.correct:
            rejected.append(f"{rec.kind.value}:{rec.instance_id}: target re-scores {verdict.failure_reason.value}")
            continue
        out.append(ft)
    return ExportResult(out, len(usable) - len(good), rejected, len(records) - len(usable))


def write_jsonl(records: Sequence[FinetuneRecord], path) -> int:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
    return len(records)


def read_jsonl(path) -> list[FinetuneRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(FinetuneRecord.from_dict(json.loads(line)))
                except (ValueError, KeyError, TypeError) as exc:
                    raise ExportError(f"{path}:{lineno}: bad finetune record ({exc})") from None
    return out

"""Command-line entry point: atsearch <verb> ..."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from . import datasets, oracle
from .datasets import DatasetError
from .finetune import TunedType, export, write_jsonl
from .llm import AuthenticationError, CompletionParams, LiveBackend, LiveConfig, MockBackend, MockConfig
from .orchestrator import (
    Job,
    PriceTable,
    RunSetting,
    build_report,
    evaluate_suite,
    read_records,
    rescore,
    write_records,
)
from .prompts import Method
from .puzzles import MinimalGrassInstance, PuzzleKind, render_move

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    dataset_dir: str
    methods: list[Method]
    settings: list[RunSetting]
    backend: str = "mock"
    mock: MockConfig = field(default_factory=MockConfig)
    live: Optional[LiveConfig] = None
    concurrency_limit: int = 4
    prices: PriceTable = field(default_factory=PriceTable)
    output_dir: str = "runs"
    seed: int = 0
    kinds: list[PuzzleKind] = field(default_factory=lambda: list(PuzzleKind))
    limit: Optional[int] = None

    def jobs(self) -> list[Job]:
        return [Job(m, s) for m in self.methods for s in self.settings]


_TOP_KEYS = {
    "dataset_dir", "methods", "settings", "backend", "mock", "live", "concurrency_limit",
    "prices", "output_dir", "seed", "kinds", "limit",
}
_SETTING_KEYS = {"shot", "cost", "k", "width", "voters", "temperature", "max_output_tokens", "selection"}
_MOCK_KEYS = {"error_rate", "corruption_mode", "master_seed", "branch_cap", "detour_count", "propose_cap"}
_LIVE_KEYS = {"base_url", "model", "api_key_env", "max_in_flight", "requests_per_minute", "max_attempts", "timeout"}
_PRICE_KEYS = {"input_per_1k", "output_per_1k"}


def _unknown(section: str, given: dict, allowed: set, problems: list) -> None:
    for key in sorted(set(given) - allowed):
        problems.append(f"{section}: unknown key {key!r}")


def _section(raw: dict, name: str, problems: list) -> dict:
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        problems.append(f"{name}: expected a mapping")
        return {}
    return value


def _build(problems: list, where: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (ValueError, TypeError) as exc:
        problems.append(f"{where}: {exc}")
        return None


def parse_config(raw) -> RunConfig:
    """Validate everything up front and report every problem at once."""
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a mapping"])
    problems: list[str] = []
    _unknown("config", raw, _TOP_KEYS, problems)
    if "dataset_dir" not in raw:
        problems.append("config: dataset_dir is required")

    methods = []
    for m in raw.get("methods") or []:
        got = _build(problems, "methods", Method, m)
        if got is not None:
            methods.append(got)
    if not methods:
        problems.append("methods: at least one of CoT, ATS_BFS, ATS_DFS, ToT is required")

    kinds = []
    for k in raw.get("kinds") or [k.value for k in PuzzleKind]:
        got = _build(problems, "kinds", PuzzleKind, k)
        if got is not None:
            kinds.append(got)

    settings = []
    for i, s in enumerate(raw.get("settings") or [{"shot": "zero_shot", "cost": "low"}]):
        where = f"settings[{i}]"
        if not isinstance(s, dict):
            problems.append(f"{where}: expected a mapping")
            continue
        _unknown(where, s, _SETTING_KEYS, problems)
        params = None
        if "temperature" in s or "max_output_tokens" in s:
            params = _build(
                problems,
                where,
                lambda: CompletionParams(float(s.get("temperature", 0.7)), int(s.get("max_output_tokens", 4096))),
            )
        got = _build(
            problems,
            where,
            RunSetting,
            shot=s.get("shot", "zero_shot"),
            cost=s.get("cost", "low"),
            self_consistency_k=s.get("k"),
            tot_width=s.get("width"),
            voters=s.get("voters", 3),
            params=params,
            selection=s.get("selection", "first_correct"),
        )
        if got is not None:
            settings.append(got)

    backend = raw.get("backend", "mock")
    if backend not in ("mock", "live"):
        problems.append(f"backend: expected 'mock' or 'live', got {backend!r}")
    mock_raw = _section(raw, "mock", problems)
    _unknown("mock", mock_raw, _MOCK_KEYS, problems)
    mock = _build(problems, "mock", MockConfig, **{k: v for k, v in mock_raw.items() if k in _MOCK_KEYS}) or MockConfig()
    live = None
    live_raw = _section(raw, "live", problems)
    _unknown("live", live_raw, _LIVE_KEYS, problems)
    if backend == "live":
        missing = [k for k in ("base_url", "model") if k not in live_raw]
        if missing:
            problems.append(f"live: missing {', '.join(missing)}")
        else:
            live = _build(problems, "live", LiveConfig, **{k: v for k, v in live_raw.items() if k in _LIVE_KEYS})
    prices_raw = _section(raw, "prices", problems)
    _unknown("prices", prices_raw, _PRICE_KEYS, problems)
    prices = _build(
        problems, "prices", lambda: PriceTable(**{k: float(v) for k, v in prices_raw.items() if k in _PRICE_KEYS})
    )

    conc = raw.get("concurrency_limit", 4)
    if not isinstance(conc, int) or conc < 1:
        problems.append("concurrency_limit: expected a positive integer")
    limit = raw.get("limit")
    if limit is not None and (not isinstance(limit, int) or limit < 1):
        problems.append("limit: expected a positive integer")
    if problems:
        raise ConfigError(problems)
    return RunConfig(
        dataset_dir=str(raw["dataset_dir"]),
        methods=methods,
        settings=settings,
        backend=backend,
        mock=mock,
        live=live,
        concurrency_limit=conc,
        prices=prices or PriceTable(),
        output_dir=str(raw.get("output_dir", "runs")),
        seed=int(raw.get("seed", 0)),
        kinds=kinds,
        limit=limit,
    )


def load_config(path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError([f"{path}: cannot parse ({exc})"]) from None
    return parse_config(raw)


# ---------------------------------------------------------------------------
# commands


def cmd_gen_datasets(args) -> int:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary = []
        print(f"{'puzzle':<14} {'train':>6} {'test':>5} {'total':>6}  interpretation")
        for kind in PuzzleKind:
            ds, rec = datasets.build_split(kind, args.seed)
            datasets.write_split(ds, out / datasets.SPLIT_FILENAMES[kind])
            print(f"{kind.value:<14} {len(ds.train):>6} {len(ds.test):>5} {len(ds.train) + len(ds.test):>6}  {ds.interpretation_tag}")
            if rec is not None:
                summary.append(rec.to_dict())
                if not rec.matched:
                    print(f"warning: {rec.summary()}", file=sys.stderr)
        (out / "reconciliation.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def cmd_solve(args) -> int:
    try:
        ds = datasets.read_split(args.dataset)
    except (OSError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc, OSError) else EXIT_DATA
    unsolvable = 0
    lines = []
    for entry in ds.all_entries():
        inst = entry.instance
        rec = {"kind": ds.kind.value, "id": entry.id, "params": inst.params()}
        if isinstance(inst, MinimalGrassInstance):
            sol = oracle.solve_minimal_grass(inst)
            rec.update(dims=[list(d) for d in sol.dims], grass_area=sol.grass_area, solvable=True)
        else:
            plan = oracle.solve(inst)
            rec["solvable"] = plan is not None
            if plan is None:
                unsolvable += 1
            else:
                rec["moves"] = [render_move(inst, s, m) for s, m in zip(plan.states, plan.moves)]
        lines.append(json.dumps(rec, sort_keys=True))
    try:
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"{len(lines)} instances, {unsolvable} unsolvable")
    return EXIT_DATA if unsolvable else EXIT_OK


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    for name in ("output_dir", "concurrency_limit", "seed", "limit"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    return cfg


def _load_splits(cfg: RunConfig):
    return [datasets.read_split(Path(cfg.dataset_dir) / datasets.SPLIT_FILENAMES[k]) for k in cfg.kinds]


def make_backend(cfg: RunConfig):
    if cfg.backend == "live":
        return LiveBackend(cfg.live)
    return MockBackend(cfg.mock)


def write_outputs(records, prices: PriceTable, out: Path, write_recs: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    report = build_report(records, prices)
    if write_recs:
        write_records(records, out / "records.jsonl")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "points.csv").write_text(report.points_csv(), encoding="utf-8")
    print(report.to_text(), end="")


def cmd_run(args) -> int:
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except ConfigError as exc:
        for p in exc.problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    out = Path(cfg.output_dir)
    try:
        if args.rescore:
            records = [rescore(r) for r in read_records(out / "records.jsonl")]
        else:
            splits = _load_splits(cfg)
            backend = make_backend(cfg)
            records = evaluate_suite(splits, cfg.jobs(), backend, cfg.concurrency_limit, cfg.seed, cfg.limit)
        write_outputs(records, cfg.prices, out)
    except AuthenticationError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (DatasetError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    backend_failures = sum(1 for r in records if r.error)
    if backend_failures:
        print(f"{backend_failures} records ended in backend errors", file=sys.stderr)
    return EXIT_BACKEND if backend_failures and backend_failures == len(records) else EXIT_OK


def cmd_rescore(args) -> int:
    try:
        records = [rescore(r) for r in read_records(args.records)]
        write_records(records, args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    correct = sum(r.final_verdict.correct for r in records)
    print(f"{len(records)} records rescored, {correct} correct")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        records = read_records(args.records)
        prices = PriceTable(args.input_per_1k, args.output_per_1k)
        write_outputs(records, prices, Path(args.out_dir), write_recs=False)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_export_finetune(args) -> int:
    try:
        records = read_records(args.records)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    result = export(records, TunedType(args.tuned_type))
    try:
        n = write_jsonl(result.records, args.out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(
        f"kept {n}, dropped {result.dropped_incorrect} incorrect, rejected {len(result.rejected)}, "
        f"skipped {result.skipped_source} from other methods"
    )
    for reason in result.rejected:
        print(f"  rejected {reason}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atsearch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-datasets", help="enumerate puzzles and write train/test split files")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=datasets.DEFAULT_SEED)
    p.set_defaults(func=cmd_gen_datasets)

    p = sub.add_parser("solve", help="dump oracle solutions for a split file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("run", help="run methods over test splits and write report + records")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", dest="output_dir")
    p.add_argument("--concurrency", dest="concurrency_limit", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--limit", type=int)
    p.add_argument("--rescore", action="store_true", help="re-score records.jsonl in the output dir without backend calls")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("rescore", help="re-score persisted run records")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rescore)

    p = sub.add_parser("report", help="rebuild report tables from run records")
    p.add_argument("--records", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--input-per-1k", type=float, default=0.0)
    p.add_argument("--output-per-1k", type=float, default=0.0)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export-finetune", help="write instruction-tuning pairs from correct run records")
    p.add_argument("--records", required=True)
    p.add_argument("--tuned-type", required=True, choices=[t.value for t in TunedType])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_finetune)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

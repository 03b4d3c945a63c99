"""Run every method over the test splits with the offline mock and print the report.

Example:
    python3 scripts/run_mock_suite.py --error-rate 0.3 --cost high --out runs/mock_high
"""

import argparse
import time
from pathlib import Path

from atsearch import datasets
from atsearch.llm import Corruption, MockBackend, MockConfig
from atsearch.orchestrator import Cost, Job, PriceTable, RunSetting, build_report, evaluate_suite, write_records
from atsearch.prompts import Method, Shot
from atsearch.puzzles import PuzzleKind


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--error-rate", type=float, default=0.0)
    ap.add_argument("--corruption", choices=[c.value for c in Corruption], default=Corruption.WRONG_ANSWER.value)
    ap.add_argument("--seed", type=int, default=datasets.DEFAULT_SEED)
    ap.add_argument("--cost", choices=["low", "high"], default="low")
    ap.add_argument("--shot", choices=[s.value for s in Shot], default=Shot.ZERO.value)
    ap.add_argument("--methods", nargs="+", default=[m.value for m in Method])
    ap.add_argument("--workers", type=int, default=8)
    ap.add_argument("--limit", type=int, default=None, help="test instances per puzzle")
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    splits = [datasets.build_split(k, args.seed)[0] for k in PuzzleKind]
    backend = MockBackend(MockConfig(args.error_rate, Corruption(args.corruption), args.seed))
    setting = RunSetting(shot=Shot(args.shot), cost=Cost(args.cost))
    jobs = [Job(Method(m), setting) for m in args.methods]
    t0 = time.perf_counter()
    records = evaluate_suite(splits, jobs, backend, args.workers, limit=args.limit)
    report = build_report(records, PriceTable())
    print(report.to_text(), end="")
    print(f"{len(records)} records in {time.perf_counter() - t0:.1f}s")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        write_records(records, args.out / "records.jsonl")
        (args.out / "report.csv").write_text(report.to_csv())


if __name__ == "__main__":
    main()

"""Mock accuracy as a function of k against the independent-trial prediction 1 - e^k."""

import argparse

from atsearch import datasets
from atsearch.llm import MockBackend, MockConfig
from atsearch.orchestrator import Cost, Job, RunSetting, evaluate_suite
from atsearch.prompts import Method
from atsearch.puzzles import PuzzleKind


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--error-rate", type=float, default=0.3)
    ap.add_argument("--max-k", type=int, default=5)
    ap.add_argument("--seed", type=int, default=datasets.DEFAULT_SEED)
    args = ap.parse_args()
    splits = [datasets.build_split(k, args.seed)[0] for k in PuzzleKind]
    backend = MockBackend(MockConfig(error_rate=args.error_rate, master_seed=args.seed))
    print(f"{'k':>2} {'measured':>9} {'predicted':>9}")
    for k in range(1, args.max_k + 1):
        setting = RunSetting(cost=Cost.CUSTOM, self_consistency_k=k)
        recs = evaluate_suite(splits, [Job(Method.ATS_BFS, setting)], backend, 8)
        acc = sum(r.final_verdict.correct for r in recs) / len(recs)
        print(f"{k:>2} {100 * acc:>8.1f}% {100 * (1 - args.error_rate**k):>8.1f}%")


if __name__ == "__main__":
    main()

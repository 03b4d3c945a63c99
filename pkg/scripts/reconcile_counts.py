"""Print instance counts for every enumeration-rule variant next to the published totals."""

import argparse
import json
import time

from atsearch import datasets
from atsearch.datasets import ENUMERATORS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--json", action="store_true", help="emit one JSON object per puzzle")
    args = ap.parse_args()
    start = time.perf_counter()
    for kind in ENUMERATORS:
        rec = datasets.reconcile(kind)
        if args.json:
            print(json.dumps(rec.to_dict(), sort_keys=True))
            continue
        print(f"== {kind.value} (published {rec.published_count})")
        for tag, n in sorted(rec.variant_counts.items(), key=lambda kv: abs(kv[1] - rec.published_count)):
            mark = "*" if tag == rec.chosen.tag else " "
            print(f"  {mark} {tag:<45} {n:>5}")
        print(f"  -> {rec.summary()}")
    if not args.json:
        print(f"done in {time.perf_counter() - start:.1f}s")


if __name__ == "__main__":
    main()

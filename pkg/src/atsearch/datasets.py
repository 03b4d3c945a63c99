"""Instance enumeration, count reconciliation, train/test splits and split files.

Each enumerator takes an ``EnumRule``; ``reconcile`` evaluates a small grid of
rules against the published count and picks the matching one, or the documented
default (the literal reading) when nothing matches.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations, combinations_with_replacement, product
from pathlib import Path
from typing import Optional

from . import oracle
from .puzzles import (
    ArithmeticInstance,
    DropWaterInstance,
    MinimalGrassInstance,
    NumberPathInstance,
    PuzzleInstance,
    PuzzleKind,
    instance_from_params,
)

DEFAULT_SEED = 20231011

# published sizes: (total, test)
PUBLISHED_COUNTS = {
    PuzzleKind.DROP_WATER: (660, 82),
    PuzzleKind.NUMBER_PATH: (476, 95),
    PuzzleKind.ARITHMETIC: (425, 53),
    PuzzleKind.MINIMAL_GRASS: (400, 100),
}

ARITHMETIC_GOALS = (6, 8, 12, 16, 18, 24)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Entry:
    id: int
    instance: PuzzleInstance


@dataclass
class DatasetSplit:
    kind: PuzzleKind
    train: list[Entry]
    test: list[Entry]
    seed: int
    interpretation_tag: str

    def all_entries(self) -> list[Entry]:
        return sorted(self.train + self.test, key=lambda e: e.id)


# ---------------------------------------------------------------------------
# enumeration rules


@dataclass(frozen=True)
class EnumRule:
    tag: str
    options: tuple


def _opts(rule: EnumRule) -> dict:
    return dict(rule.options)


def drop_water_rule(exclusive_upper: bool, unordered: bool, drop_trivial: bool) -> EnumRule:
    tag = "cap5-{}_{}_{}_n=minsteps".format(
        "29" if exclusive_upper else "30",
        "unordered" if unordered else "ordered",
        "nontrivial" if drop_trivial else "alltargets",
    )
    return EnumRule(tag, (("exclusive_upper", exclusive_upper), ("unordered", unordered), ("drop_trivial", drop_trivial)))


def number_path_rule(start_min: int, exclusive_upper: bool, exact: bool) -> EnumRule:
    tag = "a{}-{}_b<={}_{}".format(
        start_min, 19 if exclusive_upper else 20, 99 if exclusive_upper else 100, "exactly4" if exact else "atmost4"
    )
    return EnumRule(tag, (("start_min", start_min), ("exclusive_upper", exclusive_upper), ("exact", exact)))


def arithmetic_rule(max_number: int, division: bool, multiset: bool) -> EnumRule:
    tag = "nums1-{}_{}_{}".format(max_number, "+-*/" if division else "+-*", "multiset" if multiset else "distinct")
    return EnumRule(tag, (("max_number", max_number), ("division", division), ("multiset", multiset)))


# literal readings of the published rules
DEFAULT_RULES = {
    PuzzleKind.DROP_WATER: drop_water_rule(True, True, True),
    PuzzleKind.NUMBER_PATH: number_path_rule(1, False, True),
    PuzzleKind.ARITHMETIC: arithmetic_rule(12, True, True),
}

RULE_GRIDS = {
    PuzzleKind.DROP_WATER: [drop_water_rule(*flags) for flags in product((False, True), repeat=3)],
    PuzzleKind.NUMBER_PATH: [
        number_path_rule(lo, excl, exact) for lo in (0, 1) for excl in (False, True) for exact in (True, False)
    ],
    PuzzleKind.ARITHMETIC: [
        arithmetic_rule(hi, div, multi) for hi in (12, 11) for div in (True, False) for multi in (True, False)
    ],
}


def enumerate_drop_water(rule: Optional[EnumRule] = None) -> list[DropWaterInstance]:
    o = _opts(rule or DEFAULT_RULES[PuzzleKind.DROP_WATER])
    hi = 29 if o["exclusive_upper"] else 30
    out = []
    for a in range(5, hi + 1):
        for b in range(5, hi + 1):
            if o["unordered"] and b < a:
                continue
            for c in range(1, max(a, b) + 1):
                if o["drop_trivial"] and c in (a, b):
                    continue
                k = oracle.min_steps_drop_water(a, b, c)
                if k is not None and k <= 4:
                    out.append(DropWaterInstance(a, b, c, k))
    return out


def _number_path_targets(a: int, steps: int) -> set[int]:
    cur = {a}
    for _ in range(steps):
        cur = {w for v in cur for w in (2 * v, v + 1)}
    return cur


def enumerate_number_path(rule: Optional[EnumRule] = None) -> list[NumberPathInstance]:
    o = _opts(rule or DEFAULT_RULES[PuzzleKind.NUMBER_PATH])
    a_max, b_max = (19, 99) if o["exclusive_upper"] else (20, 100)
    pairs = set()
    for a in range(o["start_min"], a_max + 1):
        for steps in [4] if o["exact"] else [1, 2, 3, 4]:
            for b in _number_path_targets(a, steps):
                if a < b <= b_max:
                    pairs.add((a, b))
    if o["exact"]:
        return [NumberPathInstance(a, b, 4) for a, b in sorted(pairs)]
    # at-most variant: n is the shortest step count reaching b
    out = []
    for a, b in sorted(pairs):
        n = next(k for k in range(1, 5) if b in _number_path_targets(a, k))
        out.append(NumberPathInstance(a, b, n))
    return out


def _arith_reachable(nums: tuple[int, ...], division: bool) -> set[Fraction]:
    ops = ("+", "-", "*", "/") if division else ("+", "-", "*")

    def combine(x, y):
        for op in ops:
            if op == "+":
                yield x + y
            elif op == "-":
                yield x - y
            elif op == "*":
                yield x * y
            elif y != 0:
                yield x / y

    vals = [Fraction(v) for v in nums]
    out = set()
    for i, j in ((0, 1), (0, 2), (1, 2)):
        z = vals[3 - i - j]
        for x, y in ((vals[i], vals[j]), (vals[j], vals[i])):
            for r in combine(x, y):
                out.update(combine(r, z))
                out.update(combine(z, r))
    return out


def enumerate_arithmetic(rule: Optional[EnumRule] = None) -> list[ArithmeticInstance]:
    o = _opts(rule or DEFAULT_RULES[PuzzleKind.ARITHMETIC])
    gen = combinations_with_replacement if o["multiset"] else combinations
    out = []
    for nums in gen(range(1, o["max_number"] + 1), 3):
        reach = _arith_reachable(nums, o["division"])
        for goal in ARITHMETIC_GOALS:
            if goal in reach:
                out.append(ArithmeticInstance(nums, goal))
    return out


ENUMERATORS = {
    PuzzleKind.DROP_WATER: enumerate_drop_water,
    PuzzleKind.NUMBER_PATH: enumerate_number_path,
    PuzzleKind.ARITHMETIC: enumerate_arithmetic,
}


@dataclass
class Reconciliation:
    kind: PuzzleKind
    published_count: int
    variant_counts: dict[str, int]
    chosen: EnumRule
    matched: bool
    closest_tag: str

    @property
    def chosen_count(self) -> int:
        return self.variant_counts[self.chosen.tag]

    def summary(self) -> str:
        if self.matched:
            return f"{self.kind.value}: {self.chosen_count} matches published {self.published_count} with {self.chosen.tag}"
        return (
            f"{self.kind.value}: no rule variant matches published {self.published_count}; "
            f"closest {self.closest_tag} = {self.variant_counts[self.closest_tag]}; "
            f"using default {self.chosen.tag} = {self.chosen_count}"
        )

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "published_count": self.published_count,
            "matched": self.matched,
            "chosen": self.chosen.tag,
            "chosen_count": self.chosen_count,
            "closest": self.closest_tag,
            "variants": self.variant_counts,
        }


def reconcile(kind: PuzzleKind) -> Reconciliation:
    published = PUBLISHED_COUNTS[kind][0]
    counts = {rule.tag: len(ENUMERATORS[kind](rule)) for rule in RULE_GRIDS[kind]}
    default = DEFAULT_RULES[kind]
    matches = [r for r in RULE_GRIDS[kind] if counts[r.tag] == published]
    # prefer the literal reading on ties
    closest = min(RULE_GRIDS[kind], key=lambda r: (abs(counts[r.tag] - published), r != default)).tag
    chosen = default if default in matches else (matches[0] if matches else default)
    return Reconciliation(kind, published, counts, chosen, bool(matches), closest)


def sample_minimal_grass(count: int, seed: int) -> list[MinimalGrassInstance]:
    if count <= 0:
        raise DatasetError("count must be positive")
    rng = random.Random(seed)
    return [MinimalGrassInstance(tuple(rng.randint(1, 15) for _ in range(3))) for _ in range(count)]


def split(
    kind: PuzzleKind, instances: list, test_size: int, seed: int, interpretation_tag: str = ""
) -> DatasetSplit:
    """Uniform test sample without replacement; ids are positions in ``instances``."""
    if not 0 < test_size <= len(instances):
        raise DatasetError(f"test_size {test_size} not in 1..{len(instances)}")
    entries = [Entry(i, inst) for i, inst in enumerate(instances)]
    test_ids = set(random.Random(seed).sample(range(len(entries)), test_size))
    return DatasetSplit(
        kind=PuzzleKind(kind),
        train=[e for e in entries if e.id not in test_ids],
        test=[e for e in entries if e.id in test_ids],
        seed=seed,
        interpretation_tag=interpretation_tag,
    )


def build_split(kind: PuzzleKind, seed: int = DEFAULT_SEED) -> tuple[DatasetSplit, Optional[Reconciliation]]:
    kind = PuzzleKind(kind)
    total, test_size = PUBLISHED_COUNTS[kind]
    if kind is PuzzleKind.MINIMAL_GRASS:
        instances = sample_minimal_grass(total, seed)
        return split(kind, instances, test_size, seed, "uniform1-15"), None
    rec = reconcile(kind)
    instances = ENUMERATORS[kind](rec.chosen)
    return split(kind, instances, test_size, seed, rec.chosen.tag), rec


# ---------------------------------------------------------------------------
# split files: one JSON object per line


def write_split(ds: DatasetSplit, path) -> None:
    path = Path(path)
    labels = {e.id: "train" for e in ds.train} | {e.id: "test" for e in ds.test}
    with path.open("w", encoding="utf-8") as fh:
        for e in ds.all_entries():
            rec = {
                "kind": ds.kind.value,
                "id": e.id,
                "params": e.instance.params(),
                "split": labels[e.id],
                "seed": ds.seed,
                "interpretation_tag": ds.interpretation_tag,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_split(path) -> DatasetSplit:
    kind = seed = tag = None
    train, test, seen = [], [], set()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                rec_kind = PuzzleKind(rec["kind"])
                entry = Entry(int(rec["id"]), instance_from_params(rec_kind, rec["params"]))
                label = rec["split"]
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: malformed record ({exc})") from None
            if kind is None:
                kind, seed, tag = rec_kind, rec.get("seed", 0), rec.get("interpretation_tag", "")
            elif rec_kind is not kind:
                raise DatasetError(f"{path}:{lineno}: mixed kinds {kind.value} and {rec_kind.value}")
            if entry.id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate id {entry.id}")
            seen.add(entry.id)
            if label == "train":
                train.append(entry)
            elif label == "test":
                test.append(entry)
            else:
                raise DatasetError(f"{path}:{lineno}: unknown split label {label!r}")
    if kind is None:
        raise DatasetError(f"{path}: no records")
    return DatasetSplit(kind, train, test, seed, tag)


SPLIT_FILENAMES = {k: f"{k.value}.jsonl" for k in PuzzleKind}

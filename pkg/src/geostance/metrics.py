"""Stance metrics: per-class F1, F_avg (favor/against mean) and F_m (mean of micro and macro F1)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .data import STANCES

STANCE_CLASSES = ("favor", "against")


def _check(preds: Sequence[str], golds: Sequence[str]) -> None:
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(golds)} golds")
    bad = {x for x in (*preds, *golds) if x not in STANCES}
    if bad:
        raise ValueError(f"labels outside {list(STANCES)}: {sorted(bad)}")


def f1_per_class(preds: Sequence[str], golds: Sequence[str]) -> dict[str, float]:
    _check(preds, golds)
    out = {}
    for c in STANCES:
        tp = sum(1 for p, g in zip(preds, golds) if p == c and g == c)
        n_pred = sum(1 for p in preds if p == c)
        n_gold = sum(1 for g in golds if g == c)
        precision = tp / n_pred if n_pred else 0.0
        recall = tp / n_gold if n_gold else 0.0
        out[c] = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return out


def f_avg(preds: Sequence[str], golds: Sequence[str], classes: int = 2) -> float:
    """Mean F1 over favor and against (``classes=3`` also averages in none)."""
    per = f1_per_class(preds, golds)
    keys = STANCE_CLASSES if classes == 2 else STANCES
    return sum(per[c] for c in keys) / len(keys)


def micro_f1(preds: Sequence[str], golds: Sequence[str]) -> float:
    # single-label multiclass: micro F1 equals accuracy
    _check(preds, golds)
    if not golds:
        return 0.0
    return sum(1 for p, g in zip(preds, golds) if p == g) / len(golds)


def macro_f1(preds: Sequence[str], golds: Sequence[str]) -> float:
    per = f1_per_class(preds, golds)
    return sum(per.values()) / len(STANCES)


def f_m(preds: Sequence[str], golds: Sequence[str]) -> float:
    return (micro_f1(preds, golds) + macro_f1(preds, golds)) / 2


@dataclass
class MetricReport:
    per_class_f1: dict
    f_avg: float
    f_m: float
    micro_f1: float
    macro_f1: float
    n_examples: int
    seed_list: list = field(default_factory=list)
    per_seed: list = field(default_factory=list)

    def as_row(self) -> list[float]:
        return [self.per_class_f1["favor"], self.per_class_f1["against"], self.per_class_f1["none"],
                self.f_avg, self.micro_f1, self.macro_f1, self.f_m]


def score(preds: Sequence[str], golds: Sequence[str], favg_classes: int = 2) -> MetricReport:
    per = f1_per_class(preds, golds)
    micro = micro_f1(preds, golds)
    macro = sum(per.values()) / len(STANCES)
    keys = STANCE_CLASSES if favg_classes == 2 else STANCES
    return MetricReport(per, sum(per[c] for c in keys) / len(keys), (micro + macro) / 2, micro, macro, len(golds))


def aggregate(reports: Sequence[MetricReport], seeds: Sequence[int]) -> MetricReport:
    """Arithmetic mean over seeds; the per-seed reports are kept alongside."""
    if not reports:
        raise ValueError("nothing to aggregate")
    k = len(reports)

    def mean(values):
        return sum(values) / k

    per = {c: mean([r.per_class_f1[c] for r in reports]) for c in STANCES}
    return MetricReport(per, mean([r.f_avg for r in reports]), mean([r.f_m for r in reports]),
                        mean([r.micro_f1 for r in reports]), mean([r.macro_f1 for r in reports]),
                        reports[0].n_examples, list(seeds), list(reports))

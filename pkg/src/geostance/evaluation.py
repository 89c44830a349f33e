"""Per-task and full-suite evaluation with multi-seed aggregation."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .data import (DataError, GeoGraph, TaskSpec, build_splits, load_corpus, load_descriptions,
                   load_geo_graph)
from .metrics import MetricReport, aggregate, score
from .training import FitResult, TrainConfig, fit, predict_labels


@dataclass
class Corpora:
    labeled: dict
    unlabeled: dict
    descriptions: dict
    graph: GeoGraph

    @property
    def topics(self) -> list[str]:
        return list(self.descriptions)

    def descriptions_text(self) -> dict[str, str]:
        return {t: d.description for t, d in self.descriptions.items()}


def corpus_paths(directory) -> dict:
    d = Path(directory)
    return {"descriptions": d / "descriptions.tsv", "geo": d / "regions.geo",
            "labeled": lambda t: d / f"{t}.labeled.tsv", "unlabeled": lambda t: d / f"{t}.unlabeled.tsv"}


def load_corpora(directory) -> Corpora:
    """Load ``descriptions.tsv``, ``regions.geo`` and ``<topic>.{labeled,unlabeled}.tsv`` files."""
    paths = corpus_paths(directory)
    descriptions = load_descriptions(paths["descriptions"])
    graph = load_geo_graph(paths["geo"])
    topics = list(descriptions)
    regions = set(graph.regions)
    labeled, unlabeled = {}, {}
    for t in topics:
        lp, up = paths["labeled"](t), paths["unlabeled"](t)
        if lp.exists():
            labeled[t] = load_corpus(lp, True, topics=[t], regions=regions)
        if up.exists():
            unlabeled[t] = load_corpus(up, False, topics=[t], regions=regions)
    return Corpora(labeled, unlabeled, descriptions, graph)


@dataclass
class TaskResult:
    task: TaskSpec
    report: MetricReport
    fits: list = field(default_factory=list)


def run_task(spec: TaskSpec, cfg: TrainConfig, corpora: Corpora,
             on_fit: Optional[Callable[[int, FitResult], None]] = None, keep_fits: bool = False) -> TaskResult:
    """Fit and score once per seed in ``spec.seed_list``; report the per-seed mean."""
    reports, fits = [], []
    for seed in spec.seed_list:
        splits = build_splits(spec, corpora.labeled, corpora.unlabeled, cfg.train_fraction, seed)
        result = fit(splits, cfg, seed, corpora.descriptions, corpora.graph)
        preds = predict_labels(result.model, result.featurizer, splits.test_labeled)
        reports.append(score(preds, [ex.stance for ex in splits.test_labeled], cfg.favg_classes))
        if on_fit:
            on_fit(seed, result)
        if keep_fits:
            fits.append(result)
    return TaskResult(spec, aggregate(reports, spec.seed_list), fits)


def suite_tasks(mode: str, topics: Sequence[str], seeds: Sequence[int]) -> list[TaskSpec]:
    if len(topics) < 2:
        raise DataError("a suite needs at least two topics", rule="SUITE_INVALID")
    if mode == "cross_target":
        return [TaskSpec("cross_target", (s,), d, tuple(seeds)) for s, d in itertools.permutations(topics, 2)]
    if mode == "zero_shot":
        if len(topics) < 3:
            raise DataError("zero_shot needs at least three topics (two or more sources)", rule="SUITE_INVALID")
        return [TaskSpec("zero_shot", tuple(t for t in topics if t != d), d, tuple(seeds)) for d in topics]
    raise DataError(f"unknown mode {mode!r}", rule="SUITE_INVALID")


def run_suite(mode: str, corpora: Corpora, cfg: TrainConfig, seeds: Optional[Sequence[int]] = None,
              on_fit: Optional[Callable[[TaskSpec, int, FitResult], None]] = None) -> list[TaskResult]:
    seeds = tuple(cfg.seeds if seeds is None else seeds)
    results = []
    for spec in suite_tasks(mode, corpora.topics, seeds):
        hook = (lambda seed, res, spec=spec: on_fit(spec, seed, res)) if on_fit else None
        results.append(run_task(spec, cfg, corpora, on_fit=hook))
    return results


# --------------------------------------------------------------------------- report formats

TSV_HEADER = "task\tseed\tF_favor\tF_against\tF_none\tF_avg\tmicro\tmacro\tF_m"


def report_lines(results: Sequence[TaskResult]) -> list[str]:
    lines = [TSV_HEADER]
    for res in results:
        for seed, rep in zip(res.report.seed_list, res.report.per_seed):
            lines.append("\t".join([res.task.name, str(seed)] + [f"{v:.6f}" for v in rep.as_row()]))
        lines.append("\t".join([res.task.name, "mean"] + [f"{v:.6f}" for v in res.report.as_row()]))
    return lines


def format_table(results: Sequence[TaskResult]) -> str:
    """Task x {F_avg, F_m} in percent, one row per task."""
    width = max([len("task")] + [len(r.task.name) for r in results])
    rows = [f"{'task':<{width}}  {'mode':<12}  {'F_avg':>6}  {'F_m':>6}  seeds"]
    for r in results:
        rows.append(f"{r.task.name:<{width}}  {r.task.mode:<12}  {100 * r.report.f_avg:6.1f}  "
                    f"{100 * r.report.f_m:6.1f}  {len(r.report.seed_list)}")
    return "\n".join(rows)

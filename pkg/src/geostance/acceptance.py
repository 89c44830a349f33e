"""Desk-scale acceptance harness: tiny encoder, synthetic corpora, one PASS/FAIL line per criterion."""
from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import metrics
from .data import STANCES, GeoGraph, SplitBundle, TaskSpec, build_splits
from .evaluation import Corpora, report_lines, run_suite
from .model import (GeoEncoder, build_model, count_parameters, gcn_propagate, grl_apply)
from .synth import SynthConfig, synth_generate
from .training import (BatchScheduler, EncoderConfig, Featurizer, TrainConfig, build_tokenizer, fit,
                       make_optimizer, predict_labels, seed_everything, stance_loss, topic_loss,
                       train_step)

BASE_PARAMS_MILLIONS = 110.1


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number}. {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(number: int, name: str, fn: Callable[[], tuple[bool, str]], budget: Optional[float] = None):
    start = time.perf_counter()
    ok, detail = fn()
    elapsed = time.perf_counter() - start
    if budget is not None and elapsed > budget:
        ok, detail = False, f"{detail}; runtime {elapsed:.1f}s exceeds {budget:.0f}s budget"
    return CriterionResult(number, name, ok, detail, elapsed)


def _rel_err(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(float(b.norm()), float(a.norm()))
    return 0.0 if denom == 0 else float((a - b).norm()) / denom


def _random_batch(gen: torch.Generator, batch: int, vocab: int, n_regions: int, n_topics: int,
                  max_len: int = 24) -> dict:
    length = int(torch.randint(6, max_len + 1, (1,), generator=gen))
    ids = torch.randint(4, vocab, (batch, length), generator=gen)
    ids[:, 0] = 2
    mask = torch.ones_like(ids)
    seg = torch.zeros_like(ids)
    cut = length // 3
    ids[:, cut] = 3
    ids[:, -1] = 3
    seg[:, cut + 1:] = 1
    # ragged right padding on some rows
    for i in range(batch):
        pad = int(torch.randint(0, max(length - cut - 2, 1), (1,), generator=gen))
        if pad:
            ids[i, length - pad:] = 0
            mask[i, length - pad:] = 0
            seg[i, length - pad:] = 0
            ids[i, length - pad - 1] = 3
            mask[i, length - pad - 1] = 1
    return {"input_ids": ids, "token_type_ids": seg, "attention_mask": mask,
            "geo_index": torch.randint(0, n_regions, (batch,), generator=gen),
            "topic": torch.randint(0, n_topics, (batch,), generator=gen),
            "stance": torch.randint(0, 3, (batch,), generator=gen)}


def _toy_graph(n: int = 6) -> GeoGraph:
    regions = [f"R{i}" for i in range(n)]
    return GeoGraph.from_edges(regions, [(regions[i], regions[i + 1]) for i in range(n - 1)])


# --------------------------------------------------------------------------- criteria 1-5

def separation_identity(passes: int = 1000, seed: int = 0) -> tuple[bool, str]:
    """f_s + f_i == h with zero tolerance over random forward passes and random separation weights."""
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed)
    graph = _toy_graph()
    model = build_model("tiny", graph, 3, vocab_size=500)
    model.eval()
    mismatches = 0
    with torch.no_grad():
        for i in range(passes):
            if i % 100 == 0:
                model.separation.linear.weight.normal_(0, 1, generator=gen)
                model.separation.linear.bias.normal_(0, 1, generator=gen)
            bundle = model.features(_random_batch(gen, 4, 500, graph.n, 3))
            mismatches += int((bundle.f_s + bundle.f_i != bundle.h.to(bundle.f_i.dtype)).sum())
    return mismatches == 0, f"{passes} passes, {mismatches} mismatching elements"


def _chain(x: torch.Tensor, coeff: torch.Tensor) -> torch.Tensor:
    return (torch.sin(x) * coeff).sum() + 0.5 * (x ** 3).sum() + x.prod()


def grl_gradient_law(points: int = 20, lambdas: Sequence[float] = (0.0, 0.1, 1.0), seed: int = 0,
                     step: float = 1e-6) -> tuple[bool, str]:
    """Autodiff through GRL vs -lambda times a central finite difference of the GRL-free chain."""
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    forward_ok = True
    for lam in lambdas:
        for _ in range(points):
            theta = torch.randn(5, generator=gen, dtype=torch.float64)
            coeff = torch.randn(5, generator=gen, dtype=torch.float64)
            x = theta.clone().requires_grad_(True)
            y = grl_apply(x, lam)
            forward_ok &= torch.equal(y.detach(), theta)
            _chain(y, coeff).backward()
            fd = torch.zeros_like(theta)
            for k in range(theta.numel()):
                e = torch.zeros_like(theta)
                e[k] = step
                fd[k] = (_chain(theta + e, coeff) - _chain(theta - e, coeff)) / (2 * step)
            worst = max(worst, _rel_err(x.grad, -lam * fd))
    ok = worst < 1e-4 and forward_ok
    return ok, f"max rel. error {worst:.2e} (<1e-4) over {points} points x lambda {list(lambdas)}; forward identity {forward_ok}"


def combined_gradient(states: int = 5, settings: Sequence[tuple[float, float]] = ((0.01, 0.1), (0.5, 0.5)),
                      seed: int = 0) -> tuple[bool, str]:
    """grad(L_sc + alpha*L_td via GRL) == grad(L_sc) - alpha*lambda*grad(L_td without GRL) on Theta_M."""
    gen = torch.Generator().manual_seed(seed)
    graph = _toy_graph()
    worst_total = worst_adv = 0.0
    for s in range(states):
        for alpha, lam in settings:
            torch.manual_seed(seed + s)
            model = build_model("tiny", graph, 3, vocab_size=200, grl_lambda=lam)
            model.train()
            lb = _random_batch(gen, 8, 200, graph.n, 3)
            pb = _random_batch(gen, 8, 200, graph.n, 3)
            params = model.theta_m()

            def grads(loss):
                gs = torch.autograd.grad(loss, params, allow_unused=True)
                return torch.cat([(torch.zeros_like(p) if g is None else g).reshape(-1).double()
                                  for p, g in zip(params, gs)])

            torch.manual_seed(1000 + s)
            l_sc = stance_loss(model, lb)
            l_td = topic_loss(model, pb)
            g_total = grads(l_sc + alpha * l_td)
            torch.manual_seed(1000 + s)
            g_sc = grads(stance_loss(model, lb))
            f_i = model.features(pb).f_i
            g_td = grads(F.cross_entropy(model.topic_head(f_i), pb["topic"]))
            worst_total = max(worst_total, _rel_err(g_total, g_sc - alpha * lam * g_td))
            worst_adv = max(worst_adv, _rel_err(g_total - g_sc, -alpha * lam * g_td))
    ok = worst_total < 1e-3 and worst_adv < 1e-3
    return ok, (f"max rel. error {worst_total:.2e} on the total gradient, {worst_adv:.2e} on its adversarial "
                f"part (<1e-3), {states} states x (alpha, lambda) in {list(settings)}")


def confusion_f_scores(preds: Sequence[str], golds: Sequence[str]) -> tuple[float, float]:
    """Brute-force (F_avg, F_m) from an explicit 3x3 confusion matrix."""
    idx = {s: i for i, s in enumerate(STANCES)}
    cm = np.zeros((3, 3), dtype=np.int64)
    for p, g in zip(preds, golds):
        cm[idx[g], idx[p]] += 1
    f1 = []
    for c in range(3):
        tp = cm[c, c]
        prec = tp / cm[:, c].sum() if cm[:, c].sum() else 0.0
        rec = tp / cm[c, :].sum() if cm[c, :].sum() else 0.0
        f1.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    micro = np.trace(cm) / cm.sum() if cm.sum() else 0.0
    macro = sum(f1) / 3
    return (f1[0] + f1[1]) / 2, (micro + macro) / 2


def metric_oracle(sequences: int = 100, seed: int = 0) -> tuple[bool, str]:
    rng = random.Random(seed)
    worst = 0.0
    for _ in range(sequences):
        n = rng.randint(1, 60)
        golds = [rng.choice(STANCES) for _ in range(n)]
        preds = [rng.choice(STANCES) for _ in range(n)]
        favg_ref, fm_ref = confusion_f_scores(preds, golds)
        worst = max(worst, abs(metrics.f_avg(preds, golds) - favg_ref), abs(metrics.f_m(preds, golds) - fm_ref))
    golds = ["favor", "favor", "against", "none"]
    preds = ["favor", "against", "against", "none"]
    hand = (abs(metrics.micro_f1(preds, golds) - 3 / 4) < 1e-12
            and abs(metrics.macro_f1(preds, golds) - 7 / 9) < 1e-12
            and abs(metrics.f_m(preds, golds) - 55 / 72) < 1e-12)
    ok = worst <= 1e-9 and hand
    return ok, f"max deviation {worst:.1e} over {sequences} sequences (<=1e-9); hand case 3/4, 7/9, 55/72: {hand}"


def gcn_reach(dim: int = 8, seed: int = 0) -> tuple[bool, str]:
    """Path 0-1-2 plus an isolated node 3, two layers: node 0 sees node 2 but never node 3."""
    graph = GeoGraph.from_edges(["a", "b", "c", "d"], [("a", "b"), ("b", "c")])
    torch.manual_seed(seed)
    geo = GeoEncoder(graph.adjacency, dim=dim, layers=2)
    with torch.no_grad():
        geo.embedding.uniform_(0.1, 1.0)
        for w in geo.weights:
            w.uniform_(0.05, 0.5)

    def node0(emb):
        return gcn_propagate(geo.adjacency, emb, list(geo.weights))[0]

    jac = torch.autograd.functional.jacobian(node0, geo.embedding.detach())  # (dim, N, dim)
    two_hop = float(jac[:, 2, :].abs().max())
    isolated = float(jac[:, 3, :].abs().max())
    ok = two_hop > 0 and isolated == 0.0
    return ok, f"max |dJ| wrt 2-hop row {two_hop:.3e} (>0), wrt disconnected row {isolated:.1e} (==0)"


# --------------------------------------------------------------------------- criterion 6

def overfit_sanity(n_examples: int = 32, max_epochs: int = 200, seed: int = 0,
                   learning_rate: float = 1e-3) -> tuple[bool, str]:
    corpus = synth_generate(SynthConfig(n_topics=2, n_per_topic=n_examples, n_unlabeled_per_topic=16, seed=seed))
    train = corpus.labeled["T0"][:n_examples]
    task = TaskSpec("cross_target", ("T0",), "T1", (seed,))
    pool = tuple(train) + tuple(corpus.unlabeled["T0"]) + tuple(corpus.unlabeled["T1"])
    splits = SplitBundle(task, tuple(train), tuple(train), tuple(corpus.labeled["T1"]), pool)
    cfg = TrainConfig(alpha=0.0, learning_rate=learning_rate, max_epochs=max_epochs, patience=max_epochs)
    graph = corpus.graph.with_unknown()
    tok = build_tokenizer(splits, corpus.descriptions, cfg.encoder)
    feat = Featurizer(tok, corpus.descriptions, task.topics, graph)
    seed_everything(seed)
    model = build_model("tiny", graph, 2, vocab_size=len(tok), dropout=cfg.dropout, grl_lambda=cfg.grl_lambda)
    opt = make_optimizer(model, cfg)
    sched = BatchScheduler(train, pool, cfg.batch_size, seed)
    full = feat.batch(train)
    loss = math.inf
    for epoch in range(1, max_epochs + 1):
        for lb, pb in sched.epoch(epoch):
            train_step(model, opt, feat.batch(lb), feat.batch(pb), cfg, destination_index=1)
        model.eval()
        with torch.no_grad():
            loss = float(stance_loss(model, full))
        if loss < 0.05:
            return True, f"train stance loss {loss:.4f} < 0.05 at epoch {epoch} (alpha=0, {n_examples} examples)"
    return False, f"train stance loss {loss:.4f} after {max_epochs} epochs"


# --------------------------------------------------------------------------- criterion 7

@dataclass
class AblationSpec:
    name: str
    overrides: dict = field(default_factory=dict)

    def apply(self, cfg: TrainConfig) -> TrainConfig:
        valid = {f for f in TrainConfig.__dataclass_fields__ if f != "encoder"}
        bad = [k for k in self.overrides if k not in valid]
        if bad:
            raise ValueError(f"ablation {self.name!r} overrides unknown config keys {bad}")
        return replace(cfg, **self.overrides)


FULL_MODEL = AblationSpec("full")
NO_ADVERSARY = AblationSpec("alpha=0", {"alpha": 0.0})
NO_GEO = AblationSpec("no-geo", {"use_geo": False})
NO_DESCRIPTION = AblationSpec("no-description", {"use_description": False})

# generator and training settings of the planted-transfer experiment
TRANSFER_SYNTH = SynthConfig(n_topics=2, n_per_topic=200, n_unlabeled_per_topic=300, spurious_strength=2, seed=1)
TRANSFER_TRAIN = TrainConfig(learning_rate=3e-4, max_epochs=100, patience=10, discriminator_lr_scale=30.0)


def linear_probe_accuracy(features: np.ndarray, labels: np.ndarray, seed: int = 0) -> float:
    """Held-out accuracy of a multinomial logistic-regression probe (even rows train, odd rows test)."""
    from sklearn.linear_model import LogisticRegression
    from sklearn.pipeline import make_pipeline
    from sklearn.preprocessing import StandardScaler

    order = np.random.default_rng(seed).permutation(len(labels))
    x, y = features[order], labels[order]
    train, test = np.arange(len(y)) % 2 == 0, np.arange(len(y)) % 2 == 1
    probe = make_pipeline(StandardScaler(), LogisticRegression(max_iter=5000))
    probe.fit(x[train], y[train])
    return float(probe.score(x[test], y[test]))


@dataclass
class TransferRow:
    ablation: str
    seed: int
    dest_f_avg: float
    probe_f_i: float
    probe_f_s: float
    best_epoch: int


@dataclass
class TransferTable:
    rows: list
    chance: float

    def mean(self, ablation: str, attr: str) -> float:
        vals = [getattr(r, attr) for r in self.rows if r.ablation == ablation]
        return sum(vals) / len(vals)

    def format(self) -> str:
        lines = ["ablation         seed  dest_F_avg  probe_f_i  probe_f_s  best_epoch"]
        for r in self.rows:
            lines.append(f"{r.ablation:<15}  {r.seed:>4}  {r.dest_f_avg:10.3f}  {r.probe_f_i:9.3f}  "
                         f"{r.probe_f_s:9.3f}  {r.best_epoch:10d}")
        for name in dict.fromkeys(r.ablation for r in self.rows):
            lines.append(f"{name:<15}  mean  {self.mean(name, 'dest_f_avg'):10.3f}  "
                         f"{self.mean(name, 'probe_f_i'):9.3f}  {self.mean(name, 'probe_f_s'):9.3f}")
        return "\n".join(lines)


def run_transfer_experiment(synth: SynthConfig = TRANSFER_SYNTH, ablations: Sequence[AblationSpec] = (FULL_MODEL, NO_ADVERSARY),
                            seeds: Sequence[int] = (0, 1, 2, 3, 4), base: TrainConfig = TRANSFER_TRAIN) -> TransferTable:
    """Cross-target T0 -> T1 on a synthetic corpus for every ablation x seed, plus topic probes."""
    corpus = synth_generate(synth)
    topics = synth.topics()
    task = TaskSpec("cross_target", (topics[0],), topics[1], tuple(seeds))
    probe_set = list(corpus.unlabeled[topics[0]]) + list(corpus.unlabeled[topics[1]])
    rows = []
    for ab in ablations:
        cfg = ab.apply(base)
        for seed in seeds:
            splits = build_splits(task, corpus.labeled, corpus.unlabeled, cfg.train_fraction, seed)
            res = fit(splits, cfg, seed, corpus.descriptions, corpus.graph)
            preds = predict_labels(res.model, res.featurizer, splits.test_labeled)
            dest = metrics.f_avg(preds, [ex.stance for ex in splits.test_labeled])
            with torch.no_grad():
                res.model.eval()
                batch = res.featurizer.batch(probe_set)
                bundle = res.model.features(batch)
            y = batch["topic"].numpy()
            rows.append(TransferRow(ab.name, seed, dest, linear_probe_accuracy(bundle.f_i.numpy(), y, seed),
                                    linear_probe_accuracy(bundle.f_s.numpy(), y, seed), res.best_epoch))
    return TransferTable(rows, 1.0 / len(task.topics))


def adversarial_transfer(seeds: Sequence[int] = (0, 1, 2, 3, 4), table_out: Optional[Callable[[str], None]] = None,
                         **kwargs) -> tuple[bool, str]:
    table = run_transfer_experiment(seeds=seeds, **kwargs)
    if table_out:
        table_out(table.format())
    full, abl = table.mean(FULL_MODEL.name, "dest_f_avg"), table.mean(NO_ADVERSARY.name, "dest_f_avg")
    p_i, p_s = table.mean(FULL_MODEL.name, "probe_f_i"), table.mean(FULL_MODEL.name, "probe_f_s")
    ch = table.chance
    ok_transfer = full >= abl
    ok_fi = p_i <= ch + 0.10
    ok_fs = p_s >= ch + 0.20
    detail = (f"dest F_avg full {full:.3f} vs alpha=0 {abl:.3f} ({'ok' if ok_transfer else 'FAIL'}); "
              f"probe f_i {p_i:.3f} <= {ch + 0.10:.2f} ({'ok' if ok_fi else 'FAIL'}); "
              f"probe f_s {p_s:.3f} >= {ch + 0.20:.2f} ({'ok' if ok_fs else 'FAIL'}); {len(seeds)} seeds")
    return ok_transfer and ok_fi and ok_fs, detail


# --------------------------------------------------------------------------- criteria 8-9

SUITE_SYNTH = SynthConfig(n_topics=3, n_per_topic=40, n_unlabeled_per_topic=40, seed=3)
SUITE_TRAIN = TrainConfig(learning_rate=1e-3, max_epochs=2, patience=2, seeds=(0,))


def suite_logs(synth: SynthConfig = SUITE_SYNTH, cfg: TrainConfig = SUITE_TRAIN) -> tuple[int, int, str]:
    corpus = synth_generate(synth)
    corpora = Corpora(corpus.labeled, corpus.unlabeled, corpus.descriptions, corpus.graph)
    epoch_lines: list[str] = []

    def on_fit(spec, seed, res):
        epoch_lines.extend(f"{spec.name}\t{seed}\t{e.line()}" for e in res.history)

    cross = run_suite("cross_target", corpora, cfg, on_fit=on_fit)
    zero = run_suite("zero_shot", corpora, cfg, on_fit=on_fit)
    text = "\n".join(report_lines(cross + zero) + epoch_lines) + "\n"
    return len(cross), len(zero), text


def suite_determinism() -> tuple[bool, str]:
    n_cross, n_zero, first = suite_logs()
    _, _, second = suite_logs()
    same = first == second
    ok = n_cross == 6 and n_zero == 3 and same
    return ok, f"{n_cross} cross-target + {n_zero} zero-shot reports (want 6 + 3); identical logs across runs: {same}"


def base_parameter_count(geo_dim: int = 256, n_regions: int = 52, n_topics: int = 3) -> int:
    regions = [f"R{i}" for i in range(n_regions)]
    graph = GeoGraph.from_edges(regions, [])
    model = build_model("pretrained", graph, n_topics, load_weights=False, geo_dim=geo_dim)
    return count_parameters(model)


def parameter_count() -> tuple[bool, str]:
    n = base_parameter_count()
    rel = abs(n / 1e6 - BASE_PARAMS_MILLIONS) / BASE_PARAMS_MILLIONS
    return rel <= 0.02, f"{n:,} trainable parameters = {n / 1e6:.1f}M vs {BASE_PARAMS_MILLIONS}M ({100 * rel:.2f}% off, <=2%)"


# --------------------------------------------------------------------------- driver

def run_acceptance(quick: bool = False, include_param_count: bool = True,
                   out: Callable[[str], None] = print) -> list[CriterionResult]:
    torch.set_num_threads(max(1, min(4, torch.get_num_threads())))
    seeds = (0, 1) if quick else (0, 1, 2, 3, 4)
    checks = [
        (1, "separation identity", lambda: separation_identity(200 if quick else 1000), 10.0),
        (2, "GRL gradient law", grl_gradient_law, 30.0),
        (3, "combined-objective gradient", combined_gradient, None),
        (4, "metric oracle", metric_oracle, None),
        (5, "GCN reach", gcn_reach, None),
        (6, "overfit sanity", overfit_sanity, 120.0),
        (7, "adversarial transfer", lambda: adversarial_transfer(seeds, table_out=out), 900.0),
        (8, "suite cardinality & determinism", suite_determinism, None),
    ]
    if include_param_count:
        checks.append((9, "parameter count", parameter_count, None))
    results = []
    for number, name, fn, budget in checks:
        res = _timed(number, name, fn, budget)
        out(res.line())
        results.append(res)
    passed = sum(r.passed for r in results)
    out(f"{passed}/{len(results)} criteria passed")
    return results

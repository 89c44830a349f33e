"""Adversarial training: stance loss on labeled sources plus GRL-reversed topic loss on the pool."""
from __future__ import annotations

import copy
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Sequence

import torch
import torch.nn.functional as F

from . import metrics
from .data import STANCES, GeoGraph, LabeledExample, SplitBundle
from .encoder import MAX_DESC_TOKENS, MAX_TEXT_TOKENS, WordTokenizer, PretrainedTokenizer, build_pair, collate_pairs
from .model import StanceModel, build_model

log = logging.getLogger(__name__)

STANCE_INDEX = {s: i for i, s in enumerate(STANCES)}


class LeakageError(RuntimeError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class EncoderConfig:
    kind: str = "tiny"
    weights_path: Optional[str] = None
    hidden_size: int = 32
    layers: int = 2
    heads: int = 2
    vocab_size: int = 500


@dataclass
class TrainConfig:
    batch_size: int = 16
    dropout: float = 0.1
    max_epochs: int = 100
    patience: int = 10
    learning_rate: float = 2e-5
    weight_decay: float = 5e-5
    alpha: float = 0.01
    grl_lambda: float = 0.1
    geo_dim: int = 128
    gcn_layers: int = 2
    geo_normalize: bool = False
    use_geo: bool = True
    use_description: bool = True
    max_text_tokens: int = MAX_TEXT_TOKENS
    max_desc_tokens: int = MAX_DESC_TOKENS
    train_fraction: float = 0.85
    grad_clip: Optional[float] = None
    discriminator_lr_scale: float = 1.0
    favg_classes: int = 2
    seeds: tuple = (0, 1, 2, 3, 4)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def validate(self) -> None:
        for name in ("batch_size", "max_epochs", "patience", "learning_rate", "max_text_tokens",
                     "max_desc_tokens", "geo_dim", "gcn_layers"):
            if not getattr(self, name) > 0:
                raise ValueError(f"train.{name} must be positive")
        for name in ("alpha", "grl_lambda", "weight_decay", "dropout"):
            if getattr(self, name) < 0:
                raise ValueError(f"train.{name} must be non-negative")
        if self.patience > self.max_epochs:
            raise ValueError("train.patience must not exceed train.max_epochs")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train.train_fraction must lie in (0, 1)")
        if self.favg_classes not in (2, 3):
            raise ValueError("train.favg_classes must be 2 or 3")
        if not self.seeds:
            raise ValueError("train.seeds must not be empty")
        if self.encoder.kind not in ("tiny", "pretrained"):
            raise ValueError(f"encoder.kind must be 'tiny' or 'pretrained', got {self.encoder.kind!r}")


@dataclass
class TrainState:
    epoch: int = 0
    best_dev: float = -math.inf
    best_epoch: int = 0
    since_improvement: int = 0
    best_state: Optional[dict] = None


@dataclass
class EpochLog:
    epoch: int
    l_sc: float
    l_td: float
    dev_favg: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.l_sc!r}\t{self.l_td!r}\t{self.dev_favg!r}"


@dataclass
class FitResult:
    model: StanceModel
    history: list
    best_epoch: int
    best_dev: float
    featurizer: "Featurizer"


class Featurizer:
    """Turns examples into model-ready tensors; token pairs are cached per (topic, text)."""

    def __init__(self, tokenizer, descriptions: dict, topics: Sequence[str], graph: GeoGraph,
                 max_desc_tokens: int = MAX_DESC_TOKENS, max_text_tokens: int = MAX_TEXT_TOKENS,
                 use_description: bool = True):
        self.tokenizer = tokenizer
        self.descriptions = {t: getattr(d, "description", d) for t, d in descriptions.items()}
        self.topics = tuple(topics)
        self.topic_index = {t: i for i, t in enumerate(self.topics)}
        self.graph = graph
        self.max_desc_tokens = max_desc_tokens
        self.max_text_tokens = max_text_tokens
        self.use_description = use_description
        self._cache: dict = {}

    def pair(self, topic: str, text: str):
        key = (topic, text)
        if key not in self._cache:
            desc = self.descriptions.get(topic) if self.use_description else None
            if self.use_description and desc is None:
                raise KeyError(f"no policy description for topic {topic!r}")
            self._cache[key] = build_pair(desc, text, self.tokenizer, self.max_desc_tokens,
                                          self.max_text_tokens)
        return self._cache[key]

    def geo_index(self, geo_id: Optional[str]) -> int:
        return self.graph.index(geo_id)

    def batch(self, examples: Sequence, with_topic: bool = True) -> dict:
        if with_topic:
            try:
                topics = torch.tensor([self.topic_index[ex.topic_id] for ex in examples])
            except KeyError as exc:
                raise ValueError(f"example topic {exc.args[0]!r} is outside the task topics "
                                 f"{list(self.topics)}") from None
        batch = collate_pairs([self.pair(ex.topic_id, ex.text) for ex in examples], self.tokenizer.pad_id)
        batch["geo_index"] = torch.tensor([self.geo_index(ex.geo_id) for ex in examples], dtype=torch.long)
        if with_topic:
            batch["topic"] = topics
        if all(isinstance(ex, LabeledExample) for ex in examples):
            batch["stance"] = torch.tensor([STANCE_INDEX[ex.stance] for ex in examples])
        return batch


def build_tokenizer(splits: SplitBundle, descriptions: dict, enc: EncoderConfig):
    if enc.kind == "pretrained":
        return PretrainedTokenizer(enc.weights_path or "bert-base-uncased")
    texts = [ex.text for ex in splits.train_labeled]
    texts += [ex.text for ex in splits.dev_labeled]
    texts += [ex.text for ex in splits.discriminator_pool]
    texts += [getattr(d, "description", d) for d in descriptions.values()]
    return WordTokenizer.build(texts, enc.vocab_size)


# --------------------------------------------------------------------------- batching

class BatchScheduler:
    """One labeled batch and one pooled batch per step; the pool cycles with reshuffling."""

    def __init__(self, train_labeled: Sequence, pool: Sequence, batch_size: int = 16, seed: int = 0):
        if not train_labeled or not pool:
            raise ValueError("both the labeled set and the discriminator pool must be non-empty")
        self.train = list(train_labeled)
        self.pool = list(pool)
        self.batch_size = batch_size
        self.seed = seed
        self._pool_rng = random.Random(f"pool-{seed}")
        self._pool_stream = self._cycle()

    def _cycle(self) -> Iterator:
        while True:
            order = list(range(len(self.pool)))
            self._pool_rng.shuffle(order)
            for i in order:
                yield self.pool[i]

    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.train) / self.batch_size)

    def epoch(self, epoch: int) -> Iterator[tuple[list, list]]:
        rng = random.Random(f"labeled-{self.seed}-{epoch}")
        order = list(range(len(self.train)))
        rng.shuffle(order)
        for start in range(0, len(order), self.batch_size):
            labeled = [self.train[i] for i in order[start:start + self.batch_size]]
            pooled = [next(self._pool_stream) for _ in range(self.batch_size)]
            yield labeled, pooled


def schedule_batches(train_labeled, discriminator_pool, batch_size: int = 16, seed: int = 0,
                     epochs: int = 1) -> Iterator[tuple[list, list]]:
    sched = BatchScheduler(train_labeled, discriminator_pool, batch_size, seed)
    for e in range(epochs):
        yield from sched.epoch(e)


# --------------------------------------------------------------------------- losses and steps

def stance_loss(model: StanceModel, batch: dict, destination_index: Optional[int] = None) -> torch.Tensor:
    if "stance" not in batch:
        raise ValueError("stance loss needs a fully labeled batch")
    if destination_index is not None and "topic" in batch and bool((batch["topic"] == destination_index).any()):
        raise LeakageError("destination-topic labeled example in a stance-loss batch")
    logits = model.stance_logits(model.features(batch))
    return F.cross_entropy(logits, batch["stance"])


def topic_loss(model: StanceModel, batch: dict) -> torch.Tensor:
    """Discriminator cross-entropy on GRL(f_i); stance labels in the batch are ignored."""
    logits = model.topic_logits(model.features(batch).f_i)
    return F.cross_entropy(logits, batch["topic"])


def train_step(model: StanceModel, optimizer: torch.optim.Optimizer, labeled_batch: dict, pooled_batch: dict,
               cfg: TrainConfig, destination_index: Optional[int] = None, where: str = "") -> dict:
    model.train()
    optimizer.zero_grad(set_to_none=True)
    l_sc = stance_loss(model, labeled_batch, destination_index)
    l_td = topic_loss(model, pooled_batch)
    total = l_sc + cfg.alpha * l_td
    if not torch.isfinite(total):
        raise TrainingError(f"non-finite loss {where}: L_sc={l_sc.item()} L_td={l_td.item()} "
                            f"total={total.item()}")
    total.backward()
    if cfg.grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    optimizer.step()
    return {"L_sc": l_sc.item(), "L_td": l_td.item(), "total": total.item()}


def make_optimizer(model: StanceModel, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.discriminator_lr_scale == 1.0:
        return torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    groups = [{"params": model.theta_m()},
              {"params": list(model.topic_head.parameters()), "lr": cfg.learning_rate * cfg.discriminator_lr_scale}]
    return torch.optim.AdamW(groups, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)


@torch.no_grad()
def predict_proba(model: StanceModel, featurizer: Featurizer, examples: Sequence,
                  batch_size: int = 64) -> torch.Tensor:
    model.eval()
    out = []
    for start in range(0, len(examples), batch_size):
        batch = featurizer.batch(examples[start:start + batch_size], with_topic=False)
        out.append(torch.softmax(model.stance_logits(model.features(batch)), dim=-1))
    if not out:
        return torch.zeros((0, 3), dtype=torch.float64)
    return torch.cat(out)


def predict_labels(model: StanceModel, featurizer: Featurizer, examples: Sequence) -> list[str]:
    probs = predict_proba(model, featurizer, examples)
    return [STANCES[i] for i in probs.argmax(dim=-1).tolist()]


def dev_score(model: StanceModel, featurizer: Featurizer, dev: Sequence[LabeledExample],
              favg_classes: int = 2) -> float:
    preds = predict_labels(model, featurizer, dev)
    return metrics.f_avg(preds, [ex.stance for ex in dev], classes=favg_classes)


def seed_everything(seed: int) -> None:
    random.seed(seed)
    torch.manual_seed(seed)


def fit(splits: SplitBundle, cfg: TrainConfig, seed: int, descriptions: dict, graph: GeoGraph,
        on_epoch: Optional[Callable[[EpochLog], None]] = None, tokenizer=None) -> FitResult:
    """Train with early stopping on dev F_avg and return the best-dev snapshot."""
    cfg.validate()
    if not splits.train_labeled:
        raise ValueError("empty training set")
    if not splits.dev_labeled:
        raise ValueError("empty dev set")
    graph = graph.with_unknown()
    task = splits.task
    tokenizer = tokenizer or build_tokenizer(splits, descriptions, cfg.encoder)
    featurizer = Featurizer(tokenizer, descriptions, task.topics, graph, cfg.max_desc_tokens,
                            cfg.max_text_tokens, cfg.use_description)
    seed_everything(seed)
    enc = cfg.encoder
    model = build_model(enc.kind, graph, len(task.topics), vocab_size=len(tokenizer), hidden_size=enc.hidden_size,
                        layers=enc.layers, heads=enc.heads, weights_path=enc.weights_path,
                        geo_dim=cfg.geo_dim, gcn_layers=cfg.gcn_layers, geo_normalize=cfg.geo_normalize,
                        use_geo=cfg.use_geo, dropout=cfg.dropout, grl_lambda=cfg.grl_lambda)
    optimizer = make_optimizer(model, cfg)
    scheduler = BatchScheduler(splits.train_labeled, splits.discriminator_pool, cfg.batch_size, seed)
    dest = task.topics.index(task.destination_topic)
    state = TrainState()
    history: list[EpochLog] = []
    for epoch in range(1, cfg.max_epochs + 1):
        state.epoch = epoch
        sums = {"L_sc": 0.0, "L_td": 0.0}
        n = 0
        for step, (lb, pb) in enumerate(scheduler.epoch(epoch)):
            out = train_step(model, optimizer, featurizer.batch(lb), featurizer.batch(pb), cfg, dest,
                             where=f"(epoch {epoch}, batch {step})")
            sums["L_sc"] += out["L_sc"]
            sums["L_td"] += out["L_td"]
            n += 1
        dev = dev_score(model, featurizer, splits.dev_labeled, cfg.favg_classes)
        entry = EpochLog(epoch, sums["L_sc"] / n, sums["L_td"] / n, dev)
        history.append(entry)
        if on_epoch:
            on_epoch(entry)
        log.debug("epoch %d L_sc=%.4f L_td=%.4f dev=%.4f", epoch, entry.l_sc, entry.l_td, dev)
        if dev > state.best_dev:
            state.best_dev, state.best_epoch, state.since_improvement = dev, epoch, 0
            state.best_state = copy.deepcopy(model.state_dict())
        else:
            state.since_improvement += 1
            if state.since_improvement >= cfg.patience:
                break
    model.load_state_dict(state.best_state)
    model.eval()
    return FitResult(model, history, state.best_epoch, state.best_dev, featurizer)

"""Seeded synthetic stance corpora with a planted, topic-transferable stance cue.

Every text is a bag of tokens drawn from four disjoint pools:

* stance cues ``pro*`` / ``anti*`` shared by all topics (the transferable signal),
* topic markers ``t{k}m*`` unique to topic ``k`` (the topic-specific nuisance),
* optional topic-specific stance tokens ``t{k}{f,a,n}*`` (a spurious, non-transferable cue),
* shared filler ``w*``.

The emitted stance label always equals :func:`oracle_stance` of the text: more ``pro``
than ``anti`` tokens is *favor*, more ``anti`` is *against*, a tie is *none*.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .data import (STANCES, GeoGraph, LabeledExample, PolicyDescription, UnlabeledExample,
                   save_corpus, save_descriptions, save_geo_graph)

FAVOR_CUE = "pro"
AGAINST_CUE = "anti"


@dataclass
class SynthConfig:
    n_topics: int = 3
    n_per_topic: int = 200
    n_unlabeled_per_topic: int = 200
    n_cue_tokens: int = 8
    n_marker_tokens: int = 20
    n_filler_tokens: int = 60
    n_spurious_tokens: int = 4
    n_desc_tokens: int = 6
    cue_strength: int = 2
    cue_noise: float = 0.3
    marker_strength: int = 3
    spurious_strength: int = 0
    filler_min: int = 3
    filler_max: int = 7
    n_regions: int = 8
    region_bias: float = 0.5
    geo_missing_rate: float = 0.1
    topic_names: Optional[list] = None
    seed: int = 0

    def validate(self) -> None:
        if self.n_topics < 2:
            raise ValueError("n_topics must be >= 2")
        if self.n_cue_tokens < 1 or self.n_marker_tokens < 1 or self.n_filler_tokens < 1:
            raise ValueError("cue, marker and filler vocabularies must be non-empty")
        if self.cue_strength < 1:
            raise ValueError("cue_strength must be >= 1")
        if self.spurious_strength > 0 and self.n_spurious_tokens < 1:
            raise ValueError("spurious tokens requested with an empty spurious vocabulary")
        if self.n_per_topic < 0 or self.n_unlabeled_per_topic < 0 or self.n_regions < 1:
            raise ValueError("counts must be non-negative and n_regions >= 1")
        if not 0 <= self.filler_min <= self.filler_max:
            raise ValueError("need 0 <= filler_min <= filler_max")
        if self.topic_names is not None and len(self.topic_names) != self.n_topics:
            raise ValueError("topic_names length must equal n_topics")

    def topics(self) -> list[str]:
        return list(self.topic_names) if self.topic_names else [f"T{k}" for k in range(self.n_topics)]


@dataclass
class SynthCorpus:
    labeled: dict = field(default_factory=dict)
    unlabeled: dict = field(default_factory=dict)
    descriptions: dict = field(default_factory=dict)
    graph: Optional[GeoGraph] = None

    def write(self, directory) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for topic, exs in self.labeled.items():
            save_corpus(out / f"{topic}.labeled.tsv", exs)
        for topic, exs in self.unlabeled.items():
            save_corpus(out / f"{topic}.unlabeled.tsv", exs)
        save_descriptions(out / "descriptions.tsv", self.descriptions.values())
        save_geo_graph(out / "regions.geo", self.graph)
        return out


def oracle_stance(text: str) -> str:
    pro = anti = 0
    for tok in text.split():
        if tok.startswith(FAVOR_CUE):
            pro += 1
        elif tok.startswith(AGAINST_CUE):
            anti += 1
    if pro > anti:
        return "favor"
    if anti > pro:
        return "against"
    return "none"


def marker_tokens(cfg: SynthConfig, topic_index: int) -> list[str]:
    return [f"t{topic_index}m{j}" for j in range(cfg.n_marker_tokens)]


def _region_graph(n: int, rng: random.Random) -> GeoGraph:
    regions = [f"R{i}" for i in range(n)]
    edges = [(regions[i], regions[i + 1]) for i in range(n - 1)]
    # a few chords so the graph is not a bare path
    for _ in range(n // 3):
        a, b = rng.sample(range(n), 2) if n > 1 else (0, 0)
        if a != b:
            edges.append((regions[a], regions[b]))
    return GeoGraph.from_edges(regions, edges)


def _text(cfg: SynthConfig, rng: random.Random, topic_index: int, stance: str) -> str:
    pro = [f"{FAVOR_CUE}{j}" for j in range(cfg.n_cue_tokens)]
    anti = [f"{AGAINST_CUE}{j}" for j in range(cfg.n_cue_tokens)]
    c = cfg.cue_strength
    noisy = rng.random() < cfg.cue_noise
    if stance == "favor":
        n_pro, n_anti = c, (rng.randint(1, c - 1) if noisy and c > 1 else 0)
    elif stance == "against":
        n_pro, n_anti = (rng.randint(1, c - 1) if noisy and c > 1 else 0), c
    else:
        n_pro = n_anti = (rng.randint(1, c) if noisy else 0)
    tokens = [rng.choice(pro) for _ in range(n_pro)] + [rng.choice(anti) for _ in range(n_anti)]
    tokens += [rng.choice(marker_tokens(cfg, topic_index)) for _ in range(cfg.marker_strength)]
    if cfg.spurious_strength:
        tag = stance[0]
        tokens += [f"t{topic_index}{tag}{rng.randrange(cfg.n_spurious_tokens)}"
                   for _ in range(cfg.spurious_strength)]
    tokens += [f"w{rng.randrange(cfg.n_filler_tokens)}"
               for _ in range(rng.randint(cfg.filler_min, cfg.filler_max))]
    rng.shuffle(tokens)
    return " ".join(tokens)


def synth_generate(cfg: SynthConfig) -> SynthCorpus:
    cfg.validate()
    rng = random.Random(cfg.seed)
    graph = _region_graph(cfg.n_regions, rng)
    preferred = {r: STANCES[rng.randrange(3)] for r in graph.regions}
    corpus = SynthCorpus(graph=graph)

    def sample_region_and_stance() -> tuple[str, str]:
        region = rng.choice(graph.regions)
        if rng.random() < cfg.region_bias:
            return region, preferred[region]
        return region, rng.choice(STANCES)

    for k, topic in enumerate(cfg.topics()):
        desc = " ".join(["policy"] + [f"d{k}x{j}" for j in range(cfg.n_desc_tokens)])
        corpus.descriptions[topic] = PolicyDescription(topic, desc)
        labeled = []
        for _ in range(cfg.n_per_topic):
            region, stance = sample_region_and_stance()
            labeled.append(LabeledExample(topic, _text(cfg, rng, k, stance), stance, region))
        unlabeled = []
        for _ in range(cfg.n_unlabeled_per_topic):
            region, stance = sample_region_and_stance()
            geo = None if rng.random() < cfg.geo_missing_rate else region
            unlabeled.append(UnlabeledExample(topic, _text(cfg, rng, k, stance), geo))
        corpus.labeled[topic] = labeled
        corpus.unlabeled[topic] = unlabeled
    return corpus

"""Corpus records, region graphs and train/dev/test splitting."""
from __future__ import annotations

import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

STANCES = ("favor", "against", "none")
UNKNOWN_REGION = "UNKNOWN"

PathLike = Union[str, Path]


class DataError(ValueError):
    """A record, file or split violated its schema."""

    def __init__(self, message: str, path: Optional[PathLike] = None, line: Optional[int] = None,
                 field_name: Optional[str] = None, rule: str = "SCHEMA"):
        self.path = str(path) if path is not None else None
        self.line = line
        self.field_name = field_name
        self.rule = rule
        where = ""
        if self.path is not None:
            where = self.path
            if line is not None:
                where += f":{line}"
            where += ": "
        if field_name:
            message = f"field '{field_name}': {message}"
        self.detail = message
        super().__init__(f"{where}{rule}: {message}")


@dataclass(frozen=True)
class LabeledExample:
    topic_id: str
    text: str
    stance: str
    geo_id: str = UNKNOWN_REGION

    def __post_init__(self):
        if self.stance not in STANCES:
            raise DataError(f"stance {self.stance!r} not in allowed labels {list(STANCES)}",
                            field_name="stance", rule="STANCE_INVALID")


@dataclass(frozen=True)
class UnlabeledExample:
    topic_id: str
    text: str
    geo_id: Optional[str] = None


Example = Union[LabeledExample, UnlabeledExample]


@dataclass(frozen=True)
class PolicyDescription:
    topic_id: str
    description: str

    def __post_init__(self):
        if not self.description.strip():
            raise DataError(f"empty description for topic {self.topic_id!r}",
                            field_name="description", rule="DESC_EMPTY")


# --------------------------------------------------------------------------- record format

_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_UNESCAPES = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}


def escape_field(value: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in value)


def unescape_field(value: str) -> str:
    if "\\" not in value:
        return value
    out = []
    it = iter(value)
    for ch in it:
        if ch != "\\":
            out.append(ch)
            continue
        nxt = next(it, None)
        if nxt is None or nxt not in _UNESCAPES:
            raise ValueError(f"bad escape sequence '\\{nxt or ''}'")
        out.append(_UNESCAPES[nxt])
    return "".join(out)


def format_record(example: Example) -> str:
    if isinstance(example, LabeledExample):
        fields = [example.topic_id, example.stance, example.geo_id or "", example.text]
    else:
        fields = [example.topic_id, example.geo_id or "", example.text]
    return "\t".join(escape_field(f) for f in fields)


def _read_lines(path: PathLike) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            yield lineno, line


def parse_record(line: str, labeled: bool, path: Optional[PathLike] = None,
                 lineno: Optional[int] = None) -> Example:
    parts = line.split("\t")
    names = ("topic", "stance", "geo", "text") if labeled else ("topic", "geo", "text")
    if len(parts) != len(names):
        raise DataError(f"expected {len(names)} tab-separated fields ({', '.join(names)}), got {len(parts)}",
                        path, lineno, rule="FIELD_COUNT")
    values = {}
    for name, raw in zip(names, parts):
        try:
            values[name] = unescape_field(raw)
        except ValueError as exc:
            raise DataError(str(exc), path, lineno, name, rule="ESCAPE") from None
    if not values["topic"]:
        raise DataError("empty topic", path, lineno, "topic", rule="TOPIC_EMPTY")
    if not values["text"].strip():
        raise DataError("empty text", path, lineno, "text", rule="TEXT_EMPTY")
    geo = values["geo"] or None
    if labeled:
        if values["stance"] not in STANCES:
            raise DataError(f"stance {values['stance']!r} not in allowed labels {list(STANCES)}",
                            path, lineno, "stance", rule="STANCE_INVALID")
        return LabeledExample(values["topic"], values["text"], values["stance"], geo or UNKNOWN_REGION)
    return UnlabeledExample(values["topic"], values["text"], geo)


def iter_corpus(path: PathLike, labeled: bool, topics: Optional[Iterable[str]] = None,
                regions: Optional[Iterable[str]] = None) -> Iterator[tuple[int, Union[Example, DataError]]]:
    """Yield ``(line, record-or-error)`` for every non-blank line; never raises on bad records."""
    topic_set = set(topics) if topics is not None else None
    region_set = set(regions) if regions is not None else None
    for lineno, line in _read_lines(path):
        try:
            rec = parse_record(line, labeled, path, lineno)
        except DataError as err:
            yield lineno, err
            continue
        if topic_set is not None and rec.topic_id not in topic_set:
            yield lineno, DataError(f"unknown topic {rec.topic_id!r}", path, lineno, "topic", rule="TOPIC_UNKNOWN")
            continue
        if region_set is not None and rec.geo_id is not None and rec.geo_id != UNKNOWN_REGION \
                and rec.geo_id not in region_set:
            yield lineno, DataError(f"region {rec.geo_id!r} not in geo graph", path, lineno, "geo",
                                    rule="GEO_UNKNOWN")
            continue
        yield lineno, rec


def load_corpus(path: PathLike, labeled: bool, topics: Optional[Iterable[str]] = None,
                regions: Optional[Iterable[str]] = None) -> list:
    """Load a corpus file, raising :class:`DataError` on the first invalid record."""
    out = []
    for _, rec in iter_corpus(path, labeled, topics, regions):
        if isinstance(rec, DataError):
            raise rec
        out.append(rec)
    return out


def save_corpus(path: PathLike, examples: Iterable[Example]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(format_record(ex) + "\n")


def load_descriptions(path: PathLike) -> dict[str, PolicyDescription]:
    out: dict[str, PolicyDescription] = {}
    for lineno, line in _read_lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError("expected 'topic<TAB>description'", path, lineno, rule="FIELD_COUNT")
        topic, desc = unescape_field(parts[0]), unescape_field(parts[1])
        if topic in out:
            raise DataError(f"duplicate description for topic {topic!r}", path, lineno, "topic",
                            rule="DESC_DUPLICATE")
        if not desc.strip():
            raise DataError(f"empty description for topic {topic!r}", path, lineno, "description",
                            rule="DESC_EMPTY")
        out[topic] = PolicyDescription(topic, desc)
    return out


def save_descriptions(path: PathLike, descriptions: Iterable[PolicyDescription]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in descriptions:
            fh.write(f"{escape_field(d.topic_id)}\t{escape_field(d.description)}\n")


# --------------------------------------------------------------------------- geo graph

@dataclass(frozen=True)
class GeoGraph:
    regions: tuple[str, ...]
    adjacency: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = len(self.regions)
        if n < 1:
            raise DataError("geo graph needs at least one region", rule="GEO_EMPTY")
        if len(set(self.regions)) != n:
            raise DataError("duplicate region names", rule="GEO_DUPLICATE")
        adj = np.asarray(self.adjacency)
        if adj.shape != (n, n):
            raise DataError(f"adjacency shape {adj.shape} does not match {n} regions", rule="GEO_SHAPE")
        if not np.array_equal(adj, adj.T):
            raise DataError("adjacency is not symmetric", rule="GEO_ASYMMETRIC")
        if not np.all(np.diag(adj) == 1):
            raise DataError("adjacency diagonal must be all ones", rule="GEO_SELF_LOOP")
        adj = adj.astype(np.int8, copy=True)
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @classmethod
    def from_edges(cls, regions: Sequence[str], edges: Iterable[tuple[str, str]]) -> "GeoGraph":
        index = {r: i for i, r in enumerate(regions)}
        adj = np.eye(len(regions), dtype=np.int8)
        for a, b in edges:
            for r in (a, b):
                if r not in index:
                    raise DataError(f"edge references unknown region {r!r}", rule="GEO_UNKNOWN")
            adj[index[a], index[b]] = adj[index[b], index[a]] = 1
        return cls(tuple(regions), adj)

    @property
    def n(self) -> int:
        return len(self.regions)

    def index(self, geo_id: Optional[str]) -> int:
        key = geo_id or UNKNOWN_REGION
        try:
            return self.regions.index(key)
        except ValueError:
            raise KeyError(f"region {key!r} not in geo graph") from None

    def with_unknown(self) -> "GeoGraph":
        """Append the reserved UNKNOWN node (self-loop only) if it is absent."""
        if UNKNOWN_REGION in self.regions:
            return self
        n = self.n
        adj = np.zeros((n + 1, n + 1), dtype=np.int8)
        adj[:n, :n] = self.adjacency
        adj[n, n] = 1
        return GeoGraph(self.regions + (UNKNOWN_REGION,), adj)

    def edges(self) -> list[tuple[str, str]]:
        rows, cols = np.nonzero(np.triu(self.adjacency, k=1))
        return [(self.regions[i], self.regions[j]) for i, j in zip(rows, cols)]


def load_geo_graph(path: PathLike) -> GeoGraph:
    lines = list(_read_lines(path))
    if not lines:
        raise DataError("geo graph file is empty", path, rule="GEO_EMPTY")
    _, header = lines[0]
    regions = [r.strip() for r in header.split(",") if r.strip()]
    known = set(regions)
    edges = []
    for lineno, line in lines[1:]:
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2 or not all(parts):
            raise DataError("expected 'regionA,regionB'", path, lineno, rule="FIELD_COUNT")
        for r in parts:
            if r not in known:
                raise DataError(f"edge references unknown region {r!r}", path, lineno, rule="GEO_UNKNOWN")
        edges.append((parts[0], parts[1]))
    try:
        return GeoGraph.from_edges(regions, edges)
    except DataError as err:
        raise DataError(err.detail, path, rule=err.rule) from None


def save_geo_graph(path: PathLike, graph: GeoGraph) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(graph.regions) + "\n")
        for a, b in graph.edges():
            fh.write(f"{a},{b}\n")


def us_states_graph() -> GeoGraph:
    """Land-border graph over the 50 US states plus DC (51 regions)."""
    with resources.as_file(resources.files("geostance.resources") / "us_states.geo") as p:
        return load_geo_graph(p)


# --------------------------------------------------------------------------- tasks and splits

@dataclass(frozen=True)
class TaskSpec:
    mode: str
    source_topics: tuple[str, ...]
    destination_topic: str
    seed_list: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        object.__setattr__(self, "source_topics", tuple(self.source_topics))
        object.__setattr__(self, "seed_list", tuple(int(s) for s in self.seed_list))
        if self.mode == "cross_target":
            if len(self.source_topics) != 1:
                raise DataError("cross_target needs exactly one source topic", rule="TASK_INVALID")
        elif self.mode == "zero_shot":
            if len(self.source_topics) < 2:
                raise DataError("zero_shot needs at least two source topics", rule="TASK_INVALID")
        else:
            raise DataError(f"unknown task mode {self.mode!r}", rule="TASK_INVALID")
        if self.destination_topic in self.source_topics:
            raise DataError("destination topic is also a source topic", rule="TASK_INVALID")
        if len(set(self.source_topics)) != len(self.source_topics):
            raise DataError("duplicate source topics", rule="TASK_INVALID")

    @property
    def topics(self) -> tuple[str, ...]:
        """Discriminator class order: sources first, destination last."""
        return self.source_topics + (self.destination_topic,)

    @property
    def name(self) -> str:
        if self.mode == "cross_target":
            return f"{self.source_topics[0]}->{self.destination_topic}"
        return self.destination_topic


@dataclass(frozen=True)
class SplitBundle:
    task: TaskSpec
    train_labeled: tuple[LabeledExample, ...]
    dev_labeled: tuple[LabeledExample, ...]
    test_labeled: tuple[LabeledExample, ...]
    discriminator_pool: tuple[Example, ...]


def stratified_split(examples: Sequence[LabeledExample], train_fraction: float,
                     rng: random.Random) -> tuple[list[LabeledExample], list[LabeledExample]]:
    by_label: dict[str, list[LabeledExample]] = defaultdict(list)
    for ex in examples:
        by_label[ex.stance].append(ex)
    train, dev = [], []
    for label in STANCES:
        group = list(by_label.get(label, []))
        rng.shuffle(group)
        k = int(round(train_fraction * len(group)))
        if len(group) > 1:
            k = min(max(k, 1), len(group) - 1)
        train.extend(group[:k])
        dev.extend(group[k:])
    rng.shuffle(train)
    rng.shuffle(dev)
    return train, dev


def build_splits(spec: TaskSpec, labeled: dict[str, Sequence[LabeledExample]],
                 unlabeled: dict[str, Sequence[UnlabeledExample]], train_fraction: float = 0.85,
                 seed: int = 0) -> SplitBundle:
    for t in spec.topics:
        if t not in labeled and t not in unlabeled:
            raise DataError(f"topic {t!r} missing from corpora", rule="TOPIC_MISSING")
    if spec.destination_topic not in labeled:
        raise DataError(f"no labeled data for destination topic {spec.destination_topic!r}",
                        rule="TOPIC_MISSING")
    rng = random.Random(seed)
    train: list[LabeledExample] = []
    dev: list[LabeledExample] = []
    for t in spec.source_topics:
        tr, dv = stratified_split(list(labeled.get(t, [])), train_fraction, rng)
        train.extend(tr)
        dev.extend(dv)
    rng.shuffle(train)
    for ex in (*train, *dev):
        if ex.topic_id == spec.destination_topic or ex.topic_id not in spec.source_topics:
            raise DataError(f"topic {ex.topic_id!r} leaked into train/dev", rule="LEAKAGE")
    test = list(labeled[spec.destination_topic])
    pool: list[Example] = list(train)
    for t in spec.topics:
        pool.extend(unlabeled.get(t, []))
    present = {ex.topic_id for ex in pool}
    missing = [t for t in spec.topics if t not in present]
    if missing:
        raise DataError(f"discriminator pool has no examples for topics {missing}", rule="POOL_INCOMPLETE")
    return SplitBundle(spec, tuple(train), tuple(dev), tuple(test), tuple(pool))


def label_histogram(examples: Iterable[LabeledExample]) -> dict[str, int]:
    counts = Counter(ex.stance for ex in examples)
    return {s: counts.get(s, 0) for s in STANCES}

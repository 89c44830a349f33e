"""Feature separation, GeoEncoder, stance head and the gradient-reversed topic discriminator."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from transformers import BertConfig, BertModel

from .data import GeoGraph
from .encoder import BertEncoder, build_encoder

# Heads run in double precision: f_i = h - f_s is formed from single-precision operands,
# which makes the subtraction (and hence f_s + f_i == h) exact.
HEAD_DTYPE = torch.float64


class GradientReversalFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, lambd):
        ctx.lambd = lambd
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.lambd, None


def grl_apply(x: torch.Tensor, lambd: float = 0.1) -> torch.Tensor:
    """Identity forward; multiplies the incoming gradient by ``-lambd`` on the way back."""
    if lambd < 0:
        raise ValueError("GRL lambda must be non-negative")
    return GradientReversalFunction.apply(x, float(lambd))


class GradientReversal(nn.Module):
    def __init__(self, lambd: float = 0.1):
        super().__init__()
        if lambd < 0:
            raise ValueError("GRL lambda must be non-negative")
        self.lambd = float(lambd)

    def forward(self, x):
        return grl_apply(x, self.lambd)

    def extra_repr(self) -> str:
        return f"lambd={self.lambd}"


@dataclass
class FeatureBundle:
    h: torch.Tensor
    f_s: torch.Tensor
    f_i: torch.Tensor
    f_geo: Optional[torch.Tensor]


def separate(h: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Topic-specific ``f_s = W h + b`` and topic-invariant residual ``f_i = h - f_s``."""
    d = h.shape[-1]
    if weight.shape != (d, d) or bias.shape != (d,):
        raise ValueError(f"separation params {tuple(weight.shape)}/{tuple(bias.shape)} do not match h dim {d}")
    f_s = F.linear(h, weight, bias)
    return f_s.to(HEAD_DTYPE), h.to(HEAD_DTYPE) - f_s.to(HEAD_DTYPE)


class FeatureSeparation(nn.Module):
    def __init__(self, hidden_size: int):
        super().__init__()
        self.linear = nn.Linear(hidden_size, hidden_size)

    def forward(self, h):
        return separate(h, self.linear.weight, self.linear.bias)


def normalize_adjacency(adj: torch.Tensor) -> torch.Tensor:
    deg = adj.sum(dim=1)
    inv_sqrt = deg.pow(-0.5)
    return inv_sqrt[:, None] * adj * inv_sqrt[None, :]


def gcn_propagate(adj: torch.Tensor, emb: torch.Tensor, weights) -> torch.Tensor:
    """``E <- relu(A E W)`` once per weight matrix."""
    out = emb
    for w in weights:
        out = torch.relu(adj @ out @ w)
    return out


class GeoEncoder(nn.Module):
    def __init__(self, adjacency, dim: int = 128, layers: int = 2, normalize: bool = False,
                 init_std: float = 0.02):
        super().__init__()
        adj = torch.as_tensor(np.array(adjacency), dtype=HEAD_DTYPE)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        if normalize:
            adj = normalize_adjacency(adj)
        self.register_buffer("adjacency", adj)
        self.normalize = normalize
        n = adj.shape[0]
        self.embedding = nn.Parameter(torch.randn(n, dim, dtype=HEAD_DTYPE) * init_std)
        bound = 1.0 / math.sqrt(dim)
        self.weights = nn.ParameterList(
            [nn.Parameter(torch.empty(dim, dim, dtype=HEAD_DTYPE).uniform_(-bound, bound)) for _ in range(layers)])

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]

    def region_table(self) -> torch.Tensor:
        return gcn_propagate(self.adjacency, self.embedding, self.weights)

    def forward(self, geo_index: torch.Tensor) -> torch.Tensor:
        return self.region_table()[geo_index]


def geo_encode(geo_id: str, graph: GeoGraph, encoder: GeoEncoder) -> torch.Tensor:
    if geo_id not in graph.regions:
        raise KeyError(f"region {geo_id!r} not in geo graph")
    if encoder.embedding.shape[0] != graph.n:
        raise ValueError(f"GeoEncoder has {encoder.embedding.shape[0]} rows, graph has {graph.n} regions")
    return encoder(torch.tensor([graph.index(geo_id)]))[0]


def _affine_softmax(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    if x.shape[-1] != weight.shape[1] or bias.shape[0] != weight.shape[0]:
        raise ValueError(f"input dim {x.shape[-1]} does not match weight {tuple(weight.shape)}")
    return torch.softmax(F.linear(x, weight, bias), dim=-1)


def predict_stance(bundle: FeatureBundle, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Stance distribution over (favor, against, none) from ``f_i ⊕ f_s ⊕ f_geo``."""
    parts = [bundle.f_i, bundle.f_s] + ([bundle.f_geo] if bundle.f_geo is not None else [])
    return _affine_softmax(torch.cat(parts, dim=-1), weight, bias)


def discriminate_topic(f_i: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    return _affine_softmax(f_i, weight, bias)


@dataclass
class ModelConfig:
    bert_config: dict
    n_topics: int
    geo_dim: int = 128
    gcn_layers: int = 2
    geo_normalize: bool = False
    use_geo: bool = True
    dropout: float = 0.1
    grl_lambda: float = 0.1


class StanceModel(nn.Module):
    def __init__(self, encoder: BertEncoder, adjacency, n_topics: int, geo_dim: int = 128,
                 gcn_layers: int = 2, geo_normalize: bool = False, use_geo: bool = True,
                 dropout: float = 0.1, grl_lambda: float = 0.1):
        super().__init__()
        if n_topics < 2:
            raise ValueError("the topic discriminator needs at least two topics")
        d = encoder.hidden_size
        self.encoder = encoder
        self.separation = FeatureSeparation(d)
        self.geo = GeoEncoder(adjacency, geo_dim, gcn_layers, geo_normalize) if use_geo else None
        self.dropout = nn.Dropout(dropout)
        self.stance_head = nn.Linear(2 * d + (geo_dim if use_geo else 0), 3, dtype=HEAD_DTYPE)
        self.grl = GradientReversal(grl_lambda)
        self.topic_head = nn.Linear(d, n_topics, dtype=HEAD_DTYPE)
        self.config = ModelConfig(bert_config=encoder.bert.config.to_dict(), n_topics=n_topics,
                                  geo_dim=geo_dim, gcn_layers=gcn_layers, geo_normalize=geo_normalize,
                                  use_geo=use_geo, dropout=dropout, grl_lambda=grl_lambda)

    @classmethod
    def from_config(cls, cfg: ModelConfig, adjacency) -> "StanceModel":
        encoder = BertEncoder(BertModel(BertConfig.from_dict(cfg.bert_config), add_pooling_layer=False))
        return cls(encoder, adjacency, cfg.n_topics, cfg.geo_dim, cfg.gcn_layers, cfg.geo_normalize,
                   cfg.use_geo, cfg.dropout, cfg.grl_lambda)

    def theta_m(self):
        """Parameters minimised by the min-max game: everything except the topic head."""
        return [p for n, p in self.named_parameters() if not n.startswith("topic_head.")]

    def features(self, batch: dict) -> FeatureBundle:
        h = self.encoder(batch["input_ids"], batch["token_type_ids"], batch["attention_mask"])
        h = self.dropout(h)
        f_s, f_i = self.separation(h)
        f_geo = self.geo(batch["geo_index"]) if self.geo is not None else None
        return FeatureBundle(h, f_s, f_i, f_geo)

    def stance_logits(self, bundle: FeatureBundle) -> torch.Tensor:
        parts = [bundle.f_i, bundle.f_s] + ([bundle.f_geo] if bundle.f_geo is not None else [])
        return self.stance_head(self.dropout(torch.cat(parts, dim=-1)))

    def topic_logits(self, f_i: torch.Tensor) -> torch.Tensor:
        return self.topic_head(self.grl(f_i))

    def forward(self, batch: dict) -> dict:
        bundle = self.features(batch)
        return {"features": bundle, "stance_logits": self.stance_logits(bundle),
                "topic_logits": self.topic_logits(bundle.f_i)}


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def build_model(encoder_kind: str, graph: GeoGraph, n_topics: int, *, vocab_size: int = 500,
                hidden_size: int = 32, layers: int = 2, heads: int = 2, weights_path: Optional[str] = None,
                load_weights: bool = True, geo_dim: int = 128, gcn_layers: int = 2,
                geo_normalize: bool = False, use_geo: bool = True, dropout: float = 0.1,
                grl_lambda: float = 0.1) -> StanceModel:
    encoder = build_encoder(encoder_kind, vocab_size=vocab_size, hidden_size=hidden_size, layers=layers,
                            heads=heads, dropout=dropout, weights_path=weights_path,
                            load_weights=load_weights)
    return StanceModel(encoder, graph.adjacency, n_topics, geo_dim, gcn_layers, geo_normalize, use_geo,
                       dropout, grl_lambda)


# --------------------------------------------------------------------------- checkpoints

CHECKPOINT_FORMAT = "geostance-checkpoint/1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: ModelConfig
    state_dict: dict
    regions: list
    adjacency: list
    topics: list
    tokenizer: dict
    descriptions: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: StanceModel, graph: GeoGraph, topics, tokenizer_state: dict,
                   descriptions: dict, **meta) -> "Checkpoint":
        state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        return cls(ModelConfig(**asdict(model.config)), state, list(graph.regions),
                   graph.adjacency.tolist(), list(topics), tokenizer_state, dict(descriptions), meta)

    @property
    def graph(self) -> GeoGraph:
        return GeoGraph(tuple(self.regions), np.asarray(self.adjacency, dtype=np.int8))

    def build_model(self) -> StanceModel:
        model = StanceModel.from_config(self.model_config, self.graph.adjacency)
        expected = model.state_dict()
        missing = [k for k in expected if k not in self.state_dict]
        unexpected = [k for k in self.state_dict if k not in expected]
        if missing or unexpected:
            raise CheckpointError(f"checkpoint tensors do not match config: missing={missing[:5]} "
                                  f"unexpected={unexpected[:5]}")
        for name, tensor in expected.items():
            got = self.state_dict[name]
            if tuple(got.shape) != tuple(tensor.shape):
                raise CheckpointError(f"tensor '{name}' has shape {tuple(got.shape)}, config expects "
                                      f"{tuple(tensor.shape)}")
        model.load_state_dict(self.state_dict)
        model.eval()
        return model

    def save(self, path: Union[str, Path]) -> None:
        payload = {"format": CHECKPOINT_FORMAT, "model_config": asdict(self.model_config),
                   "state_dict": self.state_dict, "regions": self.regions, "adjacency": self.adjacency,
                   "topics": self.topics, "tokenizer": self.tokenizer, "descriptions": self.descriptions,
                   "meta": self.meta}
        torch.save(payload, str(path))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Checkpoint":
        try:
            payload: dict[str, Any] = torch.load(str(path), map_location="cpu", weights_only=True)
        except FileNotFoundError:
            raise
        except Exception as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        if payload.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} archive")
        return cls(ModelConfig(**payload["model_config"]), payload["state_dict"], payload["regions"],
                   payload["adjacency"], payload["topics"], payload["tokenizer"],
                   payload.get("descriptions", {}), payload.get("meta", {}))

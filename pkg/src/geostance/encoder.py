"""Sentence-pair construction ``[CLS] description [SEP] text [SEP]`` and the text encoders."""
from __future__ import annotations

import os
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Optional, Protocol, Sequence, Union

import torch
from torch import nn
from transformers import BertConfig, BertModel

from .data import PolicyDescription

MAX_DESC_TOKENS = 50
MAX_TEXT_TOKENS = 100
WEIGHTS_ENV = "GEOSTANCE_HOME"

_WORD_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class Tokenizer(Protocol):
    pad_id: int
    cls_id: int
    sep_id: int

    def tokenize(self, text: str) -> list[int]: ...


class WordTokenizer:
    """Lower-cased word-level tokenizer with a frequency-ranked, capped vocabulary."""

    specials = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")

    def __init__(self, vocab: Sequence[str]):
        if tuple(vocab[:4]) != self.specials:
            raise ValueError(f"vocabulary must start with {self.specials}")
        self.vocab = list(vocab)
        self._index = {w: i for i, w in enumerate(self.vocab)}
        self.pad_id, self.unk_id, self.cls_id, self.sep_id = range(4)

    @classmethod
    def build(cls, texts: Iterable[str], vocab_size: int = 500) -> "WordTokenizer":
        counts = Counter(w for t in texts for w in cls.split(t))
        ranked = sorted(counts, key=lambda w: (-counts[w], w))
        return cls(list(cls.specials) + ranked[: max(vocab_size - len(cls.specials), 0)])

    @staticmethod
    def split(text: str) -> list[str]:
        return _WORD_RE.findall(text.lower())

    def tokenize(self, text: str) -> list[int]:
        return [self._index.get(w, self.unk_id) for w in self.split(text)]

    def __len__(self) -> int:
        return len(self.vocab)

    def state(self) -> dict:
        return {"kind": "word", "vocab": list(self.vocab)}


class PretrainedTokenizer:
    """Adapter around a Hugging Face WordPiece tokenizer."""

    def __init__(self, name_or_path: str):
        from transformers import AutoTokenizer

        self.name_or_path = name_or_path
        self.hf = AutoTokenizer.from_pretrained(name_or_path, cache_dir=os.environ.get(WEIGHTS_ENV))
        self.pad_id = self.hf.pad_token_id
        self.cls_id = self.hf.cls_token_id
        self.sep_id = self.hf.sep_token_id

    def tokenize(self, text: str) -> list[int]:
        return self.hf.encode(text, add_special_tokens=False)

    def __len__(self) -> int:
        return len(self.hf)

    def state(self) -> dict:
        return {"kind": "pretrained", "name_or_path": self.name_or_path}


def tokenizer_from_state(state: dict):
    if state["kind"] == "word":
        return WordTokenizer(state["vocab"])
    return PretrainedTokenizer(state["name_or_path"])


@dataclass(frozen=True)
class TokenPair:
    token_ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.token_ids)


def build_pair(description: Union[PolicyDescription, str, None], text: str, tokenizer: Tokenizer,
               max_desc_tokens: int = MAX_DESC_TOKENS, max_text_tokens: int = MAX_TEXT_TOKENS) -> TokenPair:
    """Tokenize and truncate each side independently, then join with the special tokens."""
    if isinstance(description, PolicyDescription):
        description = description.description
    desc_ids = tokenizer.tokenize(description)[:max_desc_tokens] if description else []
    text_ids = tokenizer.tokenize(text)[:max_text_tokens]
    if not text_ids:
        raise ValueError(f"text is empty after tokenization: {text!r}")
    ids = [tokenizer.cls_id, *desc_ids, tokenizer.sep_id, *text_ids, tokenizer.sep_id]
    first = len(desc_ids) + 2
    segments = [0] * first + [1] * (len(ids) - first)
    return TokenPair(tuple(ids), tuple(segments), (1,) * len(ids))


def collate_pairs(pairs: Sequence[TokenPair], pad_id: int = 0) -> dict[str, torch.Tensor]:
    """Right-pad a batch of pairs to its longest member."""
    width = max(len(p) for p in pairs)
    ids = torch.full((len(pairs), width), pad_id, dtype=torch.long)
    seg = torch.zeros((len(pairs), width), dtype=torch.long)
    mask = torch.zeros((len(pairs), width), dtype=torch.long)
    for i, p in enumerate(pairs):
        n = len(p)
        ids[i, :n] = torch.tensor(p.token_ids)
        seg[i, :n] = torch.tensor(p.segment_ids)
        mask[i, :n] = 1
    return {"input_ids": ids, "token_type_ids": seg, "attention_mask": mask}


class BertEncoder(nn.Module):
    """Returns the final-layer hidden state at the ``[CLS]`` position, without the pooler."""

    def __init__(self, bert: BertModel):
        super().__init__()
        self.bert = bert

    @property
    def hidden_size(self) -> int:
        return self.bert.config.hidden_size

    @property
    def max_positions(self) -> int:
        return self.bert.config.max_position_embeddings

    def forward(self, input_ids: torch.Tensor, token_type_ids: torch.Tensor,
                attention_mask: torch.Tensor) -> torch.Tensor:
        if input_ids.shape[1] > self.max_positions:
            raise ValueError(f"sequence length {input_ids.shape[1]} exceeds encoder capacity "
                             f"{self.max_positions}")
        out = self.bert(input_ids=input_ids, token_type_ids=token_type_ids, attention_mask=attention_mask)
        return out.last_hidden_state[:, 0]


def encode(encoder: BertEncoder, pairs: Sequence[TokenPair], pad_id: int = 0) -> torch.Tensor:
    """Batch of pairs -> (B, d) context vectors."""
    batch = collate_pairs(pairs, pad_id)
    return encoder(batch["input_ids"], batch["token_type_ids"], batch["attention_mask"])


def tiny_bert_config(vocab_size: int = 500, hidden_size: int = 32, layers: int = 2, heads: int = 2,
                     dropout: float = 0.1) -> BertConfig:
    return BertConfig(vocab_size=vocab_size, hidden_size=hidden_size, num_hidden_layers=layers,
                      num_attention_heads=heads, intermediate_size=4 * hidden_size,
                      max_position_embeddings=MAX_DESC_TOKENS + MAX_TEXT_TOKENS + 3 + 7,
                      type_vocab_size=2, hidden_dropout_prob=dropout,
                      attention_probs_dropout_prob=dropout)


def build_encoder(kind: str = "tiny", *, vocab_size: int = 500, hidden_size: int = 32, layers: int = 2,
                  heads: int = 2, dropout: float = 0.1, weights_path: Optional[str] = None,
                  load_weights: bool = True) -> BertEncoder:
    """Build the tiny random encoder or the pretrained uncased base encoder.

    ``load_weights=False`` with ``kind="pretrained"`` instantiates the base architecture
    from its default configuration without downloading anything.
    """
    if kind == "tiny":
        return BertEncoder(BertModel(tiny_bert_config(vocab_size, hidden_size, layers, heads, dropout),
                                     add_pooling_layer=False))
    if kind == "pretrained":
        if load_weights:
            bert = BertModel.from_pretrained(weights_path or "bert-base-uncased", add_pooling_layer=False,
                                             cache_dir=os.environ.get(WEIGHTS_ENV),
                                             hidden_dropout_prob=dropout,
                                             attention_probs_dropout_prob=dropout)
        else:
            bert = BertModel(BertConfig(hidden_dropout_prob=dropout, attention_probs_dropout_prob=dropout),
                             add_pooling_layer=False)
        return BertEncoder(bert)
    raise ValueError(f"unknown encoder kind {kind!r}; expected 'tiny' or 'pretrained'")

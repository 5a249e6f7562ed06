"""Smoothed n-gram language model over source-side text.

Trains on monolingual sentences and produces sentence perplexity, which the
perplexity-threshold routing policy uses as its complexity signal. Two
smoothing schemes are supported: add-k and interpolated Kneser-Ney with a
fixed absolute discount. Probabilities are computed on the fly from stored
counts, so a saved and reloaded model reproduces perplexities bit-exactly.

Token ids: 0 = UNK, 1 = BOS, 2 = EOS, corpus tokens from 3 upward in first
occurrence order. BOS only ever appears in contexts; the event space over
which conditionals normalize is (corpus vocabulary below min_count mapped to
UNK) + UNK + EOS.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

from .core import ConfigError, DataError, write_atomic

UNK_ID = 0
BOS_ID = 1
EOS_ID = 2
_RESERVED = 3

FORMAT_NAME = "mtcascade-ngram-lm"
FORMAT_VERSION = 1

TOKENIZERS = ("whitespace", "character")
SMOOTHINGS = ("add_k", "interpolated_kneser_ney")

Gram = Tuple[int, ...]


@dataclass(frozen=True)
class PerplexityScore:
    value: float
    token_count: int

    def __post_init__(self):
        if self.token_count < 1:
            raise DataError("token_count must be >= 1")
        if not math.isfinite(self.value) or self.value <= 0:
            raise DataError(f"perplexity must be finite and positive, got {self.value!r}")


def tokenize(text: str, tokenizer_spec: str) -> List[str]:
    if tokenizer_spec == "whitespace":
        return text.split()
    if tokenizer_spec == "character":
        return [ch for ch in text if not ch.isspace()]
    raise ConfigError(f"unknown tokenizer {tokenizer_spec!r}")


class NgramLanguageModel:
    """Immutable after training; safe for concurrent perplexity queries."""

    def __init__(
        self,
        order: int,
        tokenizer_spec: str,
        smoothing: str,
        min_count: int,
        k: float,
        discount: float,
        tokens: Sequence[str],
        raw_counts: Sequence[Dict[Gram, int]],
    ):
        self.order = order
        self.tokenizer_spec = tokenizer_spec
        self.smoothing = smoothing
        self.min_count = min_count
        self.k = k
        self.discount = discount
        self.tokens = list(tokens)
        self.token_to_id = {t: i + _RESERVED for i, t in enumerate(self.tokens)}
        # raw_counts[l-1] holds l-gram counts at prediction positions
        self.raw_counts = [dict(c) for c in raw_counts]
        self._build_derived()

    # vocabulary -------------------------------------------------------------

    @property
    def event_vocabulary_size(self) -> int:
        """Number of tokens a conditional distribution ranges over (no BOS)."""
        return len(self.tokens) + 2  # corpus tokens + UNK + EOS

    def event_ids(self) -> List[int]:
        return [UNK_ID, EOS_ID] + [i + _RESERVED for i in range(len(self.tokens))]

    def token_id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def ids_for(self, text: str) -> List[int]:
        return [self.token_id(t) for t in tokenize(text, self.tokenizer_spec)]

    # probabilities ----------------------------------------------------------

    def _build_derived(self) -> None:
        n = self.order
        adjusted: List[Dict[Gram, int]] = [dict() for _ in range(n)]
        adjusted[n - 1] = self.raw_counts[n - 1]
        if self.smoothing == "add_k":
            # add-k conditions on raw statistics at every level
            adjusted = list(self.raw_counts)
        else:
            for level in range(n - 1, 0, -1):  # gram length below the top
                upper = self.raw_counts[level]  # (level+1)-grams
                predecessors: Dict[Gram, set] = {}
                for gram in upper:
                    predecessors.setdefault(gram[1:], set()).add(gram[0])
                table: Dict[Gram, int] = {}
                for gram, count in self.raw_counts[level - 1].items():
                    if gram[0] == BOS_ID:
                        table[gram] = count  # BOS-initial grams cannot be preceded
                    else:
                        table[gram] = len(predecessors.get(gram, ())) or count
                adjusted[level - 1] = table
        self.adjusted = adjusted

        self.ctx_total: List[Dict[Gram, int]] = []
        self.ctx_disc: List[Dict[Gram, float]] = []
        for table in adjusted:
            totals: Dict[Gram, int] = {}
            disc: Dict[Gram, float] = {}
            for gram, count in table.items():
                ctx = gram[:-1]
                totals[ctx] = totals.get(ctx, 0) + count
                disc[ctx] = disc.get(ctx, 0.0) + min(count, self.discount)
            self.ctx_total.append(totals)
            self.ctx_disc.append(disc)

    def probability(self, token_id: int, context_ids: Sequence[int]) -> float:
        """Conditional probability of one event token given a context.

        The context may be any length: the last order-1 ids are used, and a
        shorter context is answered from the matching lower-order statistics.
        """
        if token_id == BOS_ID:
            raise DataError("BOS is never a predicted token")
        context = tuple(context_ids)
        if len(context) > self.order - 1:
            context = context[len(context) - (self.order - 1):]
        level = len(context) + 1
        if self.smoothing == "add_k":
            return self._prob_add_k(level, context, token_id)
        return self._prob_kn(level, context, token_id)

    def _prob_add_k(self, level: int, context: Gram, token_id: int) -> float:
        count = self.raw_counts[level - 1].get(context + (token_id,), 0)
        total = self.ctx_total[level - 1].get(context, 0)
        v = self.event_vocabulary_size
        return (count + self.k) / (total + self.k * v)

    def _prob_kn(self, level: int, context: Gram, token_id: int) -> float:
        if level == 1:
            total = self.ctx_total[0].get((), 0)
            base = 1.0 / self.event_vocabulary_size
            if total == 0:
                return base
            count = self.adjusted[0].get((token_id,), 0)
            disc = self.ctx_disc[0].get((), 0.0)
            return (max(count - self.discount, 0.0) + disc * base) / total
        ctx = context[len(context) - (level - 1):]
        lower = self._prob_kn(level - 1, ctx[1:], token_id)
        total = self.ctx_total[level - 1].get(ctx, 0)
        if total == 0:
            return lower
        count = self.adjusted[level - 1].get(ctx + (token_id,), 0)
        disc = self.ctx_disc[level - 1].get(ctx, 0.0)
        return (max(count - self.discount, 0.0) + disc * lower) / total


def train_lm(
    corpus: Iterable[str],
    order: int = 3,
    tokenizer_spec: str = "whitespace",
    smoothing: str = "interpolated_kneser_ney",
    min_count: int = 2,
    k: float = 1.0,
    discount: float = 0.75,
) -> NgramLanguageModel:
    """Train a smoothed n-gram model on one-sentence-per-line text."""
    if not 1 <= order <= 5:
        raise ConfigError(f"order must be in [1, 5], got {order}")
    if min_count < 1:
        raise ConfigError(f"min_count must be >= 1, got {min_count}")
    if tokenizer_spec not in TOKENIZERS:
        raise ConfigError(f"unknown tokenizer {tokenizer_spec!r}")
    if smoothing not in SMOOTHINGS:
        raise ConfigError(f"unknown smoothing {smoothing!r}")
    if smoothing == "add_k" and k <= 0:
        raise ConfigError("add_k smoothing needs k > 0")
    if smoothing == "interpolated_kneser_ney" and not 0 < discount < 1:
        raise ConfigError("Kneser-Ney discount must be in (0, 1)")

    sentences = [tokenize(line, tokenizer_spec) for line in corpus]
    sentences = [s for s in sentences if s]
    if not sentences:
        raise DataError("training corpus is empty")

    frequencies: Counter[str] = Counter()
    for sentence in sentences:
        frequencies.update(sentence)
    tokens: List[str] = []
    seen = set()
    for sentence in sentences:
        for token in sentence:
            if token not in seen and frequencies[token] >= min_count:
                seen.add(token)
                tokens.append(token)
    token_to_id = {t: i + _RESERVED for i, t in enumerate(tokens)}

    raw: List[Dict[Gram, int]] = [dict() for _ in range(order)]
    pad = (BOS_ID,) * (order - 1)
    for sentence in sentences:
        seq = pad + tuple(token_to_id.get(t, UNK_ID) for t in sentence) + (EOS_ID,)
        for t in range(order - 1, len(seq)):
            for level in range(1, order + 1):
                gram = seq[t - level + 1 : t + 1]
                table = raw[level - 1]
                table[gram] = table.get(gram, 0) + 1

    return NgramLanguageModel(
        order=order,
        tokenizer_spec=tokenizer_spec,
        smoothing=smoothing,
        min_count=min_count,
        k=k,
        discount=discount,
        tokens=tokens,
        raw_counts=raw,
    )


def perplexity(model: NgramLanguageModel, sentence: str) -> PerplexityScore:
    """exp of the mean negative log-likelihood per token, EOS included."""
    ids = model.ids_for(sentence)
    if not ids:
        raise DataError("sentence is empty after tokenization")
    seq = (BOS_ID,) * (model.order - 1) + tuple(ids) + (EOS_ID,)
    log_sum = 0.0
    start = model.order - 1
    for t in range(start, len(seq)):
        log_sum += math.log(model.probability(seq[t], seq[t - model.order + 1 : t]))
    token_count = len(ids) + 1
    return PerplexityScore(value=math.exp(-log_sum / token_count), token_count=token_count)


# --- persistence -------------------------------------------------------------

def _encode_level(table: Dict[Gram, int]) -> Dict[str, int]:
    return {" ".join(str(i) for i in gram): count for gram, count in table.items()}

def _decode_level(obj: Dict[str, int]) -> Dict[Gram, int]:
    return {tuple(int(p) for p in key.split(" ")): int(count) for key, count in obj.items()}


def save_lm(model: NgramLanguageModel, path) -> None:
    """Persist the model as a self-describing JSON container."""
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "order": model.order,
        "tokenizer_spec": model.tokenizer_spec,
        "smoothing": model.smoothing,
        "min_count": model.min_count,
        "k": model.k,
        "discount": model.discount,
        "tokens": model.tokens,
        "levels": [_encode_level(t) for t in model.raw_counts],
    }
    write_atomic(path, json.dumps(doc, ensure_ascii=False, sort_keys=True, separators=(",", ":")))


def load_lm(path) -> NgramLanguageModel:
    """Load a model saved by save_lm; round-trips perplexities bit-exactly."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"model file {path} is truncated or not a model file: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ConfigError(f"model file {path} has wrong magic header")
    if doc.get("version") != FORMAT_VERSION:
        raise ConfigError(
            f"model file {path} has unsupported version {doc.get('version')!r}, "
            f"expected {FORMAT_VERSION}"
        )
    return NgramLanguageModel(
        order=int(doc["order"]),
        tokenizer_spec=str(doc["tokenizer_spec"]),
        smoothing=str(doc["smoothing"]),
        min_count=int(doc["min_count"]),
        k=float(doc["k"]),
        discount=float(doc["discount"]),
        tokens=[str(t) for t in doc["tokens"]],
        raw_counts=[_decode_level(level) for level in doc["levels"]],
    )

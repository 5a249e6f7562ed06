"""Quality scoring: builtin surrogate metrics plus a remote-scorer client.

Two modes exist and are never mixed in one aggregate:

* reference_based: chrF over character n-grams 1..6 with beta=2, scaled to
  0-100. Deterministic and dependency-free; adequate for exercising every
  routing policy offline.
* reference_free: a length-ratio / target-script heuristic, also 0-100. It
  exists so the QE-threshold policy runs end to end without any external
  scoring service.

Remote backends speak a fixed wire protocol: POST /score with
{"mode": ..., "items": [{"src", "hyp", "ref"?}, ...]} returning
{"scores": [...]}; errors come back as non-200 with {"error": text}.
"""

from __future__ import annotations

import math
import re
import unicodedata
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import requests

from .core import ConfigError, DataError, QualityScore, RemoteScorerError, ScoreKind

CHRF_ORDER = 6
CHRF_BETA = 2.0

_WHITESPACE = re.compile(r"\s+")


@dataclass(frozen=True)
class ScorerSpec:
    mode: ScoreKind
    backend: str = "builtin_chrf"  # "builtin_chrf" | "remote"
    endpoint: Optional[str] = None
    timeout_ms: int = 10_000
    max_retries: int = 0
    max_in_flight: int = 4
    chunk_size: int = 128

    def __post_init__(self):
        if self.backend not in ("builtin_chrf", "remote"):
            raise ConfigError(f"unknown scorer backend {self.backend!r}")
        if (self.endpoint is not None) != (self.backend == "remote"):
            raise ConfigError("endpoint must be present iff backend is remote")
        if self.timeout_ms <= 0:
            raise ConfigError("timeout_ms must be positive")


# --- builtin reference-based: chrF -------------------------------------------

def _char_ngrams(text: str, n: int) -> Counter:
    return Counter(text[i : i + n] for i in range(len(text) - n + 1))


def chrf(hypothesis: str, reference: str, order: int = CHRF_ORDER, beta: float = CHRF_BETA) -> float:
    """chrF on a 0-100 scale; whitespace is removed before n-gram extraction."""
    hyp = _WHITESPACE.sub("", hypothesis)
    ref = _WHITESPACE.sub("", reference)
    avg_precision = 0.0
    avg_recall = 0.0
    effective = 0
    for n in range(1, order + 1):
        hyp_grams = _char_ngrams(hyp, n)
        ref_grams = _char_ngrams(ref, n)
        hyp_total = sum(hyp_grams.values())
        ref_total = sum(ref_grams.values())
        if hyp_total == 0 or ref_total == 0:
            continue
        common = sum((hyp_grams & ref_grams).values())
        avg_precision += common / hyp_total
        avg_recall += common / ref_total
        effective += 1
    if effective == 0:
        return 0.0
    avg_precision /= effective
    avg_recall /= effective
    if avg_precision + avg_recall == 0:
        return 0.0
    b2 = beta * beta
    f_score = (1 + b2) * avg_precision * avg_recall / (b2 * avg_precision + avg_recall)
    return 100.0 * f_score


# --- builtin reference-free heuristic ----------------------------------------

# expected hypothesis characters per source character, by language pair
_LENGTH_RATIOS = {
    ("zh", "en"): 3.0,
    ("en", "zh"): 0.4,
    ("de", "en"): 0.95,
    ("en", "de"): 1.05,
    ("ja", "en"): 2.5,
    ("en", "ja"): 0.5,
}

_LATIN_LANGS = {"en", "de", "fr", "es", "it", "pt", "nl"}


def _is_cjk(ch: str) -> bool:
    code = ord(ch)
    return (
        0x4E00 <= code <= 0x9FFF
        or 0x3400 <= code <= 0x4DBF
        or 0x3040 <= code <= 0x30FF  # kana
        or 0xF900 <= code <= 0xFAFF
    )


def _script_appropriate(ch: str, target_lang: str) -> bool:
    if ch.isspace() or ch.isdigit() or unicodedata.category(ch).startswith("P"):
        return True
    if target_lang in _LATIN_LANGS:
        return "LATIN" in unicodedata.name(ch, "")
    if target_lang in ("zh", "ja", "ko"):
        return _is_cjk(ch)
    return True  # unknown target script: do not penalize


def qe_heuristic(src: str, hyp: str, source_lang: str, target_lang: str) -> float:
    """Reference-free plausibility of hyp as a translation of src, 0-100.

    Blends length plausibility against an expected per-pair character ratio
    with the fraction of hypothesis characters written in the target script.
    """
    if not hyp.strip():
        return 0.0
    expected = len(src) * _LENGTH_RATIOS.get((source_lang, target_lang), 1.0)
    ratio = len(hyp) / max(expected, 1.0)
    length_component = 1.0 - min(abs(ratio - 1.0), 1.0)
    chars = [ch for ch in hyp if not ch.isspace()]
    script_component = (
        sum(1 for ch in chars if _script_appropriate(ch, target_lang)) / len(chars)
        if chars
        else 0.0
    )
    return 100.0 * (0.5 * length_component + 0.5 * script_component)


# --- scoring entry points -----------------------------------------------------

def score(
    spec: ScorerSpec,
    src: str,
    hyp: str,
    ref: Optional[str] = None,
    source_lang: str = "",
    target_lang: str = "",
) -> QualityScore:
    """Score one (src, hyp[, ref]) triple under the given scorer."""
    _check_ref(spec.mode, ref)
    if spec.backend == "remote":
        return score_batch(spec, [(src, hyp, ref)], source_lang, target_lang)[0]
    if spec.mode is ScoreKind.REFERENCE_BASED:
        return QualityScore(chrf(hyp, ref or ""), ScoreKind.REFERENCE_BASED)
    return QualityScore(qe_heuristic(src, hyp, source_lang, target_lang), ScoreKind.REFERENCE_FREE)


def score_batch(
    spec: ScorerSpec,
    items: Sequence[Tuple[str, str, Optional[str]]],
    source_lang: str = "",
    target_lang: str = "",
) -> List[QualityScore]:
    """Order-preserving bulk scoring; equals mapping score element-wise."""
    for src, hyp, ref in items:
        _check_ref(spec.mode, ref)
    if spec.backend != "remote":
        return [score(spec, s, h, r, source_lang, target_lang) for s, h, r in items]

    chunks = [
        (start, list(items[start : start + spec.chunk_size]))
        for start in range(0, len(items), spec.chunk_size)
    ]
    results: List[List[QualityScore]] = [[] for _ in chunks]
    if len(chunks) == 1 or spec.max_in_flight <= 1:
        for i, (start, chunk) in enumerate(chunks):
            results[i] = _score_remote_chunk(spec, start, chunk)
    else:
        with ThreadPoolExecutor(max_workers=spec.max_in_flight) as pool:
            futures = [pool.submit(_score_remote_chunk, spec, start, chunk) for start, chunk in chunks]
            results = [f.result() for f in futures]
    return [s for chunk_scores in results for s in chunk_scores]


def _check_ref(mode: ScoreKind, ref: Optional[str]) -> None:
    if mode is ScoreKind.REFERENCE_BASED and ref is None:
        raise DataError("reference_based scoring requires a reference")
    if mode is ScoreKind.REFERENCE_FREE and ref is not None:
        raise DataError("reference_free scoring must not receive a reference")


def _score_remote_chunk(
    spec: ScorerSpec, start_index: int, items: Sequence[Tuple[str, str, Optional[str]]]
) -> List[QualityScore]:
    payload = {
        "mode": spec.mode.value,
        "items": [
            {"src": src, "hyp": hyp, **({"ref": ref} if ref is not None else {})}
            for src, hyp, ref in items
        ],
    }
    timeout = spec.timeout_ms / 1000.0
    attempts = 1 + spec.max_retries
    last_error: Optional[str] = None
    for _ in range(attempts):
        try:
            response = requests.post(f"{spec.endpoint}/score", json=payload, timeout=timeout)
        except requests.Timeout:
            last_error = f"timeout after {spec.timeout_ms} ms from {spec.endpoint}"
            continue
        except requests.RequestException as exc:
            last_error = f"request to {spec.endpoint} failed: {exc}"
            continue
        if response.status_code != 200:
            detail = ""
            try:
                detail = response.json().get("error", "")
            except ValueError:
                detail = response.text[:200]
            raise RemoteScorerError(
                f"scorer {spec.endpoint} returned {response.status_code} "
                f"for items starting at index {start_index}: {detail}"
            )
        try:
            scores = response.json()["scores"]
        except (ValueError, KeyError) as exc:
            raise RemoteScorerError(
                f"malformed response from {spec.endpoint} at index {start_index}: {exc}"
            ) from exc
        if not isinstance(scores, list) or len(scores) != len(items):
            raise RemoteScorerError(
                f"scorer {spec.endpoint} returned {len(scores) if isinstance(scores, list) else '?'} "
                f"scores for {len(items)} items at index {start_index}"
            )
        out = []
        for offset, value in enumerate(scores):
            value = float(value)
            if not math.isfinite(value) or not 0.0 <= value <= 100.0:
                raise RemoteScorerError(
                    f"scorer {spec.endpoint} returned out-of-range score {value!r} "
                    f"at index {start_index + offset}"
                )
            out.append(QualityScore(value, spec.mode))
        return out
    raise RemoteScorerError(f"scoring failed at index {start_index}: {last_error}")

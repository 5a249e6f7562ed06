"""Threshold calibration and routing-classifier sample selection.

All thresholds are rank statistics: given a target fraction of traffic that
may go to the expensive backend, the threshold is the k-th order statistic
of the calibration scores with k = max(1, floor(fraction * N)). The same
quantile machinery calibrates the QE threshold (k-th smallest QE score),
the perplexity threshold (k-th largest perplexity), and the two sample
selection cuts for the trainable decider.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    ConfigError,
    DataError,
    EvalRecord,
    LanguagePair,
    load_dataset,
    save_dataset,
    write_atomic,
)
from .ngram_lm import NgramLanguageModel, perplexity

LOWEST_FRACTION = "lowest_fraction"
HIGHEST_FRACTION = "highest_fraction"


@dataclass(frozen=True)
class PolicyThresholds:
    """Calibrated routing thresholds for one language pair."""

    pair: LanguagePair
    qet_threshold: Optional[float] = None
    pplt_threshold: Optional[float] = None
    jdm_t1: Optional[float] = None
    jdm_t2: Optional[float] = None
    target_llm_fraction: float = 0.25
    provenance: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        # calibrated values are always finite; +-inf is tolerated so sweeps can
        # probe the degenerate endpoints of a policy
        for name in ("qet_threshold", "pplt_threshold", "jdm_t1", "jdm_t2"):
            value = getattr(self, name)
            if value is not None and math.isnan(value):
                raise DataError(f"{name} must not be NaN")
        if not 0.0 < self.target_llm_fraction < 1.0:
            raise DataError("target_llm_fraction must be in (0, 1)")
        object.__setattr__(self, "provenance", dict(self.provenance))

    def to_obj(self) -> Dict[str, object]:
        return {
            "pair": str(self.pair),
            "qet_threshold": self.qet_threshold,
            "pplt_threshold": self.pplt_threshold,
            "jdm_t1": self.jdm_t1,
            "jdm_t2": self.jdm_t2,
            "target_llm_fraction": self.target_llm_fraction,
            "provenance": self.provenance,
        }

    @classmethod
    def from_obj(cls, obj: Dict[str, object]) -> "PolicyThresholds":
        return cls(
            pair=LanguagePair.parse(str(obj["pair"])),
            qet_threshold=_opt_float(obj.get("qet_threshold")),
            pplt_threshold=_opt_float(obj.get("pplt_threshold")),
            jdm_t1=_opt_float(obj.get("jdm_t1")),
            jdm_t2=_opt_float(obj.get("jdm_t2")),
            target_llm_fraction=float(obj.get("target_llm_fraction", 0.25)),
            provenance=dict(obj.get("provenance") or {}),
        )


def _opt_float(value) -> Optional[float]:
    return None if value is None else float(value)


def save_thresholds(thresholds: PolicyThresholds, path) -> None:
    write_atomic(path, json.dumps(thresholds.to_obj(), ensure_ascii=False, sort_keys=True, indent=2) + "\n")


def load_thresholds(path) -> PolicyThresholds:
    try:
        return PolicyThresholds.from_obj(json.loads(Path(path).read_text(encoding="utf-8")))
    except OSError as exc:
        raise ConfigError(f"cannot read thresholds file {path}: {exc}") from exc
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"malformed thresholds file {path}: {exc}") from exc


@dataclass(frozen=True)
class JdmTrainingSet:
    """Positive/negative routing examples selected for decider training."""

    positives: Tuple[EvalRecord, ...]
    negatives: Tuple[EvalRecord, ...]
    t1: float
    t2: float
    seed: int
    llm_never_better: bool = False

    def __post_init__(self):
        object.__setattr__(self, "positives", tuple(self.positives))
        object.__setattr__(self, "negatives", tuple(self.negatives))
        pos_ids = {r.segment.id for r in self.positives}
        neg_ids = {r.segment.id for r in self.negatives}
        if pos_ids & neg_ids:
            raise DataError(f"positives and negatives overlap: {sorted(pos_ids & neg_ids)[:5]}")


# --- quantile machinery --------------------------------------------------------

def fit_quantile_threshold(scores: Sequence[float], target_fraction: float, direction: str) -> float:
    """k-th smallest (lowest_fraction) or k-th largest (highest_fraction) score.

    k = max(1, floor(target_fraction * N)). With distinct scores exactly k-1
    of them lie strictly beyond the returned threshold.
    """
    if direction not in (LOWEST_FRACTION, HIGHEST_FRACTION):
        raise ConfigError(f"unknown direction {direction!r}")
    if not 0.0 < target_fraction < 1.0:
        raise ConfigError(f"target_fraction must be in (0, 1), got {target_fraction}")
    values = np.asarray(scores, dtype=float)
    if values.size == 0:
        raise DataError("cannot fit a threshold on an empty score list")
    if not np.isfinite(values).all():
        raise DataError("scores contain a non-finite value")
    k = max(1, math.floor(target_fraction * values.size))
    if direction == LOWEST_FRACTION:
        return float(np.partition(values, k - 1)[k - 1])
    return float(np.partition(values, values.size - k)[values.size - k])


def eq1_label(q_nmt: float, q_llm: float, t1: float, t2: float) -> bool:
    """True when the cheap hypothesis is bad AND the expensive one is clearly better.

    Both inequalities are strict: q_nmt < t1 and (q_llm - q_nmt) > t2.
    """
    for name, value in (("q_nmt", q_nmt), ("q_llm", q_llm), ("t1", t1), ("t2", t2)):
        if not math.isfinite(value):
            raise DataError(f"{name} must be finite, got {value!r}")
    return q_nmt < t1 and (q_llm - q_nmt) > t2


def calibrate_qet(records: Sequence[EvalRecord], target_fraction: float) -> float:
    """QE threshold: the k-th smallest reference-free score of the NMT outputs."""
    missing = [r.segment.id for r in records if r.qe_nmt is None]
    if missing:
        raise DataError(f"records missing qe_nmt: {missing[:10]}")
    return fit_quantile_threshold([r.qe_nmt.value for r in records], target_fraction, LOWEST_FRACTION)


def calibrate_pplt(
    model: NgramLanguageModel, corpus: Sequence[str], target_fraction: float
) -> float:
    """Perplexity threshold: the k-th largest sentence perplexity on the corpus."""
    ppls: List[float] = []
    for index, sentence in enumerate(corpus):
        try:
            ppls.append(perplexity(model, sentence).value)
        except DataError as exc:
            raise DataError(f"corpus sentence {index}: {exc}") from exc
    return fit_quantile_threshold(ppls, target_fraction, HIGHEST_FRACTION)


# --- decider training-sample selection ------------------------------------------

def select_jdm_samples(
    records: Sequence[EvalRecord],
    t1_fraction: float,
    n_pos: int,
    neg_ratio: int,
    seed: int,
) -> JdmTrainingSet:
    """Select decider training samples by the two-threshold recipe.

    t1 is the t1_fraction quantile of the reference-based NMT scores; within
    the slice below t1, records are ranked by (q_llm - q_nmt) descending and
    the top n_pos become positives (t2 = the n_pos-th diff). Negatives are
    n_pos * neg_ratio records drawn uniformly without replacement from
    everything not selected as positive. Ties in either sort break by record
    id so reruns are byte-identical; changing only the seed changes only the
    negatives.
    """
    if n_pos < 1 or neg_ratio < 1:
        raise ConfigError("n_pos and neg_ratio must be >= 1")
    needed = n_pos * (1 + neg_ratio)
    if len(records) < needed:
        raise DataError(f"need at least {needed} records, got {len(records)}")
    for record in records:
        if record.q_nmt is None or record.q_llm is None:
            raise DataError(f"record {record.segment.id!r} is missing q_nmt or q_llm")

    t1 = fit_quantile_threshold([r.q_nmt.value for r in records], t1_fraction, LOWEST_FRACTION)
    below_t1 = [r for r in records if r.q_nmt.value < t1]
    if len(below_t1) < n_pos:
        raise DataError(
            f"only {len(below_t1)} records fall below t1={t1}; cannot select {n_pos} positives"
        )
    below_t1.sort(key=lambda r: (-(r.q_llm.value - r.q_nmt.value), r.segment.id))
    positives = below_t1[:n_pos]
    t2 = positives[-1].q_llm.value - positives[-1].q_nmt.value

    positive_ids = {r.segment.id for r in positives}
    pool = sorted(
        (r for r in records if r.segment.id not in positive_ids),
        key=lambda r: r.segment.id,
    )
    n_neg = n_pos * neg_ratio
    if len(pool) < n_neg:
        raise DataError(f"only {len(pool)} candidate negatives for {n_neg} requested")
    negatives = random.Random(seed).sample(pool, n_neg)

    return JdmTrainingSet(
        positives=tuple(positives),
        negatives=tuple(negatives),
        t1=t1,
        t2=t2,
        seed=seed,
        llm_never_better=t2 <= 0.0,
    )


def save_jdm_samples(selection: JdmTrainingSet, out_dir, provenance: Optional[Dict] = None) -> None:
    """Persist as positives.jsonl, negatives.jsonl, and manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(selection.positives, out / "positives.jsonl")
    save_dataset(selection.negatives, out / "negatives.jsonl")
    manifest = {
        "t1": selection.t1,
        "t2": selection.t2,
        "seed": selection.seed,
        "n_pos": len(selection.positives),
        "n_neg": len(selection.negatives),
        "llm_never_better": selection.llm_never_better,
    }
    if provenance:
        manifest["provenance"] = provenance
    write_atomic(out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def load_jdm_samples(out_dir) -> JdmTrainingSet:
    out = Path(out_dir)
    try:
        manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read sample manifest in {out}: {exc}") from exc
    return JdmTrainingSet(
        positives=tuple(load_dataset(out / "positives.jsonl")),
        negatives=tuple(load_dataset(out / "negatives.jsonl")),
        t1=float(manifest["t1"]),
        t2=float(manifest["t2"]),
        seed=int(manifest["seed"]),
        llm_never_better=bool(manifest.get("llm_never_better", False)),
    )


def dataset_fingerprint(path) -> str:
    """Stable content hash used in threshold provenance blocks."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()

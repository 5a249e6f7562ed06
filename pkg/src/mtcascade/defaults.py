"""Shipped reference thresholds and tuning defaults.

The per-pair threshold values below are reference points for operators who
attach external scoring models on a matching 0-100 scale. Perplexity
thresholds only make sense against the language model that produced the
calibration perplexities, so when using the bundled n-gram model always
re-calibrate with the calibrate CLI instead of reusing these numbers.
"""

from __future__ import annotations

from typing import Dict, Optional

from .calibration import PolicyThresholds
from .core import LanguagePair

DEFAULT_TARGET_LLM_FRACTION = 0.25
DEFAULT_T1_FRACTION = 0.10
DEFAULT_NEG_RATIO = 3

# columns: qe-score threshold, perplexity threshold, decider sample cuts t1/t2
REFERENCE_THRESHOLDS: Dict[str, Dict[str, float]] = {
    "zh-en": {"qet": 70.0, "pplt": 5.6, "jdm_t1": 73.0, "jdm_t2": 3.5},
    "en-zh": {"qet": 72.0, "pplt": 5.5, "jdm_t1": 76.0, "jdm_t2": 3.5},
    "de-en": {"qet": 67.0, "pplt": 5.7, "jdm_t1": 79.0, "jdm_t2": 2.5},
    "ja-en": {"qet": 73.0, "pplt": 5.8, "jdm_t1": 64.0, "jdm_t2": 3.5},
}


def reference_thresholds(pair: str | LanguagePair) -> Optional[PolicyThresholds]:
    """Reference PolicyThresholds for a known pair, or None."""
    key = str(pair)
    if key not in REFERENCE_THRESHOLDS:
        return None
    row = REFERENCE_THRESHOLDS[key]
    return PolicyThresholds(
        pair=LanguagePair.parse(key),
        qet_threshold=row["qet"],
        pplt_threshold=row["pplt"],
        jdm_t1=row["jdm_t1"],
        jdm_t2=row["jdm_t2"],
        target_llm_fraction=DEFAULT_TARGET_LLM_FRACTION,
        provenance={"dataset": "shipped-reference-values", "n": 0},
    )

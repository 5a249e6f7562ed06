"""Routing policies behind one interface.

Six policies decide, per segment, whether the cheap NMT backend or the
expensive LLM backend should translate it:

* always_nmt / always_llm: degenerate baselines.
* qet: route to the LLM when the reference-free score of the NMT output
  falls strictly below a calibrated threshold (needs the NMT hypothesis, so
  the router invokes NMT first under this policy).
* pplt: route to the LLM when source perplexity strictly exceeds a
  calibrated threshold. Source-only.
* jdm: a trained linear classifier over source features. Source-only.
* oracle: offline upper bound; picks whichever hypothesis scored higher,
  ties to NMT so LLM usage stays minimal.
"""

from __future__ import annotations

import json
import math
import unicodedata
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from .calibration import JdmTrainingSet, PolicyThresholds
from .core import Backend, ConfigError, DataError, QualityScore, Segment, write_atomic
from .ngram_lm import NgramLanguageModel, UNK_ID, load_lm, perplexity, tokenize

POLICIES = ("always_nmt", "always_llm", "qet", "pplt", "jdm", "oracle")

FEATURE_NAMES = (
    "log_ppl",
    "token_count",
    "mean_token_len",
    "rare_token_fraction",
    "digit_fraction",
    "punct_fraction",
    "latin_fraction",
    "char_entropy",
)

CLASSIFIER_FORMAT = "mtcascade-linear-decider"
CLASSIFIER_VERSION = 1


@dataclass(frozen=True)
class DeciderSpec:
    policy: str
    thresholds: Optional[PolicyThresholds] = None
    lm_path: Optional[str] = None
    classifier_path: Optional[str] = None
    decision_boundary: float = 0.5

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}, expected one of {POLICIES}")
        if not 0.0 <= self.decision_boundary <= 1.0:
            raise ConfigError("decision_boundary must be in [0, 1]")


@dataclass(frozen=True)
class DecisionContext:
    """Per-request side information; only qet and oracle read any of it."""

    qe_score: Optional[QualityScore] = None
    q_nmt: Optional[QualityScore] = None
    q_llm: Optional[QualityScore] = None


EMPTY_CONTEXT = DecisionContext()


@dataclass(frozen=True)
class FeatureVector:
    values: Tuple[float, ...]

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.values):
            raise DataError(f"non-finite feature value in {self.values}")


def extract_features(segment: Segment, lm: NgramLanguageModel) -> FeatureVector:
    """Deterministic source-side features, aligned with FEATURE_NAMES."""
    text = segment.text
    tokens = tokenize(text, lm.tokenizer_spec)
    chars = [ch for ch in text if not ch.isspace()]
    n_chars = max(len(chars), 1)

    ppl = perplexity(lm, text).value
    rare = sum(1 for t in tokens if lm.token_id(t) == UNK_ID) / max(len(tokens), 1)
    digits = sum(1 for ch in chars if ch.isdigit()) / n_chars
    punct = sum(1 for ch in chars if unicodedata.category(ch).startswith("P")) / n_chars
    latin = sum(1 for ch in chars if "LATIN" in unicodedata.name(ch, "")) / n_chars

    counts = Counter(chars)
    total = sum(counts.values())
    entropy = -sum((c / total) * math.log2(c / total) for c in counts.values()) if total else 0.0

    return FeatureVector(
        values=(
            math.log(ppl),
            float(len(tokens)),
            sum(len(t) for t in tokens) / max(len(tokens), 1),
            rare,
            digits,
            punct,
            latin,
            entropy,
        )
    )


# --- linear classifier ----------------------------------------------------------

def sigmoid(z: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def logistic_loss_and_grad(
    params: np.ndarray, features: np.ndarray, labels: np.ndarray, l2: float
) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy with L2 on the weights (not the bias).

    params stacks the weight vector followed by the bias. Kept as a pure
    function so the gradient can be checked by finite differences.
    """
    weights, bias = params[:-1], params[-1]
    z = features @ weights + bias
    loss = float(np.mean(np.logaddexp(0.0, z) - labels * z) + 0.5 * l2 * np.dot(weights, weights))
    residual = sigmoid(z) - labels
    grad_w = features.T @ residual / len(labels) + l2 * weights
    grad_b = float(np.mean(residual))
    return loss, np.concatenate([grad_w, [grad_b]])


@dataclass(frozen=True)
class LinearDecider:
    feature_names: Tuple[str, ...]
    weights: Tuple[float, ...]
    bias: float
    feature_scaling: Tuple[Tuple[float, float], ...]  # (mean, std) per feature
    provenance: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.weights) != len(self.feature_names):
            raise DataError("weights and feature_names lengths differ")
        if len(self.feature_scaling) != len(self.feature_names):
            raise DataError("feature_scaling and feature_names lengths differ")
        if any(std <= 0 for _, std in self.feature_scaling):
            raise DataError("feature scaling std entries must be > 0")
        object.__setattr__(self, "provenance", dict(self.provenance))

    def probability(self, features: FeatureVector) -> float:
        """P(route to LLM) for one feature vector."""
        x = np.asarray(features.values, dtype=float)
        means = np.array([m for m, _ in self.feature_scaling])
        stds = np.array([s for _, s in self.feature_scaling])
        z = float(np.dot((x - means) / stds, np.asarray(self.weights)) + self.bias)
        return float(sigmoid(z))


def train_linear_decider(
    train: JdmTrainingSet,
    lm: NgramLanguageModel,
    epochs: int = 300,
    learning_rate: float = 0.5,
    l2: float = 1e-4,
    seed: int = 0,
) -> LinearDecider:
    """Fit the routing classifier by full-batch gradient descent.

    Features are standardized on the training set; a zero-variance feature
    gets its std clamped to 1 and a warning. Zero initialization plus
    full-batch updates make the result deterministic; the seed is recorded
    in provenance.
    """
    if not train.positives or not train.negatives:
        raise DataError("training set needs both positives and negatives")
    records = list(train.positives) + list(train.negatives)
    labels = np.array([1.0] * len(train.positives) + [0.0] * len(train.negatives))
    rows = np.array([extract_features(r.segment, lm).values for r in records])

    means = rows.mean(axis=0)
    stds = rows.std(axis=0)
    degenerate = stds < 1e-12 * np.maximum(1.0, np.abs(means))
    if degenerate.any():
        names = [FEATURE_NAMES[i] for i in np.flatnonzero(degenerate)]
        warnings.warn(f"zero-variance features {names}; std clamped to 1", stacklevel=2)
        stds = np.where(degenerate, 1.0, stds)
    scaled = (rows - means) / stds

    params = np.zeros(rows.shape[1] + 1)
    for _ in range(epochs):
        _, grad = logistic_loss_and_grad(params, scaled, labels, l2)
        params -= learning_rate * grad

    return LinearDecider(
        feature_names=FEATURE_NAMES,
        weights=tuple(float(w) for w in params[:-1]),
        bias=float(params[-1]),
        feature_scaling=tuple((float(m), float(s)) for m, s in zip(means, stds)),
        provenance={
            "n_pos": len(train.positives),
            "n_neg": len(train.negatives),
            "t1": train.t1,
            "t2": train.t2,
            "epochs": epochs,
            "learning_rate": learning_rate,
            "l2": l2,
            "seed": seed,
        },
    )


def save_classifier(clf: LinearDecider, path) -> None:
    doc = {
        "format": CLASSIFIER_FORMAT,
        "version": CLASSIFIER_VERSION,
        "feature_names": list(clf.feature_names),
        "weights": list(clf.weights),
        "bias": clf.bias,
        "feature_scaling": [list(pair) for pair in clf.feature_scaling],
        "provenance": clf.provenance,
    }
    write_atomic(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_classifier(path) -> LinearDecider:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read classifier file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"classifier file {path} is not valid JSON: {exc}") from exc
    if doc.get("format") != CLASSIFIER_FORMAT or doc.get("version") != CLASSIFIER_VERSION:
        raise ConfigError(f"classifier file {path} has wrong format/version")
    return LinearDecider(
        feature_names=tuple(doc["feature_names"]),
        weights=tuple(float(w) for w in doc["weights"]),
        bias=float(doc["bias"]),
        feature_scaling=tuple((float(m), float(s)) for m, s in doc["feature_scaling"]),
        provenance=dict(doc.get("provenance") or {}),
    )


# --- the decider itself -----------------------------------------------------------

class Decider:
    """A loaded, immutable policy. decide() is pure and thread-safe."""

    def __init__(self, spec: DeciderSpec, lm: Optional[NgramLanguageModel], clf: Optional[LinearDecider]):
        self.spec = spec
        self.lm = lm
        self.clf = clf

    @property
    def policy(self) -> str:
        return self.spec.policy

    def decide(
        self, segment: Segment, context: Optional[DecisionContext] = None
    ) -> Tuple[Backend, Dict[str, float]]:
        context = context or EMPTY_CONTEXT
        policy = self.spec.policy
        if policy == "always_nmt":
            return Backend.NMT, {}
        if policy == "always_llm":
            return Backend.LLM, {}
        if policy == "pplt":
            ppl = perplexity(self.lm, segment.text).value
            threshold = self.spec.thresholds.pplt_threshold
            backend = Backend.LLM if ppl > threshold else Backend.NMT
            return backend, {"ppl": ppl}
        if policy == "qet":
            if context.qe_score is None:
                raise DataError(f"qet needs a qe_score in context for segment {segment.id!r}")
            qe = context.qe_score.value
            threshold = self.spec.thresholds.qet_threshold
            backend = Backend.LLM if qe < threshold else Backend.NMT
            return backend, {"qe_nmt": qe}
        if policy == "jdm":
            prob = self.clf.probability(extract_features(segment, self.lm))
            backend = Backend.LLM if prob > self.spec.decision_boundary else Backend.NMT
            return backend, {"classifier_prob": prob}
        # oracle
        if context.q_nmt is None or context.q_llm is None:
            raise DataError(f"oracle needs q_nmt and q_llm in context for segment {segment.id!r}")
        backend = Backend.LLM if context.q_llm.value > context.q_nmt.value else Backend.NMT
        return backend, {"q_nmt": context.q_nmt.value, "q_llm": context.q_llm.value}


def build_decider(spec: DeciderSpec) -> Decider:
    """Load every artifact the policy needs; failures surface here, not per request."""
    lm = clf = None
    if spec.policy in ("pplt", "jdm"):
        if spec.lm_path is None:
            raise ConfigError(f"policy {spec.policy} requires lm_path")
        lm = load_lm(spec.lm_path)
    if spec.policy == "jdm":
        if spec.classifier_path is None:
            raise ConfigError("policy jdm requires classifier_path")
        clf = load_classifier(spec.classifier_path)
        if clf.feature_names != FEATURE_NAMES:
            raise ConfigError("classifier was trained with an incompatible feature set")
    if spec.policy == "pplt":
        if spec.thresholds is None or spec.thresholds.pplt_threshold is None:
            raise ConfigError("policy pplt requires thresholds.pplt_threshold")
    if spec.policy == "qet":
        if spec.thresholds is None or spec.thresholds.qet_threshold is None:
            raise ConfigError("policy qet requires thresholds.qet_threshold")
    return Decider(spec, lm, clf)


def decide(
    spec: DeciderSpec, segment: Segment, context: Optional[DecisionContext] = None
) -> Tuple[Backend, Dict[str, float]]:
    """One-shot convenience; loads artifacts every call, prefer build_decider."""
    return build_decider(spec).decide(segment, context)

"""Cost-aware routing between a cheap NMT backend and an expensive LLM backend."""

from .core import (
    Backend,
    BackendError,
    CascadeError,
    ConfigError,
    DataError,
    EvalRecord,
    LanguagePair,
    QualityScore,
    RemoteScorerError,
    RoutingDecision,
    RoutingError,
    ScoreKind,
    Segment,
    load_dataset,
    mean_quality,
    save_dataset,
)
from .calibration import (
    JdmTrainingSet,
    PolicyThresholds,
    calibrate_pplt,
    calibrate_qet,
    eq1_label,
    fit_quantile_threshold,
    select_jdm_samples,
)
from .decider import (
    Decider,
    DeciderSpec,
    DecisionContext,
    FeatureVector,
    LinearDecider,
    build_decider,
    decide,
    extract_features,
    train_linear_decider,
)
from .evalharness import ReplayReport, SweepPoint, compare_report, pareto_sweep, replay
from .ngram_lm import NgramLanguageModel, PerplexityScore, load_lm, perplexity, save_lm, train_lm
from .router import BackendSpec, Router, RouterConfig, build_router, render_prompt
from .scoring import ScorerSpec, chrf, qe_heuristic, score, score_batch

__version__ = "0.1.0"

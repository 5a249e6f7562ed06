"""Offline replay of routing policies over scored datasets.

Produces the report shape used throughout: mean quality of the selected
hypotheses, the fraction of segments routed to the LLM backend (llm_p),
per-group breakdowns keyed on a dataset annotation, and threshold sweeps
tracing the quality-versus-LLM-usage frontier. Pre-scored quality fields are
preferred; the scorer only runs for records that lack them.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from .calibration import PolicyThresholds
from .core import (
    Backend,
    DataError,
    EvalRecord,
    LanguagePair,
    QualityScore,
    RoutingDecision,
    mean_quality,
)
from .decider import DecisionContext, DeciderSpec, build_decider
from .scoring import ScorerSpec, score

UNLABELED = "(unlabeled)"


@dataclass(frozen=True)
class GroupStats:
    n: int
    mean_quality: float
    llm_p: float


@dataclass(frozen=True)
class ReplayReport:
    policy: str
    n: int
    mean_quality: float
    llm_p: float
    groups: Dict[str, GroupStats] = field(default_factory=dict)
    diff_vs: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "groups", dict(self.groups))
        object.__setattr__(self, "diff_vs", dict(self.diff_vs))
        if self.groups and sum(g.n for g in self.groups.values()) != self.n:
            raise DataError("group sizes do not sum to the report size")
        if not 0.0 <= self.llm_p <= 1.0:
            raise DataError("llm_p must lie in [0, 1]")


def _resolve_quality(
    record: EvalRecord,
    which: Backend,
    scorer: Optional[ScorerSpec],
    cache: Dict[Tuple[str, Backend], QualityScore],
) -> Optional[QualityScore]:
    """Pre-scored value if present, else one scorer call (reference-based)."""
    pre = record.q_nmt if which is Backend.NMT else record.q_llm
    if pre is not None:
        return pre
    key = (record.segment.id, which)
    if key in cache:
        return cache[key]
    if scorer is None or record.reference is None:
        return None
    hyp = record.nmt_hyp if which is Backend.NMT else record.llm_hyp
    value = score(
        scorer,
        record.segment.text,
        hyp,
        record.reference,
        source_lang=record.segment.pair.source_lang,
        target_lang=record.segment.pair.target_lang,
    )
    cache[key] = value
    return value


def _resolve_qe(
    record: EvalRecord, qe_scorer: Optional[ScorerSpec]
) -> Optional[QualityScore]:
    if record.qe_nmt is not None:
        return record.qe_nmt
    if qe_scorer is None:
        return None
    return score(
        qe_scorer,
        record.segment.text,
        record.nmt_hyp,
        None,
        source_lang=record.segment.pair.source_lang,
        target_lang=record.segment.pair.target_lang,
    )


def replay_decisions(
    records: Sequence[EvalRecord],
    spec: DeciderSpec,
    scorer: Optional[ScorerSpec] = None,
    qe_scorer: Optional[ScorerSpec] = None,
) -> List[RoutingDecision]:
    """Route every record offline; backend_calls reflect what serving would invoke."""
    decider = build_decider(spec)
    cache: Dict[Tuple[str, Backend], QualityScore] = {}
    missing: List[str] = []
    decisions: List[RoutingDecision] = []
    for record in records:
        context = DecisionContext()
        if spec.policy == "qet":
            qe = _resolve_qe(record, qe_scorer)
            if qe is None:
                missing.append(record.segment.id)
                continue
            context = DecisionContext(qe_score=qe)
        elif spec.policy == "oracle":
            q_nmt = _resolve_quality(record, Backend.NMT, scorer, cache)
            q_llm = _resolve_quality(record, Backend.LLM, scorer, cache)
            if q_nmt is None or q_llm is None:
                missing.append(record.segment.id)
                continue
            context = DecisionContext(q_nmt=q_nmt, q_llm=q_llm)
        backend, evidence = decider.decide(record.segment, context)
        calls = {backend: 1}
        if spec.policy == "qet":
            calls[Backend.NMT] = 1  # NMT always runs first under qet
        decisions.append(
            RoutingDecision(
                segment_id=record.segment.id,
                backend=backend,
                evidence=evidence,
                backend_calls=calls,
            )
        )
    if missing:
        raise DataError(
            f"policy {spec.policy} is missing required scores on {len(missing)} records: "
            f"{missing[:10]}"
        )
    return decisions


def replay(
    records: Sequence[EvalRecord],
    spec: DeciderSpec,
    scorer: Optional[ScorerSpec] = None,
    group_by: Optional[str] = None,
    qe_scorer: Optional[ScorerSpec] = None,
) -> ReplayReport:
    """Replay one policy and aggregate quality and LLM usage."""
    if not records:
        raise DataError("cannot replay an empty dataset")
    decisions = replay_decisions(records, spec, scorer, qe_scorer)
    cache: Dict[Tuple[str, Backend], QualityScore] = {}
    qualities: List[QualityScore] = []
    missing: List[str] = []
    for record, decision in zip(records, decisions):
        quality = _resolve_quality(record, decision.backend, scorer, cache)
        if quality is None:
            missing.append(record.segment.id)
        else:
            qualities.append(quality)
    if missing:
        raise DataError(
            f"cannot score selected hypotheses for {len(missing)} records "
            f"(no pre-scored value, scorer, or reference): {missing[:10]}"
        )

    n = len(records)
    llm_count = sum(1 for d in decisions if d.backend is Backend.LLM)

    groups: Dict[str, GroupStats] = {}
    if group_by is not None:
        by_label: Dict[str, List[int]] = {}
        for index, record in enumerate(records):
            label = record.segment.annotations.get(group_by, UNLABELED)
            by_label.setdefault(label, []).append(index)
        for label, indexes in sorted(by_label.items()):
            group_quality = [qualities[i] for i in indexes]
            group_llm = sum(1 for i in indexes if decisions[i].backend is Backend.LLM)
            groups[label] = GroupStats(
                n=len(indexes),
                mean_quality=mean_quality(group_quality),
                llm_p=group_llm / len(indexes),
            )

    return ReplayReport(
        policy=spec.policy,
        n=n,
        mean_quality=mean_quality(qualities),
        llm_p=llm_count / n,
        groups=groups,
    )


# --- threshold sweeps -----------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    control: float
    llm_p: float
    mean_quality: float


# sweeps over specs that carry no calibrated thresholds still need a container
_DUMMY_PAIR = LanguagePair("xx", "yy")


def _spec_with_control(spec: DeciderSpec, value: float) -> DeciderSpec:
    if spec.policy == "jdm":
        return dataclasses.replace(spec, decision_boundary=value)
    thresholds = spec.thresholds or PolicyThresholds(
        pair=_DUMMY_PAIR, target_llm_fraction=0.25
    )
    if spec.policy == "pplt":
        thresholds = dataclasses.replace(thresholds, pplt_threshold=value)
    else:
        thresholds = dataclasses.replace(thresholds, qet_threshold=value)
    return dataclasses.replace(spec, thresholds=thresholds)


def pareto_sweep(
    records: Sequence[EvalRecord],
    spec: DeciderSpec,
    sweep: Sequence[float],
    scorer: Optional[ScorerSpec] = None,
    qe_scorer: Optional[ScorerSpec] = None,
) -> List[SweepPoint]:
    """One replay per control value of a tunable policy."""
    if spec.policy not in ("pplt", "qet", "jdm"):
        raise DataError(f"policy {spec.policy} has no control parameter to sweep")
    if not sweep:
        raise DataError("sweep needs at least one control value")
    points = []
    for value in sweep:
        if math.isnan(value):
            raise DataError("sweep values must not be NaN")
        report = replay(records, _spec_with_control(spec, value), scorer, None, qe_scorer)
        points.append(SweepPoint(control=value, llm_p=report.llm_p, mean_quality=report.mean_quality))
    return points


# --- comparison tables ------------------------------------------------------------

ORACLE_FOOTNOTE = "oracle ties (q_llm = q_nmt) count as NMT picks"


def attach_quality_diffs(reports: Sequence[ReplayReport]) -> List[ReplayReport]:
    """Fill each report's diff_vs with its quality delta against every other policy."""
    out = []
    for report in reports:
        diffs = {
            other.policy: report.mean_quality - other.mean_quality
            for other in reports
            if other.policy != report.policy
        }
        out.append(dataclasses.replace(report, diff_vs=diffs))
    return out


def _column_labels(reports: Sequence[ReplayReport]) -> List[str]:
    labels: List[str] = []
    for report in reports:
        for label in report.groups:
            if label not in labels:
                labels.append(label)
    return sorted(labels)


def _cells(report: ReplayReport, labels: Sequence[str]) -> List[Tuple[float, float]]:
    """(quality, llm_p) per group column plus the Avg column."""
    cells = []
    for label in labels:
        stats = report.groups.get(label)
        cells.append((stats.mean_quality, stats.llm_p) if stats else (math.nan, math.nan))
    if labels:
        present = [report.groups[l] for l in labels if l in report.groups]
        cells.append(
            (
                math.fsum(s.mean_quality for s in present) / len(present),
                math.fsum(s.llm_p for s in present) / len(present),
            )
        )
    else:
        cells.append((report.mean_quality, report.llm_p))
    return cells


def compare_report(
    reports: Sequence[ReplayReport],
    diff_between: Optional[Tuple[str, str]] = None,
) -> str:
    """Aligned text table, one row per policy, oracle last with an italic marker.

    Columns are the group labels plus Avg, the unweighted mean across groups.
    diff_between=(a, b) appends a Diff row of per-column quality deltas a - b.
    """
    if not reports:
        raise DataError("nothing to compare")
    sizes = {r.n for r in reports}
    if len(sizes) > 1:
        raise DataError(f"reports cover different datasets: sizes {sorted(sizes)}")
    by_policy = {r.policy: r for r in reports}
    if diff_between is not None:
        for name in diff_between:
            if name not in by_policy:
                raise DataError(f"diff policy {name!r} not among the reports")

    ordered = [r for r in reports if r.policy != "oracle"] + [
        r for r in reports if r.policy == "oracle"
    ]
    labels = _column_labels(reports)
    columns = labels + ["Avg"]
    header = ["policy"]
    for column in columns:
        header += [column, "llm_p"]

    rows: List[List[str]] = []
    for report in ordered:
        name = f"*{report.policy}*" if report.policy == "oracle" else report.policy
        row = [name]
        for quality, llm_p in _cells(report, labels):
            row += [f"{quality:.2f}", f"{llm_p * 100.0:.2f}%"]
        rows.append(row)

    if diff_between is not None:
        a, b = (by_policy[name] for name in diff_between)
        row = ["Diff"]
        for (qa, _), (qb, _) in zip(_cells(a, labels), _cells(b, labels)):
            row += [f"{qa - qb:+.2f}", ""]
        rows.append(row)

    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) for i in range(len(header))]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    if any(r.policy == "oracle" for r in reports):
        lines.append(f"note: {ORACLE_FOOTNOTE}")
    return "\n".join(lines) + "\n"


def report_csv(reports: Sequence[ReplayReport]) -> str:
    """Long-format CSV: policy,group,n,mean_quality,llm_p (overall row = 'all')."""
    lines = ["policy,group,n,mean_quality,llm_p"]
    for report in reports:
        lines.append(
            f"{report.policy},all,{report.n},{report.mean_quality:.6f},{report.llm_p:.6f}"
        )
        for label, stats in sorted(report.groups.items()):
            lines.append(
                f"{report.policy},{_csv_field(label)},{stats.n},{stats.mean_quality:.6f},{stats.llm_p:.6f}"
            )
    return "\n".join(lines) + "\n"


def _csv_field(value: str) -> str:
    if any(ch in value for ch in ",\"\n"):
        return '"' + value.replace('"', '""') + '"'
    return value


def sweep_csv(points: Sequence[SweepPoint]) -> str:
    lines = ["control,llm_p,mean_quality"]
    for point in points:
        lines.append(f"{point.control},{point.llm_p:.6f},{point.mean_quality:.6f}")
    return "\n".join(lines) + "\n"

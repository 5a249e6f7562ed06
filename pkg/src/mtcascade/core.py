"""Domain types, score semantics, and JSONL dataset ingestion.

Everything downstream (calibration, routing, replay) works on the types
defined here. All types are immutable after construction and safe to share
across threads.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence


class CascadeError(Exception):
    """Base class for every error raised by this package."""


class DataError(CascadeError):
    """Invalid input data: malformed dataset lines, contract violations."""


class ConfigError(CascadeError):
    """Invalid configuration: bad specs, missing artifacts, bad templates."""


class RemoteScorerError(CascadeError):
    """Remote scorer failure: timeout, non-200, malformed response."""


class BackendError(CascadeError):
    """A translation backend call failed."""


class RoutingError(BackendError):
    """All routes for a request failed; carries the per-backend causes."""

    def __init__(self, message: str, causes: Optional[Mapping[str, str]] = None):
        super().__init__(message)
        self.causes = dict(causes or {})


class Backend(str, Enum):
    NMT = "NMT"
    LLM = "LLM"


class ScoreKind(str, Enum):
    REFERENCE_BASED = "reference_based"
    REFERENCE_FREE = "reference_free"


@dataclass(frozen=True)
class LanguagePair:
    source_lang: str
    target_lang: str

    def __post_init__(self):
        if not self.source_lang or not self.target_lang:
            raise DataError("language codes must be non-empty")
        if self.source_lang == self.target_lang:
            raise DataError(
                f"source and target language must differ, got {self.source_lang!r}"
            )

    @classmethod
    def parse(cls, text: str) -> "LanguagePair":
        """Parse a 'src-tgt' pair string such as 'zh-en'."""
        parts = text.split("-")
        if len(parts) != 2:
            raise DataError(f"cannot parse language pair {text!r}, expected 'xx-yy'")
        return cls(parts[0].strip(), parts[1].strip())

    def __str__(self) -> str:
        return f"{self.source_lang}-{self.target_lang}"


@dataclass(frozen=True)
class Segment:
    """One source sentence plus language pair and free-form annotations."""

    id: str
    text: str
    pair: LanguagePair
    annotations: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.text.strip():
            raise DataError(f"segment {self.id!r} has empty text")
        object.__setattr__(self, "annotations", dict(self.annotations))


@dataclass(frozen=True)
class QualityScore:
    """A translation quality score on a nominal 0-100 scale."""

    value: float
    kind: ScoreKind

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise DataError(f"quality score must be finite, got {self.value!r}")


@dataclass(frozen=True)
class EvalRecord:
    """A segment joined with reference, both candidate translations, and scores.

    The unit of calibration and offline replay. ``q_nmt`` and ``q_llm`` are
    reference-based scores of the two hypotheses; ``qe_nmt`` is the
    reference-free score of the NMT hypothesis.
    """

    segment: Segment
    nmt_hyp: str
    llm_hyp: str
    reference: Optional[str] = None
    q_nmt: Optional[QualityScore] = None
    q_llm: Optional[QualityScore] = None
    qe_nmt: Optional[QualityScore] = None

    def __post_init__(self):
        if self.q_nmt is not None and self.q_llm is not None:
            if self.q_nmt.kind is not self.q_llm.kind:
                raise DataError(
                    f"record {self.segment.id!r}: q_nmt and q_llm have mixed kinds"
                )
        for score in (self.q_nmt, self.q_llm):
            if (
                score is not None
                and score.kind is ScoreKind.REFERENCE_BASED
                and self.reference is None
            ):
                raise DataError(
                    f"record {self.segment.id!r}: reference-based score without reference"
                )


@dataclass(frozen=True)
class RoutingDecision:
    """Which backend served a segment, with evidence and call accounting."""

    segment_id: str
    backend: Backend
    evidence: Mapping[str, float] = field(default_factory=dict)
    backend_calls: Mapping[Backend, int] = field(default_factory=dict)
    latency_ms: float = 0.0
    fallback: bool = False

    def __post_init__(self):
        calls = {Backend.NMT: 0, Backend.LLM: 0}
        calls.update(self.backend_calls)
        object.__setattr__(self, "backend_calls", calls)
        object.__setattr__(self, "evidence", dict(self.evidence))
        for backend, count in calls.items():
            if count not in (0, 1):
                raise DataError(f"backend_calls[{backend}] must be 0 or 1, got {count}")
        if calls[self.backend] != 1:
            raise DataError(
                f"decision for {self.segment_id!r} chose {self.backend.value} "
                "without recording a call to it"
            )
        if self.latency_ms < 0:
            raise DataError("latency_ms must be nonnegative")


def mean_quality(scores: Sequence[QualityScore]) -> float:
    """Arithmetic mean of same-kind quality scores.

    Uses an exactly-rounded sum, so the result does not depend on the order
    of the inputs.
    """
    if not scores:
        raise DataError("mean_quality of an empty sequence is undefined")
    kinds = {s.kind for s in scores}
    if len(kinds) > 1:
        raise DataError(f"cannot average mixed score kinds: {sorted(k.value for k in kinds)}")
    return math.fsum(s.value for s in scores) / len(scores)


# --- JSONL serialization ----------------------------------------------------
#
# One record per line. Plain-number score fields carry an implicit kind:
# q_nmt / q_llm are reference_based, qe_nmt is reference_free.

def record_to_obj(record: EvalRecord) -> Dict[str, Any]:
    obj: Dict[str, Any] = {
        "id": record.segment.id,
        "src": record.segment.text,
        "pair": str(record.segment.pair),
    }
    if record.segment.annotations:
        obj["annotations"] = dict(record.segment.annotations)
    if record.reference is not None:
        obj["ref"] = record.reference
    obj["nmt"] = record.nmt_hyp
    obj["llm"] = record.llm_hyp
    if record.q_nmt is not None:
        obj["q_nmt"] = record.q_nmt.value
    if record.q_llm is not None:
        obj["q_llm"] = record.q_llm.value
    if record.qe_nmt is not None:
        obj["qe_nmt"] = record.qe_nmt.value
    return obj


def record_from_obj(obj: Mapping[str, Any], default_id: str) -> EvalRecord:
    if "src" not in obj:
        raise DataError("missing required key 'src'")
    if "pair" not in obj:
        raise DataError("missing required key 'pair'")
    segment = Segment(
        id=str(obj.get("id", default_id)),
        text=str(obj["src"]),
        pair=LanguagePair.parse(str(obj["pair"])),
        annotations={str(k): str(v) for k, v in (obj.get("annotations") or {}).items()},
    )

    def score(key: str, kind: ScoreKind) -> Optional[QualityScore]:
        if obj.get(key) is None:
            return None
        return QualityScore(float(obj[key]), kind)

    return EvalRecord(
        segment=segment,
        nmt_hyp=str(obj.get("nmt", "")),
        llm_hyp=str(obj.get("llm", "")),
        reference=None if obj.get("ref") is None else str(obj["ref"]),
        q_nmt=score("q_nmt", ScoreKind.REFERENCE_BASED),
        q_llm=score("q_llm", ScoreKind.REFERENCE_BASED),
        qe_nmt=score("qe_nmt", ScoreKind.REFERENCE_FREE),
    )


def load_dataset(path: os.PathLike | str, format: str = "jsonl", strict: bool = True) -> List[EvalRecord]:
    """Load EvalRecords from a JSONL file, one JSON object per line.

    In strict mode any malformed line aborts the load with an error naming
    the line number; otherwise malformed lines are skipped and reported via
    the returned records' companion warnings (logged).
    """
    if format != "jsonl":
        raise ConfigError(f"unsupported dataset format {format!r}")
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc

    records: List[EvalRecord] = []
    seen_ids: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise DataError("line is not a JSON object")
            record = record_from_obj(obj, default_id=f"L{lineno}")
        except (json.JSONDecodeError, DataError, ValueError) as exc:
            message = f"{path}: malformed line {lineno}: {exc}"
            if strict:
                raise DataError(message) from exc
            import logging

            logging.getLogger(__name__).warning("skipping %s", message)
            continue
        if record.segment.id in seen_ids:
            raise DataError(f"{path}: duplicate id {record.segment.id!r} at line {lineno}")
        seen_ids.add(record.segment.id)
        records.append(record)
    return records


def save_dataset(records: Iterable[EvalRecord], path: os.PathLike | str) -> None:
    """Write records as JSONL, atomically."""
    body = "".join(json.dumps(record_to_obj(r), ensure_ascii=False, sort_keys=True) + "\n" for r in records)
    write_atomic(path, body)


def write_atomic(path: os.PathLike | str, content: str | bytes) -> None:
    """Write a file via temp-file-plus-rename so readers never see a torn write."""
    path = Path(path)
    data = content.encode("utf-8") if isinstance(content, str) else content
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=f".{path.name}.")
    try:
        # mkstemp files are 0600; give the final artifact normal permissions
        umask = os.umask(0)
        os.umask(umask)
        os.fchmod(fd, 0o666 & ~umask)
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise

from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from mtcascade.core import (
    Backend,
    DataError,
    EvalRecord,
    LanguagePair,
    QualityScore,
    RoutingDecision,
    ScoreKind,
    Segment,
    load_dataset,
    mean_quality,
    record_from_obj,
    record_to_obj,
    save_dataset,
)


def test_language_pair_invariants():
    assert str(LanguagePair("zh", "en")) == "zh-en"
    with pytest.raises(DataError):
        LanguagePair("", "en")
    with pytest.raises(DataError):
        LanguagePair("en", "en")
    with pytest.raises(DataError):
        LanguagePair.parse("zhen")


def test_segment_rejects_blank_text():
    with pytest.raises(DataError):
        Segment(id="x", text="   ", pair=LanguagePair("zh", "en"))


def test_quality_score_must_be_finite():
    with pytest.raises(DataError):
        QualityScore(float("nan"), ScoreKind.REFERENCE_BASED)


def test_record_mixed_kinds_rejected():
    seg = Segment(id="1", text="hi", pair=LanguagePair("zh", "en"))
    with pytest.raises(DataError):
        EvalRecord(
            segment=seg,
            nmt_hyp="a",
            llm_hyp="b",
            reference="r",
            q_nmt=QualityScore(50, ScoreKind.REFERENCE_BASED),
            q_llm=QualityScore(50, ScoreKind.REFERENCE_FREE),
        )


def test_record_reference_required_for_reference_based_scores():
    seg = Segment(id="1", text="hi", pair=LanguagePair("zh", "en"))
    with pytest.raises(DataError):
        EvalRecord(
            segment=seg,
            nmt_hyp="a",
            llm_hyp="b",
            q_nmt=QualityScore(50, ScoreKind.REFERENCE_BASED),
        )


# --- load_dataset -------------------------------------------------------------

GOOD_LINE = '{"id":"1","src":"你好","pair":"zh-en","ref":"Hello","nmt":"Hello","llm":"Hi"}'


def test_load_dataset_field_mapping(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text(GOOD_LINE + "\n", encoding="utf-8")
    records = load_dataset(path)
    assert len(records) == 1
    record = records[0]
    assert record.segment.id == "1"
    assert record.segment.text == "你好"
    assert str(record.segment.pair) == "zh-en"
    assert record.reference == "Hello"
    assert record.nmt_hyp == "Hello"
    assert record.llm_hyp == "Hi"
    assert record.q_nmt is None and record.q_llm is None and record.qe_nmt is None


def test_load_dataset_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    assert load_dataset(path) == []


def test_load_dataset_strict_names_bad_line(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text(GOOD_LINE + "\n" + '{"pair":"zh-en"}' + "\n", encoding="utf-8")
    with pytest.raises(DataError, match="line 2"):
        load_dataset(path)


def test_load_dataset_lenient_skips_bad_line(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text(GOOD_LINE + "\n" + "not json at all\n", encoding="utf-8")
    records = load_dataset(path, strict=False)
    assert [r.segment.id for r in records] == ["1"]


def test_load_dataset_duplicate_ids(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text(GOOD_LINE + "\n" + GOOD_LINE + "\n", encoding="utf-8")
    with pytest.raises(DataError, match="duplicate id"):
        load_dataset(path)


def test_load_dataset_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path / "nope.jsonl")


def test_load_dataset_assigns_line_ids(tmp_path):
    path = tmp_path / "data.jsonl"
    path.write_text('{"src":"a b","pair":"zh-en"}\n', encoding="utf-8")
    assert load_dataset(path)[0].segment.id == "L1"


def test_dataset_round_trip_through_file(tmp_path):
    from synth import make_records

    records = make_records(25, seed=3, with_qe=True)
    path = tmp_path / "round.jsonl"
    save_dataset(records, path)
    assert load_dataset(path) == records


# --- mean_quality ---------------------------------------------------------------

def _scores(values, kind=ScoreKind.REFERENCE_BASED):
    return [QualityScore(v, kind) for v in values]


def test_mean_quality_singleton():
    assert mean_quality(_scores([80.21])) == 80.21


def test_mean_quality_hand_arithmetic():
    assert mean_quality(_scores([80.21, 73.22])) == pytest.approx(76.715)


def test_mean_quality_rejects_mixed_kinds():
    scores = _scores([50.0]) + _scores([60.0], ScoreKind.REFERENCE_FREE)
    with pytest.raises(DataError):
        mean_quality(scores)


def test_mean_quality_rejects_empty():
    with pytest.raises(DataError):
        mean_quality([])


@given(st.lists(st.floats(min_value=0, max_value=100, allow_nan=False), min_size=1, max_size=40),
       st.randoms())
def test_mean_quality_permutation_invariant(values, rng):
    scores = _scores(values)
    shuffled = list(scores)
    rng.shuffle(shuffled)
    assert mean_quality(scores) == mean_quality(shuffled)


# --- record JSON round trip -------------------------------------------------------

_text = st.text(min_size=1, max_size=30).filter(lambda s: s.strip())
_score_value = st.floats(min_value=0, max_value=100, allow_nan=False)


@st.composite
def eval_records(draw):
    seg = Segment(
        id=draw(st.uuids()).hex,
        text=draw(_text),
        pair=LanguagePair("zh", "en"),
        annotations=draw(
            st.dictionaries(st.sampled_from(["domain", "difficulty", "category"]), _text, max_size=3)
        ),
    )
    scored = draw(st.booleans())
    return EvalRecord(
        segment=seg,
        nmt_hyp=draw(_text),
        llm_hyp=draw(_text),
        reference=draw(_text) if scored else None,
        q_nmt=QualityScore(draw(_score_value), ScoreKind.REFERENCE_BASED) if scored else None,
        q_llm=QualityScore(draw(_score_value), ScoreKind.REFERENCE_BASED) if scored else None,
        qe_nmt=QualityScore(draw(_score_value), ScoreKind.REFERENCE_FREE)
        if draw(st.booleans())
        else None,
    )


@given(eval_records())
def test_record_json_round_trip(record):
    obj = json.loads(json.dumps(record_to_obj(record), ensure_ascii=False))
    assert record_from_obj(obj, default_id="unused") == record


# --- RoutingDecision invariants ------------------------------------------------------

def test_decision_requires_call_to_chosen_backend():
    with pytest.raises(DataError):
        RoutingDecision(segment_id="s", backend=Backend.LLM, backend_calls={Backend.NMT: 1})
    decision = RoutingDecision(segment_id="s", backend=Backend.LLM, backend_calls={Backend.LLM: 1})
    assert decision.backend_calls[Backend.LLM] == 1
    assert decision.backend_calls[Backend.NMT] == 0


def test_decision_rejects_double_calls():
    with pytest.raises(DataError):
        RoutingDecision(segment_id="s", backend=Backend.NMT, backend_calls={Backend.NMT: 2})

"""Acceptance suite: one test per shipping criterion, each printing a
[PASS]/[FAIL] line (run with -s to see them live). Tolerances and runtime
bounds are pinned here, not configurable."""

from __future__ import annotations

import contextlib
import math
import random
import time
from statistics import median

import numpy as np

from mtcascade.calibration import (
    HIGHEST_FRACTION,
    LOWEST_FRACTION,
    calibrate_pplt,
    eq1_label,
    fit_quantile_threshold,
    save_jdm_samples,
    select_jdm_samples,
)
from mtcascade.core import (
    Backend,
    EvalRecord,
    QualityScore,
    ScoreKind,
    Segment,
)
from mtcascade.decider import (
    FEATURE_NAMES,
    DeciderSpec,
    extract_features,
    logistic_loss_and_grad,
    train_linear_decider,
)
from mtcascade.evalharness import compare_report, replay, replay_decisions
from mtcascade.ngram_lm import BOS_ID, load_lm, perplexity, save_lm, train_lm
from mtcascade.router import (
    BackendSpec,
    Router,
    RouterConfig,
    SimulatedBackend,
    SimulatedBackendProfile,
)
from mtcascade.scoring import ScorerSpec, qe_heuristic
from mtcascade.decider import build_decider

from synth import PAIR, make_corpus, make_records
from test_decider import separable_training_set


@contextlib.contextmanager
def criterion(name):
    started = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    print(f"[PASS] {name} ({time.monotonic() - started:.2f}s)")


def test_quantile_calibration_fidelity():
    with criterion("quantile calibration: 249 of 1000 strictly beyond threshold, both directions, <1s"):
        started = time.monotonic()
        rng = random.Random(1)
        scores = [rng.random() for _ in range(1000)]
        assert len(set(scores)) == 1000  # distinct by construction
        low = fit_quantile_threshold(scores, 0.25, LOWEST_FRACTION)
        high = fit_quantile_threshold(scores, 0.25, HIGHEST_FRACTION)
        assert sum(1 for s in scores if s < low) == 249
        assert sum(1 for s in scores if s > high) == 249
        assert time.monotonic() - started < 1.0


def test_eq1_truth_table_exhaustive():
    with criterion("selection rule truth table: exhaustive 101x101 grid, zero mismatches"):
        t1, t2 = 73.0, 3.5
        mismatches = 0
        for q_nmt in range(101):
            for q_llm in range(101):
                expected = (q_nmt < t1) and ((q_llm - q_nmt) > t2)
                if eq1_label(float(q_nmt), float(q_llm), t1, t2) != expected:
                    mismatches += 1
        assert mismatches == 0


def test_jdm_sample_selection_at_scale(tmp_path):
    with criterion("sample selection at 10k scale: exactly 100/300, convention holds, byte-identical rerun, <5s"):
        started = time.monotonic()
        records = make_records(10_000, seed=201)
        first = select_jdm_samples(records, t1_fraction=0.10, n_pos=100, neg_ratio=3, seed=11)
        second = select_jdm_samples(records, t1_fraction=0.10, n_pos=100, neg_ratio=3, seed=11)

        assert len(first.positives) == 100
        assert len(first.negatives) == 300
        for record in first.positives:
            assert record.q_nmt.value < first.t1
            assert (record.q_llm.value - record.q_nmt.value) >= first.t2
        in_slice = [r for r in records if r.q_nmt.value < first.t1]
        kept_ids = {r.segment.id for r in first.positives}
        for record in in_slice:
            if record.segment.id not in kept_ids:
                assert (record.q_llm.value - record.q_nmt.value) <= first.t2

        dir_a, dir_b = tmp_path / "a", tmp_path / "b"
        save_jdm_samples(first, dir_a)
        save_jdm_samples(second, dir_b)
        for name in ("positives.jsonl", "negatives.jsonl", "manifest.json"):
            assert (dir_a / name).read_bytes() == (dir_b / name).read_bytes()
        assert time.monotonic() - started < 5.0


def test_language_model_correctness(tmp_path):
    with criterion("LM: uniform ppl = vocab size +-1e-9, normalization +-1e-6 on 100 contexts, bit-exact round trip"):
        words = [f"w{i}" for i in range(98)]
        corpus = [" ".join(words + ["rare_a"]), " ".join(words + ["rare_b"])]
        uniform = train_lm(corpus, order=1, smoothing="add_k", min_count=2, k=1.0)
        assert uniform.event_vocabulary_size == 100
        assert abs(perplexity(uniform, "w0 w1 w2 w3").value - 100.0) <= 1e-9

        model = train_lm(make_corpus(10_000, seed=202), order=3, smoothing="interpolated_kneser_ney")
        events = model.event_ids()
        rng = random.Random(5)
        for _ in range(100):
            context = tuple(rng.choice(events + [BOS_ID]) for _ in range(rng.randint(0, 2)))
            total = math.fsum(model.probability(w, context) for w in events)
            assert abs(total - 1.0) <= 1e-6

        path = tmp_path / "model.lm"
        save_lm(model, path)
        loaded = load_lm(path)
        for probe in make_corpus(50, seed=203):
            assert perplexity(model, probe).value == perplexity(loaded, probe).value


def test_classifier_training(small_lm):
    with criterion("classifier: >=99% accuracy on separable data, gradient check <1e-4"):
        train = separable_training_set(small_lm, n_per_class=80)
        clf = train_linear_decider(train, small_lm, epochs=100)
        correct = 0
        for record in train.positives:
            correct += clf.probability(extract_features(record.segment, small_lm)) > 0.5
        for record in train.negatives:
            correct += clf.probability(extract_features(record.segment, small_lm)) <= 0.5
        assert correct / (2 * 80) >= 0.99

        rng = np.random.default_rng(23)
        features = rng.normal(size=(50, len(FEATURE_NAMES)))
        labels = (rng.random(50) > 0.5).astype(float)
        eps = 1e-5
        worst = 0.0
        for _ in range(10):
            params = rng.normal(scale=0.7, size=len(FEATURE_NAMES) + 1)
            _, grad = logistic_loss_and_grad(params, features, labels, 1e-3)
            for index in range(len(params)):
                up, down = params.copy(), params.copy()
                up[index] += eps
                down[index] -= eps
                loss_up, _ = logistic_loss_and_grad(up, features, labels, 1e-3)
                loss_down, _ = logistic_loss_and_grad(down, features, labels, 1e-3)
                numeric = (loss_up - loss_down) / (2 * eps)
                scale = max(abs(numeric), abs(grad[index]), 1e-8)
                worst = max(worst, abs(numeric - grad[index]) / scale)
        assert worst < 1e-4


def test_oracle_dominance(artifacts):
    with criterion("oracle dominance: 20 random datasets, >= every policy and both singles, zero tolerance"):
        def spec(policy):
            return DeciderSpec(
                policy=policy,
                thresholds=artifacts["thresholds"],
                lm_path=artifacts["lm_path"],
                classifier_path=artifacts["classifier_path"],
            )

        for seed in range(20):
            records = make_records(100, seed=300 + seed, with_qe=True)
            oracle = replay(records, spec("oracle"))
            for policy in ("always_nmt", "always_llm", "qet", "pplt", "jdm"):
                report = replay(records, spec(policy))
                assert oracle.mean_quality >= report.mean_quality, (seed, policy)


def _router_for(artifacts, policy, table, qet_threshold=None):
    import dataclasses

    thresholds = artifacts["thresholds"]
    if qet_threshold is not None:
        thresholds = dataclasses.replace(thresholds, qet_threshold=qet_threshold)
    spec = DeciderSpec(
        policy=policy,
        thresholds=thresholds,
        lm_path=artifacts["lm_path"],
        classifier_path=artifacts["classifier_path"],
    )
    config = RouterConfig(
        pair=PAIR,
        decider=spec,
        nmt=BackendSpec(kind="simulated", simulated=SimulatedBackendProfile(lookup={})),
        llm=BackendSpec(kind="simulated", simulated=SimulatedBackendProfile(lookup={})),
        qe_scorer=ScorerSpec(mode=ScoreKind.REFERENCE_FREE),
    )
    nmt = SimulatedBackend(SimulatedBackendProfile(lookup=dict(table)), "NMT")
    llm = SimulatedBackend(SimulatedBackendProfile(lookup=dict(table)), "LLM")
    return Router(config, build_decider(spec), nmt, llm), nmt, llm


def test_call_count_contract(artifacts):
    with criterion("call counts: 500 requests, one backend call each for pplt/jdm; qet = 500 NMT + exact LLM count"):
        corpus = make_corpus(500, seed=204)
        segments = [Segment(id=f"s{i}", text=t, pair=PAIR) for i, t in enumerate(corpus)]
        table = {f"s{i}": f"hypothesis {i}" for i in range(500)}

        for policy in ("pplt", "jdm"):
            router, nmt, llm = _router_for(artifacts, policy, table)
            for segment in segments:
                _, decision = router.route_segment(segment)
                assert sum(decision.backend_calls.values()) == 1  # zero double-calls
            assert nmt.invocations + llm.invocations == 500

        qe_scores = {
            s.id: qe_heuristic(s.text, table[s.id], PAIR.source_lang, PAIR.target_lang)
            for s in segments
        }
        threshold = median(qe_scores.values())
        expected_llm = sum(1 for v in qe_scores.values() if v < threshold)
        router, nmt, llm = _router_for(artifacts, "qet", table, qet_threshold=threshold)
        for segment in segments:
            router.route_segment(segment)
        assert nmt.invocations == 500
        assert llm.invocations == expected_llm


def test_online_offline_equivalence(artifacts):
    with criterion("online/offline equivalence: 200-segment trace, identical decisions per segment"):
        corpus = make_corpus(200, seed=205)
        segments = [Segment(id=f"t{i}", text=t, pair=PAIR) for i, t in enumerate(corpus)]
        nmt_table = {f"t{i}": f"cheap {i}" for i in range(200)}
        llm_table = {f"t{i}": f"expensive {i}" for i in range(200)}
        records = [
            EvalRecord(
                segment=s,
                nmt_hyp=nmt_table[s.id],
                llm_hyp=llm_table[s.id],
                reference=f"ref {i}",
                q_nmt=QualityScore(50.0, ScoreKind.REFERENCE_BASED),
                q_llm=QualityScore(51.0, ScoreKind.REFERENCE_BASED),
            )
            for i, s in enumerate(segments)
        ]
        qe_scorer = ScorerSpec(mode=ScoreKind.REFERENCE_FREE)
        qet_threshold = median(
            qe_heuristic(s.text, nmt_table[s.id], PAIR.source_lang, PAIR.target_lang)
            for s in segments
        )

        for policy in ("pplt", "jdm", "qet"):
            import dataclasses

            router, nmt, llm = _router_for(
                artifacts,
                policy,
                {**nmt_table},
                qet_threshold=qet_threshold,
            )
            router.llm_backend = SimulatedBackend(SimulatedBackendProfile(lookup=llm_table), "LLM")
            online = {}
            for segment in segments:
                _, decision = router.route_segment(segment)
                online[segment.id] = decision.backend

            spec = dataclasses.replace(router.config.decider)
            offline = {
                d.segment_id: d.backend
                for d in replay_decisions(records, spec, qe_scorer=qe_scorer)
            }
            assert online == offline, policy


def test_budget_control():
    with criterion("budget control: pplt calibrated at 0.25 replayed on fresh corpus, llm_p in [0.22, 0.28], <30s"):
        started = time.monotonic()
        train_corpus = make_corpus(10_000, seed=206)
        model = train_lm(train_corpus, order=3)
        calibration_corpus = make_corpus(10_000, seed=207)
        threshold = calibrate_pplt(model, calibration_corpus, 0.25)

        fresh = make_corpus(10_000, seed=208)
        above = sum(1 for s in fresh if perplexity(model, s).value > threshold)
        llm_p = above / len(fresh)
        assert 0.22 <= llm_p <= 0.28, llm_p
        assert time.monotonic() - started < 30.0


def test_budget_control_through_replay(tmp_path, artifacts):
    with criterion("budget control holds end-to-end through the replay harness"):
        import dataclasses

        model_path = tmp_path / "budget_lm.json"
        train_corpus = make_corpus(10_000, seed=206)
        model = train_lm(train_corpus, order=3)
        save_lm(model, model_path)
        threshold = calibrate_pplt(model, make_corpus(10_000, seed=207), 0.25)

        rng = random.Random(9)
        fresh = make_corpus(10_000, seed=208)
        records = [
            EvalRecord(
                segment=Segment(id=f"b{i}", text=text, pair=PAIR),
                nmt_hyp="n",
                llm_hyp="l",
                reference="r",
                q_nmt=QualityScore(rng.uniform(40, 90), ScoreKind.REFERENCE_BASED),
                q_llm=QualityScore(rng.uniform(40, 90), ScoreKind.REFERENCE_BASED),
            )
            for i, text in enumerate(fresh)
        ]
        spec = DeciderSpec(
            policy="pplt",
            thresholds=dataclasses.replace(artifacts["thresholds"], pplt_threshold=threshold),
            lm_path=str(model_path),
        )
        report = replay(records, spec)
        assert 0.22 <= report.llm_p <= 0.28, report.llm_p


def test_grouped_report_layout(artifacts):
    with criterion("grouped difficulty report: per-group means plus Diff row match the golden layout"):
        from pathlib import Path

        records = make_records(
            400,
            seed=83,
            annotations_for={"difficulty": ["simple", "hard"]},
            annotation_weights={"difficulty": [0.95, 0.05]},
        )
        reports = [
            replay(records, DeciderSpec(policy=policy), group_by="difficulty")
            for policy in ("always_nmt", "always_llm")
        ]
        table = compare_report(reports, diff_between=("always_llm", "always_nmt"))
        golden = (Path(__file__).parent / "data" / "table_layout_golden.txt").read_text(encoding="utf-8")
        assert table == golden
        labels = {label for r in reports for label in r.groups}
        assert labels == {"simple", "hard"}

from __future__ import annotations

import pytest

from mtcascade.calibration import (
    PolicyThresholds,
    calibrate_pplt,
    save_thresholds,
    select_jdm_samples,
)
from mtcascade.core import LanguagePair
from mtcascade.decider import save_classifier, train_linear_decider
from mtcascade.ngram_lm import save_lm, train_lm

from synth import make_corpus, make_records


@pytest.fixture(scope="session")
def small_lm():
    return train_lm(make_corpus(600, seed=11), order=3, min_count=2)


@pytest.fixture(scope="session")
def artifacts(tmp_path_factory, small_lm):
    """Saved LM, classifier, and thresholds shared by decider/router tests."""
    root = tmp_path_factory.mktemp("artifacts")
    lm_path = root / "lm.json"
    save_lm(small_lm, lm_path)

    records = make_records(800, seed=5, with_qe=True)
    selection = select_jdm_samples(records, t1_fraction=0.10, n_pos=40, neg_ratio=3, seed=7)
    clf = train_linear_decider(selection, small_lm, epochs=200)
    clf_path = root / "clf.json"
    save_classifier(clf, clf_path)

    calibration_corpus = make_corpus(1000, seed=12)
    pplt_threshold = calibrate_pplt(small_lm, calibration_corpus, 0.25)
    thresholds = PolicyThresholds(
        pair=LanguagePair("zh", "en"),
        qet_threshold=50.0,
        pplt_threshold=pplt_threshold,
        jdm_t1=selection.t1,
        jdm_t2=selection.t2,
        target_llm_fraction=0.25,
        provenance={"dataset": "synthetic", "n": len(calibration_corpus)},
    )
    thresholds_path = root / "thresholds.json"
    save_thresholds(thresholds, thresholds_path)

    return {
        "lm": small_lm,
        "lm_path": str(lm_path),
        "classifier": clf,
        "classifier_path": str(clf_path),
        "thresholds": thresholds,
        "thresholds_path": str(thresholds_path),
        "records": records,
    }

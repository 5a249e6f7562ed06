from __future__ import annotations

import json
import math
import random
from collections import Counter
from pathlib import Path

import pytest

from mtcascade.core import ConfigError, DataError
from mtcascade.ngram_lm import (
    BOS_ID,
    UNK_ID,
    load_lm,
    perplexity,
    save_lm,
    train_lm,
)

from synth import make_corpus

DATA = Path(__file__).parent / "data"


# --- independent counting oracle for add-k chain products ------------------------

def oracle_add_k_ppl(corpus, sentence, order, k, min_count):
    """Recount everything from scratch and evaluate the chain product."""
    freq = Counter(t for line in corpus for t in line.split())
    kept = {t for t, c in freq.items() if c >= min_count}
    vocab_events = len(kept) + 2  # UNK + EOS

    def to_sym(token):
        return token if token in kept else "<UNK>"

    counts = Counter()
    context_totals = Counter()
    for line in corpus:
        seq = ["<BOS>"] * (order - 1) + [to_sym(t) for t in line.split()] + ["<EOS>"]
        for t in range(order - 1, len(seq)):
            gram = tuple(seq[t - order + 1 : t + 1])
            counts[gram] += 1
            context_totals[gram[:-1]] += 1

    seq = ["<BOS>"] * (order - 1) + [to_sym(t) for t in sentence.split()] + ["<EOS>"]
    log_sum = 0.0
    for t in range(order - 1, len(seq)):
        gram = tuple(seq[t - order + 1 : t + 1])
        p = (counts[gram] + k) / (context_totals[gram[:-1]] + k * vocab_events)
        log_sum += math.log(p)
    n_tokens = len(seq) - (order - 1)
    return math.exp(-log_sum / n_tokens)


# --- training ---------------------------------------------------------------------

def test_add_one_unigram_hand_computed():
    model = train_lm(["a b", "a b"], order=1, smoothing="add_k", min_count=2, k=1.0)
    p_a = model.probability(model.token_id("a"), ())
    p_b = model.probability(model.token_id("b"), ())
    p_unseen = model.probability(UNK_ID, ())
    # counts: a=2, b=2, EOS=2; V = {a, b, UNK, EOS}; (2+1)/(6+4) vs (0+1)/(6+4)
    assert p_a == pytest.approx(0.3, abs=1e-12)
    assert p_b == pytest.approx(0.3, abs=1e-12)
    assert p_unseen == pytest.approx(0.1, abs=1e-12)
    assert p_a > p_unseen


def test_single_sentence_vocabulary():
    model = train_lm(["a b c"], order=1, min_count=1)
    assert model.tokens == ["a", "b", "c"]
    assert model.event_vocabulary_size == 5  # a b c + UNK + EOS


def test_order_out_of_range():
    with pytest.raises(ConfigError):
        train_lm(["a b"], order=0)
    with pytest.raises(ConfigError):
        train_lm(["a b"], order=6)


def test_empty_corpus():
    with pytest.raises(DataError):
        train_lm(["   ", ""], order=2)


def test_kneser_ney_normalization_on_random_contexts():
    corpus = make_corpus(1500, seed=42, vocab_size=120)
    model = train_lm(corpus, order=3, smoothing="interpolated_kneser_ney", min_count=2)
    events = model.event_ids()
    rng = random.Random(7)
    for _ in range(100):
        length = rng.randint(0, 2)
        context = tuple(rng.choice(events + [BOS_ID]) for _ in range(length))
        total = math.fsum(model.probability(w, context) for w in events)
        assert total == pytest.approx(1.0, abs=1e-6), context


def test_all_probabilities_positive():
    model = train_lm(make_corpus(200, seed=9, vocab_size=50), order=2)
    for w in model.event_ids():
        assert model.probability(w, (UNK_ID,)) > 0.0
        assert model.probability(w, (BOS_ID,)) > 0.0


def test_add_k_moves_toward_uniform():
    corpus = ["a a a b", "a b c", "a c a"]
    contexts = [(), ("a",), ("b",)]
    for raw_context in contexts:
        previous_gap = None
        for k in (0.1, 1.0, 10.0):
            model = train_lm(corpus, order=2, smoothing="add_k", min_count=1, k=k)
            uniform = 1.0 / model.event_vocabulary_size
            context = tuple(model.token_id(t) for t in raw_context)
            gap = max(
                abs(model.probability(w, context) - uniform) for w in model.event_ids()
            )
            if previous_gap is not None:
                assert gap < previous_gap
            previous_gap = gap


def test_training_is_deterministic(tmp_path):
    corpus = make_corpus(300, seed=1)
    a, b = tmp_path / "a.lm", tmp_path / "b.lm"
    save_lm(train_lm(corpus, order=3), a)
    save_lm(train_lm(corpus, order=3), b)
    assert a.read_bytes() == b.read_bytes()


def test_perplexity_invariant_under_vocabulary_renumbering():
    # same sentence multiset, different first-occurrence order => different ids
    corpus = make_corpus(300, seed=2)
    forward = train_lm(corpus, order=3)
    backward = train_lm(list(reversed(corpus)), order=3)
    assert forward.token_to_id != backward.token_to_id
    for probe in corpus[:20]:
        assert perplexity(forward, probe).value == pytest.approx(
            perplexity(backward, probe).value, rel=1e-12
        )


# --- perplexity -----------------------------------------------------------------

def test_uniform_model_perplexity_equals_vocabulary_size():
    words = [f"w{i}" for i in range(98)]
    corpus = [" ".join(words + ["rare_a"]), " ".join(words + ["rare_b"])]
    model = train_lm(corpus, order=1, smoothing="add_k", min_count=2, k=1.0)
    assert model.event_vocabulary_size == 100
    for probe in ("w0 w1 w2", "w97", "w5 w5 w5 w5"):
        assert perplexity(model, probe).value == pytest.approx(100.0, abs=1e-9)


def test_training_sentence_beats_permutation_under_mle_dominant_bigram():
    corpus = ["a b c d"]
    model = train_lm(corpus, order=2, smoothing="add_k", min_count=1, k=1e-6)
    trained = perplexity(model, "a b c d").value
    permuted = perplexity(model, "b a d c").value
    assert trained < permuted
    # cross-check both chain products against the independent recount
    assert trained == pytest.approx(oracle_add_k_ppl(corpus, "a b c d", 2, 1e-6, 1), rel=1e-9)
    assert permuted == pytest.approx(oracle_add_k_ppl(corpus, "b a d c", 2, 1e-6, 1), rel=1e-9)


def test_unk_sentence_no_easier_than_frequent_sentence():
    corpus = make_corpus(400, seed=5, vocab_size=60)
    model = train_lm(corpus, order=2)
    frequent = perplexity(model, corpus[0]).value
    unknown = perplexity(model, "xxxx yyyy zzzz qqqq").value
    assert unknown >= frequent


def test_eos_counts_in_token_count():
    model = train_lm(["a b c"], order=2, min_count=1)
    assert perplexity(model, "a b").token_count == 3


def test_empty_sentence_rejected():
    model = train_lm(["a b"], order=1, min_count=1)
    with pytest.raises(DataError):
        perplexity(model, "   ")


def test_add_k_chain_matches_oracle_on_random_sentences():
    corpus = make_corpus(120, seed=3, vocab_size=40)
    model = train_lm(corpus, order=3, smoothing="add_k", min_count=2, k=0.5)
    rng = random.Random(0)
    for _ in range(10):
        probe = corpus[rng.randrange(len(corpus))]
        assert perplexity(model, probe).value == pytest.approx(
            oracle_add_k_ppl(corpus, probe, 3, 0.5, 2), rel=1e-9
        )


def test_character_tokenizer():
    model = train_lm(["你好 世界", "你好"], order=1, tokenizer_spec="character", min_count=1)
    assert "你" in model.tokens
    score = perplexity(model, "你好")
    assert score.token_count == 3  # two characters + EOS


# --- persistence -----------------------------------------------------------------

def test_save_load_round_trip_bit_exact(tmp_path):
    model = train_lm(make_corpus(150, seed=8), order=3)
    path = tmp_path / "model.lm"
    save_lm(model, path)
    loaded = load_lm(path)
    assert perplexity(model, "a b").value == perplexity(loaded, "a b").value
    for probe in make_corpus(20, seed=9):
        assert perplexity(model, probe).value == perplexity(loaded, probe).value


def test_load_wrong_magic(tmp_path):
    path = tmp_path / "bogus.lm"
    path.write_text(json.dumps({"format": "something-else", "version": 1}), encoding="utf-8")
    with pytest.raises(ConfigError, match="magic"):
        load_lm(path)


def test_load_wrong_version(tmp_path):
    model = train_lm(["a b"], order=1, min_count=1)
    path = tmp_path / "model.lm"
    save_lm(model, path)
    doc = json.loads(path.read_text())
    doc["version"] = 999
    path.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(ConfigError, match="version"):
        load_lm(path)


def test_load_truncated_file(tmp_path):
    model = train_lm(["a b"], order=1, min_count=1)
    path = tmp_path / "model.lm"
    save_lm(model, path)
    path.write_bytes(path.read_bytes()[: path.stat().st_size // 2])
    with pytest.raises(ConfigError):
        load_lm(path)


def test_golden_model_perplexities():
    """A model trained elsewhere must reproduce its recorded perplexities."""
    model = load_lm(DATA / "golden_lm.json")
    expected = json.loads((DATA / "golden_lm_ppl.json").read_text(encoding="utf-8"))
    assert len(expected) == 50
    for sentence, value in expected.items():
        assert perplexity(model, sentence).value == pytest.approx(value, rel=1e-12)

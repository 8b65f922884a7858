import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from acmimlln import data as D
from acmimlln.data import KeyInstanceAnnotation
from acmimlln.errors import ContractError
from acmimlln.evaluation import (EvalReport, Prediction, acsa_accuracy, aggregate_runs, evaluate,
                                 extract_key_instances, key_instance_scores, kid_f1, kisc_accuracy,
                                 predict_examples, read_predictions, report_from_predictions,
                                 write_predictions)
from acmimlln.model import ACMIMLLN, ModelConfig
from acmimlln.synthetic import lexicon_corpus

labels3 = st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=40)
position_sets = st.frozensets(st.integers(0, 9), max_size=5)


# ---------------------------------------------------------------- accuracy

def test_accuracy_counting():
    assert acsa_accuracy([0, 1, 2], [0, 1, 2]) == 1.0
    assert acsa_accuracy([0, 0, 0, 0], [0, 1, 2, 1]) == 0.25
    with pytest.raises(ContractError):
        acsa_accuracy([], [])
    with pytest.raises(ContractError):
        acsa_accuracy([0], [0, 1])


@given(labels3, st.randoms(use_true_random=False))
def test_accuracy_matches_confusion_trace_and_is_order_free(pairs, random):
    pred, gold = zip(*pairs)
    confusion = np.zeros((3, 3), dtype=int)
    for p, g in pairs:
        confusion[g, p] += 1
    assert acsa_accuracy(list(pred), list(gold)) == np.trace(confusion) / confusion.sum()
    shuffled = list(pairs)
    random.shuffle(shuffled)
    p2, g2 = zip(*shuffled)
    assert acsa_accuracy(list(p2), list(g2)) == acsa_accuracy(list(pred), list(gold))


# ---------------------------------------------------------------- key instances

def test_extract_key_instances():
    assert extract_key_instances([0.05] * 20) == frozenset()
    assert extract_key_instances([0, 0, 1.0, 0]) == {2}
    assert extract_key_instances([0.1, 0.9, 0.0]) == {0, 1}


@given(st.lists(st.floats(0, 1), min_size=1, max_size=10), st.floats(0, 1), st.floats(0, 1))
def test_threshold_monotonicity(alpha, t1, t2):
    lo, hi = sorted((t1, t2))
    assert extract_key_instances(alpha, hi) <= extract_key_instances(alpha, lo)


def test_kid_f1_examples():
    assert kid_f1([({0, 1}, {1, 2})]) == 0.5
    assert kid_f1([({3}, {3})]) == 1.0
    assert kid_f1([(set(), set()), ({1}, {1})]) == 1.0
    assert kid_f1([(set(), {1})]) == 0.0
    with pytest.raises(ContractError):
        kid_f1([], average="weighted")


@given(st.lists(st.tuples(position_sets, position_sets), min_size=1, max_size=10))
def test_kid_f1_micro_matches_flat_counts(pairs):
    tp = fp = fn = 0
    for pred, gold in pairs:
        tp += len(pred & gold)
        fp += len(pred - gold)
        fn += len(gold - pred)
    expected = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
    assert kid_f1(pairs) == pytest.approx(expected, abs=1e-12)
    macro = kid_f1(pairs, average="macro")
    assert 0.0 <= macro <= 1.0


@given(st.lists(st.tuples(position_sets, position_sets.filter(bool)), min_size=1, max_size=10))
def test_kid_f1_is_one_iff_all_sets_match(pairs):
    assert (kid_f1(pairs) == 1.0) == all(p == g for p, g in pairs)


def test_kisc_examples():
    logits = np.array([[0.1, 0.2, 3.0], [2.0, 0.0, 0.0]])
    assert kisc_accuracy([(logits, [(0, 2)])]) == 1.0
    assert kisc_accuracy([(logits, [(0, 2), (1, 1)])]) == 0.5
    with pytest.raises(ContractError):
        kisc_accuracy([(logits, [])])


@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_kisc_matches_flat_counts(seed, k):
    rng = np.random.default_rng(seed)
    items, correct, total = [], 0, 0
    for _ in range(k):
        logits = rng.normal(size=(6, 3))
        gold = [(int(p), int(rng.integers(3))) for p in rng.choice(6, size=int(rng.integers(1, 4)), replace=False)]
        for pos, pol in gold:
            correct += int(np.argmax(logits[pos]) == pol)
            total += 1
        items.append((logits, gold))
    assert kisc_accuracy(items) == correct / total


def _pred(sid, cat, alpha, logits, gold=0, predicted=0):
    return Prediction(sid, cat, gold, predicted, [1 / 3] * 3, list(alpha), None,
                      None if logits is None else np.asarray(logits).tolist())


def test_key_instance_scores_ignore_attention_for_kisc(rng):
    logits = rng.normal(size=(4, 3))
    ann = [KeyInstanceAnnotation("s", "food", ((1, "Pos"), (3, "Neg")))]
    a = key_instance_scores([_pred("s", "food", [0.7, 0.3, 0, 0], logits)], ann)
    b = key_instance_scores([_pred("s", "food", [0, 0, 0, 1.0], logits)], ann)
    assert a[1] == b[1]
    assert a[0] == pytest.approx(0.5) and b[0] == pytest.approx(2 / 3)


def test_key_instance_scores_without_word_logits():
    ann = [KeyInstanceAnnotation("s", "food", ((0, "Pos"),))]
    kid, kisc = key_instance_scores([_pred("s", "food", [1.0, 0.0], None)], ann)
    assert kid == 1.0 and kisc is None


# ---------------------------------------------------------------- aggregation

def _report(acc, **kw):
    return EvalReport(acc, {"food": acc}, **kw)


def test_aggregate_examples():
    same = aggregate_runs([_report(0.7), _report(0.7)])
    assert same.std["acsa_accuracy"] == 0.0 and same.n_runs == 2
    two = aggregate_runs([_report(0.8), _report(0.9)])
    assert two.acsa_accuracy == pytest.approx(0.85)
    single = aggregate_runs([_report(0.6, kid_f1=0.5)])
    assert all(v == 0.0 for v in single.std.values()) and single.kid_f1 == 0.5


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8))
def test_aggregate_std_two_pass(values):
    agg = aggregate_runs([_report(v) for v in values])
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    assert agg.acsa_accuracy == pytest.approx(mean, abs=1e-12)
    assert agg.std["acsa_accuracy"] == pytest.approx(math.sqrt(var), abs=1e-9)


def test_report_rendering():
    rep = aggregate_runs([_report(0.5, kid_f1=0.25, kisc_accuracy=1.0), _report(1.0, kid_f1=0.75, kisc_accuracy=1.0)])
    records = rep.to_records()
    assert {r["metric"] for r in records} == {"acsa_accuracy", "per_category.food", "kid_f1", "kisc_accuracy"}
    assert all(0 <= r["mean"] <= 1 and r["n_runs"] == 2 for r in records)
    table = rep.format_table()
    assert "acsa_accuracy" in table and "75.000" in table and "25.000" in table
    assert "kid_f1" not in _report(0.5).format_table()


# ---------------------------------------------------------------- predictions

@pytest.fixture(scope="module")
def setup():
    corpus = lexicon_corpus(10, seed=1)
    vocab = D.build_vocabulary(corpus)
    cats = D.category_inventory(corpus)
    model = ACMIMLLN(ModelConfig(len(cats), len(vocab), dim=6, num_layers=1), np.random.default_rng(2))
    return corpus, vocab, cats, model


def test_predictions_agree_with_single_sentence_forward(setup):
    corpus, vocab, cats, model = setup
    preds = predict_examples(model, corpus, vocab, cats, batch_size=3)
    assert len(preds) == sum(len(ex.labels) for ex in corpus)
    by_key = {(p.sentence_id, p.category): p for p in preds}
    for ex in corpus:
        ids = [cats.index(c) for c in ex.categories]
        out = model.predict(vocab.encode(ex.tokens), ids)
        for k, c in enumerate(ex.categories):
            p = by_key[(ex.sentence_id, c)]
            np.testing.assert_allclose(p.distribution, out.category_sentiment[k], rtol=1e-12)
            np.testing.assert_allclose(p.attention, out.attention[cats.index(c)], rtol=1e-12)
            assert p.word_argmax == list(out.word_sentiment_logits.argmax(-1))


def test_prediction_dump_round_trip(setup, tmp_path):
    corpus, vocab, cats, model = setup
    report, preds = evaluate(model, corpus, vocab, cats)
    path = tmp_path / "preds.jsonl"
    write_predictions(path, preds)
    again = read_predictions(path)
    assert again == preds
    assert report_from_predictions(again) == report
    assert report.kid_f1 is None and report.kisc_accuracy is None

"""Acceptance criteria, one test each; every test prints a single verdict line.

Run with ``pytest tests/test_acceptance.py -v``. The data-dependent criteria
(5-7) read corpus locations from environment variables and are skipped,
with a message naming the variables, when they are unset.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from acmimlln import autodiff as ad
from acmimlln import data as D
from acmimlln.autodiff import Tensor
from acmimlln.evaluation import evaluate
from acmimlln.model import ACMIMLLN, ModelConfig, VARIANTS, aggregate_instances
from acmimlln.synthetic import gradcheck_problem, key_instance_corpus, lexicon_corpus
from acmimlln.training import TrainConfig, train


@pytest.fixture
def verdict(capsys):
    def emit(number, passed, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if passed else 'FAIL'}: {detail}")
    return emit


def skip_line(capsys, number, reason):
    with capsys.disabled():
        print(f"\n[criterion {number}] SKIP: {reason}")
    pytest.skip(reason)


# ---------------------------------------------------------------- 1. gradients

@pytest.fixture(scope="module")
def gradcheck_report():
    with ad.default_dtype(np.float64):
        # 4 tokens, d=8, L=2, N=3, parameters uniform(-1, 1)
        model, loss = gradcheck_problem()
        start = time.perf_counter()
        report = ad.grad_check(loss, model.params, eps=1e-5)
        elapsed = time.perf_counter() - start
    return model, report, elapsed


def test_criterion_1_gradient_check(gradcheck_report, verdict):
    model, report, elapsed = gradcheck_report
    assert set(report.errors) == {n for n, _ in model.params.trainable()}
    worst = max(report.errors, key=report.errors.get)
    idx = report.worst_index[worst]
    ok = report.max_error < 1e-4 and elapsed < 60
    verdict(1, ok, f"max relative error {report.max_error:.3e} (tol 1e-4) at {worst}{list(idx)} "
                   f"analytic {report.analytic[worst][idx]:.6e} numeric {report.numeric[worst][idx]:.6e}; "
                   f"{sum(a.size for a in report.analytic.values())} values in {elapsed:.1f}s")
    assert elapsed < 60
    assert report.max_error < 1e-4, f"{worst}: {report.max_error:.3e}"


def test_gradient_check_noise_aware_companion(gradcheck_report):
    # central differences at eps=1e-5 carry ~|f| * 2^-52 / eps ~ 1e-10 absolute
    # noise, so a relative bound is met only above that floor
    _, report, _ = gradcheck_report
    assert report.within(1e-4, 1e-9)


# ---------------------------------------------------------------- 2. aggregation oracle

def brute_force(alpha, logits):
    agg = [sum(alpha[i] * logits[i][c] for i in range(len(alpha))) for c in range(3)]
    top = max(agg)
    e = [math.exp(a - top) for a in agg]
    return [v / sum(e) for v in e]


def test_criterion_2_aggregation_oracle(verdict):
    rng = np.random.default_rng(2020)
    worst = 0.0
    with ad.default_dtype(np.float64):
        for _ in range(1000):
            n, N = int(rng.integers(1, 9)), int(rng.integers(1, 6))
            scores = rng.normal(scale=3.0, size=(1, N, n))
            A = np.exp(scores - scores.max(-1, keepdims=True))
            A /= A.sum(-1, keepdims=True)
            P = rng.normal(scale=3.0, size=(1, n, 3))
            out = aggregate_instances(Tensor(A), Tensor(P)).data
            for j in range(N):
                worst = max(worst, float(np.max(np.abs(out[0, j] - brute_force(A[0, j].tolist(), P[0].tolist())))))

        # exact gate: perturbing every other word leaves the prediction bit-identical;
        # the one-word sentence agrees to rounding (matmul blocking depends on shape)
        selection_ok, singleton_gap = True, 0.0
        for i, variant in enumerate(VARIANTS):
            model = ACMIMLLN(ModelConfig(3, 12, dim=6, num_layers=1, variant=variant), np.random.default_rng(i))
            for name, t in model.params.items():
                t.data = rng.uniform(-1, 1, size=t.shape)
            for _ in range(25):
                n = int(rng.integers(1, 9))
                k = int(rng.integers(n))
                A = np.zeros((1, 3, n))
                A[0, :, k] = 1.0
                H = rng.normal(size=(1, n, 6))
                _, base = model.sentiment_head(Tensor(A), Tensor(H))
                H2 = rng.normal(size=H.shape)
                H2[0, k] = H[0, k]
                _, other = model.sentiment_head(Tensor(A), Tensor(H2))
                _, alone = model.sentiment_head(Tensor(np.ones((1, 3, 1))), Tensor(H[:, k:k + 1]))
                selection_ok &= bool(np.array_equal(base.data, other.data))
                singleton_gap = max(singleton_gap, float(np.max(np.abs(base.data - alone.data))))
    ok = worst < 1e-9 and selection_ok and singleton_gap < 1e-15
    verdict(2, ok, f"1000 fuzzed inputs, max deviation {worst:.2e} (tol 1e-9); "
                   f"one-hot selection exact under perturbation in {', '.join(VARIANTS)}: {selection_ok}; "
                   f"one-word sentence gap {singleton_gap:.1e}")
    assert ok


# ---------------------------------------------------------------- 3. overfit

def test_criterion_3_lexicon_overfit(verdict):
    corpus = lexicon_corpus(20, seed=0)
    vocab = D.build_vocabulary(corpus)
    cats = D.category_inventory(corpus)
    first_perfect = []
    with ad.default_dtype(np.float32):
        model = ACMIMLLN(ModelConfig(len(cats), len(vocab), dim=32, num_layers=2), np.random.default_rng(1))
        cfg = TrainConfig(lr=0.001, batch_size=8, max_epochs=200, patience=200, schedule="multi-joint", seed=1)

        def watch(record):
            if record["accuracy"] == 1.0 and not first_perfect:
                first_perfect.append(record["epoch"])

        start = time.perf_counter()
        # the dev split is the training set itself, scored in eval mode
        train(model, corpus, corpus, vocab, cats, cfg, np.random.default_rng(1), on_epoch=watch)
        elapsed = time.perf_counter() - start
    ok = bool(first_perfect) and elapsed < 120
    verdict(3, ok, f"100% train accuracy first at epoch {first_perfect[0] if first_perfect else 'never'} "
                   f"of 200; {elapsed:.1f}s (limit 120s)")
    assert ok


# ---------------------------------------------------------------- 4. key-instance recovery

def test_criterion_4_key_instance_recovery(verdict):
    corpus = key_instance_corpus(n_train=2000, n_dev=200, n_test=200, seed=0)
    vocab = D.build_vocabulary(corpus.train)
    with ad.default_dtype(np.float32):
        model = ACMIMLLN(ModelConfig(len(corpus.categories), len(vocab), dim=32, num_layers=2),
                         np.random.default_rng(1))
        cfg = TrainConfig(batch_size=32, max_epochs=30, patience=5, schedule="multi-joint", seed=1)
        start = time.perf_counter()
        result = train(model, corpus.train, corpus.dev, vocab, corpus.categories, cfg, np.random.default_rng(1))
        report, _ = evaluate(model, corpus.test, vocab, corpus.categories, corpus.test_annotations, threshold=0.1)
        elapsed = time.perf_counter() - start
    ok = report.acsa_accuracy >= 0.95 and report.kid_f1 >= 0.9 and elapsed < 600
    verdict(4, ok, f"test accuracy {report.acsa_accuracy:.3f} (>= 0.95), KID F1 {report.kid_f1:.3f} (>= 0.9), "
                   f"KISC {report.kisc_accuracy:.3f}; best epoch {result.best_epoch}; {elapsed:.1f}s (limit 600s)")
    assert ok


# ---------------------------------------------------------------- 5-7. real corpora

def _env_paths(*names):
    values = [os.environ.get(n) for n in names]
    if not all(values) or not all(Path(v).is_file() for v in values):
        return None
    return values


REST14 = ("ACMIMLLN_REST14_TRAIN", "ACMIMLLN_REST14_TEST", "ACMIMLLN_REST14_DEV_IDS")
MAMS = ("ACMIMLLN_MAMS_TRAIN", "ACMIMLLN_MAMS_DEV", "ACMIMLLN_MAMS_TEST")
VECTORS = ("ACMIMLLN_VECTORS",)


def test_criterion_5_dataset_statistics(capsys, verdict):
    paths = _env_paths(*REST14)
    if paths is None:
        skip_line(capsys, 5, f"set {', '.join(REST14)} to the Rest14 train/test XML and dev id list")
    train_xml, test_xml, dev_ids = paths
    train_all = D.filter_conflicts(D.read_corpus(train_xml))
    tr, dev = D.split_by_ids(train_all, D.read_id_list(dev_ids))
    test = D.filter_conflicts(D.read_corpus(test_xml))
    hard = D.make_hard_test_set(test)
    got = {name: D.polarity_counts(split) for name, split in
           (("train", tr), ("dev", dev), ("test", test), ("hard", hard))}
    want = {"train": {"Pos": 1855, "Neg": 733, "Neu": 430}, "dev": {"Pos": 324, "Neg": 106, "Neu": 70},
            "test": {"Pos": 657, "Neg": 222, "Neu": 94}, "hard": {"Pos": 21, "Neg": 20, "Neu": 12}}
    verdict(5, got == want, f"counts {got}")
    assert got == want


def _train_and_eval(train_ex, dev_ex, test_sets, vectors, variant, batch_size, seeds=(1, 2, 3, 4, 5)):
    vocab = D.build_vocabulary(train_ex)
    cats = D.category_inventory([*train_ex, *dev_ex])
    means = {}
    accs = {name: [] for name in test_sets}
    for seed in seeds:
        rng = np.random.default_rng(seed)
        pretrained, _ = D.load_pretrained_vectors(vectors, vocab, 300, np.random.default_rng(seed))
        model = ACMIMLLN(ModelConfig(len(cats), len(vocab), variant=variant), rng, pretrained)
        train(model, train_ex, dev_ex, vocab, cats, TrainConfig(batch_size=batch_size, seed=seed), rng)
        for name, examples in test_sets.items():
            accs[name].append(evaluate(model, examples, vocab, cats)[0].acsa_accuracy)
    for name, values in accs.items():
        means[name] = 100 * float(np.mean(values))
    return means


def test_criterion_6_paper_numbers(capsys, verdict):
    rest, mams, vec = _env_paths(*REST14), _env_paths(*MAMS), _env_paths(*VECTORS)
    if rest is None or mams is None or vec is None:
        skip_line(capsys, 6, f"needs {', '.join(REST14 + MAMS + VECTORS)}; expected runtime is hours on CPU")
    with ad.default_dtype(np.float32):
        train_all = D.filter_conflicts(D.read_corpus(rest[0]))
        tr, dev = D.split_by_ids(train_all, D.read_id_list(rest[2]))
        test = D.filter_conflicts(D.read_corpus(rest[1]))
        rest_means = _train_and_eval(tr, dev, {"Rest14": test, "Rest14-hard": D.make_hard_test_set(test)},
                                     vec[0], "standard", 32)
        m_tr, m_dev, m_test = (D.filter_conflicts(D.read_corpus(p)) for p in mams)
        mams_means = _train_and_eval(m_tr, m_dev, {"MAMS-ACSA": m_test}, vec[0], "standard", 64)
    got = {**rest_means, **mams_means}
    target = {"Rest14": 81.603, "Rest14-hard": 65.283, "MAMS-ACSA": 76.427}
    ok = all(abs(got[k] - v) <= 2.0 for k, v in target.items())
    verdict(6, ok, ", ".join(f"{k} {got[k]:.3f} vs {v}" for k, v in target.items()))
    assert ok


def test_criterion_7_ablation_direction(capsys, verdict):
    mams, vec = _env_paths(*MAMS), _env_paths(*VECTORS)
    if mams is None or vec is None:
        skip_line(capsys, 7, f"needs {', '.join(MAMS + VECTORS)}")
    with ad.default_dtype(np.float32):
        m_tr, m_dev, m_test = (D.filter_conflicts(D.read_corpus(p)) for p in mams)
        score = {v: _train_and_eval(m_tr, m_dev, {"MAMS-ACSA": m_test}, vec[0], v, 64)["MAMS-ACSA"]
                 for v in ("standard", "womil", "affine")}
    ok = score["standard"] > score["womil"] and score["standard"] > score["affine"]
    verdict(7, ok, f"standard {score['standard']:.3f}, w/o mil {score['womil']:.3f}, affine {score['affine']:.3f}")
    assert ok


# ---------------------------------------------------------------- 8. determinism

def test_criterion_8_determinism(verdict):
    corpus = lexicon_corpus(20, seed=0)
    vocab = D.build_vocabulary(corpus)
    cats = D.category_inventory(corpus)
    runs = []
    with ad.default_dtype(np.float32):
        for _ in range(2):
            model = ACMIMLLN(ModelConfig(len(cats), len(vocab), dim=32, num_layers=2), np.random.default_rng(7))
            cfg = TrainConfig(batch_size=4, max_epochs=1, patience=1, seed=7)
            runs.append(train(model, corpus, corpus, vocab, cats, cfg, np.random.default_rng(7)).step_losses[:5])
    ok = len(runs[0]) == 5 and runs[0] == runs[1]
    verdict(8, ok, f"first five step losses {runs[0]} reproduced bit-identically: {runs[0] == runs[1]}")
    assert ok

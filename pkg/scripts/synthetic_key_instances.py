"""Train every variant on the generated trigger-word corpus and score key instances.

Each sentence is filler plus one trigger word per mentioned category, so
the gold key instance is known exactly. Prints accuracy, KID F1 and KISC
accuracy per variant (KISC is undefined for ``womil``).

    python scripts/synthetic_key_instances.py --variants standard affine --seeds 1 2
"""

import argparse
import time

import numpy as np

from acmimlln import autodiff as ad
from acmimlln import data as D
from acmimlln.evaluation import aggregate_runs, evaluate
from acmimlln.model import ACMIMLLN, ModelConfig, VARIANTS
from acmimlln.synthetic import key_instance_corpus
from acmimlln.training import SCHEDULES, TrainConfig, train


def run(corpus, vocab, variant, seed, args):
    model = ACMIMLLN(ModelConfig(len(corpus.categories), len(vocab), dim=args.dim, num_layers=args.layers,
                                 variant=variant), np.random.default_rng(seed))
    cfg = TrainConfig(batch_size=32, max_epochs=args.epochs, patience=5, schedule=args.schedule, seed=seed)
    train(model, corpus.train, corpus.dev, vocab, corpus.categories, cfg, np.random.default_rng(seed))
    report, _ = evaluate(model, corpus.test, vocab, corpus.categories, corpus.test_annotations, args.threshold)
    return report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=VARIANTS)
    ap.add_argument("--seeds", nargs="+", type=int, default=[1])
    ap.add_argument("--schedule", default="multi-joint", choices=SCHEDULES)
    ap.add_argument("--train-size", type=int, default=2000)
    ap.add_argument("--test-size", type=int, default=200)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--layers", type=int, default=2)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--threshold", type=float, default=0.1)
    args = ap.parse_args()

    ad.set_default_dtype(np.float32)
    corpus = key_instance_corpus(args.train_size, 200, args.test_size, seed=0)
    vocab = D.build_vocabulary(corpus.train)
    print(f"{'variant':<10}{'accuracy':>10}{'KID F1':>10}{'KISC':>10}{'seconds':>10}")
    for variant in args.variants:
        start = time.perf_counter()
        agg = aggregate_runs([run(corpus, vocab, variant, s, args) for s in args.seeds])
        kisc = "-" if agg.kisc_accuracy is None else f"{agg.kisc_accuracy:.3f}"
        print(f"{variant:<10}{agg.acsa_accuracy:>10.3f}{agg.kid_f1:>10.3f}{kisc:>10}"
              f"{time.perf_counter() - start:>10.1f}")


if __name__ == "__main__":
    main()

"""Accuracy, key-instance metrics and multi-run aggregation."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .data import (POLARITY_INDEX, POLARITY_NAMES, CorpusExample, KeyInstanceAnnotation, Vocabulary,
                   collate, encode_items)
from .errors import ContractError

KEY_INSTANCE_THRESHOLD = 0.1


@dataclass
class Prediction:
    sentence_id: str
    category: str
    gold: int
    predicted: int
    distribution: list[float]
    attention: list[float]
    word_argmax: list[int] | None
    word_logits: list[list[float]] | None = None

    def to_json(self) -> str:
        record = asdict(self)
        record["gold"] = POLARITY_NAMES[self.gold]
        record["predicted"] = POLARITY_NAMES[self.predicted]
        return json.dumps(record)

    @classmethod
    def from_json(cls, line: str) -> "Prediction":
        record = json.loads(line)
        record["gold"] = POLARITY_INDEX[record["gold"]]
        record["predicted"] = POLARITY_INDEX[record["predicted"]]
        return cls(**record)


def predict_examples(model, examples: Sequence[CorpusExample], vocab: Vocabulary,
                     categories: Sequence[str], batch_size: int = 64) -> list[Prediction]:
    """Eval-mode predictions for every (sentence, mentioned category) pair, in corpus order."""
    items = encode_items(examples, vocab, categories, "multi")
    out: list[Prediction] = []
    with ad.no_grad():
        for start in range(0, len(items), batch_size):
            chunk = items[start:start + batch_size]
            batch = collate(chunk, vocab, categories)
            res = model.forward(batch.ids, batch.mask)
            sentiment, attention = res.sentiment.data, res.attention.data
            logits = None if res.word_logits is None else res.word_logits.data
            for b, (ex, queried) in enumerate(chunk):
                n = len(ex.tokens)
                word_logits = None if logits is None else logits[b, :n]
                for j in queried:
                    dist = sentiment[b, j]
                    out.append(Prediction(
                        sentence_id=ex.sentence_id,
                        category=categories[j],
                        gold=int(batch.gold[b, j]),
                        predicted=int(np.argmax(dist)),
                        distribution=[float(x) for x in dist],
                        attention=[float(x) for x in attention[b, j, :n]],
                        word_argmax=None if word_logits is None else [int(k) for k in word_logits.argmax(-1)],
                        word_logits=None if word_logits is None else word_logits.astype(float).tolist(),
                    ))
    return out


def write_predictions(path, predictions: Iterable[Prediction]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(p.to_json() + "\n")


def read_predictions(path) -> list[Prediction]:
    with open(path, encoding="utf-8") as fh:
        return [Prediction.from_json(line) for line in fh if line.strip()]


# --------------------------------------------------------------------------
# metrics


def acsa_accuracy(predictions: Sequence[int], gold: Sequence[int]) -> float:
    if len(predictions) != len(gold):
        raise ContractError(f"{len(predictions)} predictions for {len(gold)} gold labels")
    if not gold:
        raise ContractError("accuracy over an empty evaluation set is undefined")
    return sum(int(p == g) for p, g in zip(predictions, gold)) / len(gold)


def per_category_accuracy(predictions: Iterable[Prediction]) -> dict[str, float]:
    hits: dict[str, list[int]] = defaultdict(list)
    for p in predictions:
        hits[p.category].append(int(p.predicted == p.gold))
    return {c: sum(v) / len(v) for c, v in sorted(hits.items())}


def extract_key_instances(alpha: Sequence[float], threshold: float = KEY_INSTANCE_THRESHOLD) -> frozenset[int]:
    return frozenset(i for i, a in enumerate(alpha) if a >= threshold)


def _f1(tp: int, n_pred: int, n_gold: int) -> float:
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def kid_f1(pairs: Iterable[tuple[Iterable[int], Iterable[int]]], average: str = "micro") -> float:
    """F1 between predicted and gold key-instance position sets.

    ``pairs`` yields (predicted, gold) per annotated (sentence, category).
    Pairs where both sets are empty are skipped. ``average`` is ``micro``
    (pooled counts) or ``macro`` (mean of per-pair F1).
    """
    if average not in ("micro", "macro"):
        raise ContractError(f"average must be 'micro' or 'macro', got {average!r}")
    tp = n_pred = n_gold = 0
    per_pair = []
    for pred, gold in pairs:
        pred, gold = set(pred), set(gold)
        if not pred and not gold:
            continue
        hit = len(pred & gold)
        tp, n_pred, n_gold = tp + hit, n_pred + len(pred), n_gold + len(gold)
        per_pair.append(_f1(hit, len(pred), len(gold)))
    if average == "macro":
        return float(np.mean(per_pair)) if per_pair else 0.0
    return _f1(tp, n_pred, n_gold)


def kisc_accuracy(items: Iterable[tuple[np.ndarray, Iterable[tuple[int, int]]]]) -> float:
    """Share of gold key instances whose word-level argmax matches the gold polarity.

    ``items`` yields (word logits [n, 3], [(position, polarity index), ...]).
    """
    correct = total = 0
    for logits, gold in items:
        logits = np.asarray(logits)
        for pos, polarity in gold:
            total += 1
            correct += int(np.argmax(logits[pos]) == polarity)
    if total == 0:
        raise ContractError("no gold key instances to score")
    return correct / total


def key_instance_scores(predictions: Sequence[Prediction], annotations: Sequence[KeyInstanceAnnotation],
                        threshold: float = KEY_INSTANCE_THRESHOLD,
                        average: str = "micro") -> tuple[float | None, float | None]:
    """(KID F1, KISC accuracy) joined on (sentence id, category); KISC is None without word logits."""
    by_key = {(p.sentence_id, p.category): p for p in predictions}
    kid_pairs, kisc_items = [], []
    for ann in annotations:
        p = by_key.get((ann.sentence_id, ann.category))
        if p is None:
            continue
        kid_pairs.append((extract_key_instances(p.attention, threshold), ann.key_token_positions))
        if p.word_logits is not None:
            kisc_items.append((np.asarray(p.word_logits),
                               [(pos, POLARITY_INDEX[pol]) for pos, pol in ann.key_token_polarities]))
    if not kid_pairs:
        return None, None
    kid = kid_f1(kid_pairs, average)
    has_gold = any(gold for _, gold in kisc_items)
    kisc = kisc_accuracy(kisc_items) if kisc_items and has_gold else None
    return kid, kisc


# --------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    acsa_accuracy: float
    per_category_accuracy: dict[str, float]
    kid_f1: float | None = None
    kisc_accuracy: float | None = None
    n_runs: int = 1
    std: dict[str, float] = field(default_factory=dict)

    def metrics(self) -> dict[str, float]:
        flat = {"acsa_accuracy": self.acsa_accuracy}
        flat.update({f"per_category.{c}": v for c, v in self.per_category_accuracy.items()})
        if self.kid_f1 is not None:
            flat["kid_f1"] = self.kid_f1
        if self.kisc_accuracy is not None:
            flat["kisc_accuracy"] = self.kisc_accuracy
        return flat

    def to_records(self) -> list[dict]:
        return [{"metric": k, "mean": v, "std": self.std.get(k, 0.0), "n_runs": self.n_runs}
                for k, v in self.metrics().items()]

    def format_table(self) -> str:
        rows = [f"{'metric':<28}{'mean (%)':>10}{'std':>9}"]
        for k, v in self.metrics().items():
            rows.append(f"{k:<28}{100 * v:>10.3f}{100 * self.std.get(k, 0.0):>9.3f}")
        rows.append(f"runs: {self.n_runs}")
        return "\n".join(rows)


def evaluate(model, examples: Sequence[CorpusExample], vocab: Vocabulary, categories: Sequence[str],
             annotations: Sequence[KeyInstanceAnnotation] | None = None,
             threshold: float = KEY_INSTANCE_THRESHOLD, average: str = "micro",
             batch_size: int = 64) -> tuple[EvalReport, list[Prediction]]:
    preds = predict_examples(model, examples, vocab, categories, batch_size)
    return report_from_predictions(preds, annotations, threshold, average), preds


def report_from_predictions(preds: Sequence[Prediction],
                            annotations: Sequence[KeyInstanceAnnotation] | None = None,
                            threshold: float = KEY_INSTANCE_THRESHOLD, average: str = "micro") -> EvalReport:
    acc = acsa_accuracy([p.predicted for p in preds], [p.gold for p in preds])
    kid = kisc = None
    if annotations is not None:
        kid, kisc = key_instance_scores(preds, annotations, threshold, average)
    return EvalReport(acc, per_category_accuracy(preds), kid, kisc)


def aggregate_runs(reports: Sequence[EvalReport]) -> EvalReport:
    """Mean and population standard deviation of every metric across runs."""
    if not reports:
        raise ContractError("no reports to aggregate")
    keys = list(reports[0].metrics())
    means, stds = {}, {}
    for k in keys:
        values = [r.metrics()[k] for r in reports if k in r.metrics()]
        if len(values) != len(reports):
            continue
        means[k] = float(np.mean(values))
        stds[k] = float(np.std(values))
    return EvalReport(
        acsa_accuracy=means["acsa_accuracy"],
        per_category_accuracy={k.split(".", 1)[1]: v for k, v in means.items() if k.startswith("per_category.")},
        kid_f1=means.get("kid_f1"),
        kisc_accuracy=means.get("kisc_accuracy"),
        n_runs=len(reports),
        std=stds,
    )

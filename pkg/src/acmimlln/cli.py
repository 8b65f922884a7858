"""Command-line entry point: train, eval, predict, make-hard, export-attention.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 training divergence.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import html
import json
import logging
import os
import re
import shutil
import sys
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import data as D
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ACMIMLLNError, ConfigError, DataError
from .evaluation import (KEY_INSTANCE_THRESHOLD, aggregate_runs, evaluate, write_predictions)
from .model import ACMIMLLN, ModelConfig, POLARITIES
from .training import TrainConfig, train

logger = logging.getLogger("acmimlln")

_PATH_KEYS = ("train_path", "dev_path", "test_path", "dev_ids_path", "vectors_path", "annotations_path")


@dataclass
class ExperimentConfig:
    output_dir: str = "runs/experiment"
    train_path: str | None = None
    dev_path: str | None = None
    dev_ids_path: str | None = None
    test_path: str | None = None
    vectors_path: str | None = None
    annotations_path: str | None = None
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    precision: str = "float32"
    min_count: int = 1
    # training
    lr: float = 0.001
    batch_size: int = 32
    beta: float = 1.0
    l2: float = 1e-5
    max_epochs: int = 100
    patience: int = 10
    schedule: str = "multi-joint"
    clip_norm: float | None = 5.0
    stopping_metric: str = "dev_acsa_accuracy"
    # model
    dim: int = 300
    num_layers: int = 3
    variant: str = "standard"
    dropout: float = 0.5
    dropout_after_embedding: bool = True
    dropout_after_bilstm: bool = True
    detach_attention: bool = False
    train_embeddings: bool = True

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, beta=self.beta, l2=self.l2,
                           max_epochs=self.max_epochs, patience=self.patience, schedule=self.schedule,
                           clip_norm=self.clip_norm, stopping_metric=self.stopping_metric, seed=seed)

    def model_config(self, num_categories: int, vocab_size: int) -> ModelConfig:
        return ModelConfig(num_categories=num_categories, vocab_size=vocab_size, dim=self.dim,
                           num_layers=self.num_layers, variant=self.variant, dropout=self.dropout,
                           dropout_after_embedding=self.dropout_after_embedding,
                           dropout_after_bilstm=self.dropout_after_bilstm,
                           detach_attention=self.detach_attention, train_embeddings=self.train_embeddings)

    def validate(self, require_training_data: bool = False) -> None:
        self.train_config(self.seeds[0] if self.seeds else 1)
        self.model_config(1, 2)
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be a non-empty list of distinct integers")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.min_count < 1:
            raise ConfigError("min_count must be >= 1")
        for key in _PATH_KEYS:
            value = getattr(self, key)
            if value is not None and not Path(value).is_file():
                raise ConfigError(f"{key}: file not found: {value}")
        if require_training_data:
            if self.train_path is None:
                raise ConfigError("train_path is required")
            if self.dev_path is None and self.dev_ids_path is None:
                raise ConfigError("either dev_path or dev_ids_path is required for early stopping")


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def resolve_config(config_path: str | None, overrides: list[str]) -> ExperimentConfig:
    """Defaults, then the JSON config file, then ``key=value`` overrides."""
    values: dict = {}
    if config_path is not None:
        try:
            with open(config_path, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: invalid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{config_path}: expected a flat JSON object")
        values.update(loaded)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        values[key.strip()] = _parse_value(raw)
    try:
        return ExperimentConfig.from_mapping(values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


@contextlib.contextmanager
def staged_output(out_dir):
    """Yield a scratch directory whose files move into ``out_dir`` only on success."""
    out_dir = Path(out_dir)
    parent = out_dir.parent
    parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".staging-", dir=parent))
    try:
        yield scratch
        out_dir.mkdir(parents=True, exist_ok=True)
        for item in scratch.iterdir():
            os.replace(item, out_dir / item.name)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


# --------------------------------------------------------------------------
# data loading


def load_examples(path) -> list[D.CorpusExample]:
    return D.filter_conflicts(D.read_corpus(path))


def load_training_data(cfg: ExperimentConfig):
    train_examples = load_examples(cfg.train_path)
    # inventory from the whole training file, before any dev sentences are carved out
    categories = D.category_inventory(train_examples)
    if cfg.dev_path is not None:
        dev_examples = load_examples(cfg.dev_path)
    else:
        train_examples, dev_examples = D.split_by_ids(train_examples, D.read_id_list(cfg.dev_ids_path))
    if not train_examples or not dev_examples:
        raise DataError("training and dev splits must both be non-empty")
    D.validate_examples(train_examples, categories)
    D.validate_examples(dev_examples, categories)
    vocab = D.build_vocabulary(train_examples, cfg.min_count)
    return train_examples, dev_examples, categories, vocab


# --------------------------------------------------------------------------
# commands


def cmd_train(cfg: ExperimentConfig) -> list[Path]:
    cfg.validate(require_training_data=True)
    ad.set_default_dtype(cfg.precision)
    train_examples, dev_examples, categories, vocab = load_training_data(cfg)
    pretrained = None
    if cfg.vectors_path is not None:
        pretrained, found = D.load_pretrained_vectors(cfg.vectors_path, vocab, cfg.dim,
                                                      np.random.default_rng(min(cfg.seeds)))
        logger.info("loaded %d pretrained vectors", found)
    written = []
    with staged_output(cfg.output_dir) as stage:
        with open(stage / "config.json", "w", encoding="utf-8") as fh:
            json.dump(dataclasses.asdict(cfg), fh, indent=2, sort_keys=True)
        for seed in cfg.seeds:
            rng = np.random.default_rng(seed)
            model = ACMIMLLN(cfg.model_config(len(categories), len(vocab)), rng, pretrained)
            result = train(model, train_examples, dev_examples, vocab, categories, cfg.train_config(seed), rng)
            result.write_log(stage / f"train-log-seed{seed}.jsonl")
            save_checkpoint(stage / f"model-seed{seed}.npz", model, vocab, categories,
                            {"seed": seed, "best_epoch": result.best_epoch, "best_metric": result.best_metric,
                             "schedule": cfg.schedule})
            logger.info("seed %d: best epoch %d, dev metric %s", seed, result.best_epoch, result.best_metric)
            written.append(Path(cfg.output_dir) / f"model-seed{seed}.npz")
    return written


def cmd_eval(checkpoints: list[str], test_path: str, annotations_path: str | None = None,
             hard: bool = False, threshold: float = KEY_INSTANCE_THRESHOLD, average: str = "micro",
             out_path: str | None = None, dump_dir: str | None = None):
    for p in [*checkpoints, test_path, *([annotations_path] if annotations_path else [])]:
        if not Path(p).is_file():
            raise ConfigError(f"file not found: {p}")
    examples = load_examples(test_path)
    if hard:
        examples = D.make_hard_test_set(examples)
    if not examples:
        raise DataError(f"{test_path}: no evaluable sentences")
    annotations = None
    if annotations_path:
        annotations = D.read_key_instance_annotations(annotations_path, D.sentence_lengths(examples))
    reports, dumps = [], {}
    for path in checkpoints:
        ckpt = load_checkpoint(path)
        D.validate_examples(examples, ckpt.categories)
        report, preds = evaluate(ckpt.model, examples, ckpt.vocab, ckpt.categories, annotations, threshold, average)
        reports.append(report)
        dumps[Path(path).stem] = preds
    aggregate = aggregate_runs(reports)
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", encoding="utf-8") as fh:
            for record in aggregate.to_records():
                fh.write(json.dumps(record) + "\n")
    if dump_dir is not None:
        with staged_output(dump_dir) as stage:
            for stem, preds in dumps.items():
                write_predictions(stage / f"predictions-{stem}.jsonl", preds)
    return aggregate, reports


def cmd_predict(checkpoint: str, text: str, categories: list[str]) -> list[dict]:
    ckpt = load_checkpoint(checkpoint)
    unknown = [c for c in categories if c not in ckpt.categories]
    if unknown:
        raise ConfigError(f"unknown categories {unknown}; known: {', '.join(ckpt.categories)}")
    tokens = D.tokenize(text)
    if not tokens:
        raise DataError("the sentence has no tokens")
    ids = [ckpt.categories.index(c) for c in categories]
    out = ckpt.model.predict(ckpt.vocab.encode(tokens), ids)
    results = []
    for k, cat in enumerate(categories):
        dist = out.category_sentiment[k]
        results.append({"category": cat, "polarity": POLARITIES[int(np.argmax(dist))],
                        "distribution": dict(zip(POLARITIES, (float(x) for x in dist))),
                        "attention": dict(zip(range(len(tokens)), (float(a) for a in out.attention[ids[k]])))})
    return results


def cmd_make_hard(in_path: str, out_path: str) -> dict[str, int]:
    if not Path(in_path).is_file():
        raise ConfigError(f"file not found: {in_path}")
    hard = D.make_hard_test_set(load_examples(in_path))
    out = Path(out_path)
    with staged_output(out.parent) as stage:
        D.write_corpus(stage / out.name, hard)
    return D.polarity_counts(hard)


def _safe_name(sentence_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", sentence_id)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def attention_tables(model: ACMIMLLN, example: D.CorpusExample, vocab: D.Vocabulary,
                     categories: list[str]) -> tuple[list[tuple[str, np.ndarray]], np.ndarray | None]:
    """Per mentioned category its attention row; word sentiment distributions as [3, n] (None for womil)."""
    ids = [categories.index(c) for c in example.categories]
    out = model.predict(vocab.encode(example.tokens), ids)
    rows = [(categories[j], out.attention[j]) for j in ids]
    word = None if out.word_sentiment_logits is None else _softmax_rows(out.word_sentiment_logits).T
    return rows, word


def _cell(value: float, rgb: tuple[int, int, int]) -> str:
    r, g, b = rgb
    return f'<td style="background: rgba({r},{g},{b},{max(0.0, min(1.0, value)):.3f})">{value:.3f}</td>'


def render_html(example: D.CorpusExample, rows, word) -> str:
    head = "".join(f"<th>{html.escape(t)}</th>" for t in example.tokens)
    body = []
    for cat, alpha in rows:
        body.append(f"<tr><th>{html.escape(cat)}</th>{''.join(_cell(a, (220, 60, 60)) for a in alpha)}</tr>")
    if word is not None:
        for name, row in zip(POLARITIES, word):
            body.append(f"<tr><th>{name}</th>{''.join(_cell(v, (60, 90, 220)) for v in row)}</tr>")
    return ("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
            f"<title>{html.escape(example.sentence_id)}</title>"
            "<style>table{border-collapse:collapse;font-family:sans-serif}"
            "td,th{border:1px solid #ccc;padding:4px 6px;text-align:center}</style></head><body>"
            f"<p>{html.escape(example.raw_text)}</p><table><tr><th></th>{head}</tr>"
            f"{''.join(body)}</table></body></html>\n")


def render_tsv(example: D.CorpusExample, rows, word) -> str:
    lines = ["\t".join(["token", *example.tokens])]
    for cat, alpha in rows:
        lines.append("\t".join([f"attention:{cat}", *(repr(float(a)) for a in alpha)]))
    if word is not None:
        for name, row in zip(POLARITIES, word):
            lines.append("\t".join([f"sentiment:{name}", *(repr(float(v)) for v in row)]))
    return "\n".join(lines) + "\n"


def cmd_export_attention(checkpoint: str, corpus_path: str, out_dir: str) -> int:
    for p in (checkpoint, corpus_path):
        if not Path(p).is_file():
            raise ConfigError(f"file not found: {p}")
    ckpt = load_checkpoint(checkpoint)
    examples = load_examples(corpus_path)
    D.validate_examples(examples, ckpt.categories)
    with staged_output(out_dir) as stage:
        for ex in examples:
            rows, word = attention_tables(ckpt.model, ex, ckpt.vocab, ckpt.categories)
            name = _safe_name(ex.sentence_id)
            (stage / f"{name}.tsv").write_text(render_tsv(ex, rows, word), encoding="utf-8")
            (stage / f"{name}.html").write_text(render_html(ex, rows, word), encoding="utf-8")
    return len(examples)


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acmimlln", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model per seed")
    p.add_argument("--config", help="flat JSON configuration file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration key (repeatable; values parsed as JSON when possible)")

    p = sub.add_parser("eval", help="evaluate checkpoints and aggregate across seeds")
    p.add_argument("--checkpoint", nargs="+", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--annotations")
    p.add_argument("--hard", action="store_true", help="restrict to the hard subset first")
    p.add_argument("--threshold", type=float, default=KEY_INSTANCE_THRESHOLD)
    p.add_argument("--kid-average", choices=("micro", "macro"), default="micro")
    p.add_argument("--out", help="write line-delimited metric records here")
    p.add_argument("--dump-dir", help="write per-checkpoint prediction dumps here")

    p = sub.add_parser("predict", help="predict category sentiments for one sentence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--categories", nargs="+", required=True)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("make-hard", help="keep sentences with >= 2 categories of differing polarity")
    p.add_argument("input")
    p.add_argument("output")

    p = sub.add_parser("export-attention", help="write attention/word-sentiment heatmaps per sentence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "train":
            for path in cmd_train(resolve_config(args.config, args.overrides)):
                print(path)
        elif args.command == "eval":
            aggregate, _ = cmd_eval(args.checkpoint, args.test, args.annotations, args.hard, args.threshold,
                                    args.kid_average, args.out, args.dump_dir)
            print(aggregate.format_table())
        elif args.command == "predict":
            results = cmd_predict(args.checkpoint, args.text, args.categories)
            if args.json:
                print(json.dumps(results))
            else:
                for r in results:
                    dist = "  ".join(f"{k}={v:.4f}" for k, v in r["distribution"].items())
                    print(f"{r['category']}\t{r['polarity']}\t{dist}")
        elif args.command == "make-hard":
            counts = cmd_make_hard(args.input, args.output)
            print(" ".join(f"{k}={v}" for k, v in counts.items()))
        elif args.command == "export-attention":
            n = cmd_export_attention(args.checkpoint, args.corpus, args.out)
            print(f"wrote {n} sentences to {args.out}")
    except ACMIMLLNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

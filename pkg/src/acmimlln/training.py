"""Losses, Adam, early stopping and the four multi-task training schedules."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamRegistry, Tensor
from .data import CorpusExample, Vocabulary, batch as make_batches, collate, encode_items
from .errors import ConfigError, ContractError, TrainingDivergence
from .model import ACMIMLLN, NUM_CLASSES

logger = logging.getLogger(__name__)

SCHEDULES = ("single-pipeline", "single-joint", "multi-pipeline", "multi-joint")
STOPPING_METRICS = ("dev_acsa_accuracy", "dev_loss")


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 32
    beta: float = 1.0
    l2: float = 1e-5
    max_epochs: int = 100
    patience: int = 10
    schedule: str = "multi-joint"
    clip_norm: float | None = 5.0
    stopping_metric: str = "dev_acsa_accuracy"
    seed: int = 1

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}; valid schedules: {', '.join(SCHEDULES)}")
        if self.stopping_metric not in STOPPING_METRICS:
            raise ConfigError(f"unknown stopping metric {self.stopping_metric!r}; "
                              f"valid: {', '.join(STOPPING_METRICS)}")
        for name in ("lr", "batch_size", "max_epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.beta < 0 or self.l2 < 0:
            raise ConfigError("beta and l2 must be non-negative")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive or None")

    @property
    def batch_mode(self) -> str:
        return self.schedule.split("-")[0]

    @property
    def pipeline(self) -> bool:
        return self.schedule.endswith("pipeline")


# --------------------------------------------------------------------------
# losses


def acd_loss(y_hat: Tensor, y) -> Tensor:
    """Binary cross-entropy summed over every category (and batch row)."""
    y = np.asarray(y, dtype=y_hat.data.dtype)
    if y.shape != y_hat.shape:
        raise ContractError(f"acd_loss: predictions {y_hat.shape} vs targets {y.shape}")
    pos = ad.mul(Tensor(y), ad.log(y_hat))
    neg = ad.mul(Tensor(1.0 - y), ad.log(ad.sub(1.0, y_hat)))
    return ad.scale(ad.tsum(ad.add(pos, neg)), -1.0)


def acsa_loss(p: Tensor, gold, mask=None) -> Tensor:
    """Cross-entropy of the gold polarity, summed over the queried categories only.

    ``p`` is ``[..., 3]``; ``gold`` holds class indices over the leading axes;
    ``mask`` marks which entries count (all when omitted).
    """
    gold = np.asarray(gold, dtype=np.int64)
    if p.shape[-1] != NUM_CLASSES or gold.shape != p.shape[:-1]:
        raise ContractError(f"acsa_loss: distributions {p.shape} vs gold {gold.shape}")
    mask = np.ones(gold.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if np.any((gold[mask] < 0) | (gold[mask] >= NUM_CLASSES)):
        raise ContractError(f"acsa_loss: gold indices must lie in 0..{NUM_CLASSES - 1}")
    onehot = np.zeros(p.shape, dtype=p.data.dtype)
    idx = np.nonzero(mask)
    onehot[idx + (gold[mask],)] = 1.0
    return ad.scale(ad.tsum(ad.mul(Tensor(onehot), ad.log(p))), -1.0)


def combined_loss(acd: Tensor | None, acsa: Tensor | None, params: ParamRegistry,
                  beta: float = 1.0, l2: float = 1e-5) -> Tensor:
    """``acd + beta * acsa + l2 * ||theta||^2`` over the trainable parameters."""
    total = None
    if acd is not None:
        total = acd
    if acsa is not None:
        term = ad.scale(acsa, beta)
        total = term if total is None else ad.add(total, term)
    if l2:
        term = ad.scale(params.l2_penalty(), l2)
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ContractError("combined_loss needs at least one term")
    return total


# --------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, registry: ParamRegistry, grads: dict[str, np.ndarray] | None = None,
              lr: float | None = None) -> None:
    lr = state.lr if lr is None else lr
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** state.step, 1.0 - b2 ** state.step
    for name, t in registry.trainable():
        g = t.grad if grads is None else grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        t.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_grad_norm(registry: ParamRegistry, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(t.grad.astype(np.float64) ** 2)) for _, t in registry.trainable()))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for _, t in registry.trainable():
            t.grad *= factor
    return total


class EarlyStopper:
    """Tracks the best value; ``should_stop`` after ``patience`` consecutive non-improving updates."""

    def __init__(self, patience: int, mode: str = "max"):
        if mode not in ("max", "min"):
            raise ContractError(f"mode must be 'max' or 'min', got {mode!r}")
        self.patience, self.mode = patience, mode
        self.best: float | None = None
        self.bad_epochs = 0

    def update(self, value: float) -> bool:
        better = (self.best is None or
                  (value > self.best if self.mode == "max" else value < self.best))
        if better:
            self.best, self.bad_epochs = value, 0
        else:
            self.bad_epochs += 1
        return better

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    best_state: dict[str, np.ndarray]
    best_epoch: int
    best_metric: float | None
    log: list[dict]
    step_losses: list[float]

    def write_log(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.log:
                fh.write(json.dumps(record) + "\n")


def split_metrics(model: ACMIMLLN, examples: Sequence[CorpusExample], vocab: Vocabulary,
                  categories: Sequence[str], cfg: TrainConfig, batch_size: int = 64) -> dict[str, float]:
    """Eval-mode per-sentence mean losses and ACSA accuracy on a held-out split."""
    items = encode_items(examples, vocab, categories, "multi")
    la = ls = 0.0
    correct = count = 0
    with ad.no_grad():
        for start in range(0, len(items), batch_size):
            b = collate(items[start:start + batch_size], vocab, categories)
            out = model.forward(b.ids, b.mask)
            la += acd_loss(out.detection, b.acd_targets).item()
            ls += acsa_loss(out.sentiment, b.gold, b.query_mask).item()
            pred = out.sentiment.data.argmax(-1)
            correct += int(np.sum((pred == b.gold) & b.query_mask))
            count += int(b.query_mask.sum())
    n = max(len(items), 1)
    return {"acd_loss": la / n, "acsa_loss": ls / n, "loss": (la + cfg.beta * ls) / n,
            "accuracy": correct / count if count else 0.0}


def _run_stage(model: ACMIMLLN, stage: str, train: Sequence[CorpusExample], dev: Sequence[CorpusExample],
               vocab: Vocabulary, categories: Sequence[str], cfg: TrainConfig, rng: np.random.Generator,
               log: list[dict], step_losses: list[float],
               on_epoch: Callable[[dict], None] | None) -> tuple[dict[str, np.ndarray], int, float | None]:
    params = model.params
    use_acd = stage in ("joint", "acd")
    use_acsa = stage in ("joint", "acsa")
    if stage == "acd":
        stopper, monitor = EarlyStopper(cfg.patience, "min"), "acd_loss"
    elif cfg.stopping_metric == "dev_loss" and stage == "joint":
        stopper, monitor = EarlyStopper(cfg.patience, "min"), "loss"
    else:
        stopper, monitor = EarlyStopper(cfg.patience, "max"), "accuracy"
    adam = AdamState(lr=cfg.lr)
    best_state, best_epoch = params.state_dict(), 0

    for epoch in range(1, cfg.max_epochs + 1):
        total = correct = count = 0.0
        for bi, b in enumerate(make_batches(train, cfg.batch_size, cfg.batch_mode, rng, vocab, categories)):
            params.zero_grad()
            size = len(b)
            if stage == "acd":
                detection, _, _ = model.forward_acd(b.ids, b.mask)
                la, ls = ad.scale(acd_loss(detection, b.acd_targets), 1.0 / size), None
            else:
                out = model.forward(b.ids, b.mask, training=True, rng=rng)
                la = ad.scale(acd_loss(out.detection, b.acd_targets), 1.0 / size) if use_acd else None
                ls = ad.scale(acsa_loss(out.sentiment, b.gold, b.query_mask), 1.0 / size)
                pred = out.sentiment.data.argmax(-1)
                correct += float(np.sum((pred == b.gold) & b.query_mask))
                count += float(b.query_mask.sum())
            loss = combined_loss(la, ls if use_acsa else None, params, cfg.beta, cfg.l2)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergence(epoch, bi, value)
            ad.backward(loss)
            if cfg.clip_norm is not None:
                clip_grad_norm(params, cfg.clip_norm)
            adam_step(adam, params)
            step_losses.append(value)
            total += value
        train_record = {"stage": stage, "epoch": epoch, "split": "train", "loss": total / max(bi + 1, 1),
                        "accuracy": correct / count if count else None}
        metrics = split_metrics(model, dev, vocab, categories, cfg)
        dev_record = {"stage": stage, "epoch": epoch, "split": "dev", **metrics}
        log.extend([train_record, dev_record])
        if on_epoch is not None:
            on_epoch(dev_record)
        logger.info("%s epoch %d: train loss %.4f, dev acc %.4f, dev acd loss %.4f",
                    stage, epoch, train_record["loss"], metrics["accuracy"], metrics["acd_loss"])
        if stopper.update(metrics[monitor]):
            best_state, best_epoch = params.state_dict(), epoch
        if stopper.should_stop:
            break
    return best_state, best_epoch, stopper.best


def train(model: ACMIMLLN, train_examples: Sequence[CorpusExample], dev_examples: Sequence[CorpusExample],
          vocab: Vocabulary, categories: Sequence[str], cfg: TrainConfig,
          rng: np.random.Generator | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train under ``cfg.schedule`` and leave the model holding its best-dev weights."""
    if len(categories) != model.config.num_categories:
        raise ConfigError(f"model has {model.config.num_categories} categories, data has {len(categories)}")
    if not train_examples or not dev_examples:
        raise ConfigError("training needs non-empty train and dev splits")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    params = model.params
    original = {name: params.is_trainable(name) for name in params.names()}
    log: list[dict] = []
    steps: list[float] = []
    try:
        if cfg.pipeline:
            acd, acsa = model.acd_parameter_names, model.acsa_parameter_names
            params.set_trainable(acsa, False)
            state, _, _ = _run_stage(model, "acd", train_examples, dev_examples, vocab, categories,
                                     cfg, rng, log, steps, None)
            params.load_state_dict(state)
            params.set_trainable([n for n in acsa if original[n]], True)
            params.set_trainable(acd, False)
            state, epoch, metric = _run_stage(model, "acsa", train_examples, dev_examples, vocab,
                                              categories, cfg, rng, log, steps, on_epoch)
        else:
            state, epoch, metric = _run_stage(model, "joint", train_examples, dev_examples, vocab,
                                              categories, cfg, rng, log, steps, on_epoch)
    finally:
        for name, flag in original.items():
            if params.is_trainable(name) != flag:
                params.set_trainable([name], flag)
    params.load_state_dict(state)
    return TrainResult(state, epoch, metric, log, steps)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)

"""The full two-branch network and its variants.

The detection branch (embedding -> LSTM -> one attention head per category ->
sigmoid detector) yields attention weights over words. The sentiment branch
(embedding -> stacked bi-LSTM -> per-word 3-way logits) is aggregated per
category with those weights and normalised with a softmax.

Variants:

``standard``  word logits aggregated, then softmaxed.
``womil``     attention-weighted word representations classified per category.
``affine``    detection encoder is ``tanh(x W + b)`` per position, no recurrence.
``softmax``   word logits are softmaxed before aggregation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import ParamRegistry, Tensor
from .errors import ConfigError, ContractError, DataError

VARIANTS = ("standard", "womil", "affine", "softmax")
POLARITIES = ("Neg", "Neu", "Pos")
NUM_CLASSES = len(POLARITIES)


@dataclass
class ModelConfig:
    num_categories: int
    vocab_size: int
    dim: int = 300
    num_layers: int = 3
    variant: str = "standard"
    dropout: float = 0.5
    # placement of ACSA dropout; the detection branch never uses dropout
    dropout_after_embedding: bool = True
    dropout_after_bilstm: bool = True
    detach_attention: bool = False
    train_embeddings: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        if self.dim <= 0 or self.dim % 2:
            raise ConfigError(f"model dimension must be a positive even number, got {self.dim}")
        if self.num_layers < 1:
            raise ConfigError(f"bi-LSTM depth must be >= 1, got {self.num_layers}")
        if self.num_categories < 1:
            raise ConfigError("need at least one aspect category")
        if self.vocab_size < 2:
            raise ConfigError("vocabulary must hold at least the pad and unknown entries")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout probability must lie in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BatchOutput:
    """Graph-attached outputs for a padded batch; all N categories are scored."""

    detection: Tensor  # [B, N]
    attention: Tensor  # [B, N, n]
    word_logits: Tensor | None  # [B, n, 3]
    sentiment: Tensor  # [B, N, 3]


@dataclass
class ForwardOutput:
    """Plain-array outputs for one sentence and the queried categories."""

    detection: np.ndarray  # [N]
    attention: np.ndarray  # [N, n]
    word_sentiment_logits: np.ndarray | None  # [n, 3]
    categories: tuple[int, ...]
    category_sentiment: np.ndarray  # [K, 3], row k belongs to categories[k]

    def predicted_classes(self) -> list[int]:
        return [int(i) for i in np.argmax(self.category_sentiment, axis=-1)]


class ACMIMLLN:
    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None,
                 pretrained: np.ndarray | None = None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(0)
        d, N = config.dim, config.num_categories
        p = self.params = ParamRegistry()

        # two tables drawn from the same source so they start identical
        if pretrained is None:
            pretrained = layers.uniform(rng, (config.vocab_size, d), layers.EMBEDDING_INIT)
        self.acd_embedding = layers.init_embedding(p, "acd.embedding.W", config.vocab_size, d, rng,
                                                   pretrained, config.train_embeddings)
        self.acsa_embedding = layers.init_embedding(p, "acsa.embedding.W", config.vocab_size, d, rng,
                                                    pretrained, config.train_embeddings)

        if config.variant == "affine":
            self.acd_affine = (p.add("acd.affine.W", layers.uniform(rng, (d, d), layers.WEIGHT_INIT)),
                               p.add("acd.affine.b", np.zeros(d)))
            self.acd_lstm = None
        else:
            self.acd_lstm = layers.init_lstm_cell(p, "acd.lstm", d, d, rng)
            self.acd_affine = None
        self.heads = [layers.init_attention_head(p, f"acd.attention.{j}", d, rng) for j in range(N)]
        self.detectors = [
            (p.add(f"acd.prediction.{j}.w", layers.uniform(rng, (d,), layers.WEIGHT_INIT)),
             p.add(f"acd.prediction.{j}.b", 0.0))
            for j in range(N)
        ]

        self.bilstm = layers.init_bilstm_stack(p, "acsa.bilstm", d, config.num_layers, rng)
        head = "acsa.classifier" if config.variant == "womil" else "acsa.word"
        self.W1 = p.add(f"{head}.W1", layers.uniform(rng, (d, d), layers.WEIGHT_INIT))
        self.b1 = p.add(f"{head}.b1", np.zeros(d))
        self.W2 = p.add(f"{head}.W2", layers.uniform(rng, (d, NUM_CLASSES), layers.WEIGHT_INIT))
        self.b2 = p.add(f"{head}.b2", np.zeros(NUM_CLASSES))

    # ------------------------------------------------------------------
    @property
    def acd_parameter_names(self) -> list[str]:
        return [n for n in self.params.names() if n.startswith("acd.")]

    @property
    def acsa_parameter_names(self) -> list[str]:
        return [n for n in self.params.names() if n.startswith("acsa.")]

    def _check_ids(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.ndim != 2 or ids.shape[1] == 0:
            raise DataError("empty sentence: at least one token is required")
        return ids

    def _mask(self, ids: np.ndarray, mask) -> np.ndarray:
        if mask is None:
            return np.ones(ids.shape, dtype=bool)
        mask = np.asarray(mask, dtype=bool).reshape(ids.shape)
        if not mask.any(axis=1).all():
            raise DataError("every sentence in a batch needs at least one unmasked token")
        return mask

    # ------------------------------------------------------------------
    def forward_acd(self, ids, mask=None) -> tuple[Tensor, Tensor, Tensor]:
        """Detection probabilities [B, N], attention [B, N, n], encoder states [B, n, d]."""
        ids = self._check_ids(ids)
        mask = self._mask(ids, mask)
        X = layers.embed(self.acd_embedding, ids)
        if self.acd_affine is not None:
            W, b = self.acd_affine
            H = ad.tanh(layers.linear(W, b, X))
        else:
            H = layers.run_lstm(self.acd_lstm, X, mask)
        alphas, scores = [], []
        for head, (w, b) in zip(self.heads, self.detectors):
            alpha = layers.attention(head, H, mask)
            r = ad.einsum("bn,bnd->bd", alpha, H)
            scores.append(ad.sigmoid(ad.add(ad.einsum("bd,d->b", r, w), b)))
            alphas.append(alpha)
        return ad.stack(scores, axis=1), ad.stack(alphas, axis=1), H

    def encode_acsa(self, ids, mask=None, training: bool = False,
                    rng: np.random.Generator | None = None) -> Tensor:
        ids = self._check_ids(ids)
        mask = self._mask(ids, mask)
        cfg = self.config
        X = layers.embed(self.acsa_embedding, ids)
        if cfg.dropout_after_embedding:
            X = ad.dropout(X, cfg.dropout, training, rng)
        return layers.run_bilstm_stack(self.bilstm, X, mask,
                                       cfg.dropout if cfg.dropout_after_bilstm else 0.0, training, rng)

    def word_logits(self, H: Tensor) -> Tensor:
        return layers.linear(self.W2, self.b2, ad.relu(layers.linear(self.W1, self.b1, H)))

    def forward(self, ids, mask=None, training: bool = False,
                rng: np.random.Generator | None = None) -> BatchOutput:
        ids = self._check_ids(ids)
        mask = self._mask(ids, mask)
        detection, A, _ = self.forward_acd(ids, mask)
        H = self.encode_acsa(ids, mask, training, rng)
        weights = ad.detach(A) if self.config.detach_attention else A
        P, sentiment = self.sentiment_head(weights, H)
        return BatchOutput(detection, A, P, sentiment)

    def sentiment_head(self, A: Tensor, H: Tensor) -> tuple[Tensor | None, Tensor]:
        """Word logits [B, n, 3] (None for womil) and category distributions [B, N, 3].

        ``A`` is attention [B, N, n] and ``H`` the sentiment encoder states [B, n, d].
        """
        if self.config.variant == "womil":
            S = ad.einsum("bjn,bnd->bjd", A, H)
            return None, ad.softmax(self.word_logits(S), axis=-1)
        P = self.word_logits(H)
        instances = ad.softmax(P, axis=-1) if self.config.variant == "softmax" else P
        return P, aggregate_instances(A, instances)

    # ------------------------------------------------------------------
    def predict(self, token_ids, categories) -> ForwardOutput:
        """Eval-mode forward pass for one sentence."""
        categories = tuple(int(c) for c in categories)
        if not categories:
            raise ContractError("at least one category must be queried")
        bad = [c for c in categories if not 0 <= c < self.config.num_categories]
        if bad:
            raise ContractError(f"unknown category ids {bad}; model has {self.config.num_categories}")
        with ad.no_grad():
            out = self.forward(np.asarray(token_ids)[None, :])
        return ForwardOutput(
            detection=out.detection.data[0].copy(),
            attention=out.attention.data[0].copy(),
            word_sentiment_logits=None if out.word_logits is None else out.word_logits.data[0].copy(),
            categories=categories,
            category_sentiment=out.sentiment.data[0, list(categories)].copy(),
        )


def aggregate_instances(A: Tensor, instances: Tensor) -> Tensor:
    """Category distributions from attention-weighted word predictions: softmax over classes."""
    return ad.softmax(ad.einsum("bjn,bnc->bjc", A, instances), axis=-1)


# single-sentence entry points named after the variant they exercise

def forward_acsa(model: ACMIMLLN, token_ids, categories) -> ForwardOutput:
    return model.predict(token_ids, categories)


def _require_variant(model: ACMIMLLN, variant: str) -> None:
    if model.config.variant != variant:
        raise ContractError(f"model is configured as {model.config.variant!r}, not {variant!r}")


def forward_variant_womil(model: ACMIMLLN, token_ids, categories) -> ForwardOutput:
    _require_variant(model, "womil")
    return model.predict(token_ids, categories)


def forward_variant_affine(model: ACMIMLLN, token_ids, categories) -> ForwardOutput:
    _require_variant(model, "affine")
    return model.predict(token_ids, categories)


def forward_variant_softmax(model: ACMIMLLN, token_ids, categories) -> ForwardOutput:
    _require_variant(model, "softmax")
    return model.predict(token_ids, categories)

"""Parameterized layers built on the autodiff primitives.

Sequences travel as ``[batch, n, d]`` tensors with a boolean ``[batch, n]``
mask (True for real tokens). Two-dimensional ``[n, d]`` inputs are accepted
as a batch of one. Matrices use the row-vector convention ``y = x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamRegistry, Tensor
from .errors import DataError, DimensionError

WEIGHT_INIT = 0.1
EMBEDDING_INIT = 0.25
FORGET_BIAS = 1.0


def uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


# --------------------------------------------------------------------------
# embeddings


@dataclass
class EmbeddingTable:
    weight: Tensor
    pad_index: int = 0
    unk_index: int = 1

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    @property
    def size(self) -> int:
        return self.weight.shape[0]


def init_embedding(registry: ParamRegistry, name: str, vocab_size: int, dim: int,
                   rng: np.random.Generator, pretrained: np.ndarray | None = None,
                   trainable: bool = True, pad_index: int = 0, unk_index: int = 1) -> EmbeddingTable:
    if pretrained is not None:
        if pretrained.shape != (vocab_size, dim):
            raise DimensionError(f"pretrained matrix {pretrained.shape} != ({vocab_size}, {dim})")
        values = np.array(pretrained, dtype=np.float64)
    else:
        values = uniform(rng, (vocab_size, dim), EMBEDDING_INIT)
    values[pad_index] = 0.0
    weight = registry.add(name, values, trainable=trainable)
    return EmbeddingTable(weight, pad_index, unk_index)


def embed(table: EmbeddingTable, token_ids) -> Tensor:
    return ad.embedding(table.weight, token_ids, pad_index=table.pad_index)


# --------------------------------------------------------------------------
# affine


def linear(W: Tensor, b: Tensor | None, x: Tensor) -> Tensor:
    y = ad.matmul(x, W)
    return y if b is None else ad.add(y, b)


# --------------------------------------------------------------------------
# LSTM


@dataclass
class LSTMCellParams:
    """Gate weights stacked column-wise in the order input, forget, cell, output."""

    W_x: Tensor
    W_h: Tensor
    b: Tensor

    @property
    def input_size(self) -> int:
        return self.W_x.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.W_h.shape[0]


def init_lstm_cell(registry: ParamRegistry, prefix: str, input_size: int, hidden_size: int,
                   rng: np.random.Generator) -> LSTMCellParams:
    h = hidden_size
    bias = np.zeros(4 * h)
    bias[h:2 * h] = FORGET_BIAS
    return LSTMCellParams(
        registry.add(f"{prefix}.W_x", uniform(rng, (input_size, 4 * h), WEIGHT_INIT)),
        registry.add(f"{prefix}.W_h", uniform(rng, (h, 4 * h), WEIGHT_INIT)),
        registry.add(f"{prefix}.b", bias),
    )


def _gates(cell: LSTMCellParams, z: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    h = cell.hidden_size
    i = ad.sigmoid(z[..., 0:h])
    f = ad.sigmoid(z[..., h:2 * h])
    g = ad.tanh(z[..., 2 * h:3 * h])
    o = ad.sigmoid(z[..., 3 * h:4 * h])
    c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    return ad.mul(o, ad.tanh(c)), c


def lstm_step(cell: LSTMCellParams, h_prev: Tensor, c_prev: Tensor, x: Tensor) -> tuple[Tensor, Tensor]:
    if x.shape[-1] != cell.input_size:
        raise DimensionError(f"lstm_step: input width {x.shape[-1]} != cell input size {cell.input_size}")
    if h_prev.shape[-1] != cell.hidden_size or c_prev.shape != h_prev.shape:
        raise DimensionError(f"lstm_step: state shapes {h_prev.shape}/{c_prev.shape} "
                             f"do not match hidden size {cell.hidden_size}")
    z = ad.add(ad.add(ad.matmul(x, cell.W_x), ad.matmul(h_prev, cell.W_h)), cell.b)
    return _gates(cell, z, c_prev)


def _as_batch(X: Tensor, mask) -> tuple[Tensor, np.ndarray | None, bool]:
    squeeze = X.ndim == 2
    if squeeze:
        X = ad.reshape(X, (1,) + X.shape)
        if mask is not None:
            mask = np.asarray(mask, dtype=bool).reshape(1, -1)
    if X.ndim != 3:
        raise DimensionError(f"expected [n, d] or [batch, n, d] input, got {X.shape}")
    if X.shape[1] == 0:
        raise DataError("cannot encode an empty sequence")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != X.shape[:2]:
            raise DimensionError(f"mask shape {mask.shape} != {X.shape[:2]}")
        if mask.all():
            mask = None
    return X, mask, squeeze


def run_lstm(cell: LSTMCellParams, X: Tensor, mask=None, reverse: bool = False) -> Tensor:
    """Scan from a zero state and return every hidden state.

    Masked positions leave the state untouched, so a right-padded batch gives
    the same states at real positions as each sentence run alone.
    """
    X, mask, squeeze = _as_batch(X, mask)
    if X.shape[-1] != cell.input_size:
        raise DimensionError(f"run_lstm: input width {X.shape[-1]} != cell input size {cell.input_size}")
    batch, n = X.shape[0], X.shape[1]
    projected = ad.add(ad.matmul(X, cell.W_x), cell.b)
    zeros = np.zeros((batch, cell.hidden_size), dtype=X.data.dtype)
    h, c = Tensor(zeros), Tensor(zeros)
    steps = range(n - 1, -1, -1) if reverse else range(n)
    outputs: list[Tensor | None] = [None] * n
    for t in steps:
        z = ad.add(projected[:, t], ad.matmul(h, cell.W_h))
        h_new, c_new = _gates(cell, z, c)
        if mask is not None and not mask[:, t].all():
            keep = mask[:, t:t + 1]
            h_new, c_new = ad.select(keep, h_new, h), ad.select(keep, c_new, c)
        h, c = h_new, c_new
        outputs[t] = h
    H = ad.stack(outputs, axis=1)
    return ad.reshape(H, H.shape[1:]) if squeeze else H


@dataclass
class BiLSTMStack:
    layers: list[tuple[LSTMCellParams, LSTMCellParams]]

    @property
    def depth(self) -> int:
        return len(self.layers)


def init_bilstm_stack(registry: ParamRegistry, prefix: str, dim: int, depth: int,
                      rng: np.random.Generator) -> BiLSTMStack:
    if dim % 2:
        raise DimensionError(f"bi-LSTM width must be even, got {dim}")
    layers = []
    for layer in range(depth):
        fwd = init_lstm_cell(registry, f"{prefix}.{layer}.forward", dim, dim // 2, rng)
        bwd = init_lstm_cell(registry, f"{prefix}.{layer}.backward", dim, dim // 2, rng)
        layers.append((fwd, bwd))
    return BiLSTMStack(layers)


def run_bilstm_stack(stack: BiLSTMStack, X: Tensor, mask=None, dropout: float = 0.0,
                     training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
    """Forward and backward scans per layer, concatenated per position; dropout after each layer."""
    H = X
    for fwd, bwd in stack.layers:
        H = ad.concat([run_lstm(fwd, H, mask), run_lstm(bwd, H, mask, reverse=True)], axis=-1)
        H = ad.dropout(H, dropout, training, rng)
    return H


# --------------------------------------------------------------------------
# attention


@dataclass
class AttentionHead:
    W: Tensor
    b: Tensor
    u: Tensor


def init_attention_head(registry: ParamRegistry, prefix: str, dim: int,
                        rng: np.random.Generator) -> AttentionHead:
    return AttentionHead(
        registry.add(f"{prefix}.W", uniform(rng, (dim, dim), WEIGHT_INIT)),
        registry.add(f"{prefix}.b", np.zeros(dim)),
        registry.add(f"{prefix}.u", uniform(rng, (dim,), WEIGHT_INIT)),
    )


def attention(head: AttentionHead, H: Tensor, mask=None) -> Tensor:
    """``softmax(u . tanh(H W + b))`` over positions; padded positions get weight 0."""
    M = ad.tanh(linear(head.W, head.b, H))
    if H.ndim == 2:
        scores = ad.einsum("nd,d->n", M, head.u)
    else:
        scores = ad.einsum("bnd,d->bn", M, head.u)
    return ad.softmax(scores, axis=-1, mask=None if mask is None else np.asarray(mask, dtype=bool))

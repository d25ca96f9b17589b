"""Neural layers: embedding lookup, linear features, LSTM, same-padded
1D convolution, and scaled dot-product self-attention.

All layers are pure functions of (parameters, inputs) built from tensor
primitives, so they differentiate through ``tensor.backward`` with no
layer-specific backward code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .tensor import Tensor


@dataclass
class EmbeddingTable:
    """Lookup table of shape [cardinality x d]."""

    table: Tensor

    @property
    def cardinality(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]


@dataclass
class LstmParams:
    """Gate parameters; each W maps the concatenation [x_t; h_prev]."""

    W_i: Tensor
    W_f: Tensor
    W_o: Tensor
    W_g: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_g: Tensor

    @property
    def hidden(self) -> int:
        return self.W_i.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_i.shape[1] - self.W_i.shape[0]


@dataclass
class ConvKernel:
    """1D convolution parameters.

    ``weights`` stores the [out x window x in] filter bank flattened to a
    [window*in x out] matrix, tap-major, so the convolution reduces to one
    matrix product over stacked input windows. ``window`` must be odd so
    same-padding is symmetric.
    """

    weights: Tensor
    bias: Tensor
    window: int

    def __post_init__(self):
        if self.window % 2 == 0 or self.window < 1:
            raise ConfigError(f"conv window must be odd, got {self.window}")
        if self.weights.shape[0] % self.window != 0:
            raise ShapeError(
                f"conv weights {self.weights.shape} not divisible by window {self.window}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0] // self.window

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def from_filters(cls, filters, bias) -> "ConvKernel":
        """Build from a [out x window x in] filter array."""
        filters = np.asarray(filters, dtype=np.float64)
        out, window, d_in = filters.shape
        # (out, h, in) -> (h, in, out) -> (h*in, out)
        flat = filters.transpose(1, 2, 0).reshape(window * d_in, out)
        return cls(T.constant(flat), T.constant(np.asarray(bias, float)), window)


def embed(table: EmbeddingTable, index: int) -> Tensor:
    """Row lookup; the row receives a sparse gradient."""
    if not 0 <= index < table.cardinality:
        raise IndexError(
            f"embedding index {index} out of range [0, {table.cardinality})"
        )
    row = T.slice_along(table.table, index, index + 1, axis=0)
    return T.reshape(row, (table.dim,))


def linear_feature(weight: Tensor, bias: Tensor, x) -> Tensor:
    """weight * x + bias for a scalar feature x (float or scalar tensor)."""
    if isinstance(x, Tensor):
        return T.add(T.multiply(weight, x), bias)
    return T.add(T.scale(weight, float(x)), bias)


def lstm_cell(params: LstmParams, x_t: Tensor, h_prev: Tensor, c_prev: Tensor):
    """One step: gates on [x_t; h_prev], then the standard state update
    c_t = f*c_prev + i*g and h_t = o*tanh(c_t)."""
    z = T.concat([x_t, h_prev], axis=0)
    i = T.sigmoid(T.add(T.matmul(params.W_i, z), params.b_i))
    f = T.sigmoid(T.add(T.matmul(params.W_f, z), params.b_f))
    o = T.sigmoid(T.add(T.matmul(params.W_o, z), params.b_o))
    g = T.tanh(T.add(T.matmul(params.W_g, z), params.b_g))
    c_t = T.add(T.multiply(f, c_prev), T.multiply(i, g))
    h_t = T.multiply(o, T.tanh(c_t))
    return h_t, c_t


def lstm_sequence(params: LstmParams, sequence: Tensor) -> Tensor:
    """Fold lstm_cell over the rows of [n x d]; returns the last hidden state."""
    if sequence.ndim != 2 or sequence.shape[0] < 1:
        raise ContractError(f"sequence must be a nonempty matrix, got {sequence.shape}")
    n, d = sequence.shape
    hidden = params.hidden
    h = T.constant(np.zeros(hidden))
    c = T.constant(np.zeros(hidden))
    for t in range(n):
        x_t = T.reshape(T.slice_along(sequence, t, t + 1, axis=0), (d,))
        h, c = lstm_cell(params, x_t, h, c)
    return h


def conv1d_same(kernel: ConvKernel, sequence: Tensor) -> Tensor:
    """Zero-padded 1D convolution; [n x in] -> [n x out] with out = kernel.out_dim."""
    if sequence.ndim != 2:
        raise ShapeError(f"conv input must be a matrix, got {sequence.shape}")
    n, d = sequence.shape
    if d != kernel.in_dim:
        raise ShapeError(
            f"conv input width {d} does not match kernel input width {kernel.in_dim}"
        )
    pad = (kernel.window - 1) // 2
    if pad:
        zeros = T.constant(np.zeros((pad, d)))
        padded = T.concat([zeros, sequence, zeros], axis=0)
    else:
        padded = sequence
    windows = T.concat(
        [T.slice_along(padded, j, j + n, axis=0) for j in range(kernel.window)],
        axis=1,
    )
    out = T.matmul(windows, kernel.weights)
    tiled_bias = T.matmul(
        T.constant(np.ones((n, 1))), T.reshape(kernel.bias, (1, kernel.out_dim))
    )
    return T.add(out, tiled_bias)


def self_attention(c: Tensor, d_k: int | None = None, projections=None) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v with query = key = value = c.

    By default there are no learned projections. Passing ``projections`` as
    a (W_q, W_k, W_v) triple of [d x d] tensors right-multiplies c before
    the attention product instead.
    """
    if c.ndim != 2 or c.shape[0] < 1:
        raise ContractError(f"attention input must be a nonempty matrix, got {c.shape}")
    if projections is None:
        q = k = v = c
    else:
        w_q, w_k, w_v = projections
        q, k, v = T.matmul(c, w_q), T.matmul(c, w_k), T.matmul(c, w_v)
    if d_k is None:
        d_k = k.shape[1]
    if d_k <= 0:
        raise ConfigError(f"d_k must be positive, got {d_k}")
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(d_k))
    weights = T.softmax(scores, axis=1)
    return T.matmul(weights, v)


def attention_pool(attended: Tensor) -> Tensor:
    """Sum over the sequence axis; [n x d] -> [d]."""
    if attended.ndim != 2 or attended.shape[0] < 1:
        raise ContractError(f"pool input must be a nonempty matrix, got {attended.shape}")
    return T.reduce_sum(attended, axis=0)


def stack_rows(rows) -> Tensor:
    """Stack k vectors of length d into a [k x d] matrix."""
    if not rows:
        raise ContractError("stack_rows: need at least one row")
    return T.concat([T.reshape(r, (1, r.shape[0])) for r in rows], axis=0)

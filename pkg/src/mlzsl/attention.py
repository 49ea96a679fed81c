"""Self-attention across the M semantic row vectors.

Multi-head scaled dot-product attention without positional encoding or a
class token, followed by a row-wise two-layer MLP.  Rows are an
unordered set, so the whole block is permutation equivariant.

Two residual wirings are provided.  The default "pre_norm" block is

    u = A + MHA(LN1(A));  out = u + MLP(LN2(u))

and is the identity map when all attention and MLP weights are zero.
The "literal" wiring feeds the attention output plus the input straight
into the MLP with no outer residual: out = MLP(MHA(LN1(A)) + A).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

WIRINGS = ("pre_norm", "literal")
SCALE_MODES = ("word_dim", "head_dim")


@dataclass
class SaParams:
    """Learnable tensors of the semantic self-attention block.

    Query/key/value weights are full word_dim x word_dim matrices whose
    output columns are split across ``heads`` equal slices.
    """

    ln1_gain: Tensor
    ln1_bias: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    mlp_w1: Tensor
    mlp_b1: Tensor
    mlp_w2: Tensor
    mlp_b2: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    heads: int

    @property
    def word_dim(self) -> int:
        return self.wq.shape[0]

    def named(self, prefix: str = "sa") -> dict[str, Tensor]:
        return {
            f"{prefix}.ln1_gain": self.ln1_gain, f"{prefix}.ln1_bias": self.ln1_bias,
            f"{prefix}.wq": self.wq, f"{prefix}.wk": self.wk, f"{prefix}.wv": self.wv,
            f"{prefix}.wo": self.wo,
            f"{prefix}.mlp_w1": self.mlp_w1, f"{prefix}.mlp_b1": self.mlp_b1,
            f"{prefix}.mlp_w2": self.mlp_w2, f"{prefix}.mlp_b2": self.mlp_b2,
            f"{prefix}.ln2_gain": self.ln2_gain, f"{prefix}.ln2_bias": self.ln2_bias,
        }


def init_sa_params(rng: np.random.Generator, word_dim: int, heads: int,
                   ff_dim: int | None = None, dtype=np.float32,
                   zero: bool = False) -> SaParams:
    if word_dim % heads:
        raise ShapeError(f"word_dim {word_dim} not divisible by {heads} heads")
    if ff_dim is None:
        ff_dim = 2 * word_dim

    def mat(shape, fan_in, fan_out):
        if zero:
            return T.parameter(np.zeros(shape, dtype=dtype))
        return T.parameter(T.glorot_uniform(rng, shape, fan_in, fan_out, dtype))

    d = word_dim
    return SaParams(
        ln1_gain=T.parameter(np.ones(d, dtype=dtype)),
        ln1_bias=T.parameter(np.zeros(d, dtype=dtype)),
        wq=mat((d, d), d, d), wk=mat((d, d), d, d), wv=mat((d, d), d, d),
        wo=mat((d, d), d, d),
        mlp_w1=mat((d, ff_dim), d, ff_dim),
        mlp_b1=T.parameter(np.zeros(ff_dim, dtype=dtype)),
        mlp_w2=mat((ff_dim, d), ff_dim, d),
        mlp_b2=T.parameter(np.zeros(d, dtype=dtype)),
        ln2_gain=T.parameter(np.ones(d, dtype=dtype)),
        ln2_bias=T.parameter(np.zeros(d, dtype=dtype)),
        heads=heads,
    )


def qkv(a_norm: Tensor, params: SaParams) -> tuple[Tensor, Tensor, Tensor]:
    """Project normalized rows into query, key and value embeddings."""
    return (T.matmul(a_norm, params.wq),
            T.matmul(a_norm, params.wk),
            T.matmul(a_norm, params.wv))


def attention_scores(q: Tensor, k: Tensor, scale_dim: int) -> Tensor:
    """Row-softmax of q k^T / sqrt(scale_dim) for one head."""
    if q.shape != k.shape:
        raise ShapeError(f"attention_scores: {q.shape} vs {k.shape}")
    logits = T.scale(T.matmul(q, T.transpose(k)), 1.0 / math.sqrt(scale_dim))
    return T.softmax_rows(logits)


def attend(scores: Tensor, v: Tensor) -> Tensor:
    """Mix value rows by the attention weights of one head."""
    return T.matmul(scores, v)


def multi_head(a_norm: Tensor, params: SaParams, scale: str = "word_dim") -> Tensor:
    """Split columns into heads, attend per head, concatenate, project."""
    if scale not in SCALE_MODES:
        raise ValueError(f"unknown attention scale mode {scale!r}")
    d = params.word_dim
    dh = d // params.heads
    scale_dim = d if scale == "word_dim" else dh
    q, k, v = qkv(a_norm, params)
    outs = []
    for h in range(params.heads):
        lo, hi = h * dh, (h + 1) * dh
        qh, kh, vh = (T.slice_cols(q, lo, hi), T.slice_cols(k, lo, hi),
                      T.slice_cols(v, lo, hi))
        outs.append(attend(attention_scores(qh, kh, scale_dim), vh))
    merged = outs[0] if len(outs) == 1 else T.concat(outs, axis=1)
    return T.matmul(merged, params.wo)


def _mlp(x: Tensor, params: SaParams) -> Tensor:
    hidden = T.relu(T.add_rowvec(T.matmul(x, params.mlp_w1), params.mlp_b1))
    return T.add_rowvec(T.matmul(hidden, params.mlp_w2), params.mlp_b2)


def sa_block(a: Tensor, params: SaParams, wiring: str = "pre_norm",
             scale: str = "word_dim", eps: float = 1e-5) -> Tensor:
    """Enrich the M x word_dim matrix with cross-row correlations."""
    if a.data.ndim != 2 or a.shape[1] != params.word_dim:
        raise ShapeError(f"sa_block: input {a.shape} vs width {params.word_dim}")
    if wiring not in WIRINGS:
        raise ValueError(f"unknown residual wiring {wiring!r}")
    normed = T.layer_norm(a, params.ln1_gain, params.ln1_bias, eps)
    mixed = multi_head(normed, params, scale)
    if wiring == "literal":
        return _mlp(T.add(mixed, a), params)
    u = T.add(a, mixed)
    return T.add(u, _mlp(T.layer_norm(u, params.ln2_gain, params.ln2_bias, eps), params))

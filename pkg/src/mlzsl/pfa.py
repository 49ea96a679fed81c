"""Channel attention over the fused multi-scale map.

The chain is: a learnable 1x1 channel mixer, global average pooling to a
channel descriptor, a two-layer bottleneck that produces nonnegative
per-channel gates, channel-wise reweighting, and finally a dense
projection of the pooled reweighted descriptor into M semantic row
vectors of width ``word_dim``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class PfaParams:
    """Learnable tensors of the channel-attention stage.

    ``excite_reduce`` is C' x C_ex and ``excite_expand`` is C_ex x C',
    with C_ex = max(1, round(C'/reduction)).  ``project_w`` maps the
    pooled C' descriptor to M * word_dim outputs.
    """

    map_w: Tensor          # C_in x C'
    map_b: Tensor          # C'
    excite_reduce: Tensor  # C' x C_ex
    excite_expand: Tensor  # C_ex x C'
    project_w: Tensor      # C' x (M * word_dim)
    project_b: Tensor      # M * word_dim
    num_vectors: int
    word_dim: int

    def named(self, prefix: str = "pfa") -> dict[str, Tensor]:
        return {
            f"{prefix}.map_w": self.map_w,
            f"{prefix}.map_b": self.map_b,
            f"{prefix}.excite_reduce": self.excite_reduce,
            f"{prefix}.excite_expand": self.excite_expand,
            f"{prefix}.project_w": self.project_w,
            f"{prefix}.project_b": self.project_b,
        }


def bottleneck_width(channels: int, reduction: float) -> int:
    return max(1, int(round(channels / reduction)))


def init_pfa_params(rng: np.random.Generator, in_channels: int, mapped_channels: int,
                    reduction: float, num_vectors: int, word_dim: int,
                    dtype=np.float32, zero: bool = False) -> PfaParams:
    c_ex = bottleneck_width(mapped_channels, reduction)
    out = num_vectors * word_dim

    def mat(shape, fan_in, fan_out):
        if zero:
            return T.parameter(np.zeros(shape, dtype=dtype))
        return T.parameter(T.glorot_uniform(rng, shape, fan_in, fan_out, dtype))

    return PfaParams(
        map_w=mat((in_channels, mapped_channels), in_channels, mapped_channels),
        map_b=T.parameter(np.zeros(mapped_channels, dtype=dtype)),
        excite_reduce=mat((mapped_channels, c_ex), mapped_channels, c_ex),
        excite_expand=mat((c_ex, mapped_channels), c_ex, mapped_channels),
        project_w=mat((mapped_channels, out), mapped_channels, out),
        project_b=T.parameter(np.zeros(out, dtype=dtype)),
        num_vectors=num_vectors,
        word_dim=word_dim,
    )


def map_features(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-pixel linear map across channels (1x1 convolution) plus bias."""
    if x.data.ndim != 3:
        raise ShapeError(f"map_features: expects C x H x W, got {x.shape}")
    c, h, w_ = x.shape
    if w.shape[0] != c:
        raise ShapeError(f"map_features: weights {w.shape} vs {c} input channels")
    pixels = T.transpose(T.reshape(x, (c, h * w_)))          # HW x C_in
    mixed = T.add_rowvec(T.matmul(pixels, w), b)             # HW x C'
    return T.reshape(T.transpose(mixed), (w.shape[1], h, w_))


def excite(z: Tensor, params: PfaParams, gate: str = "relu") -> Tensor:
    """Two-layer channel bottleneck producing per-channel gates.

    Both activations are ReLU by default, so gates are nonnegative; a
    sigmoid second gate is available for comparison runs.
    """
    if z.data.ndim != 1 or z.shape[0] != params.excite_reduce.shape[0]:
        raise ShapeError(f"excite: descriptor {z.shape} vs {params.excite_reduce.shape}")
    row = T.reshape(z, (1, z.shape[0]))
    hidden = T.relu(T.matmul(row, params.excite_reduce))
    pre = T.matmul(hidden, params.excite_expand)
    if gate == "relu":
        gated = T.relu(pre)
    elif gate == "sigmoid":
        gated = T.sigmoid(pre)
    else:
        raise ValueError(f"unknown excite gate {gate!r}")
    return T.reshape(gated, (z.shape[0],))


def reweight(x: Tensor, gates: Tensor) -> Tensor:
    """Channel-wise multiplication of the mapped feature by its gates."""
    return T.scale_channels(x, gates)


def project_semantic(pooled: Tensor, w: Tensor, b: Tensor,
                     num_vectors: int, word_dim: int) -> Tensor:
    """Dense map of the pooled descriptor to an M x word_dim matrix.

    The output vector fills the matrix row-major: row m occupies flat
    entries [m * word_dim, (m + 1) * word_dim).
    """
    if pooled.data.ndim != 1 or w.shape[0] != pooled.shape[0]:
        raise ShapeError(f"project_semantic: input {pooled.shape} vs weights {w.shape}")
    if w.shape[1] != num_vectors * word_dim:
        raise ShapeError(
            f"project_semantic: weights produce {w.shape[1]} outputs, "
            f"need {num_vectors} x {word_dim}")
    row = T.reshape(pooled, (1, pooled.shape[0]))
    flat = T.add_rowvec(T.matmul(row, w), b)
    return T.reshape(flat, (num_vectors, word_dim))


def pfa_forward(x: Tensor, params: PfaParams, gate: str = "relu") -> Tensor:
    """Full chain: map, squeeze, excite, reweight, pool, project."""
    mixed = map_features(x, params.map_w, params.map_b)
    gates = excite(T.global_avg_pool(mixed), params, gate)
    weighted = reweight(mixed, gates)
    return project_semantic(T.global_avg_pool(weighted), params.project_w,
                            params.project_b, params.num_vectors, params.word_dim)

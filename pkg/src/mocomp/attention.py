"""Cross-attention operators over token matrices.

Two forms of the same attention-style aggregation are provided: the
quadratic reference form, which materializes an L_q x L_k similarity
matrix, and a factorized form that applies softmax to queries (rows)
and key/values (columns) independently and associates the matrix
product so that only a C x C mixing matrix is ever formed. The
factorized form therefore runs in time and memory linear in the token
count.

Token convention, fixed package-wide: spatial positions are rows,
channels are columns. A C x H x W feature map flattens to an
(H*W) x C token matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ResourceLimitError, ShapeError
from .seeding import derived_rng
from .tensor import (
    Tensor,
    softmax_cols_backward,
    softmax_rows_backward,
)

DEFAULT_SIMILARITY_CAP = 1 << 24  # entries, not bytes
_LEAKY_SLOPE = 0.01
_EMBED_SPAN = 0.1


@dataclass(frozen=True)
class AttentionInputs:
    """Query tokens (L_q x C) and key/value tokens (L_k x C)."""

    query: Tensor
    keyvalue: Tensor

    def __post_init__(self) -> None:
        if self.query.rank != 2 or self.keyvalue.rank != 2:
            raise ShapeError(
                f"attention inputs must be rank-2 token matrices, got "
                f"{self.query.dims} and {self.keyvalue.dims}"
            )
        if self.query.dims[1] != self.keyvalue.dims[1]:
            raise ShapeError(
                f"channel mismatch: query has {self.query.dims[1]} channels, "
                f"key/value has {self.keyvalue.dims[1]}"
            )

    @property
    def query_len(self) -> int:
        return self.query.dims[0]

    @property
    def key_len(self) -> int:
        return self.keyvalue.dims[0]

    @property
    def channels(self) -> int:
        return self.query.dims[1]


def vanilla_cross_attention(inp: AttentionInputs) -> tuple[Tensor, Tensor]:
    """Quadratic-cost reference attention.

    Returns (output, similarity) where similarity is the row-stochastic
    L_q x L_k matrix softmax_rows(query . keyvalue^T) and output is
    similarity . keyvalue.
    """
    q = inp.query.data
    kv = inp.keyvalue.data
    sim = kernels.softmax_rows(q @ kv.T)
    out = sim @ kv
    return Tensor(out), Tensor(sim)


def efficient_cross_attention(inp: AttentionInputs) -> Tensor:
    """Factorized attention: softmax_rows(Q) . (softmax_cols(KV)^T . KV).

    The C x C inner product is formed first; no buffer with
    L_q * L_k entries is ever allocated, so the peak footprint is
    O((L_q + L_k) * C + C^2).
    """
    q = inp.query.data
    kv = inp.keyvalue.data
    p = kernels.softmax_rows(q)
    s = kernels.softmax_cols(kv)
    mixed = s.T @ kv  # C x C, formed before touching the query side
    return Tensor(p @ mixed)


def materialize_efficient_similarity(
    inp: AttentionInputs, cap_entries: int = DEFAULT_SIMILARITY_CAP
) -> Tensor:
    """Explicit L_q x L_k similarity of the factorized form (test-only path).

    Every entry is nonnegative and every row sums to one: query rows are
    distributions over channels and key/value columns are distributions
    over tokens. Refuses to allocate beyond ``cap_entries``.
    """
    entries = inp.query_len * inp.key_len
    if entries > cap_entries:
        raise ResourceLimitError(
            f"similarity matrix {inp.query_len} x {inp.key_len} has {entries} "
            f"entries, exceeding the cap of {cap_entries}"
        )
    p = kernels.softmax_rows(inp.query.data)
    s = kernels.softmax_cols(inp.keyvalue.data)
    return Tensor(p @ s.T)


def efficient_attention_backward(
    inp: AttentionInputs, d_out: Tensor
) -> tuple[Tensor, Tensor]:
    """Analytic gradients of :func:`efficient_cross_attention`.

    Composed from the tensor-module backward kernels via the chain rule
    through both softmaxes and both matrix products.
    """
    if d_out.dims != (inp.query_len, inp.channels):
        raise ShapeError(
            f"upstream gradient dims {d_out.dims} do not match output dims "
            f"{(inp.query_len, inp.channels)}"
        )
    q = inp.query.data
    kv = inp.keyvalue.data
    p = kernels.softmax_rows(q)
    s = kernels.softmax_cols(kv)
    mixed = s.T @ kv
    g = d_out.data

    d_p = g @ mixed.T
    d_mixed = p.T @ g
    d_q = softmax_rows_backward(Tensor(p), Tensor(d_p))
    d_s = kv @ d_mixed.T
    d_kv_through_softmax = softmax_cols_backward(Tensor(s), Tensor(d_s))
    d_kv = d_kv_through_softmax.data + s @ d_mixed
    return d_q, Tensor(d_kv)


@dataclass(frozen=True)
class EmbedParams:
    """Weights of the residual bottleneck used for nonlinear embedding.

    Two pointwise projections bracket a per-channel three-tap convolution
    along the token axis. Regenerating from the same seed is bit-identical;
    all-zero parameters make the embedding an exact identity.
    """

    seed: int
    w_in: np.ndarray  # (C, hidden)
    b_in: np.ndarray  # (hidden,)
    w_depth: np.ndarray  # (hidden, 3)
    w_out: np.ndarray  # (hidden, C)
    b_out: np.ndarray  # (C,)

    def __post_init__(self) -> None:
        c, hidden = self.w_in.shape
        ok = (
            self.b_in.shape == (hidden,)
            and self.w_depth.shape == (hidden, 3)
            and self.w_out.shape == (hidden, c)
            and self.b_out.shape == (c,)
        )
        if not ok:
            raise ShapeError("inconsistent embedding parameter shapes")

    @property
    def channels(self) -> int:
        return self.w_in.shape[0]

    @classmethod
    def generate(cls, channels: int, seed: int) -> "EmbedParams":
        if channels < 1:
            raise ShapeError("channel count must be >= 1")
        hidden = max(1, channels // 2)
        rng = derived_rng(seed, "embed")
        draw = lambda *shape: rng.uniform(-_EMBED_SPAN, _EMBED_SPAN, shape)
        return cls(
            seed=seed,
            w_in=draw(channels, hidden),
            b_in=draw(hidden),
            w_depth=draw(hidden, 3),
            w_out=draw(hidden, channels),
            b_out=draw(channels),
        )

    @classmethod
    def zeros(cls, channels: int) -> "EmbedParams":
        hidden = max(1, channels // 2)
        return cls(
            seed=0,
            w_in=np.zeros((channels, hidden)),
            b_in=np.zeros(hidden),
            w_depth=np.zeros((hidden, 3)),
            w_out=np.zeros((hidden, channels)),
            b_out=np.zeros(channels),
        )


def drb_embed(x: Tensor, params: EmbedParams) -> Tensor:
    """Residual bottleneck embedding of an L x C token matrix."""
    if x.rank != 2:
        raise ShapeError(f"embedding expects an L x C token matrix, got {x.dims}")
    if x.dims[1] != params.channels:
        raise ShapeError(
            f"token matrix has {x.dims[1]} channels but parameters expect "
            f"{params.channels}"
        )
    xd = x.data
    dt = xd.dtype
    h = xd @ params.w_in.astype(dt) + params.b_in.astype(dt)
    # three-tap depthwise convolution along tokens, replicate-padded ends
    hp = np.concatenate([h[:1], h, h[-1:]], axis=0)
    wd = params.w_depth.astype(dt)
    h = hp[:-2] * wd[:, 0] + hp[1:-1] * wd[:, 1] + hp[2:] * wd[:, 2]
    h = np.where(h > 0, h, dt.type(_LEAKY_SLOPE) * h)
    return Tensor(xd + (h @ params.w_out.astype(dt) + params.b_out.astype(dt)))


def global_context(middle: Tensor, propagated: Tensor, params: EmbedParams) -> Tensor:
    """Attention-aggregated context for one pyramid scale.

    Both maps are flattened to token matrices, embedded, and fed through
    the factorized attention with ``middle`` as query and the embedded
    ``propagated`` feature as key/value. The result is reshaped back to
    the input's C x H x W layout.
    """
    if middle.rank != 3 or middle.dims != propagated.dims:
        raise ShapeError(
            f"global context needs matching C x H x W maps, got {middle.dims} "
            f"and {propagated.dims}"
        )
    c, h, w = middle.dims
    q_tokens = Tensor(np.ascontiguousarray(middle.data.reshape(c, h * w).T))
    kv_tokens = Tensor(np.ascontiguousarray(propagated.data.reshape(c, h * w).T))
    out = efficient_cross_attention(
        AttentionInputs(drb_embed(q_tokens, params), drb_embed(kv_tokens, params))
    )
    return Tensor(np.ascontiguousarray(out.data.T).reshape(c, h, w))

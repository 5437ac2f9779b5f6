"""Single-head spatial/temporal self-attention and the stacked attention pairs.

Activations are laid out ``(..., N, T, D)``. The spatial module swaps the
node and time axes so that attention runs across sensors; the temporal module
attends across time directly. Both share one kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rope import SPATIAL, TEMPORAL, RopePhases, apply_rope
from .tensor import ShapeError, Tensor, add, matmul, scale, softmax_last, transpose_last


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape or (fan_in, fan_out)), requires_grad=True)


@dataclass
class AttentionWeights:
    wq: Tensor
    wk: Tensor
    wv: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int) -> "AttentionWeights":
        return cls(glorot(rng, dim, dim), glorot(rng, dim, dim), glorot(rng, dim, dim))

    def tensors(self) -> list[Tensor]:
        return [self.wq, self.wk, self.wv]


@dataclass
class StaPair:
    spatial: AttentionWeights
    temporal: AttentionWeights
    index: int = 0

    @classmethod
    def init(cls, rng: np.random.Generator, dim: int, index: int = 0) -> "StaPair":
        return cls(AttentionWeights.init(rng, dim), AttentionWeights.init(rng, dim), index)

    def tensors(self) -> list[Tensor]:
        return self.spatial.tensors() + self.temporal.tensors()


def _swap_node_time(v: Tensor) -> Tensor:
    axes = list(range(v.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return v.permute(axes)


def qkv_project(
    v: Tensor,
    w: AttentionWeights,
    phases: RopePhases,
    variant: str,
    rotate_variant: str = "standard",
) -> tuple[Tensor, Tensor, Tensor]:
    """Project to queries, keys, values; rotary phases go on queries and keys only.

    ``v`` must already be in the variant's layout (T x N x D for spatial).
    """
    cos, sin = phases.cos_sin(variant)
    if v.shape[-3:] != cos.shape:
        raise ShapeError(f"input {v.shape} does not match {variant} phase table {cos.shape}")
    q = apply_rope(matmul(v, w.wq), cos, sin, rotate_variant)
    k = apply_rope(matmul(v, w.wk), cos, sin, rotate_variant)
    return q, k, matmul(v, w.wv)


def scaled_scores(q: Tensor, k: Tensor) -> Tensor:
    if q.shape != k.shape:
        raise ShapeError(f"query {q.shape} and key {k.shape} shapes differ")
    return scale(matmul(q, transpose_last(k)), 1.0 / math.sqrt(q.shape[-1]))


def attention_apply(scores: Tensor, values: Tensor, variant: str = TEMPORAL) -> Tensor:
    """Softmax-weighted sum of values; spatial output is swapped back to (..., N, T, D)."""
    if scores.shape[-1] != scores.shape[-2]:
        raise ShapeError(f"attention scores must be square in the last two axes, got {scores.shape}")
    out = matmul(softmax_last(scores), values)
    return _swap_node_time(out) if variant == SPATIAL else out


def attention(
    v: Tensor,
    w: AttentionWeights,
    phases: RopePhases,
    variant: str,
    rotate_variant: str = "standard",
) -> Tensor:
    """One attention module on ``(..., N, T, D)`` input, returning the same layout."""
    x = _swap_node_time(v) if variant == SPATIAL else v
    q, k, val = qkv_project(x, w, phases, variant, rotate_variant)
    return attention_apply(scaled_scores(q, k), val, variant)


def sta_pair_forward(
    pair: StaPair,
    v: Tensor,
    phases: RopePhases,
    use_spatial: bool = True,
    use_temporal: bool = True,
    rotate_variant: str = "standard",
    residual: bool = False,
) -> Tensor:
    """Sum of the spatial and temporal branch outputs on the same input."""
    if not (use_spatial or use_temporal):
        raise ValueError("at least one of the spatial/temporal branches must be enabled")
    branches = []
    if use_spatial:
        branches.append(attention(v, pair.spatial, phases, SPATIAL, rotate_variant))
    if use_temporal:
        branches.append(attention(v, pair.temporal, phases, TEMPORAL, rotate_variant))
    out = branches[0] if len(branches) == 1 else add(branches[0], branches[1])
    return add(out, v) if residual else out


def stack_forward(pairs: list[StaPair], v: Tensor, phases: RopePhases, **kwargs) -> Tensor:
    if not pairs:
        raise ValueError("need at least one attention pair (K >= 1)")
    for pair in pairs:
        v = sta_pair_forward(pair, v, phases, **kwargs)
    return v

"""Two-axis rotary position encoding over (time, sensor) positions.

Each attention variant gets a constant phase tensor built from one frequency
ladder and two position grids spanning [-1, 1]: one over the T time steps
and one over the N sensors. The spatial variant lays the phases out as
T x N x D, the temporal variant as N x T x D, matching the axis order each
attention kernel sees.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError
from .tensor import ShapeError, Tensor, _broadcast_shape, record_op

SPATIAL = "S"
TEMPORAL = "T"
ROTATE_VARIANTS = ("standard", "paper_literal")
THETA_GRID = (64, 128, 256, 512)


@dataclass(frozen=True)
class RopeConfig:
    embed_dim: int
    window: int
    node_count: int
    theta_spatial: float = 128.0
    theta_temporal: float = 128.0
    rotate_variant: str = "standard"

    def __post_init__(self):
        if self.embed_dim < 2 or self.embed_dim % 2:
            raise ConfigError(f"embed_dim must be even and >= 2, got {self.embed_dim}")
        if self.theta_spatial <= 0 or self.theta_temporal <= 0:
            raise ConfigError("theta values must be positive")
        if self.rotate_variant not in ROTATE_VARIANTS:
            raise ConfigError(f"rotate_variant must be one of {ROTATE_VARIANTS}, got {self.rotate_variant!r}")

    def theta(self, variant: str) -> float:
        if variant == SPATIAL:
            return self.theta_spatial
        if variant == TEMPORAL:
            return self.theta_temporal
        raise ConfigError(f"variant must be 'S' or 'T', got {variant!r}")


def frequency_sequence(embed_dim: int, theta: float) -> np.ndarray:
    """``pi * (2i - 1) / (D - 1) * theta / 2`` for ``i = 1 .. D/2``."""
    if embed_dim < 2 or embed_dim % 2:
        raise ConfigError(f"embed_dim must be even and >= 2, got {embed_dim}")
    i = np.arange(1, embed_dim // 2 + 1, dtype=np.float64)
    return np.pi * (2.0 * i - 1.0) / (embed_dim - 1) * (theta / 2.0)


def position_sequence(length: int) -> np.ndarray:
    """``length`` evenly spaced points from -1 to 1 inclusive."""
    if length < 2:
        raise ConfigError(f"position sequence needs length >= 2, got {length}")
    return np.linspace(-1.0, 1.0, length)


def mixed_phase(cfg: RopeConfig, variant: str) -> np.ndarray:
    freq = frequency_sequence(cfg.embed_dim, cfg.theta(variant))
    time_phase = np.outer(position_sequence(cfg.window), freq)
    node_phase = np.outer(position_sequence(cfg.node_count), freq)
    if variant == SPATIAL:
        half = time_phase[:, None, :] + node_phase[None, :, :]
    else:
        half = node_phase[:, None, :] + time_phase[None, :, :]
    return np.concatenate([half, half], axis=-1)


class RopePhases:
    """Precomputed cos/sin tables for both variants. Constants, never on a tape."""

    def __init__(self, cfg: RopeConfig, enabled: bool = True):
        self.cfg = cfg
        self.enabled = enabled
        self.spatial = mixed_phase(cfg, SPATIAL)
        self.temporal = mixed_phase(cfg, TEMPORAL)
        if not enabled:
            self.spatial = np.zeros_like(self.spatial)
            self.temporal = np.zeros_like(self.temporal)

    def phase(self, variant: str) -> np.ndarray:
        return self.spatial if variant == SPATIAL else self.temporal

    @cached_property
    def _tables(self) -> dict[str, tuple[Tensor, Tensor]]:
        return {
            v: (Tensor(np.cos(self.phase(v))), Tensor(np.sin(self.phase(v))))
            for v in (SPATIAL, TEMPORAL)
        }

    def cos_sin(self, variant: str) -> tuple[Tensor, Tensor]:
        return self._tables[variant]


def _rotate(x: np.ndarray, variant: str) -> np.ndarray:
    h = x.shape[-1] // 2
    if variant == "standard":
        return np.concatenate([-x[..., h:], x[..., :h]], axis=-1)
    # paper_literal: first half untouched; second half negated at its even offsets
    out = x.copy()
    out[..., h::2] *= -1.0
    return out


def _rotate_adjoint(g: np.ndarray, variant: str) -> np.ndarray:
    if variant == "standard":
        return -_rotate(g, variant)
    return _rotate(g, variant)


def _check_rotatable(shape: tuple[int, ...], variant: str) -> None:
    if not shape or shape[-1] % 2:
        raise ShapeError(f"rotate_half needs an even last axis, got shape {shape}")
    if variant not in ROTATE_VARIANTS:
        raise ConfigError(f"unknown rotate variant {variant!r}")


def rotate_half(v: Tensor, variant: str = "standard") -> Tensor:
    """``standard``: ``(a, b) -> (-b, a)`` on the two halves. ``paper_literal``: negate every other entry of the second half."""
    _check_rotatable(v.shape, variant)
    return record_op(_rotate(v.data, variant), (v,), lambda g: (_rotate_adjoint(g, variant),))


def apply_rope(v: Tensor, cos: Tensor | np.ndarray, sin: Tensor | np.ndarray, variant: str = "standard") -> Tensor:
    """``v * cos(phase) + rotate_half(v) * sin(phase)`` as one recorded op; the tables are constants."""
    cos = cos.data if isinstance(cos, Tensor) else np.asarray(cos, dtype=np.float64)
    sin = sin.data if isinstance(sin, Tensor) else np.asarray(sin, dtype=np.float64)
    if cos.shape != sin.shape:
        raise ShapeError(f"cos table {cos.shape} and sin table {sin.shape} differ")
    _check_rotatable(v.shape, variant)
    if _broadcast_shape(v.shape, cos.shape) != v.shape:
        raise ShapeError(f"phase table {cos.shape} does not broadcast onto {v.shape}")
    out = v.data * cos + _rotate(v.data, variant) * sin
    return record_op(out, (v,), lambda g: (g * cos + _rotate_adjoint(g * sin, variant),))


def apply_rope_phase(v: Tensor, phase: np.ndarray, variant: str = "standard") -> Tensor:
    return apply_rope(v, np.cos(phase), np.sin(phase), variant)

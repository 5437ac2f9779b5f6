"""Forecaster assembly: input embedding, stacked attention pairs, output head, loss, checkpoints."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .attention import StaPair, glorot, stack_forward
from .errors import BadMagicError, BadVersionError, ConfigError, IncompatibleCheckpointError, NumericalError, TruncatedError
from .graph import SpectralBasis, graph_embedding
from .rope import ROTATE_VARIANTS, RopeConfig, RopePhases
from .tensor import ShapeError, Tensor, add, matmul, record_op, relu, reshape

EMBED_DIM_GRID = (32, 64, 128, 256, 512)
DEPTH_GRID = (4, 6, 8, 10, 12, 14)

CHECKPOINT_MAGIC = b"LSTN"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    node_count: int
    window: int = 12
    embed_dim: int = 32
    depth: int = 5
    theta_spatial: float = 128.0
    theta_temporal: float = 128.0
    rotate_variant: str = "standard"
    use_rope: bool = True
    use_spatial: bool = True
    use_temporal: bool = True
    use_graph_embedding: bool = True
    residual: bool = False
    huber_delta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.node_count < 2:
            raise ConfigError(f"node_count must be >= 2, got {self.node_count}")
        if self.window < 2:
            raise ConfigError(f"window must be >= 2, got {self.window}")
        if self.embed_dim < 2 or self.embed_dim % 2:
            raise ConfigError(f"embed_dim must be even and >= 2, got {self.embed_dim}")
        if self.depth < 1:
            raise ConfigError(f"depth K must be >= 1, got {self.depth}")
        if not (self.use_spatial or self.use_temporal):
            raise ConfigError("disabling both spatial and temporal attention leaves nothing to fuse")
        if self.rotate_variant not in ROTATE_VARIANTS:
            raise ConfigError(f"rotate_variant must be one of {ROTATE_VARIANTS}")
        if self.huber_delta <= 0:
            raise ConfigError("huber_delta must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def rope_config(self) -> RopeConfig:
        return RopeConfig(
            embed_dim=self.embed_dim,
            window=self.window,
            node_count=self.node_count,
            theta_spatial=self.theta_spatial,
            theta_temporal=self.theta_temporal,
            rotate_variant=self.rotate_variant,
        )


def parameter_count(node_count: int, window: int, embed_dim: int, depth: int) -> int:
    d = embed_dim
    embedding = d + d + node_count * d
    pairs = depth * 2 * 3 * d * d
    head = d + 1 + window * window + window
    return embedding + pairs + head


@dataclass
class ModelParams:
    w_in: Tensor
    b_in: Tensor
    w_graph: Tensor
    pairs: list[StaPair]
    w_feature: Tensor
    b_feature: Tensor
    w_time: Tensor
    b_time: Tensor

    @classmethod
    def init(cls, cfg: ModelConfig) -> "ModelParams":
        rng = np.random.default_rng(cfg.seed)
        n, t, d = cfg.node_count, cfg.window, cfg.embed_dim
        zeros = lambda *shape: Tensor(np.zeros(shape), requires_grad=True)  # noqa: E731
        return cls(
            w_in=glorot(rng, 1, d),
            b_in=zeros(d),
            w_graph=glorot(rng, n, d),
            pairs=[StaPair.init(rng, d, k) for k in range(cfg.depth)],
            w_feature=glorot(rng, d, 1),
            b_feature=zeros(1),
            w_time=glorot(rng, t, t),
            b_time=zeros(t),
        )

    def tensors(self) -> list[Tensor]:
        """All trainable tensors in checkpoint declaration order."""
        out = [self.w_in, self.b_in, self.w_graph]
        for pair in self.pairs:
            out.extend(pair.tensors())
        out.extend([self.w_feature, self.b_feature, self.w_time, self.b_time])
        return out

    def state(self) -> list[np.ndarray]:
        return [t.data.copy() for t in self.tensors()]

    def load_state(self, arrays: list[np.ndarray]) -> None:
        tensors = self.tensors()
        if len(arrays) != len(tensors):
            raise ValueError(f"expected {len(tensors)} arrays, got {len(arrays)}")
        for t, a in zip(tensors, arrays):
            if a.shape != t.shape:
                raise ShapeError(f"parameter shape {t.shape} cannot take array of shape {a.shape}")
            t.data = np.array(a, dtype=np.float64)

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self.tensors()])

    def count(self) -> int:
        return sum(t.size for t in self.tensors())


def embed_input(raw: Tensor, params: ModelParams, basis: SpectralBasis | None, cfg: ModelConfig) -> Tensor:
    """Lift ``(..., N, T)`` readings to ``(..., N, T, D)`` and add the spectral node embedding."""
    if raw.shape[-2:] != (cfg.node_count, cfg.window):
        raise ShapeError(f"input window {raw.shape} does not end in ({cfg.node_count}, {cfg.window})")
    x = add(matmul(reshape(raw, (*raw.shape, 1)), params.w_in), params.b_in)
    if not cfg.use_graph_embedding:
        return x
    if basis is None or basis.node_count != cfg.node_count:
        got = None if basis is None else basis.node_count
        raise ShapeError(f"spectral basis has {got} nodes but the input has {cfg.node_count}")
    e = graph_embedding(basis, params.w_graph)
    return add(x, reshape(e, (cfg.node_count, 1, cfg.embed_dim)))


def output_head(v: Tensor, params: ModelParams) -> Tensor:
    """ReLU then feature collapse D -> 1, then a shared T -> T map along time for every node.

    The ReLU sits on the D features rather than on the collapsed channel: a
    single rectified unit is a bottleneck that dies early in training and
    freezes the forecast at a constant.
    """
    h = add(matmul(relu(v), params.w_feature), params.b_feature)
    h = reshape(h, h.shape[:-1])
    return add(matmul(h, params.w_time), params.b_time)


def huber_loss(pred: Tensor, target, delta: float = 1.0) -> Tensor:
    """Mean Huber loss: quadratic inside ``|r| <= delta``, linear outside."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} shapes differ")
    r = pred.data - target.data
    a = np.abs(r)
    per = np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))
    n = r.size

    def backward(g):
        d = np.clip(r, -delta, delta) * (float(g) / n)
        return (d if pred.requires_grad else None, -d if target.requires_grad else None)

    return record_op(np.asarray(per.mean()), (pred, target), backward)


class Forecaster:
    """Maps ``(..., N, T)`` normalized windows to ``(..., N, T)`` normalized forecasts."""

    def __init__(self, cfg: ModelConfig, basis: SpectralBasis | None, params: ModelParams | None = None):
        self.cfg = cfg
        self.basis = basis
        self.params = params if params is not None else ModelParams.init(cfg)
        self.phases = RopePhases(cfg.rope_config(), enabled=cfg.use_rope)

    def __call__(self, raw) -> Tensor:
        return self.forward(raw)

    def forward(self, raw) -> Tensor:
        raw = raw if isinstance(raw, Tensor) else Tensor(raw)
        if not np.isfinite(raw.data).all():
            raise NumericalError(f"input window contains {np.count_nonzero(~np.isfinite(raw.data))} non-finite values")
        cfg = self.cfg
        v = embed_input(raw, self.params, self.basis, cfg)
        v = stack_forward(
            self.params.pairs, v, self.phases,
            use_spatial=cfg.use_spatial,
            use_temporal=cfg.use_temporal,
            rotate_variant=cfg.rotate_variant,
            residual=cfg.residual,
        )
        return output_head(v, self.params)

    def predict(self, windows: np.ndarray, batch_size: int = 64) -> np.ndarray:
        out = [self.forward(windows[i:i + batch_size]).data for i in range(0, len(windows), batch_size)]
        return np.concatenate(out, axis=0) if out else np.empty((0, self.cfg.node_count, self.cfg.window))

    def loss(self, raw, target) -> Tensor:
        return huber_loss(self.forward(raw), target, self.cfg.huber_delta)

    def tensors(self) -> list[Tensor]:
        return self.params.tensors()


# --- checkpoint I/O --------------------------------------------------------

_HEADER = struct.Struct("<4sII")


def save_checkpoint(path: str | Path, cfg: ModelConfig, params: ModelParams, meta: dict | None = None) -> None:
    """``LSTN`` | version u32 | config length u32 | config JSON | count u64 | float64 LE params."""
    block = json.dumps({"config": cfg.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    flat = params.flat().astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(block)))
        fh.write(block)
        fh.write(struct.pack("<Q", flat.size))
        fh.write(flat.tobytes())


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    meta: dict = field(default_factory=dict)


def load_checkpoint(path: str | Path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise TruncatedError(f"{path}: checkpoint header truncated")
    magic, version, block_len = _HEADER.unpack_from(buf)
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise BadVersionError(f"{path}: unsupported checkpoint version {version}")
    pos = _HEADER.size
    if len(buf) < pos + block_len + 8:
        raise TruncatedError(f"{path}: config block truncated")
    block = json.loads(buf[pos:pos + block_len])
    pos += block_len
    (count,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    if len(buf) != pos + 8 * count:
        raise TruncatedError(f"{path}: expected {count} parameters, payload has {(len(buf) - pos) / 8:g}")
    cfg = ModelConfig.from_dict(block["config"])
    expected = parameter_count(cfg.node_count, cfg.window, cfg.embed_dim, cfg.depth)
    if count != expected:
        raise IncompatibleCheckpointError(f"{path}: {count} parameters stored, config implies {expected}")
    flat = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64)
    params = ModelParams.init(cfg)
    arrays, i = [], 0
    for t in params.tensors():
        arrays.append(flat[i:i + t.size].reshape(t.shape))
        i += t.size
    params.load_state(arrays)
    return Checkpoint(cfg, params, block.get("meta", {}))


def check_compatible(cfg: ModelConfig, node_count: int, window: int | None = None, embed_dim: int | None = None) -> None:
    for name, have, want in (
        ("N_s", cfg.node_count, node_count),
        ("T", cfg.window, window),
        ("D", cfg.embed_dim, embed_dim),
    ):
        if want is not None and have != want:
            raise IncompatibleCheckpointError(f"checkpoint has {name}={have} but the evaluation input has {name}={want}")


def describe(cfg: ModelConfig) -> str:
    n = parameter_count(cfg.node_count, cfg.window, cfg.embed_dim, cfg.depth)
    return (
        f"N={cfg.node_count} T={cfg.window} D={cfg.embed_dim} K={cfg.depth} "
        f"theta=({cfg.theta_spatial:g},{cfg.theta_temporal:g}) params={n:,}"
        f" ~{math.ceil(n * 8 / 1024)} KiB"
    )

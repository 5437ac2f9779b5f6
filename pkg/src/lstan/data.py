"""Traffic series I/O (STTF container), chronological splits, z-scoring, windowing, synthetic data."""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagicError, BadVersionError, ConfigError, DataError, TruncatedError
from .graph import RoadGraph

logger = logging.getLogger(__name__)

STTF_MAGIC = b"STTF"
STTF_VERSION = 1
_STTF_HEADER = struct.Struct("<4sIIII")  # magic, version, N_s, T_total, interval minutes

SPLIT_FRACTIONS = (0.6, 0.2, 0.2)
STEPS_PER_DAY_AT_5MIN = 288


@dataclass
class TrafficSeries:
    """``values`` is ``(T_total, N_s)``, time-major."""

    values: np.ndarray
    interval_minutes: int = 5

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"series must be 2-D (steps, nodes), got shape {self.values.shape}")

    @property
    def node_count(self) -> int:
        return self.values.shape[1]

    @property
    def steps(self) -> int:
        return self.values.shape[0]


def save_series(series: TrafficSeries, path: str | Path) -> None:
    payload = np.ascontiguousarray(series.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_STTF_HEADER.pack(STTF_MAGIC, STTF_VERSION, series.node_count, series.steps, series.interval_minutes))
        fh.write(payload.tobytes())


def fill_missing(values: np.ndarray) -> np.ndarray:
    """Forward-fill NaNs per sensor; a sensor whose first reading is missing is rejected."""
    values = np.array(values, dtype=np.float64)
    missing = np.isnan(values)
    if not missing.any():
        return values
    if missing[0].any():
        bad = np.flatnonzero(missing[0]).tolist()
        raise DataError(f"leading values missing for sensors {bad[:10]}; cannot forward-fill")
    idx = np.where(missing, 0, np.arange(len(values))[:, None])
    np.maximum.accumulate(idx, axis=0, out=idx)
    logger.info("forward-filled %d missing readings", int(missing.sum()))
    return values[idx, np.arange(values.shape[1])[None, :]]


def load_series(path: str | Path) -> TrafficSeries:
    buf = Path(path).read_bytes()
    if len(buf) < _STTF_HEADER.size:
        raise TruncatedError(f"{path}: header truncated ({len(buf)} bytes)")
    magic, version, nodes, steps, interval = _STTF_HEADER.unpack_from(buf)
    if magic != STTF_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {STTF_MAGIC!r}")
    if version != STTF_VERSION:
        raise BadVersionError(f"{path}: unsupported STTF version {version}")
    expected = _STTF_HEADER.size + 4 * nodes * steps
    if len(buf) < expected:
        raise TruncatedError(f"{path}: payload truncated, {len(buf)} of {expected} bytes")
    if len(buf) > expected:
        raise DataError(f"{path}: {len(buf) - expected} trailing bytes after payload")
    values = np.frombuffer(buf, dtype="<f4", count=nodes * steps, offset=_STTF_HEADER.size)
    values = values.astype(np.float64).reshape(steps, nodes)
    return TrafficSeries(fill_missing(values), interval)


def read_header(path: str | Path) -> tuple[int, int, int]:
    """``(N_s, T_total, interval)`` without reading the payload."""
    with open(path, "rb") as fh:
        head = fh.read(_STTF_HEADER.size)
    if len(head) < _STTF_HEADER.size:
        raise TruncatedError(f"{path}: header truncated")
    magic, version, nodes, steps, interval = _STTF_HEADER.unpack(head)
    if magic != STTF_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != STTF_VERSION:
        raise BadVersionError(f"{path}: unsupported STTF version {version}")
    return nodes, steps, interval


def convert_to_sttf(src: str | Path, dst: str | Path, channel: int = 0, interval: int = 5) -> TrafficSeries:
    """Convert a PeMS-style ``.npz`` (``data``: steps x nodes [x channels]) or a steps x nodes CSV."""
    src = Path(src)
    if src.suffix == ".npz":
        with np.load(src) as archive:
            key = "data" if "data" in archive.files else archive.files[0]
            arr = np.asarray(archive[key], dtype=np.float64)
        if arr.ndim == 3:
            if not 0 <= channel < arr.shape[2]:
                raise DataError(f"{src}: channel {channel} out of range for {arr.shape[2]} channels")
            arr = arr[:, :, channel]
    else:
        # empty cells become NaN and go through the forward-fill below
        arr = np.genfromtxt(src, delimiter=",", comments="#", ndmin=2)
        if len(arr) and np.isnan(arr[0]).all():
            arr = arr[1:]  # header row
    series = TrafficSeries(fill_missing(arr), interval)
    save_series(series, dst)
    return series


def fingerprint(*paths: str | Path) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()


# --- splitting, normalization, windows -------------------------------------

@dataclass
class Partition:
    name: str
    values: np.ndarray
    start: int

    @property
    def stop(self) -> int:
        return self.start + len(self.values)


def split_sizes(steps: int) -> tuple[int, int, int]:
    """60/20/20 by floor; the remainder goes to test."""
    n_train = int(np.floor(steps * SPLIT_FRACTIONS[0]))
    n_val = int(np.floor(steps * SPLIT_FRACTIONS[1]))
    return n_train, n_val, steps - n_train - n_val


def split_chronological(series: TrafficSeries | np.ndarray, window: int = 12) -> tuple[Partition, Partition, Partition]:
    values = series.values if isinstance(series, TrafficSeries) else np.asarray(series, dtype=np.float64)
    steps = len(values)
    if steps < 5 * 2 * window:
        raise DataError(f"series of {steps} steps is too short for window {window} (need >= {10 * window})")
    n_train, n_val, _ = split_sizes(steps)
    cut1, cut2 = n_train, n_train + n_val
    return (
        Partition("train", values[:cut1], 0),
        Partition("val", values[cut1:cut2], cut1),
        Partition("test", values[cut2:], cut2),
    )


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise DataError(f"normalization std must be positive, got {self.std}")

    @classmethod
    def fit(cls, values: np.ndarray) -> "NormStats":
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise DataError("cannot fit normalization on an empty partition")
        std = float(values.std())
        if std == 0.0:
            raise DataError("training partition has zero variance")
        return cls(float(values.mean()), std)

    def normalize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, x):
        return np.asarray(x, dtype=np.float64) * self.std + self.mean


def fit_apply_norm(train: Partition, *others: Partition) -> tuple[list[Partition], NormStats]:
    stats = NormStats.fit(train.values)
    out = [Partition(p.name, stats.normalize(p.values), p.start) for p in (train, *others)]
    return out, stats


@dataclass
class WindowSet:
    """``inputs``/``targets`` are ``(W, N, T)``; ``starts`` holds each input's first absolute step."""

    inputs: np.ndarray
    targets: np.ndarray
    starts: np.ndarray
    window: int

    def __len__(self) -> int:
        return len(self.inputs)

    def input_end(self, i: int) -> int:
        return int(self.starts[i]) + self.window - 1

    def target_span(self, i: int) -> tuple[int, int]:
        s = int(self.starts[i]) + self.window
        return s, s + self.window - 1


def make_windows(partition: Partition | np.ndarray, window: int = 12) -> WindowSet:
    """Stride-1 windows: input steps ``[s, s+T)``, target steps ``[s+T, s+2T)``."""
    if isinstance(partition, Partition):
        values, offset = partition.values, partition.start
    else:
        values, offset = np.asarray(partition, dtype=np.float64), 0
    count = len(values) - 2 * window + 1
    nodes = values.shape[1] if values.ndim == 2 else 0
    if count <= 0:
        logger.warning("partition of %d steps yields no windows of size %d", len(values), window)
        empty = np.empty((0, nodes, window))
        return WindowSet(empty, empty.copy(), np.empty(0, dtype=np.int64), window)
    view = np.lib.stride_tricks.sliding_window_view(values, 2 * window, axis=0)  # (count, N, 2T)
    view = view[:count]
    return WindowSet(
        inputs=np.ascontiguousarray(view[:, :, :window]),
        targets=np.ascontiguousarray(view[:, :, window:]),
        starts=np.arange(count, dtype=np.int64) + offset,
        window=window,
    )


@dataclass
class PreparedData:
    stats: NormStats
    partitions: tuple[Partition, Partition, Partition]
    train: WindowSet
    val: WindowSet
    test: WindowSet

    def split(self, name: str) -> WindowSet:
        try:
            return {"train": self.train, "val": self.val, "test": self.test}[name]
        except KeyError:
            raise ConfigError(f"unknown split {name!r}") from None


def prepare(series: TrafficSeries, window: int = 12) -> PreparedData:
    raw = split_chronological(series, window)
    normed, stats = fit_apply_norm(*raw)
    train, val, test = (make_windows(p, window) for p in normed)
    return PreparedData(stats, raw, train, val, test)


# --- synthetic ring network ------------------------------------------------

def synth_generate(
    seed: int,
    node_count: int,
    steps: int,
    noise_sigma: float = 0.05,
    interval_minutes: int = 5,
    lag_steps: int = 6,
    level: float = 2.0,
    amplitude: float = 1.0,
) -> tuple[TrafficSeries, RoadGraph]:
    """Ring road network carrying a daily sinusoid that reaches node ``n`` after ``n * lag_steps`` steps.

    With ``noise_sigma = 0`` the series is exactly periodic with one day's worth of steps.
    """
    if node_count < 2:
        raise ConfigError(f"synthetic network needs at least 2 nodes, got {node_count}")
    if steps < 1:
        raise ConfigError("steps must be positive")
    if (24 * 60) % interval_minutes:
        raise ConfigError(f"interval {interval_minutes} min does not divide a day")
    period = (24 * 60) // interval_minutes
    rng = np.random.default_rng(seed)
    t = np.arange(steps)[:, None]
    lag = np.arange(node_count)[None, :] * lag_steps
    # integer phase index keeps noiseless series exactly periodic in floating point
    phase = 2.0 * np.pi * ((t - lag) % period) / period
    values = level + amplitude * np.sin(phase)
    if noise_sigma > 0:
        values = values + rng.normal(0.0, noise_sigma, size=values.shape)
    return TrafficSeries(values, interval_minutes), RoadGraph.ring(node_count)


def last_value_baseline(windows: WindowSet) -> np.ndarray:
    """Repeat each window's last observation across the horizon."""
    return np.repeat(windows.inputs[:, :, -1:], windows.window, axis=2)

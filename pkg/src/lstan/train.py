"""AdamW training with early stopping, and MAE / MAPE / RMSE evaluation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .data import NormStats, WindowSet
from .errors import ConfigError, NumericalError
from .model import Forecaster, huber_loss
from .tensor import GradTape, Tensor

logger = logging.getLogger(__name__)

MAPE_MASK_EPSILON = 1e-3


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 16
    max_epochs: int = 200
    patience: int = 15
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-4
    seed: int = 0
    eval_batch_size: int = 64

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("lr, batch_size, max_epochs and patience must be positive")
        if not all(0 <= b < 1 for b in self.betas):
            raise ConfigError(f"betas must lie in [0, 1), got {self.betas}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class AdamState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params: list[Tensor]) -> "AdamState":
        return cls(0, [np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params])


def adamw_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState, cfg: TrainConfig) -> AdamState:
    """One AdamW update in place. Weight decay acts on the weights directly, not via the gradient."""
    for i, g in enumerate(grads):
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient for parameter {i} (shape {g.shape}); step aborted")
    if not state.m:
        state = AdamState.zeros_like(params)
    b1, b2 = cfg.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if cfg.weight_decay:
            p.data *= 1.0 - cfg.lr * cfg.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return state


# --- metrics ---------------------------------------------------------------

@dataclass
class Metrics:
    mae: float
    mape_percent: float
    rmse: float

    @property
    def mape_defined(self) -> bool:
        return not math.isnan(self.mape_percent)

    def to_dict(self) -> dict:
        return {"mae": self.mae, "mape_percent": self.mape_percent if self.mape_defined else None, "rmse": self.rmse}

    def format(self) -> str:
        mape = f"{self.mape_percent:.4f}" if self.mape_defined else "undefined"
        return f"mae={self.mae:.6f}\nmape_percent={mape}\nrmse={self.rmse:.6f}"


def compute_metrics(pred, truth, mape_epsilon: float = MAPE_MASK_EPSILON) -> Metrics:
    """MAE, RMSE over all entries; MAPE over entries with ``|truth| >= mape_epsilon``.

    MAPE is NaN when every target is masked.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction {pred.shape} and truth {truth.shape} shapes differ")
    err = pred - truth
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    keep = np.abs(truth) >= mape_epsilon
    mape = float(np.mean(np.abs(err[keep] / truth[keep])) * 100.0) if keep.any() else math.nan
    return Metrics(mae, mape, rmse)


@dataclass
class Evaluation:
    metrics: Metrics
    per_horizon: list[Metrics]
    predictions: np.ndarray
    targets: np.ndarray


def evaluate(model: Forecaster, windows: WindowSet, stats: NormStats, batch_size: int = 64) -> Evaluation:
    """Forecast every window, de-normalize, and score all horizons jointly and one by one."""
    if len(windows) == 0:
        raise ValueError("cannot evaluate on an empty window set")
    pred = stats.denormalize(model.predict(windows.inputs, batch_size))
    truth = stats.denormalize(windows.targets)
    per_h = [compute_metrics(pred[..., h], truth[..., h]) for h in range(windows.window)]
    return Evaluation(compute_metrics(pred, truth), per_h, pred, truth)


# --- training loop ---------------------------------------------------------

class EarlyStopping:
    """Tracks the best validation value; ``update`` returns True when patience runs out."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, value: float, epoch: int) -> bool:
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    wall_ms: float


@dataclass
class TrainResult:
    best_state: list[np.ndarray]
    best_epoch: int
    best_val_loss: float
    history: list[EpochRecord]
    stopped_early: bool


class DivergenceError(NumericalError):
    """Training hit a non-finite loss; ``state`` holds the last good parameters."""

    def __init__(self, message: str, state: list[np.ndarray], history: list[EpochRecord]):
        super().__init__(message)
        self.state = state
        self.history = history


def mean_loss(model: Forecaster, windows: WindowSet, batch_size: int = 64) -> float:
    total = 0.0
    for i in range(0, len(windows), batch_size):
        x, y = windows.inputs[i:i + batch_size], windows.targets[i:i + batch_size]
        total += huber_loss(model.forward(x), y, model.cfg.huber_delta).item() * len(x)
    return total / len(windows)


def train_loop(
    model: Forecaster,
    train: WindowSet,
    val: WindowSet,
    cfg: TrainConfig,
    on_epoch: Callable[[EpochRecord], None] | None = None,
    val_loss_fn: Callable[[Forecaster], float] | None = None,
) -> TrainResult:
    """Minimize Huber loss with AdamW on shuffled mini-batches; keep the best-validation weights.

    The model's parameters are left at the best checkpoint on return.
    """
    if len(train) == 0 or len(val) == 0:
        raise ValueError("training and validation window sets must be non-empty")
    val_loss_fn = val_loss_fn or (lambda m: mean_loss(m, val, cfg.eval_batch_size))
    rng = np.random.default_rng(cfg.seed)
    params = model.tensors()
    state = AdamState.zeros_like(params)
    stopper = EarlyStopping(cfg.patience)
    best_state = model.params.state()
    history: list[EpochRecord] = []
    stopped = False

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train))
        running = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            with GradTape() as tape:
                loss = model.loss(train.inputs[idx], train.targets[idx])
            value = loss.item()
            if not math.isfinite(value):
                model.params.load_state(best_state)
                raise DivergenceError(f"loss became {value} at epoch {epoch}", best_state, history)
            grads = tape.backward(loss, params)
            adamw_step(params, [grads[p] for p in params], state, cfg)
            running += value * len(idx)

        val_loss = float(val_loss_fn(model))
        record = EpochRecord(epoch, running / len(train), val_loss, cfg.lr, (time.perf_counter() - t0) * 1e3)
        history.append(record)
        if on_epoch:
            on_epoch(record)
        logger.info("epoch %d train=%.6f val=%.6f", epoch, record.train_loss, val_loss)
        if not math.isfinite(val_loss):
            model.params.load_state(best_state)
            raise DivergenceError(f"validation loss became {val_loss} at epoch {epoch}", best_state, history)
        improved = val_loss < stopper.best
        if stopper.update(val_loss, epoch):
            stopped = True
            break
        if improved:
            best_state = model.params.state()

    model.params.load_state(best_state)
    return TrainResult(best_state, stopper.best_epoch, stopper.best, history, stopped)

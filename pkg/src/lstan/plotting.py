"""Static figures written next to the CSV/JSONL reports (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _figsize(scale: float = 1.0, ratio: float = 0.62) -> tuple[float, float]:
    width = 6.0 * scale
    return width, width * ratio


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_history(history: Sequence, path: str | Path) -> Path:
    """Train/validation loss per epoch; accepts EpochRecord objects or dicts."""
    rows = [r if isinstance(r, dict) else vars(r) for r in history]
    epochs = [r["epoch"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=_figsize())
        ax.plot(epochs, [r["train_loss"] for r in rows], label="train")
        ax.plot(epochs, [r["val_loss"] for r in rows], label="validation")
        best = int(np.argmin([r["val_loss"] for r in rows]))
        ax.axvline(epochs[best], color="0.6", lw=0.8, ls="--")
        ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel("Huber loss (normalized units)")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_forecast(
    steps: np.ndarray,
    truth: np.ndarray,
    prediction: np.ndarray,
    path: str | Path,
    node: int,
    horizon: int = 1,
) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=_figsize(1.3, 0.4))
        ax.plot(steps, truth, lw=0.9, color="0.2", label="observed")
        ax.plot(steps, prediction, lw=0.9, color="tab:red", label=f"forecast (+{horizon} step)")
        ax.set_xlabel("time step")
        ax.set_ylabel("reading")
        ax.set_title(f"sensor {node}")
        ax.legend(frameon=False, loc="upper right")
        return _save(fig, path)


def plot_horizon_errors(per_horizon: Sequence, path: str | Path) -> Path:
    h = np.arange(1, len(per_horizon) + 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=_figsize())
        ax.plot(h, [m.mae for m in per_horizon], marker="o", ms=3, label="MAE")
        ax.plot(h, [m.rmse for m in per_horizon], marker="s", ms=3, label="RMSE")
        ax.set_xlabel("horizon (steps ahead)")
        ax.set_ylabel("error (raw units)")
        ax.set_xticks(h)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_ablation(rows: Sequence[dict], path: str | Path) -> Path:
    """Grouped bars of MAE and RMSE per variant; ``rows`` carry ``variant``, ``mae``, ``rmse``."""
    names = [r["variant"] for r in rows]
    x = np.arange(len(rows))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=_figsize())
        ax.bar(x - 0.2, [r["mae"] for r in rows], width=0.4, label="MAE")
        ax.bar(x + 0.2, [r["rmse"] for r in rows], width=0.4, label="RMSE")
        ax.set_xticks(x, names)
        ax.set_ylabel("test error (raw units)")
        ax.legend(frameon=False)
        return _save(fig, path)

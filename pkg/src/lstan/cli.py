"""``lstan`` command line: synthesize or convert data, train, evaluate, ablate, replay.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
Relative dataset paths that do not exist in the working directory are looked
up under ``$LSTAN_DATA_DIR`` (default ``./data``).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import convert_to_sttf, fingerprint, load_series, prepare, read_header, save_series, synth_generate
from .errors import ConfigError, DataError, NumericalError
from .graph import load_adjacency_csv, spectral_basis, write_adjacency_csv
from .model import Forecaster, ModelConfig, check_compatible, describe, load_checkpoint, parameter_count, save_checkpoint
from .train import DivergenceError, TrainConfig, evaluate, train_loop

logger = logging.getLogger("lstan")

DATA_DIR_ENV = "LSTAN_DATA_DIR"
SPLITS = ("train", "val", "test")
ABLATIONS = (
    ("complete", {}),
    ("w/o R", {"use_rope": False}),
    ("w/o S", {"use_spatial": False}),
    ("w/o T", {"use_temporal": False}),
    ("w/o E", {"use_graph_embedding": False}),
)


def data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def resolve_input(path: str | Path | None, default_name: str) -> Path:
    if path is None:
        return data_dir() / default_name
    p = Path(path)
    if not p.exists() and not p.is_absolute() and (data_dir() / p).exists():
        return data_dir() / p
    return p


def adjacency_for(data_path: Path, adj: str | None) -> Path:
    if adj is not None:
        return resolve_input(adj, adj)
    return data_path.with_name(f"{data_path.stem}_adj.csv")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _print_block(pairs: dict) -> None:
    for key, value in pairs.items():
        print(f"{key}={value}")


# --- synth / convert / params ------------------------------------------------

def cmd_synth(args) -> int:
    series, graph = synth_generate(args.seed, args.nodes, args.steps, args.noise, args.interval, args.lag)
    out = Path(args.out_dir) if args.out_dir else data_dir()
    out.mkdir(parents=True, exist_ok=True)
    data_path, adj_path = out / f"{args.name}.sttf", out / f"{args.name}_adj.csv"
    save_series(series, data_path)
    write_adjacency_csv(graph, adj_path)
    _print_block({
        "series": data_path,
        "adjacency": adj_path,
        "nodes": series.node_count,
        "steps": series.steps,
        "interval_minutes": series.interval_minutes,
        "fingerprint": fingerprint(data_path, adj_path),
    })
    return 0


def cmd_convert(args) -> int:
    src = resolve_input(args.source, args.source)
    series = convert_to_sttf(src, args.dest, args.channel, args.interval)
    _print_block({"series": args.dest, "nodes": series.node_count, "steps": series.steps})
    return 0


def cmd_params(args) -> int:
    print(parameter_count(args.nodes, args.window, args.embed_dim, args.depth))
    return 0


# --- training ----------------------------------------------------------------

def _add_model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--window", type=int, default=12, help="input and output steps T")
    g.add_argument("--embed-dim", type=int, default=ModelConfig.embed_dim, help="feature width D")
    g.add_argument("--depth", type=int, default=ModelConfig.depth, help="number of attention pairs K")
    g.add_argument("--theta-spatial", type=float, default=128.0)
    g.add_argument("--theta-temporal", type=float, default=128.0)
    g.add_argument("--rotate-variant", default="standard", choices=("standard", "paper_literal"))
    g.add_argument("--residual", action="store_true", help="add a skip connection around each pair")
    g.add_argument("--huber-delta", type=float, default=1.0)
    g.add_argument("--no-rope", action="store_true", help="zero all rotary phases (w/o R)")
    g.add_argument("--no-spatial", action="store_true", help="drop the spatial branch (w/o S)")
    g.add_argument("--no-temporal", action="store_true", help="drop the temporal branch (w/o T)")
    g.add_argument("--no-graph-embed", action="store_true", help="skip the spectral node embedding (w/o E)")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--data", help="STTF series (default: $LSTAN_DATA_DIR/synth.sttf)")
    g.add_argument("--adj", help="adjacency CSV (default: <data stem>_adj.csv)")
    g.add_argument("--out-dir", default="run")
    g.add_argument("--epochs", type=int, default=TrainConfig.max_epochs)
    g.add_argument("--patience", type=int, default=TrainConfig.patience)
    g.add_argument("--lr", type=float, default=TrainConfig.lr)
    g.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    g.add_argument("--weight-decay", type=float, default=TrainConfig.weight_decay)
    g.add_argument("--seed", type=int, default=0)


def configs_from_args(args, node_count: int = 2) -> tuple[ModelConfig, TrainConfig]:
    model_cfg = ModelConfig(
        node_count=node_count,
        window=args.window,
        embed_dim=args.embed_dim,
        depth=args.depth,
        theta_spatial=args.theta_spatial,
        theta_temporal=args.theta_temporal,
        rotate_variant=args.rotate_variant,
        use_rope=not args.no_rope,
        use_spatial=not args.no_spatial,
        use_temporal=not args.no_temporal,
        use_graph_embedding=not args.no_graph_embed,
        residual=args.residual,
        huber_delta=args.huber_delta,
        seed=args.seed,
    )
    train_cfg = TrainConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        patience=args.patience,
        weight_decay=args.weight_decay,
        seed=args.seed,
    )
    return model_cfg, train_cfg


def run_training(model_cfg: ModelConfig, train_cfg: TrainConfig, data_path: Path, adj_path: Path, out_dir: Path) -> dict:
    """Train one model end to end and write its checkpoint, history, loss plot and manifest.

    Returns the manifest dictionary.
    """
    from .plotting import plot_history

    series = load_series(data_path)
    if series.node_count != model_cfg.node_count:
        model_cfg = dataclasses.replace(model_cfg, node_count=series.node_count)
    graph = load_adjacency_csv(adj_path, series.node_count)
    data = prepare(series, model_cfg.window)
    basis = spectral_basis(graph) if model_cfg.use_graph_embedding else None
    model = Forecaster(model_cfg, basis)

    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "checkpoint": out_dir / "model.lstn",
        "history": out_dir / "history.jsonl",
        "loss_plot": out_dir / "loss.png",
        "manifest": out_dir / "manifest.json",
    }
    logger.info("training %s on %d windows", describe(model_cfg), len(data.train))
    with open(paths["history"], "w") as hist:
        def on_epoch(rec):
            hist.write(json.dumps(dataclasses.asdict(rec)) + "\n")
            hist.flush()

        try:
            result = train_loop(model, data.train, data.val, train_cfg, on_epoch=on_epoch)
        except DivergenceError:
            logger.error("training diverged; history kept at %s", paths["history"])
            raise

    val_eval = evaluate(model, data.val, data.stats, train_cfg.eval_batch_size)
    test_eval = evaluate(model, data.test, data.stats, train_cfg.eval_batch_size)
    meta = {
        "norm_mean": data.stats.mean,
        "norm_std": data.stats.std,
        "best_epoch": result.best_epoch,
        "eval_batch_size": train_cfg.eval_batch_size,
    }
    save_checkpoint(paths["checkpoint"], model_cfg, model.params, meta)
    plot_history(result.history, paths["loss_plot"])

    ckpt_sha = _sha256(paths["checkpoint"])
    manifest = {
        "package_version": __version__,
        "artifact_version": f"v{__version__}-g{ckpt_sha[:12]}",
        "seed": train_cfg.seed,
        "model_config": model_cfg.to_dict(),
        "train_config": train_cfg.to_dict(),
        "parameter_count": parameter_count(model_cfg.node_count, model_cfg.window, model_cfg.embed_dim, model_cfg.depth),
        "dataset": {
            "series": str(data_path.resolve()),
            "adjacency": str(adj_path.resolve()),
            "fingerprint": fingerprint(data_path, adj_path),
        },
        "outputs": {k: str(v) for k, v in paths.items()},
        "checkpoint_sha256": ckpt_sha,
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "stopped_early": result.stopped_early,
        "best_val_metrics": val_eval.metrics.to_dict(),
        "test_metrics": test_eval.metrics.to_dict(),
    }
    paths["manifest"].write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def _summary(manifest: dict) -> dict:
    out = {
        "parameters": manifest["parameter_count"],
        "best_epoch": manifest["best_epoch"],
        "epochs_run": manifest["epochs_run"],
    }
    for split, key in (("val", "best_val_metrics"), ("test", "test_metrics")):
        for name, value in manifest[key].items():
            out[f"{split}_{name}"] = "undefined" if value is None else f"{value:.6f}"
    out["checkpoint"] = manifest["outputs"]["checkpoint"]
    out["manifest"] = manifest["outputs"]["manifest"]
    return out


def cmd_train(args) -> int:
    model_cfg, train_cfg = configs_from_args(args)  # validates flags before touching data
    data_path = resolve_input(args.data, "synth.sttf")
    adj_path = adjacency_for(data_path, args.adj)
    nodes, _, _ = read_header(data_path)
    model_cfg = dataclasses.replace(model_cfg, node_count=nodes)
    manifest = run_training(model_cfg, train_cfg, data_path, adj_path, Path(args.out_dir))
    _print_block(_summary(manifest))
    return 0


def cmd_ablate(args) -> int:
    from .plotting import plot_ablation

    base_cfg, train_cfg = configs_from_args(args)
    data_path = resolve_input(args.data, "synth.sttf")
    adj_path = adjacency_for(data_path, args.adj)
    nodes, _, _ = read_header(data_path)
    base_cfg = dataclasses.replace(base_cfg, node_count=nodes)
    out = Path(args.out_dir)
    rows = []
    for name, flags in ABLATIONS:
        slug = "complete" if not flags else "wo_" + name[-1]
        manifest = run_training(dataclasses.replace(base_cfg, **flags), train_cfg, data_path, adj_path, out / slug)
        m = manifest["test_metrics"]
        rows.append({"variant": name, "mae": m["mae"], "mape_percent": m["mape_percent"], "rmse": m["rmse"]})
        logger.info("%s: %s", name, m)
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "mae", "mape_percent", "rmse"])
        writer.writeheader()
        writer.writerows(rows)
    plot_ablation(rows, out / "ablation.png")
    print("variant,mae,mape_percent,rmse")
    for r in rows:
        mape = "undefined" if r["mape_percent"] is None else f"{r['mape_percent']:.4f}"
        print(f"{r['variant']},{r['mae']:.6f},{mape},{r['rmse']:.6f}")
    return 0


def cmd_replay(args) -> int:
    manifest_path = Path(args.manifest)
    recorded = json.loads(manifest_path.read_text())
    data_path = Path(recorded["dataset"]["series"])
    adj_path = Path(recorded["dataset"]["adjacency"])
    if fingerprint(data_path, adj_path) != recorded["dataset"]["fingerprint"]:
        raise DataError(f"dataset at {data_path} no longer matches the recorded fingerprint")
    train_cfg = recorded["train_config"]
    train_cfg["betas"] = tuple(train_cfg["betas"])
    out = Path(args.out_dir) if args.out_dir else manifest_path.parent / "replay"
    fresh = run_training(
        ModelConfig.from_dict(recorded["model_config"]), TrainConfig(**train_cfg), data_path, adj_path, out
    )
    same = all(
        fresh[key] == recorded[key] for key in ("checkpoint_sha256", "best_val_metrics", "test_metrics", "best_epoch")
    )
    _print_block({**_summary(fresh), "reproduced": str(same).lower()})
    if not same:
        raise NumericalError(f"replay of {manifest_path} diverged from the recorded run")
    return 0


# --- evaluation --------------------------------------------------------------

def forecast_curve(eval_result, windows, partition_values: np.ndarray, partition_start: int, node: int, horizon: int):
    """One row per partition step: ``(timestep, truth, prediction)``; prediction is NaN where no window reaches."""
    steps = partition_start + np.arange(len(partition_values))
    pred = np.full(len(partition_values), np.nan)
    target_steps = windows.starts + windows.window + horizon - 1 - partition_start
    pred[target_steps] = eval_result.predictions[:, node, horizon - 1]
    return steps, partition_values[:, node], pred


def write_curve_csv(path: Path, steps, truth, pred) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestep", "truth", "prediction"])
        for s, t, p in zip(steps, truth, pred):
            writer.writerow([int(s), repr(float(t)), "" if np.isnan(p) else repr(float(p))])


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.config
    data_path = resolve_input(args.data, "synth.sttf")
    adj_path = adjacency_for(data_path, args.adj)
    series = load_series(data_path)
    check_compatible(cfg, series.node_count, args.window, args.embed_dim)
    basis = spectral_basis(load_adjacency_csv(adj_path, series.node_count)) if cfg.use_graph_embedding else None
    model = Forecaster(cfg, basis, ckpt.params)
    data = prepare(series, cfg.window)
    if "norm_mean" in ckpt.meta and (ckpt.meta["norm_mean"], ckpt.meta["norm_std"]) != (data.stats.mean, data.stats.std):
        logger.warning("normalization statistics differ from the training run; is this the same dataset?")
    windows = data.split(args.split)
    result = evaluate(model, windows, data.stats, ckpt.meta.get("eval_batch_size", 64))
    _print_block({"split": args.split, "windows": len(windows), **result.metrics.to_dict()})

    out = Path(args.out_dir)
    if args.per_horizon or args.export_curves:
        out.mkdir(parents=True, exist_ok=True)
    if args.per_horizon:
        from .plotting import plot_horizon_errors

        table = out / f"horizon_{args.split}.csv"
        with open(table, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["horizon", "mae", "mape_percent", "rmse"])
            for h, m in enumerate(result.per_horizon, 1):
                writer.writerow([h, repr(m.mae), repr(m.mape_percent) if m.mape_defined else "", repr(m.rmse)])
        plot_horizon_errors(result.per_horizon, table.with_suffix(".png"))
        print(f"per_horizon={table}")
    if args.export_curves:
        from .plotting import plot_forecast

        if not 1 <= args.horizon <= cfg.window:
            raise ConfigError(f"--horizon must lie in [1, {cfg.window}], got {args.horizon}")
        partition = data.partitions[SPLITS.index(args.split)]
        for node in args.node or [0]:
            if not 0 <= node < cfg.node_count:
                raise ConfigError(f"--node {node} out of range for {cfg.node_count} sensors")
            steps, truth, pred = forecast_curve(result, windows, partition.values, partition.start, node, args.horizon)
            path = out / f"curve_{args.split}_node{node}_h{args.horizon}.csv"
            write_curve_csv(path, steps, truth, pred)
            plot_forecast(steps, truth, pred, path.with_suffix(".png"), node, args.horizon)
            print(f"curve={path}")
    return 0


# --- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lstan", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=f"lstan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic ring-network dataset")
    p.add_argument("--nodes", type=int, default=8)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.05, help="Gaussian noise sigma")
    p.add_argument("--interval", type=int, default=5, help="minutes between readings")
    p.add_argument("--lag", type=int, default=6, help="steps for the daily wave to reach the next node")
    p.add_argument("--out-dir", help="default: $LSTAN_DATA_DIR or ./data")
    p.add_argument("--name", default="synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="convert a PeMS .npz or steps-by-nodes CSV to STTF")
    p.add_argument("source")
    p.add_argument("dest")
    p.add_argument("--channel", type=int, default=0, help="channel index for 3-D archives")
    p.add_argument("--interval", type=int, default=5)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("params", help="print the trainable parameter count")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--window", type=int, default=12)
    p.add_argument("--embed-dim", type=int, default=ModelConfig.embed_dim)
    p.add_argument("--depth", type=int, default=ModelConfig.depth)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("train", help="train one model")
    _add_model_args(p)
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="train the complete model and each single-component ablation")
    _add_model_args(p)
    _add_train_args(p)
    p.set_defaults(func=cmd_ablate, out_dir="ablation")

    p = sub.add_parser("replay", help="re-run the training recorded in a manifest and compare")
    p.add_argument("manifest")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("eval", help="score a checkpoint on one split")
    p.add_argument("checkpoint")
    p.add_argument("--data")
    p.add_argument("--adj")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--window", type=int, help="expected T; mismatch with the checkpoint is an error")
    p.add_argument("--embed-dim", type=int, help="expected D; mismatch with the checkpoint is an error")
    p.add_argument("--per-horizon", action="store_true", help="write a per-horizon metrics table")
    p.add_argument("--export-curves", action="store_true", help="write truth/prediction series per node")
    p.add_argument("--node", type=int, action="append", help="sensor index for --export-curves (repeatable)")
    p.add_argument("--horizon", type=int, default=1, help="forecast step plotted by --export-curves")
    p.add_argument("--out-dir", default="eval")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

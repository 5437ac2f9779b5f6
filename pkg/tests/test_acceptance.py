"""Acceptance checks. Each test prints one PASS/FAIL line with the measured value, tolerance and runtime.

Run just these with ``pytest tests/test_acceptance.py -v``; the two training
checks (6 and 7) take several minutes on one core.
"""

import math
import time

import numpy as np
import pytest

from conftest import central_difference, relative_error, tape_gradients
from lstan.attention import AttentionWeights, attention
from lstan.cli import main as cli_main
from lstan.data import last_value_baseline, prepare, synth_generate
from lstan.graph import RoadGraph, jacobi_eigendecomposition, normalized_laplacian, spectral_basis
from lstan.model import Forecaster, ModelConfig
from lstan.rope import SPATIAL, TEMPORAL, THETA_GRID, RopeConfig, RopePhases, apply_rope_phase
from lstan.tensor import Tensor
from lstan.train import TrainConfig, compute_metrics, evaluate, train_loop
from oracles import attention_loops

SYNTH_SEED = 7
SYNTH_NODES = 8
SYNTH_STEPS = 2000
SYNTH_NOISE = 0.05
E2E_EPOCHS = 30
ABLATION_EPOCHS = 15


def report(capsys, number, ok, detail, seconds, status=None):
    status = status or ("PASS" if ok else "FAIL")
    with capsys.disabled():
        print(f"\n{status} criterion {number}: {detail} [{seconds:.1f} s]")


def test_criterion_1_full_model_gradients(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    cfg = ModelConfig(node_count=3, window=4, embed_dim=8, depth=1, seed=1)
    model = Forecaster(cfg, spectral_basis(RoadGraph.ring(3)))
    # perturb the zero-initialised biases so every branch of the head is exercised
    for t in model.tensors():
        t.data += rng.normal(scale=0.1, size=t.shape)
    x, y = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4))
    tensors = model.tensors()
    analytic = tape_gradients(lambda: model.loss(x, y), tensors)
    numeric = central_difference(lambda: model.loss(x, y).item(), [t.data for t in tensors], h=1e-5)
    worst = max(float(relative_error(a, n).max()) for a, n in zip(analytic, numeric))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-4 and elapsed < 30
    report(capsys, 1, ok, f"max relative gradient error {worst:.2e} over {sum(t.size for t in tensors)} params (< 1e-4, < 30 s)", elapsed)
    assert ok


def test_criterion_2_spectral_suite(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst_range = worst_orth = worst_recon = 0.0
    lo, hi = math.inf, -math.inf
    for _ in range(50):
        n = int(rng.integers(2, 51))
        p = rng.uniform(0.05, 0.9)
        upper = np.triu(rng.random((n, n)) < p, 1) * rng.uniform(0.1, 3.0, (n, n))
        lap = normalized_laplacian(upper + upper.T)
        basis = jacobi_eigendecomposition(lap)
        u, lam = basis.eigenvectors, basis.eigenvalues
        lo, hi = min(lo, lam.min()), max(hi, lam.max())
        worst_range = max(worst_range, -lam.min(), lam.max() - 2.0)
        worst_orth = max(worst_orth, np.abs(u @ u.T - np.eye(n)).max())
        worst_recon = max(worst_recon, np.abs(u.T @ np.diag(lam) @ u - lap).max())
    elapsed = time.perf_counter() - t0
    ok = worst_range <= 1e-9 and worst_orth <= 1e-8 and worst_recon <= 1e-8 and elapsed < 10
    report(
        capsys, 2, ok,
        f"eigenvalues in [{lo:.2e}, {hi:.6f}], |UU^T - I| {worst_orth:.1e}, |U^T L U - L| {worst_recon:.1e} (1e-9/1e-8/1e-8, < 10 s)",
        elapsed,
    )
    assert ok


def test_criterion_3_rope_properties(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_norm = worst_shift = 0.0
    zero_exact = True
    for _ in range(1000):
        d = 2 * int(rng.integers(1, 33))
        q, k = rng.normal(size=d), rng.normal(size=d)
        a, b, shift = (rng.uniform(-100, 100, d // 2) for _ in range(3))
        dup = lambda x: np.concatenate([x, x])  # noqa: E731
        rq = apply_rope_phase(Tensor(q), dup(a)).data
        worst_norm = max(worst_norm, abs(np.linalg.norm(rq) - np.linalg.norm(q)) / np.linalg.norm(q))
        base = rq @ apply_rope_phase(Tensor(k), dup(b)).data
        moved = apply_rope_phase(Tensor(q), dup(a + shift)).data @ apply_rope_phase(Tensor(k), dup(b + shift)).data
        worst_shift = max(worst_shift, abs(moved - base) / (np.linalg.norm(q) * np.linalg.norm(k)))
        zero_exact &= np.array_equal(apply_rope_phase(Tensor(q), np.zeros(d)).data, q)
    elapsed = time.perf_counter() - t0
    ok = worst_norm <= 1e-9 and worst_shift <= 1e-9 and zero_exact and elapsed < 5
    report(
        capsys, 3, ok,
        f"norm drift {worst_norm:.1e}, shift-identity error {worst_shift:.1e} (relative, <= 1e-9), zero phase exact={zero_exact} (< 5 s)",
        elapsed,
    )
    assert ok


def test_criterion_4_attention_oracle(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for i in range(100):
        n, t = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        d = 2 * int(rng.integers(1, 5))
        theta = float(rng.choice(THETA_GRID))
        variant = SPATIAL if i % 2 == 0 else TEMPORAL
        v = rng.normal(size=(n, t, d))
        w = AttentionWeights(*(Tensor(rng.normal(scale=0.5, size=(d, d))) for _ in range(3)))
        phases = RopePhases(RopeConfig(embed_dim=d, window=t, node_count=n, theta_spatial=theta, theta_temporal=theta))
        got = attention(Tensor(v), w, phases, variant).data
        want = attention_loops(v, w.wq.data, w.wk.data, w.wv.data, theta, variant == SPATIAL)
        worst = max(worst, np.abs(got - want).max())
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 10
    report(capsys, 4, ok, f"max |vectorized - loop| {worst:.1e} on 100 instances (<= 1e-10, < 10 s)", elapsed)
    assert ok


def test_criterion_5_full_scale_forward(capsys):
    t0 = time.perf_counter()
    cfg = ModelConfig(node_count=307, window=12, embed_dim=64, depth=5)
    model = Forecaster(cfg, spectral_basis(RoadGraph.ring(307)))
    out = model(np.random.default_rng(5).normal(size=(2, 307, 12))).data
    elapsed = time.perf_counter() - t0
    ok = out.shape == (2, 307, 12) and bool(np.isfinite(out).all()) and elapsed < 60
    report(capsys, 5, ok, f"output {out.shape}, all finite={bool(np.isfinite(out).all())}, incl. 307-node eigensolve (< 60 s)", elapsed)
    assert ok


@pytest.fixture(scope="module")
def synthetic():
    series, graph = synth_generate(SYNTH_SEED, SYNTH_NODES, SYNTH_STEPS, SYNTH_NOISE)
    return prepare(series, 12), spectral_basis(graph)


def fit_and_score(data, basis, epochs, **flags):
    model = Forecaster(ModelConfig(node_count=SYNTH_NODES, **flags), basis)
    train_loop(model, data.train, data.val, TrainConfig(max_epochs=epochs))
    return evaluate(model, data.test, data.stats).metrics


@pytest.mark.slow
def test_criterion_6_end_to_end_learning(synthetic, capsys):
    t0 = time.perf_counter()
    data, basis = synthetic
    metrics = fit_and_score(data, basis, E2E_EPOCHS)
    baseline = compute_metrics(data.stats.denormalize(last_value_baseline(data.test)), data.stats.denormalize(data.test.targets))
    ratio = metrics.mae / baseline.mae
    elapsed = time.perf_counter() - t0
    ok = ratio <= 0.7 and elapsed < 600
    report(
        capsys, 6, ok,
        f"test MAE {metrics.mae:.4f} vs copy-last baseline {baseline.mae:.4f}, ratio {ratio:.3f} (<= 0.7, < 600 s)",
        elapsed,
    )
    assert ok


@pytest.mark.slow
def test_criterion_7_ablation_ordering(synthetic, capsys):
    t0 = time.perf_counter()
    data, basis = synthetic
    variants = {
        "complete": {},
        "w/o R": {"use_rope": False},
        "w/o S": {"use_spatial": False},
        "w/o T": {"use_temporal": False},
        "w/o E": {"use_graph_embedding": False},
    }
    rmse = {name: fit_and_score(data, basis, ABLATION_EPOCHS, **flags).rmse for name, flags in variants.items()}
    full = rmse.pop("complete")
    ok = all(full <= other * 1.01 for other in rmse.values())
    elapsed = time.perf_counter() - t0
    table = ", ".join(f"{k} {v:.4f}" for k, v in rmse.items())
    report(capsys, 7, ok, f"complete RMSE {full:.4f}; {table} (complete <= each x 1.01)", elapsed)
    assert ok


def test_criterion_8_determinism(tmp_path, monkeypatch, capsys):
    t0 = time.perf_counter()
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("LSTAN_DATA_DIR", str(tmp_path / "data"))
    cli_main(["synth", "--nodes", "4", "--steps", "400", "--seed", "11"])
    flags = ["--embed-dim", "8", "--depth", "2", "--epochs", "3", "--seed", "5"]
    outputs = []
    for run in ("a", "b"):
        capsys.readouterr()
        assert cli_main(["train", *flags, "--out-dir", run]) == 0
        outputs.append(capsys.readouterr().out.replace(f"{run}/", ""))
    same_ckpt = (tmp_path / "a/model.lstn").read_bytes() == (tmp_path / "b/model.lstn").read_bytes()
    same_metrics = outputs[0] == outputs[1]
    elapsed = time.perf_counter() - t0
    ok = same_ckpt and same_metrics
    report(capsys, 8, ok, f"checkpoints bit-identical={same_ckpt}, printed metrics identical={same_metrics}", elapsed)
    assert ok


def test_criterion_9_long_run_recipe(capsys):
    report(capsys, 9, True, "optional full PeMS04 run, not executed here; recipe in README", 0.0, status="SKIP")
    pytest.skip("long-run PeMS04 reproduction is documented, not executed")

# gsnn_training_test.py

from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

import gsnn_training
from gsnn_aggregators import GcLayerParams
from gsnn_data import DatasetSplit, SpikeTensor, from_arrays
from gsnn_graph import build_graph
from gsnn_network import LayerSpec, init_layers, masked_cross_entropy, model_forward
from gsnn_neuron import LifConfig, SurrogateConfig, clamped_ramp
from gsnn_neuron_test import numeric_grad, rel_err
from gsnn_training import (
    AdamState,
    RunConfig,
    TrainingDivergedError,
    adam_step,
    backward,
    evaluate,
    named_parameters,
    run_seeds,
    train,
)

LIF = LifConfig(kappa=0.2, v_threshold=0.5)
SG = SurrogateConfig(half_width=0.5)


def two_cliques():
    feats = np.array([[1, 0]] * 4 + [[0, 1]] * 4, dtype=np.uint8)
    labels = [0] * 4 + [1] * 4
    edges = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    edges += [(i, j) for i in range(4, 8) for j in range(i + 1, 8)]
    edges.append((3, 4))
    everyone = np.arange(8)
    d = from_arrays(feats, labels, edges, name="cliques")
    return replace(d, split=DatasetSplit(everyone, everyone, everyone))


def toy_cfg(**overrides):
    base = dict(time_window=8, hidden_dims=[8], dropout_rate=0.0, weight_decay=0.0,
                learning_rate=0.05, max_epochs=200, patience=200, seeds=[0])
    base.update(overrides)
    return RunConfig(**base)


# =========================
#  Run configuration
# =========================

def test_run_config_defaults():
    cfg = RunConfig()
    assert cfg.time_window == 8
    assert cfg.hidden_dims == [16]
    assert cfg.learning_rate == 0.01 and cfg.weight_decay == 5e-4
    assert cfg.max_epochs == 300 and cfg.patience == 50
    assert cfg.seeds == list(range(10))
    assert cfg.layer_dims(1433, 7) == [1433, 16, 7]


@pytest.mark.parametrize("field,value", [
    ("max_epochs", 0), ("patience", 0), ("learning_rate", 0.0), ("kappa", 1.0),
    ("v_threshold", -0.1), ("dropout_rate", 1.0), ("seeds", []), ("time_window", 0),
    ("layer_kind", "gin"), ("leaky_slope", 0.0),
])
def test_run_config_rejects_invalid(field, value):
    with pytest.raises(ValidationError):
        RunConfig(**{field: value})


def test_run_config_round_trips_through_json():
    cfg = RunConfig(layer_kind="ga", seeds=[3], adam_betas=(0.8, 0.99))
    assert RunConfig.model_validate_json(cfg.model_dump_json()) == cfg


# =========================
#  Backward
# =========================

def test_zero_loss_gradient_leaves_pure_weight_decay():
    rng = np.random.default_rng(0)
    g = build_graph(4, [(0, 1), (1, 2)])
    encoded = SpikeTensor((rng.random((3, 4, 5)) < 0.5).astype(np.uint8))
    specs = init_layers([5, 4, 3], 4, "gc", LIF, rng, dropout_rate=0.0)
    trace = model_forward(g, encoded, specs)
    grads = backward(g, trace, np.zeros_like(trace.logits), specs, SG, weight_decay=0.01)
    for spec, lg in zip(specs, grads.layers):
        assert np.allclose(lg["weight"], 0.01 * spec.weight)
        for name in ("bias", "lambda", "gamma", "rho"):
            assert np.all(lg[name] == 0.0)


def test_single_step_single_node_chain_rule():
    g = build_graph(1, [])
    spec = LayerSpec(kind="gc", in_dim=1, out_dim=1, lif=LIF,
                     gc=GcLayerParams(np.array([[0.6]]), np.zeros(1)))
    trace = model_forward(g, SpikeTensor(np.ones((1, 1, 1))), [spec])
    assert trace.rates[0, 0] == 1.0
    grads = backward(g, trace, np.array([[2.0]]), [spec], SG)
    # V - V_th = 0.1 lies inside the surrogate window of height 1
    assert grads.layers[0]["weight"][0, 0] == pytest.approx(2.0)
    assert grads.layers[0]["bias"][0] == pytest.approx(2.0)


def _relaxed_instance(seed, kind, use_stfn=True):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 7))
    T = int(rng.integers(1, 5))
    edges = [(int(u), int(v)) for u, v in rng.integers(0, n, size=(2 * n, 2))]
    g = build_graph(n, edges)
    encoded = SpikeTensor((rng.random((T, n, 4)) < 0.5).astype(np.uint8))
    specs = init_layers([4, 3, 2], n, kind, LIF, rng, use_stfn=use_stfn, dropout_rate=0.0)
    for spec in specs:
        if spec.stfn is not None:
            spec.stfn.lambda_[:] = rng.normal(1.0, 0.2, size=spec.stfn.lambda_.shape)
            spec.stfn.gamma[:] = rng.normal(0.2, 0.2, size=spec.stfn.gamma.shape)
            spec.stfn.rho[...] = rng.uniform(0.8, 1.5)
        if spec.gc is not None:
            spec.gc.bias[:] = rng.normal(0.1, 0.3, size=spec.gc.bias.shape)
    labels = rng.integers(0, 2, size=n)
    return g, encoded, specs, labels


def _away_from_kinks(trace):
    for lt in trace.layers:
        if not np.all(np.abs(np.abs(lt.potentials - LIF.v_threshold) - SG.half_width) > 1e-3):
            return False
        if lt.stfn_cache is not None:
            var = lt.stfn_cache.var
            if not np.all((var > 1e-3) | (var == 0.0)):
                return False
        for cache in lt.attn_caches or []:
            if not np.all(np.abs(cache.scores) > 1e-3):
                return False
    return True


def _check_relaxed_gradients(seed, kind, frozen):
    g, encoded, specs, labels = _relaxed_instance(seed, kind)
    ramp = lambda x: clamped_ramp(x, SG)
    gates = [lt.spikes for lt in model_forward(g, encoded, specs).layers] if frozen else None
    mask = np.arange(g.num_nodes)

    trace = model_forward(g, encoded, specs, spike_fn=ramp, gates=gates)
    assume(_away_from_kinks(trace))
    _, grad = masked_cross_entropy(trace.logits, labels, mask)
    grads = backward(g, trace, grad, specs, SG, reset_gate_grad=not frozen)

    def loss():
        t = model_forward(g, encoded, specs, spike_fn=ramp, gates=gates)
        return masked_cross_entropy(t.logits, labels, mask)[0]

    for spec, lg in zip(specs, grads.layers):
        for name, param in spec.parameters().items():
            assert rel_err(lg[name], numeric_grad(loss, param, eps=1e-7)) < 1e-4, name


@settings(max_examples=25, deadline=None,
          suppress_health_check=[HealthCheck.filter_too_much, HealthCheck.too_slow])
@given(st.integers(0, 2**31 - 1), st.sampled_from(["gc", "ga"]))
def test_backward_matches_finite_differences_on_relaxed_model(seed, kind):
    _check_relaxed_gradients(seed, kind, frozen=True)


@settings(max_examples=15, deadline=None,
          suppress_health_check=[HealthCheck.filter_too_much, HealthCheck.too_slow])
@given(st.integers(0, 2**31 - 1))
def test_reset_gate_path_matches_fully_relaxed_model(seed):
    _check_relaxed_gradients(seed, "gc", frozen=False)


@settings(max_examples=20, deadline=None,
          suppress_health_check=[HealthCheck.filter_too_much, HealthCheck.too_slow])
@given(st.integers(0, 2**31 - 1))
def test_small_gradient_step_decreases_relaxed_loss(seed):
    g, encoded, specs, labels = _relaxed_instance(seed, "gc")
    ramp = lambda x: clamped_ramp(x, SG)
    gates = [lt.spikes for lt in model_forward(g, encoded, specs).layers]
    mask = np.arange(g.num_nodes)
    trace = model_forward(g, encoded, specs, spike_fn=ramp, gates=gates)
    assume(_away_from_kinks(trace))
    before, grad = masked_cross_entropy(trace.logits, labels, mask)
    grads = backward(g, trace, grad, specs, SG).named()
    assume(sum(float(np.sum(v * v)) for v in grads.values()) > 1e-8)

    params = named_parameters(specs)
    for name, p in params.items():
        p[...] -= 1e-5 * grads[name]
    after = model_forward(g, encoded, specs, spike_fn=ramp, gates=gates)
    assert masked_cross_entropy(after.logits, labels, mask)[0] < before


# =========================
#  Optimizer
# =========================

def test_adam_zero_gradient_keeps_parameters():
    p = {"w": np.array([1.0, -2.0])}
    state = adam_step(p, {"w": np.zeros(2)}, AdamState.zeros(p), lr=0.01)
    assert p["w"].tolist() == [1.0, -2.0]
    assert state.step == 1


def test_adam_first_step_moves_by_learning_rate():
    p = {"w": np.zeros(3), "rho": np.array(1.0)}
    adam_step(p, {"w": np.ones(3), "rho": np.array(-1.0)}, AdamState.zeros(p), lr=0.01)
    assert p["w"].tolist() == pytest.approx([-0.01] * 3, rel=1e-6)
    assert float(p["rho"]) == pytest.approx(1.01, rel=1e-6)


def test_adam_minimizes_quadratic_bowl():
    target = np.array([1.0, -2.0, 0.5])
    p = {"x": np.zeros(3)}
    state = AdamState.zeros(p)
    for _ in range(500):
        adam_step(p, {"x": p["x"] - target}, state, lr=0.1)
    assert np.max(np.abs(p["x"] - target)) < 1e-6


# =========================
#  Experiment loop
# =========================

def test_toy_separable_graph_is_learned():
    result = train(two_cliques(), toy_cfg(), seed=0)
    assert result.best_val_acc == 1.0
    assert result.history["train_acc"].max() == 1.0
    assert result.best_epoch <= 200


def test_history_columns_and_best_epoch():
    result = train(two_cliques(), toy_cfg(max_epochs=6), seed=1)
    h = result.history
    for col in ("epoch", "train_loss", "train_acc", "val_loss", "val_acc", "test_loss",
                "test_acc", "fr_layer1", "fr_layer2", "is_best"):
        assert col in h.columns
    assert h["epoch"].tolist() == list(range(1, 7))
    assert int(h.loc[h["is_best"], "epoch"].iloc[0]) == result.best_epoch
    assert all(0.0 <= r <= 1.0 for r in result.firing_rates)


def test_training_is_deterministic():
    a = train(two_cliques(), toy_cfg(max_epochs=12, dropout_rate=0.5), seed=4)
    b = train(two_cliques(), toy_cfg(max_epochs=12, dropout_rate=0.5), seed=4)
    pd.testing.assert_frame_equal(a.history, b.history, check_exact=True)
    for sa, sb in zip(a.layers, b.layers):
        assert sa.weight.tobytes() == sb.weight.tobytes()


def test_early_stopping_returns_best_validation_parameters():
    d = two_cliques()
    cfg = toy_cfg(max_epochs=60, patience=5, dropout_rate=0.5, learning_rate=0.2)
    result = train(d, cfg, seed=2)
    assert len(result.history) <= result.best_epoch + cfg.patience
    assert result.best_val_acc == result.history["val_acc"].max()
    assert evaluate(d, result.layers, cfg, "val")["accuracy"] == pytest.approx(result.best_val_acc)


def test_divergence_aborts(monkeypatch):
    monkeypatch.setattr(
        gsnn_training, "masked_cross_entropy",
        lambda rates, *args, **kwargs: (float("nan"), np.zeros_like(rates)),
    )
    with pytest.raises(TrainingDivergedError, match="epoch 1"):
        train(two_cliques(), toy_cfg(max_epochs=3), seed=0)


def test_evaluate_untrained_model():
    d = two_cliques()
    cfg = toy_cfg()
    specs, _ = gsnn_training.build_model(d, cfg, np.random.default_rng(0))
    metrics = evaluate(d, specs, cfg, "test")
    assert 0.0 <= metrics["accuracy"] <= 1.0
    assert metrics["num_nodes"] == 8
    assert len(metrics["firing_rates"]) == 2
    assert all(0.0 <= r <= 1.0 for r in metrics["firing_rates"])


def test_readout_head_trains():
    result = train(two_cliques(), toy_cfg(max_epochs=5, readout_head=True), seed=0)
    assert result.head is not None
    assert result.head.weight.shape == (2, 2)


def test_run_seeds_summary_and_workers_agree():
    d = two_cliques()
    cfg = toy_cfg(max_epochs=4, seeds=[0, 1])
    serial = run_seeds(d, cfg, workers=1).to_dict()
    parallel = run_seeds(d, cfg, workers=2).to_dict()
    assert serial["seeds"] == [0, 1]
    accs = [r["test_acc"] for r in serial["per_seed"]]
    assert serial["test_acc_mean"] == pytest.approx(np.mean(accs))
    assert serial == parallel


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))

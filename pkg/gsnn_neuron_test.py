# gsnn_neuron_test.py

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from gsnn_neuron import (
    LifConfig,
    MembraneState,
    ShapeError,
    StfnParams,
    SurrogateConfig,
    clamped_ramp,
    heaviside,
    lif_backward,
    lif_step,
    run_lif,
    stfn_backward,
    stfn_forward,
    surrogate_grad,
)

LIF = LifConfig(kappa=0.2, v_threshold=0.5)
SG = SurrogateConfig(half_width=0.5)


def numeric_grad(loss, x, eps=1e-6):
    """Central differences of loss() w.r.t. x, perturbing x in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.shape[0]):
        old = flat[i]
        flat[i] = old + eps
        up = loss()
        flat[i] = old - eps
        down = loss()
        flat[i] = old
        out[i] = (up - down) / (2.0 * eps)
    return grad


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


# =========================
#  Spike function and surrogate
# =========================

def test_heaviside_fires_at_zero():
    assert heaviside(0.0) == 1.0
    assert heaviside(-1e-12) == 0.0
    assert heaviside(np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 1.0, 1.0]


def test_surrogate_is_rectangular_with_unit_mass():
    assert surrogate_grad(0.0, SG) == pytest.approx(1.0)
    assert surrogate_grad(0.5, SG) == pytest.approx(1.0)
    assert surrogate_grad(0.51, SG) == 0.0
    xs = np.linspace(-2.0, 2.0, 400001)
    mass = np.sum(surrogate_grad(xs, SurrogateConfig(0.25))) * (xs[1] - xs[0])
    assert mass == pytest.approx(1.0, abs=1e-3)


@settings(max_examples=60, deadline=None)
@given(st.floats(-5.0, 5.0, allow_nan=False), st.floats(0.05, 2.0))
def test_surrogate_is_even(x, half_width):
    cfg = SurrogateConfig(half_width=half_width)
    assert surrogate_grad(x, cfg) == surrogate_grad(-x, cfg)


def test_clamped_ramp_slope_matches_surrogate():
    xs = np.array([-0.3, 0.0, 0.2])
    h = 1e-7
    slope = (clamped_ramp(xs + h, SG) - clamped_ramp(xs - h, SG)) / (2 * h)
    assert np.allclose(slope, surrogate_grad(xs, SG))


def test_config_validation():
    with pytest.raises(ValueError):
        LifConfig(kappa=1.0)
    with pytest.raises(ValueError):
        LifConfig(v_threshold=0.0)
    with pytest.raises(ValueError):
        SurrogateConfig(half_width=0.0)


# =========================
#  LIF recursion
# =========================

def test_subthreshold_integration():
    state = MembraneState.zeros((1,))
    trace = []
    for _ in range(3):
        state, s = lif_step(state, np.array([0.3]), LIF)
        trace.append((float(state.potential[0]), float(s[0])))
    assert trace[0] == (pytest.approx(0.3), 0.0)
    assert trace[1] == (pytest.approx(0.36), 0.0)
    assert trace[2] == (pytest.approx(0.372), 0.0)


def test_threshold_equality_fires():
    _, s = lif_step(MembraneState.zeros((1,)), np.array([0.5]), LIF)
    assert s[0] == 1.0


def test_reset_after_spike():
    potentials, spikes = run_lif(np.array([[1.0], [0.0]]), LIF)
    assert spikes[:, 0].tolist() == [1.0, 0.0]
    assert potentials[1, 0] == 0.0


def test_constant_suprathreshold_input_fires_every_step():
    _, spikes = run_lif(np.full((5, 2), 0.6), LIF)
    assert spikes.sum() == 10.0


def test_lif_step_shape_mismatch():
    with pytest.raises(ShapeError):
        lif_step(MembraneState.zeros((2,)), np.zeros(3), LIF)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_memoryless_neuron_is_heaviside_of_input(seed):
    rng = np.random.default_rng(seed)
    cfg = LifConfig(kappa=0.0, v_threshold=0.5)
    state = MembraneState(
        potential=rng.normal(size=(4, 3)),
        last_spike=(rng.random((4, 3)) < 0.5).astype(np.float64),
    )
    inputs = rng.normal(0.5, 0.5, size=(4, 3))
    new_state, spikes = lif_step(state, inputs, cfg)
    assert np.array_equal(spikes, heaviside(inputs - 0.5))
    assert np.array_equal(new_state.potential, inputs)


def test_run_lif_matches_stepwise_loop():
    inputs = np.random.default_rng(4).normal(0.4, 0.3, size=(6, 3, 2))
    pot, spk = run_lif(inputs, LIF)
    state = MembraneState.zeros((3, 2))
    for t in range(6):
        state, s = lif_step(state, inputs[t], LIF)
        assert np.array_equal(state.potential, pot[t])
        assert np.array_equal(s, spk[t])


def test_single_step_backward_is_surrogate():
    inputs = np.array([[[0.7, 0.1]]])
    pot, spk = run_lif(inputs, LIF)
    grad = lif_backward(np.array([[[2.0, 3.0]]]), pot, spk, LIF, SG)
    assert grad[0, 0].tolist() == pytest.approx([2.0 * 1.0, 3.0 * 1.0])
    far = np.array([[[5.0]]])
    pot, spk = run_lif(far, LIF)
    assert lif_backward(np.ones((1, 1, 1)), pot, spk, LIF, SG)[0, 0, 0] == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_lif_backward_matches_relaxed_model_with_frozen_gates(T, seed):
    rng = np.random.default_rng(seed)
    inputs = rng.normal(0.5, 0.4, size=(T, 3, 2))
    weights = rng.normal(size=inputs.shape)
    ramp = lambda x: clamped_ramp(x, SG)
    _, gates = run_lif(inputs, LIF)
    pot, _ = run_lif(inputs, LIF, spike_fn=ramp, gates=gates)
    assume(np.all(np.abs(np.abs(pot - LIF.v_threshold) - SG.half_width) > 1e-3))

    def loss():
        return float(np.sum(weights * run_lif(inputs, LIF, spike_fn=ramp, gates=gates)[1]))

    analytic = lif_backward(weights, pot, gates, LIF, SG)
    assert rel_err(analytic, numeric_grad(loss, inputs)) < 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_reset_gate_path_matches_fully_relaxed_model(T, seed):
    rng = np.random.default_rng(seed)
    inputs = rng.normal(0.5, 0.4, size=(T, 2, 2))
    weights = rng.normal(size=inputs.shape)
    ramp = lambda x: clamped_ramp(x, SG)
    pot, out = run_lif(inputs, LIF, spike_fn=ramp)
    assume(np.all(np.abs(np.abs(pot - LIF.v_threshold) - SG.half_width) > 1e-3))

    def loss():
        return float(np.sum(weights * run_lif(inputs, LIF, spike_fn=ramp)[1]))

    analytic = lif_backward(weights, pot, out, LIF, SG, reset_gate_grad=True)
    assert rel_err(analytic, numeric_grad(loss, inputs)) < 1e-6


# =========================
#  STFN
# =========================

@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(1, 5), st.integers(2, 6),
       st.floats(0.5, 2.0), st.integers(0, 2**31 - 1))
def test_stfn_standardizes_each_node(T, nodes, channels, rho, seed):
    rng = np.random.default_rng(seed)
    pre = rng.normal(rng.normal(size=(1, nodes, 1)), 1.0, size=(T, nodes, channels))
    assume(np.all(pre.var(axis=(0, 2)) > 0.05))
    params = StfnParams.identity(nodes, channels, rho=rho)
    out, cache = stfn_forward(pre, params, v_th=0.5)
    assert np.all(np.abs(out.mean(axis=(0, 2))) < 1e-4)
    assert np.all(np.abs(out.std(axis=(0, 2)) - rho * 0.5) < 1e-3)
    assert cache.x_hat.shape == pre.shape


def test_stfn_constant_node_maps_to_gamma():
    params = StfnParams.identity(2, 3)
    params.gamma[:] = 0.25
    pre = np.ones((4, 2, 3)) * np.array([1.0, -3.0])[None, :, None]
    out, _ = stfn_forward(pre, params, v_th=0.5)
    assert np.allclose(out, 0.25)


def test_stfn_shape_mismatch():
    with pytest.raises(ShapeError):
        stfn_forward(np.zeros((2, 3, 4)), StfnParams.identity(3, 5), 0.5)
    with pytest.raises(ShapeError):
        stfn_forward(np.zeros((3, 4)), StfnParams.identity(3, 4), 0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_stfn_ignores_per_node_offsets(seed):
    rng = np.random.default_rng(seed)
    pre = rng.normal(size=(3, 4, 5))
    params = StfnParams(
        lambda_=rng.normal(1.0, 0.3, size=(4, 5)),
        gamma=rng.normal(0.0, 0.3, size=(4, 5)),
        rho=np.array(1.2),
    )
    shift = rng.normal(scale=10.0, size=4)
    base, _ = stfn_forward(pre, params, 0.5)
    moved, _ = stfn_forward(pre + shift[None, :, None], params, 0.5)
    assert np.allclose(moved, base, atol=1e-9)


def test_stfn_backward_of_zero_gradient_is_zero():
    rng = np.random.default_rng(2)
    params = StfnParams(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), np.array(0.8))
    _, cache = stfn_forward(rng.normal(size=(4, 3, 2)), params, 0.5)
    grads = stfn_backward(np.zeros((4, 3, 2)), cache, params)
    for g in grads:
        assert np.all(g == 0.0)


def test_stfn_single_element_node_passes_no_gradient():
    rng = np.random.default_rng(5)
    params = StfnParams(rng.normal(size=(3, 1)), rng.normal(size=(3, 1)), np.array(1.0))
    out, cache = stfn_forward(rng.normal(size=(1, 3, 1)), params, 0.5)
    assert np.allclose(out[0], params.gamma)
    grad_in, _, grad_gamma, _ = stfn_backward(rng.normal(size=(1, 3, 1)), cache, params)
    assert np.allclose(grad_in, 0.0, atol=1e-12)
    assert np.any(grad_gamma != 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_stfn_backward_matches_finite_differences(T, nodes, channels, seed):
    rng = np.random.default_rng(seed)
    assume(T * channels > 1)
    pre = rng.normal(size=(T, nodes, channels))
    assume(np.all(pre.var(axis=(0, 2)) > 0.01))
    params = StfnParams(
        lambda_=rng.normal(1.0, 0.3, size=(nodes, channels)),
        gamma=rng.normal(0.0, 0.3, size=(nodes, channels)),
        rho=np.array(rng.uniform(0.5, 1.5)),
    )
    w = rng.normal(size=pre.shape)

    def loss():
        return float(np.sum(w * stfn_forward(pre, params, 0.5)[0]))

    _, cache = stfn_forward(pre, params, 0.5)
    g_in, g_lam, g_gam, g_rho = stfn_backward(w, cache, params)
    assert rel_err(g_in, numeric_grad(loss, pre)) < 1e-5
    assert rel_err(g_lam, numeric_grad(loss, params.lambda_)) < 1e-5
    assert rel_err(g_gam, numeric_grad(loss, params.gamma)) < 1e-5
    assert rel_err(g_rho, numeric_grad(loss, params.rho)) < 1e-5


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))

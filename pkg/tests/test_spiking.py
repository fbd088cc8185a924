import math

import numpy as np
import pytest

from spikesearch import ops
from spikesearch.autograd import Tensor, backward, finite_diff_check
from spikesearch.spiking import (LIFState, NeuronParams, SpikeStats,
                                 dspike_surrogate_factor, lif_step, run_temporal)


def test_neuron_params_validation():
    with pytest.raises(ValueError):
        NeuronParams(tau_decay=1.0)
    with pytest.raises(ValueError):
        NeuronParams(v_th=0.0)
    with pytest.raises(ValueError):
        NeuronParams(surrogate_temp=-1.0)


def test_lif_step_three_step_hand_trace():
    params = NeuronParams()
    state = LIFState.zeros((1,))

    state, sp = lif_step(state, Tensor([0.6]), params)
    assert state.u.values[0] == pytest.approx(0.6)
    assert sp.values[0] == 1.0

    state, sp = lif_step(state, Tensor([0.3]), params)
    # carry is zeroed by the multiplicative reset after a spike
    assert state.u.values[0] == pytest.approx(0.3)
    assert sp.values[0] == 0.0

    state, sp = lif_step(state, Tensor([0.25]), params)
    assert state.u.values[0] == pytest.approx(0.2 * 0.3 + 0.25)
    assert sp.values[0] == 0.0


def test_spikes_are_exactly_binary():
    rng = np.random.default_rng(3)
    params = NeuronParams()
    state = LIFState.zeros((4, 5))
    for _ in range(6):
        state, sp = lif_step(state, Tensor(rng.uniform(-1, 1, size=(4, 5))), params)
        assert set(np.unique(sp.values)).issubset({0.0, 1.0})


def test_zero_decay_is_memoryless():
    params = NeuronParams(tau_decay=0.0)
    state = LIFState.zeros((3,))
    state, _ = lif_step(state, Tensor([0.9, 0.1, 0.4]), params)
    state, _ = lif_step(state, Tensor([0.2, 0.2, 0.2]), params)
    np.testing.assert_allclose(state.u.values, [0.2, 0.2, 0.2])


def test_boundary_potential_fires():
    params = NeuronParams()
    _, sp = lif_step(LIFState.zeros((1,)), Tensor([params.v_th]), params)
    assert sp.values[0] == 1.0


def test_surrogate_peak_value():
    params = NeuronParams()
    peak = dspike_surrogate_factor(np.array([params.v_th]), params)[0]
    assert peak == pytest.approx(3.0 / (2.0 * math.tanh(1.5)), rel=1e-12)


def test_surrogate_clamps_outside_window():
    params = NeuronParams()
    vals = dspike_surrogate_factor(params.v_th + np.array([-1.5, -0.51, 0.51, 1.5]), params)
    np.testing.assert_array_equal(vals, 0.0)


def test_surrogate_symmetry():
    params = NeuronParams()
    for delta in (0.05, 0.2, 0.45):
        lo = dspike_surrogate_factor(np.array([params.v_th - delta]), params)[0]
        hi = dspike_surrogate_factor(np.array([params.v_th + delta]), params)[0]
        assert lo == pytest.approx(hi, rel=1e-14)


def test_surrogate_integrates_to_one():
    params = NeuronParams()
    u = np.linspace(params.v_th - 0.5, params.v_th + 0.5, 200001)
    vals = dspike_surrogate_factor(u, params)
    integral = np.trapezoid(vals, u)
    assert abs(integral - 1.0) < 0.02


def test_spike_gradient_uses_surrogate():
    params = NeuronParams()
    u0 = Tensor([0.45, 0.9, 2.0], requires_grad=True)
    state = LIFState(u=Tensor(np.zeros(3)), y_prev=Tensor(np.zeros(3)))
    _, sp = lif_step(state, u0, params)
    backward(ops.sum_all(sp))
    expected = dspike_surrogate_factor(u0.values, params)
    np.testing.assert_allclose(u0.grad, expected, atol=1e-15)


class _ChainNet:
    """Two dense spiking layers; logits are the second layer's potentials."""

    def __init__(self, w1, w2, params):
        self.w1 = Tensor(w1, requires_grad=True)
        self.w2 = Tensor(w2, requires_grad=True)
        self.params = params

    def forward_temporal(self, frames, stats):
        s1 = LIFState.zeros((frames[0].shape[0], self.w1.shape[1]))
        s2 = LIFState.zeros((frames[0].shape[0], self.w2.shape[1]))
        outs = []
        for t, x in enumerate(frames):
            s1, sp1 = lif_step(s1, ops.matmul(x, self.w1), self.params)
            stats.add("layer1", t, sp1.values)
            s2, sp2 = lif_step(s2, ops.matmul(sp1, self.w2), self.params)
            stats.add("layer2", t, sp2.values)
            outs.append(sp2)
        return outs


def test_run_temporal_zero_input_all_silent():
    net = _ChainNet(np.eye(3), np.eye(3), NeuronParams())
    frames = [Tensor(np.zeros((2, 3))) for _ in range(4)]
    outs, stats = run_temporal(net, frames, 4)
    assert all(np.all(o.values == 0.0) for o in outs)
    assert all(r == 0.0 for r in stats.rates["layer1"])
    assert all(r == 0.0 for r in stats.rates["layer2"])


def test_run_temporal_driven_neuron_saturates():
    net = _ChainNet(np.eye(1) * 2.0, np.eye(1) * 2.0, NeuronParams())
    frames = [Tensor(np.ones((1, 1))) for _ in range(5)]
    _, stats = run_temporal(net, frames, 5)
    assert stats.rates["layer1"] == [1.0] * 5


def test_run_temporal_rates_match_event_recount():
    rng = np.random.default_rng(11)
    net = _ChainNet(rng.normal(0, 0.8, size=(6, 5)), rng.normal(0, 0.8, size=(5, 4)),
                    NeuronParams())
    frames = [Tensor((rng.random((3, 6)) < 0.4).astype(float)) for _ in range(4)]
    _, stats = run_temporal(net, frames, 4, record_trace=True)
    for source in stats.sources():
        for t in range(4):
            arr = stats.trace[(source, t)]
            recount = float(arr.sum()) / arr.size
            assert stats.rates[source][t] == pytest.approx(recount, abs=0)


def test_run_temporal_rejects_zero_steps():
    net = _ChainNet(np.eye(2), np.eye(2), NeuronParams())
    with pytest.raises(ValueError):
        run_temporal(net, [], 0)


def test_membrane_carry_gradient_matches_finite_differences():
    # With every unit outside the surrogate window (no spikes, zero surrogate
    # factor), the unrolled membrane recursion is smooth and BPTT through the
    # carry term must agree with central differences.
    params = NeuronParams()
    x = np.array([[1.0, 0.0], [0.0, 1.0]])

    def f(w):
        state = LIFState.zeros((2, 2))
        total = None
        for _ in range(3):
            state, _ = lif_step(state, ops.matmul(Tensor(x), w), params)
            s = ops.sum_all(ops.mul(state.u, state.u))
            total = s if total is None else ops.add(total, s)
        return total

    # negative currents keep |u - v_th| > 0.5 throughout
    w0 = Tensor(np.array([[-0.3, -0.1], [-0.05, -0.2]]))
    assert finite_diff_check(f, w0, eps=1e-6) < 1e-4

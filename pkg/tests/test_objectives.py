import math

import numpy as np
import pytest

from spikesearch import ops
from spikesearch.autograd import Tensor, finite_diff_check
from spikesearch.network import ConvLayerInfo
from spikesearch.objectives import (LossConfig, MetricsWriter, TimestepGate,
                                    effective_bitwidth, mem_bits_term,
                                    spike_rate_sum, synops, total_loss,
                                    weighted_ce, weighted_spike_rate)


def _one_hot_weights(n, hot):
    logits = np.full(n, -np.inf)
    logits[hot] = 0.0
    return ops.softmax_vec(Tensor(logits))


def _info(kh=3, kw=3, c_in=1, c_out=2, h=4, w=4, p=0.0, spike=True, alpha=None,
          bits=None):
    return ConvLayerInfo(name="probe", kh=kh, kw=kw, c_in=c_in, c_out=c_out,
                         h_out=h, w_out=w, stride=1, pad=1, pruning_rate=p,
                         source="src", spike_input=spike, cell_index=0,
                         alpha_key=alpha, fixed_bits=bits)


def test_weighted_rate_worked_example():
    rates = np.array([0.11, 0.2, 0.07, 0.3, 0.25, 0.4])
    weights = Tensor([0.0, 0.0, 0.0, 0.0, 0.6, 0.4])
    s = weighted_spike_rate(rates, weights).item()
    expected = rates[:5].sum() + 0.4 * rates[5]
    assert abs(s - expected) < 1e-12


def test_weighted_rate_one_hot_recovers_plain_sum():
    rng = np.random.default_rng(0)
    for _ in range(200):
        t = int(rng.integers(1, 9))
        rates = rng.random(t)
        s = weighted_spike_rate(rates, _one_hot_weights(t, t - 1)).item()
        assert s == spike_rate_sum(rates)


def test_weighted_rate_zero_rates():
    assert weighted_spike_rate(np.zeros(4), _one_hot_weights(4, 2)).item() == 0.0


def test_weighted_rate_mass_shift_never_decreases():
    rng = np.random.default_rng(1)
    rates = rng.random(6)
    prefix = np.cumsum(rates)
    for t in range(5):
        w = np.zeros(6)
        w[t] = 0.7
        w[t + 1] = 0.3
        s_before = float(np.dot(w, prefix))
        w2 = np.zeros(6)
        w2[t + 1] = 1.0  # all mass moved one step later
        s_after = float(np.dot(w2, prefix))
        assert s_after >= s_before


def test_timestep_gate_weights_sum_to_one():
    gate = TimestepGate(t_max=5)
    w = gate.weights().values
    assert abs(w.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(w, 0.2)


def test_synops_hand_value():
    assert synops(_info(), 0.5) == 144.0


def test_synops_pruning_halves():
    rng = np.random.default_rng(2)
    for _ in range(20):
        info0 = _info(c_in=int(rng.integers(1, 5)), c_out=int(rng.integers(1, 5)), p=0.0)
        info50 = _info(c_in=info0.c_in, c_out=info0.c_out, p=50.0)
        s = float(rng.random())
        assert synops(info50, s) == pytest.approx(0.5 * synops(info0, s))


def test_synops_tensor_path_matches_float():
    rates = np.array([0.1, 0.3, 0.2])
    w = _one_hot_weights(3, 2)
    s_tensor = weighted_spike_rate(rates, w)
    assert synops(_info(), s_tensor).item() == synops(_info(), spike_rate_sum(rates))


def test_effective_bitwidth_equal_logits():
    bw = effective_bitwidth(Tensor(np.zeros(3)), (1, 2, 4))
    assert bw.item() == pytest.approx(7.0 / 3.0, abs=1e-15)


def test_effective_bitwidth_one_hot():
    bw = effective_bitwidth(Tensor(np.array([-np.inf, -np.inf, 0.0])), (1, 2, 4))
    assert bw.item() == 4.0


def test_effective_bitwidth_gradient_matches_fd():
    err = finite_diff_check(
        lambda b: effective_bitwidth(b, (1, 2, 4)), Tensor([0.2, -0.4, 0.1]), eps=1e-5)
    assert err < 1e-6


def test_mem_term_hand_value():
    info = _info(kh=3, kw=3, c_in=4, c_out=8, p=50.0)
    assert 2.0 * mem_bits_term(info) == 288.0


def test_mem_term_full_precision_dense_is_param_bits():
    info = _info(kh=3, kw=3, c_in=4, c_out=8, p=0.0)
    assert 32.0 * mem_bits_term(info) == 32.0 * 3 * 3 * 4 * 8


def test_mem_term_linear_in_cout():
    a = mem_bits_term(_info(c_out=8))
    b = mem_bits_term(_info(c_out=16))
    assert b == 2 * a


def test_loss_comp_values():
    assert 1.0 * synops(_info(), 0.5) == 144.0
    assert 4.0 * synops(_info(), 0.5) == 576.0
    assert 4.0 * synops(_info(), 0.0) == 0.0


def test_weighted_ce_one_hot_is_plain_averaged_ce():
    rng = np.random.default_rng(3)
    outputs = [Tensor(rng.normal(size=(4, 3))) for _ in range(3)]
    labels = rng.integers(0, 3, size=4)
    loss = weighted_ce(outputs, labels, _one_hot_weights(3, 2)).item()
    avg = sum(o.values for o in outputs) / 3.0
    ref = ops.cross_entropy_logits(Tensor(avg), labels).item()
    assert loss == pytest.approx(ref, abs=1e-12)


def test_weighted_ce_hand_example():
    outputs = [Tensor([[2.0, 0.0]]), Tensor([[0.0, 2.0]])]
    labels = np.array([0])
    loss = weighted_ce(outputs, labels, ops.softmax_vec(Tensor([0.0, 0.0]))).item()
    ce1 = math.log(1 + math.exp(-2.0))
    ce2 = math.log(2.0)
    assert loss == pytest.approx(0.5 * ce1 + 0.5 * ce2, abs=1e-12)
    assert loss == pytest.approx(0.4100, abs=5e-5)


def test_weighted_ce_constant_outputs():
    out = Tensor([[1.5, -0.5, 0.1]])
    outputs = [out, Tensor(out.values.copy()), Tensor(out.values.copy())]
    labels = np.array([0])
    loss = weighted_ce(outputs, labels, ops.softmax_vec(Tensor(np.zeros(3)))).item()
    ref = ops.cross_entropy_logits(out, labels).item()
    assert loss == pytest.approx(ref, abs=1e-12)


def test_weighted_ce_prefix_sum_matches_recompute():
    rng = np.random.default_rng(4)
    outputs = [Tensor(rng.normal(size=(3, 4))) for _ in range(6)]
    labels = rng.integers(0, 4, size=3)
    w = ops.softmax_vec(Tensor(rng.normal(size=6)))
    loss = weighted_ce(outputs, labels, w).item()
    ref = 0.0
    for t in range(6):
        avg = sum(o.values for o in outputs[:t + 1]) / (t + 1)
        ref += w.values[t] * ops.cross_entropy_logits(Tensor(avg), labels).item()
    assert loss == pytest.approx(ref, abs=1e-12)


def test_weighted_ce_psi_gradient_matches_fd():
    rng = np.random.default_rng(5)
    outputs = [Tensor(rng.normal(size=(2, 3))) for _ in range(4)]
    labels = rng.integers(0, 3, size=2)

    def f(psi):
        return weighted_ce(outputs, labels, ops.softmax_vec(psi))

    assert finite_diff_check(f, Tensor(rng.normal(size=4)), eps=1e-5) <= 1e-4


def test_weighted_rate_psi_gradient_matches_fd():
    rng = np.random.default_rng(6)
    rates = rng.random(5)

    def f(psi):
        return weighted_spike_rate(rates, ops.softmax_vec(psi))

    assert finite_diff_check(f, Tensor(rng.normal(size=5)), eps=1e-5) <= 1e-4


def test_total_loss_hand_arithmetic():
    ce = Tensor(0.41)
    mem = Tensor(288.0)
    comp = Tensor(576.0)
    cfg = LossConfig(lambda_mem=1e-3, lambda_comp=1e-3)
    assert total_loss(ce, mem, comp, cfg).item() == pytest.approx(1.274, abs=1e-12)


def test_total_loss_zero_lambdas_is_pure_ce():
    ce = Tensor(0.73)
    loss = total_loss(ce, Tensor(1e6), Tensor(1e9), LossConfig())
    assert loss.item() == 0.73


def test_loss_config_rejects_negative():
    with pytest.raises(ValueError):
        LossConfig(lambda_mem=-1.0)


def test_metrics_writer_schema(tmp_path):
    path = tmp_path / "metrics.csv"
    w = MetricsWriter(str(path), "deadbeef")
    w.log(0, 1.5, 1.2, {"mem_bits": 100.0, "bit_synops": 10.0,
                        "s_mean": 0.5, "b_w_mean": 2.0})
    w.close()
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_sha256=deadbeef"
    assert lines[1] == "iter,loss,ce,mem_bits,bit_synops,S,b_w_mean"
    assert lines[2].startswith("0,1.5,1.2,")

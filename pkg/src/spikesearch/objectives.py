"""Resource-aware training objectives: timestep-weighted spike accounting,
memory and compute losses, and the combined three-term loss.

The timestep gate holds one logit per candidate timestep count 1..T_max.
Its softmax weighs prefix sums of per-step spike rates (compute side) and
prefix-averaged-output cross-entropies (accuracy side), so the same
distribution trades timesteps against both accuracy and cost.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import ops
from .autograd import Tensor
from .network import ConvLayerInfo, SpikingSearchNet
from .spiking import SpikeStats


@dataclass
class TimestepGate:
    t_max: int
    logits: Tensor = None

    def __post_init__(self):
        if self.logits is None:
            self.logits = Tensor(np.zeros(self.t_max), requires_grad=True)
        if self.logits.shape != (self.t_max,):
            raise ValueError(f"gate logits shape {self.logits.shape} != ({self.t_max},)")

    def weights(self) -> Tensor:
        return ops.softmax_vec(self.logits)


@dataclass(frozen=True)
class LossConfig:
    lambda_mem: float = 0.0   # 1/bits
    lambda_comp: float = 0.0  # 1/bit-SynOps
    pruning_rate: float = 0.0

    def __post_init__(self):
        if self.lambda_mem < 0 or self.lambda_comp < 0:
            raise ValueError("loss coefficients must be nonnegative")


def weighted_spike_rate(rates, psi_weights: Tensor) -> Tensor:
    """Gate-weighted cumulative spike rate: sum_t w_t * (s_1 + ... + s_t).

    One-hot weights at t recover the plain rate sum over the first t steps.
    """
    rates = np.asarray(rates, dtype=np.float64)
    if rates.shape != psi_weights.shape:
        raise ValueError(f"{rates.shape} rates vs {psi_weights.shape} gate weights")
    return ops.dot_const(psi_weights, np.cumsum(rates))


def spike_rate_sum(rates) -> float:
    """Plain total spike rate over all steps (left-to-right summation)."""
    total = 0.0
    for r in rates:
        total += float(r)
    return total


def effective_bitwidth(beta: Tensor, candidates: tuple[int, ...]) -> Tensor:
    """Softmax(beta)-weighted average of the candidate bit-widths."""
    if beta.shape != (len(candidates),):
        raise ValueError(f"beta shape {beta.shape} vs {len(candidates)} candidates")
    return ops.dot_const(ops.softmax_vec(beta), np.asarray(candidates, dtype=np.float64))


def synops_geometry(info: ConvLayerInfo) -> float:
    """Dense synaptic-grid factor: (1-p%) * kh*kw*Cin*Cout*H*W."""
    return ((1.0 - info.pruning_rate / 100.0) * info.kh * info.kw
            * info.c_in * info.c_out * info.h_out * info.w_out)


def synops(info: ConvLayerInfo, spike_rate_total) -> Tensor | float:
    """SynOps of one layer given its (possibly gate-weighted) input rate."""
    geom = synops_geometry(info)
    if isinstance(spike_rate_total, Tensor):
        return ops.affine(spike_rate_total, geom, 0.0)
    return geom * float(spike_rate_total)


def mem_bits_term(info: ConvLayerInfo) -> float:
    """Parameter-bit count of one layer before bit-width weighting."""
    return (info.kh * info.kw * info.c_in * info.c_out
            * (1.0 - info.pruning_rate / 100.0))


def weighted_ce(outputs: list[Tensor], labels: np.ndarray,
                psi_weights: Tensor) -> Tensor:
    """Gate-weighted cross-entropy over prefix-averaged per-step logits.

    CE_t uses (1/t) * sum_{t'<=t} O(t'); the running sum is maintained
    incrementally.  One-hot weights at T recover the plain averaged-output
    cross-entropy.
    """
    t_max = len(outputs)
    if psi_weights.shape != (t_max,):
        raise ValueError(f"{t_max} outputs vs gate weights {psi_weights.shape}")
    loss = None
    running = None
    for t in range(t_max):
        running = outputs[t] if running is None else ops.add(running, outputs[t])
        avg = ops.affine(running, 1.0 / (t + 1), 0.0)
        ce_t = ops.cross_entropy_logits(avg, labels)
        term = ops.scale(ce_t, ops.index(psi_weights, t))
        loss = term if loss is None else ops.add(loss, term)
    return loss


def total_loss(ce: Tensor, mem: Tensor, comp: Tensor, cfg: LossConfig) -> Tensor:
    return ops.add(ce, ops.add(ops.affine(mem, cfg.lambda_mem, 0.0),
                               ops.affine(comp, cfg.lambda_comp, 0.0)))


def network_resource_losses(net: SpikingSearchNet, stats: SpikeStats,
                            psi_weights: Tensor,
                            alpha_weights: dict | None = None):
    """Assemble Loss_MEM (bits) and Loss_COMP (bit-SynOps) over the network.

    During search each edge convolution's contribution is scaled by its
    softmax(alpha) conv weight; adapters are always active.  Stem and
    classifier count at 32 bits in the memory term; layers fed by
    real-valued activations are excluded from the synaptic-operation term.
    Returns (mem, comp, diagnostics) with mem/comp as graph tensors.
    """
    if alpha_weights is None and net.arch is None:
        alpha_weights = {key: ops.softmax_vec(t) for key, t in net._alpha.items()}
    betas = {cell.index: ops.softmax_vec(cell.beta) for cell in net.cells} \
        if net.arch is None else {}

    mem = Tensor(0.0)
    comp = Tensor(0.0)
    s_values: list[float] = []
    bw_values: list[float] = []
    for info in net.conv_layer_infos():
        if info.fixed_bits is not None:
            bw = None
            bw_float = float(info.fixed_bits)
        elif net.arch is None:
            cand = np.asarray(net.spec.bit_candidates, dtype=np.float64)
            bw = ops.dot_const(betas[info.cell_index], cand)
            bw_float = bw.item()
        else:
            bw = None
            bw_float = float(net.arch.cells[info.cell_index].bitwidth)
        bw_values.append(bw_float)

        mem_term = mem_bits_term(info)
        if bw is None:
            layer_mem = Tensor(bw_float * mem_term)
        else:
            layer_mem = ops.affine(bw, mem_term, 0.0)
        if info.alpha_key is not None:
            layer_mem = ops.scale(layer_mem, ops.index(alpha_weights[info.alpha_key], 0))
        mem = ops.add(mem, layer_mem)

        if not info.spike_input or info.name == "fc":
            continue
        rates = stats.rates.get(info.source)
        if rates is None:
            continue
        s_layer = weighted_spike_rate(rates, psi_weights)
        s_values.append(float(np.dot(
            psi_weights.values, np.cumsum(np.asarray(rates, dtype=np.float64)))))
        layer_synops = synops(info, s_layer)
        if info.alpha_key is not None:
            layer_synops = ops.scale(layer_synops, ops.index(alpha_weights[info.alpha_key], 0))
        if bw is None:
            layer_comp = ops.affine(layer_synops, bw_float, 0.0)
        else:
            layer_comp = ops.scale(layer_synops, bw)
        comp = ops.add(comp, layer_comp)

    diagnostics = {
        "mem_bits": float(mem.values.reshape(())[()]),
        "bit_synops": float(comp.values.reshape(())[()]),
        "s_mean": float(np.mean(s_values)) if s_values else 0.0,
        "b_w_mean": float(np.mean(bw_values)) if bw_values else 0.0,
    }
    return mem, comp, diagnostics


class MetricsWriter:
    """Per-iteration loss-component log: iter,loss,ce,mem_bits,bit_synops,S,b_w_mean."""

    COLUMNS = ["iter", "loss", "ce", "mem_bits", "bit_synops", "S", "b_w_mean"]

    def __init__(self, path: str, config_hash: str):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._fh.write(f"# config_sha256={config_hash}\n")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.COLUMNS)

    def log(self, iteration: int, loss: float, ce: float, diag: dict) -> None:
        self._writer.writerow([iteration, repr(loss), repr(ce),
                               repr(diag["mem_bits"]), repr(diag["bit_synops"]),
                               repr(diag["s_mean"]), repr(diag["b_w_mean"])])

    def close(self) -> None:
        self._fh.close()

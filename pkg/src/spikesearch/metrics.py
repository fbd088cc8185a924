"""Post-hoc measurement: operation counting on recorded traces, model size,
and the 45nm energy model (0.9 pJ per addition, 3.7 pJ per multiplication).

Counting walks the recorded trace exactly: a spike crossing an unpruned
synapse is one accumulate; convolutions fed by real-valued activations count
one addition plus one multiplication per (in-bounds, unpruned) tap; membrane
decay costs one multiplication and one addition per neuron per step.
Batch-norm, pooling, and classifier arithmetic are counted and itemized
separately.  ANN-mode counts the same topology as a conventional network:
every tap is a multiply-accumulate, so additions equal multiplications.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autograd import no_grad
from .network import SpikingSearchNet
from .objectives import spike_rate_sum, synops
from .ops import _im2col
from .spiking import SpikeStats, run_temporal

PJ_PER_ADD = 0.9
PJ_PER_MULT = 3.7


class TraceError(RuntimeError):
    """Measurement requested without a recorded trace."""


@dataclass
class OperationCount:
    """Exact integer totals over a recorded trace of ``forwards`` samples."""
    additions: int = 0
    multiplications: int = 0
    forwards: int = 1
    per_scope: dict[str, tuple[int, int]] = field(default_factory=dict)

    def add(self, scope: str, adds: int, mults: int) -> None:
        self.additions += adds
        self.multiplications += mults
        a, m = self.per_scope.get(scope, (0, 0))
        self.per_scope[scope] = (a + adds, m + mults)

    def per_forward(self) -> tuple[float, float]:
        return self.additions / self.forwards, self.multiplications / self.forwards

    def synaptic_additions(self) -> int:
        return self.per_scope.get("synaptic", (0, 0))[0]


def energy_estimate(additions: float, multiplications: float) -> float:
    """Energy in mJ for the given operation counts (1 pJ = 1e-9 mJ)."""
    return (PJ_PER_ADD * additions + PJ_PER_MULT * multiplications) * 1e-9


def _tap_events(arr: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Per-(c_in, i, j) count of nonzero reads across all output positions."""
    cols, _, _ = _im2col(arr, kh, kw, stride, pad)
    return cols.sum(axis=0)


def _is_binary(arr: np.ndarray) -> bool:
    return bool(np.isin(arr, (0.0, 1.0)).all())


def count_operations(net: SpikingSearchNet, stats: SpikeStats,
                     ann_mode: bool = False) -> OperationCount:
    """Exact operation counts for the recorded forward pass.

    ``stats`` must carry a trace (``record_trace=True``).  ANN-mode ignores
    spike activity and counts one MAC per in-bounds unpruned tap of a single
    frame, plus the classifier MACs.
    """
    if not ann_mode and not stats.trace and not stats.inputs:
        raise TraceError("count_operations needs a recorded trace")
    counts = OperationCount(forwards=1 if ann_mode else max(stats.batch_size, 1))
    convs = net._conv_by_name()
    t_steps = 1 if ann_mode else stats.timesteps
    batch = 1 if ann_mode else max(stats.batch_size, 1)

    last_hw = None
    for info in net.conv_layer_infos():
        if info.name == "fc":
            macs = info.c_in * info.c_out * t_steps * batch
            bias = info.c_out * t_steps * batch
            if ann_mode:
                counts.add("fc", macs, macs)
            else:
                counts.add("fc", macs + bias, macs)
            continue
        layer = convs.get(info.name)
        mask = layer.pruning.current() if layer is not None else np.ones(
            (info.c_out, info.c_in, info.kh, info.kw))
        mask_cnt = mask.sum(axis=0).reshape(-1)  # unpruned weights per tap column

        if ann_mode:
            ones = np.ones((1, info.c_in, info.h_in, info.w_in))
            events = _tap_events(ones, info.kh, info.kw, info.stride, info.pad)
            macs = int(round(float(events @ mask_cnt)))
            counts.add("synaptic", macs, macs)
            continue

        total_adds = 0
        total_macs = 0
        for t in range(t_steps):
            arr = stats.trace.get((info.source, t))
            if arr is None:
                arr = stats.inputs.get((info.source, t))
            if arr is None:
                raise TraceError(f"trace missing source {info.source!r} at step {t}")
            if _is_binary(arr):
                events = _tap_events(arr, info.kh, info.kw, info.stride, info.pad)
                total_adds += int(round(float(events @ mask_cnt)))
            else:
                # dense real input: every in-bounds unpruned tap is a MAC
                events = _tap_events(np.ones_like(arr), info.kh, info.kw,
                                     info.stride, info.pad)
                total_macs += int(round(float(events @ mask_cnt)))
        if total_adds:
            counts.add("synaptic", total_adds, 0)
        if total_macs:
            counts.add("real_conv", total_macs, total_macs)
        last_hw = (info.h_out, info.w_out)

    if ann_mode:
        return counts

    # membrane decay: one multiply plus one add per neuron per step; the
    # concatenated cell outputs duplicate node populations and are skipped
    decay = 0
    for source, neurons in stats.neuron_counts.items():
        if source.endswith(".out"):
            continue
        decay += neurons * stats.batch_size * stats.timesteps
    counts.add("decay", decay, decay)

    # stem batchnorm: folded scale-and-shift per element
    bn_arr = stats.inputs.get(("stem.bn", 0))
    if bn_arr is not None:
        elems = bn_arr.size * stats.timesteps
        counts.add("bn", elems, elems)

    # global average pooling over the last cell output
    if last_hw is not None:
        ch = net.schedule[-1][0]
        hw = net.schedule[-1][1][0] * net.schedule[-1][1][1]
        pools = ch * stats.batch_size * stats.timesteps
        counts.add("pool", pools * (hw - 1), pools)
    return counts


# ---------------------------------------------------------------------------
# model size
# ---------------------------------------------------------------------------

def _layer_bits(net: SpikingSearchNet, dense32: bool) -> float:
    bits = 0.0
    bits += 32 * net.stem_w.values.size
    bits += 32 * (net.bn_gamma.values.size + net.bn_beta.values.size)
    for name, conv in net._conv_by_name().items():
        if dense32:
            bits += 32 * conv.weights.values.size
            continue
        if conv.fixed_bitwidth is not None:
            b = conv.fixed_bitwidth
        elif net.arch is not None:
            cell_idx = int(name.split(".")[0][len("cell"):])
            b = net.arch.cells[cell_idx].bitwidth
        else:
            raise ValueError("model size is defined for decoded networks; "
                             "decode the supernet first")
        bits += b * float(conv.pruning.current().sum())
    bits += 32 * (net.fc_w.values.size + net.fc_b.values.size)
    return bits


def model_size_mb(net: SpikingSearchNet) -> float:
    """Deployed size in binary megabytes: per-layer bits / 8 / 2^20."""
    return _layer_bits(net, dense32=False) / 8.0 / 2.0 ** 20


def dense_equivalent_mb(net: SpikingSearchNet) -> float:
    """Same topology at dense full precision (32-bit, no pruning)."""
    return _layer_bits(net, dense32=True) / 8.0 / 2.0 ** 20


def size_mb_from_params(param_count: int, bits: float = 32.0,
                        keep_fraction: float = 1.0) -> float:
    return param_count * bits * keep_fraction / 8.0 / 2.0 ** 20


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ["model", "acc", "model_size_mb", "synops", "bit_synops",
                  "adds", "mults", "energy_mj", "timesteps"]


@dataclass
class ResourceReport:
    model: str
    accuracy: float
    model_size_mb: float
    synops: float
    bit_synops: float
    counts: OperationCount
    energy_mj: float
    timesteps: int
    per_cell_bits: tuple[int, ...]
    pruning_rate: float

    def csv_row(self) -> list:
        adds, mults = self.counts.per_forward()
        return [self.model, repr(round(self.accuracy, 6)),
                repr(self.model_size_mb), repr(self.synops),
                repr(self.bit_synops), repr(adds), repr(mults),
                repr(self.energy_mj), self.timesteps]

    def to_text(self) -> str:
        adds, mults = self.counts.per_forward()
        lines = [
            f"model: {self.model}",
            f"accuracy: {self.accuracy:.4f}",
            f"model_size_mb: {self.model_size_mb:.6f}",
            f"synops: {self.synops:.1f}",
            f"bit_synops: {self.bit_synops:.1f}",
            f"adds_per_forward: {adds:.1f}",
            f"mults_per_forward: {mults:.1f}",
            f"energy_mj: {self.energy_mj:.6f}",
            f"synaptic_only_adds: {self.counts.synaptic_additions() / self.counts.forwards:.1f}",
            f"timesteps: {self.timesteps}",
            f"per_cell_bits: {','.join(str(b) for b in self.per_cell_bits)}",
            f"pruning_rate: {self.pruning_rate}",
        ]
        for scope, (a, m) in sorted(self.counts.per_scope.items()):
            lines.append(f"ops[{scope}]: adds={a} mults={m}")
        return "\n".join(lines) + "\n"


def measure_network(net: SpikingSearchNet, dataset, indices: np.ndarray,
                    timesteps: int) -> tuple[float, SpikeStats, list]:
    """One recorded evaluation pass; returns (accuracy, stats, outputs)."""
    frames = dataset.frames_for(indices, timesteps)
    labels = dataset.labels_for(indices)
    with no_grad():
        outputs, stats = run_temporal(net, frames, timesteps, record_trace=True)
    mean_logits = np.mean([o.values for o in outputs], axis=0)
    accuracy = float((mean_logits.argmax(axis=1) == labels).mean())
    return accuracy, stats, outputs


def network_synops_measured(net: SpikingSearchNet, stats: SpikeStats):
    """Formula SynOps and bit-SynOps with rates measured from the trace."""
    total = 0.0
    bit_total = 0.0
    for info in net.conv_layer_infos():
        if not info.spike_input or info.name == "fc":
            continue
        rates = stats.rates.get(info.source)
        if rates is None:
            continue
        s = spike_rate_sum(rates)
        layer = synops(info, s)
        total += layer
        if info.fixed_bits is not None:
            b = float(info.fixed_bits)
        elif net.arch is not None:
            b = float(net.arch.cells[info.cell_index].bitwidth)
        else:
            b = 32.0
        bit_total += b * layer
    return total, bit_total


def emit_report(net: SpikingSearchNet, dataset, config_hash: str,
                model_label: str, out_prefix: str | None = None,
                indices: np.ndarray | None = None) -> ResourceReport:
    """Run a measurement pass and assemble every resource field.

    Deterministic for fixed model, data, and config: two invocations write
    byte-identical files.
    """
    if indices is None:
        indices = dataset.test_indices
    timesteps = net.t_max
    accuracy, stats, _ = measure_network(net, dataset, indices, timesteps)
    counts = count_operations(net, stats)
    total_synops, bit_synops = network_synops_measured(net, stats)
    adds_pf, mults_pf = counts.per_forward()
    energy = energy_estimate(adds_pf, mults_pf)
    per_cell_bits = tuple(c.bitwidth for c in net.arch.cells) if net.arch else ()
    report = ResourceReport(
        model=model_label, accuracy=accuracy, model_size_mb=model_size_mb(net),
        synops=total_synops, bit_synops=bit_synops, counts=counts,
        energy_mj=energy, timesteps=timesteps, per_cell_bits=per_cell_bits,
        pruning_rate=net.spec.pruning_rate)
    if out_prefix is not None:
        with open(out_prefix + ".txt", "w") as fh:
            fh.write(f"# config_sha256={config_hash}\n")
            fh.write(report.to_text())
        with open(out_prefix + ".csv", "w", newline="") as fh:
            fh.write(f"# config_sha256={config_hash}\n")
            writer = csv.writer(fh)
            writer.writerow(REPORT_COLUMNS)
            writer.writerow(report.csv_row())
    return report

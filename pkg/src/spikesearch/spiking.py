"""LIF neuron dynamics, surrogate spike gradients, temporal unrolling.

Membrane update per step: u_new = tau_decay * u_old * (1 - y_prev) + input,
a multiplicative hard reset to zero.  Spikes are exact {0, 1} via u >= v_th;
the threshold's backward rule is a tanh-bell surrogate whose derivative
integrates to one over its unit-width support window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .autograd import ShapeError, Tensor, declare_custom_op

SPIKE_OP_ID = "lif_spike_threshold"
declare_custom_op(SPIKE_OP_ID)


@dataclass(frozen=True)
class NeuronParams:
    tau_decay: float = 0.2
    v_th: float = 0.5
    v_reset: float = 0.0
    surrogate_temp: float = 3.0  # temperature b of the surrogate bell

    def __post_init__(self):
        if not 0.0 <= self.tau_decay < 1.0:
            raise ValueError(f"tau_decay must be in [0, 1), got {self.tau_decay}")
        if self.v_th <= 0.0:
            raise ValueError(f"v_th must be positive, got {self.v_th}")
        if self.surrogate_temp <= 0.0:
            raise ValueError(f"surrogate temperature must be positive, got {self.surrogate_temp}")


@dataclass
class LIFState:
    u: Tensor          # membrane potential, pre-reset carry
    y_prev: Tensor     # previous-step binary spikes

    @staticmethod
    def zeros(shape: tuple[int, ...]) -> "LIFState":
        return LIFState(u=Tensor(np.zeros(shape)), y_prev=Tensor(np.zeros(shape)))


def dspike_surrogate_factor(u: np.ndarray, params: NeuronParams) -> np.ndarray:
    """Surrogate derivative of the spike threshold, evaluated at membrane u.

    b * (1 - tanh^2(b*(u - v_th))) / (2*tanh(b/2)), clamped to zero outside
    the unit-width window |u - v_th| <= 1/2.  Over that window the factor
    integrates to exactly one, making it a proper derivative surrogate.
    """
    b = params.surrogate_temp
    d = np.asarray(u, dtype=np.float64) - params.v_th
    bell = b * (1.0 - np.tanh(b * d) ** 2) / (2.0 * np.tanh(b / 2.0))
    return np.where(np.abs(d) <= 0.5, bell, 0.0)


def _surrogate_rule(params: NeuronParams):
    def rule(grad_out: np.ndarray, u_values: np.ndarray) -> np.ndarray:
        return grad_out * dspike_surrogate_factor(u_values, params)
    return rule


def lif_step(state: LIFState, input_current: Tensor,
             params: NeuronParams) -> tuple[LIFState, Tensor]:
    """One membrane update; returns (new state, binary spike tensor)."""
    if state.u.shape != input_current.shape:
        raise ShapeError(
            f"lif_step: state shape {state.u.shape} != input shape {input_current.shape}")
    carry = ops.mul(state.u, ops.affine(state.y_prev, -1.0, 1.0))
    u_new = ops.add(ops.affine(carry, params.tau_decay, 0.0), input_current)
    spikes = ops.threshold_ge(u_new, params.v_th, op_id=SPIKE_OP_ID,
                              local_rule=_surrogate_rule(params))
    return LIFState(u=u_new, y_prev=spikes), spikes


@dataclass
class SpikeStats:
    """Per-source, per-timestep average spike rates on recorded forward passes.

    ``rate = spikes_at_step / (batch * neurons_per_sample)``; optionally keeps
    the raw binary arrays (the trace) for exact operation counting.
    """
    record_trace: bool = False
    rates: dict[str, list[float]] = field(default_factory=dict)
    spike_counts: dict[str, list[int]] = field(default_factory=dict)
    neuron_counts: dict[str, int] = field(default_factory=dict)
    batch_size: int = 0
    timesteps: int = 0
    trace: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)
    inputs: dict[tuple[str, int], np.ndarray] = field(default_factory=dict)

    def add(self, source: str, t: int, spikes: np.ndarray) -> None:
        batch = spikes.shape[0]
        neurons = spikes.size // batch
        count = int(spikes.sum())
        self.rates.setdefault(source, []).append(count / (batch * neurons))
        self.spike_counts.setdefault(source, []).append(count)
        self.neuron_counts[source] = neurons
        self.batch_size = batch
        self.timesteps = max(self.timesteps, t + 1)
        if self.record_trace:
            self.trace[(source, t)] = spikes.copy()

    def add_input(self, source: str, t: int, values: np.ndarray) -> None:
        if self.record_trace:
            self.inputs[(source, t)] = values.copy()

    def sources(self) -> list[str]:
        return list(self.rates.keys())


def run_temporal(net, input_frames: list[Tensor], timesteps: int,
                 record_trace: bool = False) -> tuple[list[Tensor], SpikeStats]:
    """Unroll ``net`` over ``timesteps`` frames.

    The network object carries structure only; membrane state is created
    fresh per call (reset between samples) and carried across timesteps
    within the pass.  Returns the per-timestep classifier logits and the
    collected spike statistics.
    """
    if timesteps < 1:
        raise ValueError(f"timesteps must be >= 1, got {timesteps}")
    if len(input_frames) != timesteps:
        raise ShapeError(
            f"got {len(input_frames)} input frames for {timesteps} timesteps")
    stats = SpikeStats(record_trace=record_trace)
    outputs = net.forward_temporal(input_frames, stats)
    return outputs, stats

"""Hierarchical searchable spiking network: cells, mixed edges, backbone.

A cell holds N nodes; node j receives edges from the two cell inputs and all
prior nodes (j + 2 incoming).  Each edge mixes two candidate operations,
a 3x3 CompConv and skip, weighted by softmax over per-edge logits alpha.
Cell inputs pass through small 1x1 spiking adapter convolutions so that skip
is shape-valid (exact identity) on every non-reduction edge; on reduction
input edges skip subsamples stride 2 and duplicates channels.  One bit-width
logit vector beta governs all CompConv instances of a cell; one global logit
vector psi weighs candidate timestep counts.

The same machinery runs the search supernet and decoded single-branch
networks: a decoded cell keeps only its chosen edges, pins one operation per
edge and one quantization branch per cell.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .autograd import ShapeError, Tensor
from .compression import CompConvLayer
from .spiking import LIFState, NeuronParams, lif_step

CONV_OP = "conv3x3"
SKIP_OP = "skip"


@dataclass(frozen=True)
class BackboneProfile:
    name: str
    cells: int
    reductions: tuple[int, ...]  # 1-indexed cell positions that halve space
    nodes: int
    channels: int
    t_max: int
    in_channels: int
    in_hw: tuple[int, int]
    classes: int


PROFILES = {
    "cifar": BackboneProfile("cifar", cells=8, reductions=(3, 6), nodes=4,
                             channels=48, t_max=6, in_channels=3,
                             in_hw=(32, 32), classes=10),
    "gsc": BackboneProfile("gsc", cells=6, reductions=(3, 5), nodes=4,
                           channels=16, t_max=6, in_channels=1,
                           in_hw=(40, 98), classes=12),
    "desk": BackboneProfile("desk", cells=2, reductions=(2,), nodes=2,
                            channels=8, t_max=4, in_channels=1,
                            in_hw=(8, 8), classes=3),
}


@dataclass(frozen=True)
class NetSpec:
    profile: BackboneProfile
    bit_candidates: tuple[int, ...] = (1, 2, 4)
    pruning_rate: float = 0.0
    neuron: NeuronParams = field(default_factory=NeuronParams)
    alpha_per_cell: bool = False
    aux_cell: int | None = None  # 1-indexed cell carrying the auxiliary head


@dataclass
class CellGenotype:
    bitwidth: int
    # (input index i, node index j, op); node j keeps exactly two edges
    edges: list[tuple[int, int, str]]

    def active_set(self) -> set[tuple[int, int]]:
        return {(i, j) for i, j, _ in self.edges}

    def op_of(self) -> dict[tuple[int, int], str]:
        return {(i, j): op for i, j, op in self.edges}


@dataclass
class DecodedArchitecture:
    cells: list[CellGenotype]
    timesteps: int
    masks: dict[str, np.ndarray] | None = None
    config_hash: str | None = None

    def to_text(self) -> str:
        lines = []
        if self.config_hash:
            lines.append(f"# config_sha256={self.config_hash}")
        lines.append(f"timesteps: {self.timesteps}")
        for k, cell in enumerate(self.cells):
            lines.append(f"cell {k}: bitwidth={cell.bitwidth}")
            for i, j, op in cell.edges:
                lines.append(f"  edge {i}->node{j} op={op}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "DecodedArchitecture":
        timesteps = None
        cells: list[CellGenotype] = []
        config_hash = None
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = re.match(r"#\s*config_sha256=(\w+)", line)
                if m:
                    config_hash = m.group(1)
                continue
            m = re.match(r"timesteps:\s*(\d+)$", line)
            if m:
                timesteps = int(m.group(1))
                continue
            m = re.match(r"cell\s+(\d+):\s*bitwidth=(\d+)$", line)
            if m:
                cells.append(CellGenotype(bitwidth=int(m.group(2)), edges=[]))
                continue
            m = re.match(r"edge\s+(\d+)->node(\d+)\s+op=(\S+)$", line)
            if m:
                if not cells:
                    raise ValueError("edge line before any cell line")
                cells[-1].edges.append((int(m.group(1)), int(m.group(2)), m.group(3)))
                continue
            raise ValueError(f"unrecognized architecture line: {raw!r}")
        if timesteps is None:
            raise ValueError("architecture text missing timesteps")
        return DecodedArchitecture(cells=cells, timesteps=timesteps,
                                   config_hash=config_hash)


@dataclass(frozen=True)
class ConvLayerInfo:
    """Static geometry and wiring of one convolution for cost accounting."""
    name: str
    kh: int
    kw: int
    c_in: int
    c_out: int
    h_out: int
    w_out: int
    stride: int
    pad: int
    pruning_rate: float
    source: str          # trace id of the tensor entering this convolution
    spike_input: bool    # False for layers fed by real-valued activations
    cell_index: int | None
    alpha_key: tuple | None  # set for edge convolutions (search scaling)
    fixed_bits: int | None   # 32 for stem/classifier accounting
    h_in: int = 0
    w_in: int = 0


class Cell:
    def __init__(self, index: int, reduction: bool, spec: NetSpec,
                 in_ch_a: int, in_ch_b: int, stride_a: int, stride_b: int,
                 out_channels: int, rng: np.random.Generator,
                 genotype: CellGenotype | None = None):
        n = spec.profile.nodes
        if out_channels % n:
            raise ShapeError(f"cell {index}: channels {out_channels} not divisible by N={n}")
        self.index = index
        self.reduction = reduction
        self.nodes = n
        self.node_channels = out_channels // n
        if reduction:
            if self.node_channels % 2:
                raise ShapeError(f"cell {index}: reduction needs even node channels")
            self.adapter_channels = self.node_channels // 2
        else:
            self.adapter_channels = self.node_channels
        self.out_channels = out_channels
        self.genotype = genotype
        self.fixed_ops = genotype.op_of() if genotype else {}
        self.active = genotype.active_set() if genotype else None

        bits = spec.bit_candidates
        fixed_bits = genotype.bitwidth if genotype else None
        self.beta = Tensor(np.zeros(len(bits)), requires_grad=genotype is None)

        def he(shape):
            fan_in = shape[1] * shape[2] * shape[3]
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

        mk = lambda shape, stride, pad: CompConvLayer(
            he(shape), self.beta, bits, spec.pruning_rate, stride, pad,
            fixed_bitwidth=fixed_bits)

        ac = self.adapter_channels
        self.adapters = [
            mk((ac, in_ch_a, 1, 1), stride_a, 0),
            mk((ac, in_ch_b, 1, 1), stride_b, 0),
        ]
        self.edge_convs: dict[tuple[int, int], CompConvLayer] = {}
        for j in range(n):
            for i in range(j + 2):
                if genotype is not None and self.fixed_ops.get((i, j)) != CONV_OP:
                    continue  # decoded cells materialize only chosen convs
                in_ch = ac if i < 2 else self.node_channels
                stride = 2 if (reduction and i < 2) else 1
                self.edge_convs[(i, j)] = mk((self.node_channels, in_ch, 3, 3), stride, 1)

    def edge_candidates(self) -> list[tuple[int, int]]:
        return [(i, j) for j in range(self.nodes) for i in range(j + 2)]

    def skip(self, i: int, x: Tensor) -> Tensor:
        if self.reduction and i < 2:
            return ops.dup_channels(ops.subsample2(x))
        return x


@dataclass
class CellState:
    adapters: list[LIFState]
    nodes: list[LIFState]


class SpikingSearchNet:
    """Search supernet or decoded network over the configured backbone."""

    def __init__(self, spec: NetSpec, rng: np.random.Generator,
                 arch: DecodedArchitecture | None = None):
        p = spec.profile
        if any(not 1 <= r <= p.cells for r in p.reductions):
            raise ShapeError(f"invalid reduction positions {p.reductions} "
                             f"for {p.cells} cells")
        if len(set(p.reductions)) != len(p.reductions):
            raise ShapeError("duplicate reduction positions")
        self.spec = spec
        self.arch = arch
        self.neuron = spec.neuron
        self.t_max = arch.timesteps if arch else p.t_max

        def he(shape):
            fan_in = shape[1] * shape[2] * shape[3]
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

        c = p.channels
        self.stem_w = Tensor(he((c, p.in_channels, 3, 3)), requires_grad=True)
        self.bn_gamma = Tensor(np.ones(c), requires_grad=True)
        self.bn_beta = Tensor(np.zeros(c), requires_grad=True)

        # per-cell channel and spatial schedule
        self.schedule: list[tuple[int, tuple[int, int]]] = []  # output of each cell
        self.cells: list[Cell] = []
        self._alpha: dict[tuple, Tensor] = {}
        ch_pp, ch_p = c, c       # stem feeds both inputs of the first cell
        hw_pp = hw_p = p.in_hw
        cur_ch, cur_hw = c, p.in_hw
        for k in range(p.cells):
            reduction = (k + 1) in p.reductions
            out_ch = cur_ch * 2 if reduction else cur_ch
            out_hw = ((cur_hw[0] + 1) // 2, (cur_hw[1] + 1) // 2) if reduction else cur_hw
            stride_a = hw_pp[0] // cur_hw[0] if hw_pp != cur_hw else 1
            stride_b = 1
            if stride_a not in (1, 2):
                raise ShapeError(f"cell {k}: unsupported spatial ratio {hw_pp} -> {cur_hw}")
            geno = arch.cells[k] if arch else None
            cell = Cell(k, reduction, spec, ch_pp, ch_p, stride_a, stride_b,
                        out_ch, rng, genotype=geno)
            self.cells.append(cell)
            self.schedule.append((out_ch, out_hw))
            ch_pp, ch_p = ch_p, out_ch
            hw_pp, hw_p = cur_hw, out_hw
            cur_ch, cur_hw = out_ch, out_hw

        # architecture logits: shared across cells of the same type unless
        # configured per cell; decoded nets have none
        if arch is None:
            for cell in self.cells:
                for key in cell.edge_candidates():
                    akey = self._alpha_key(cell, key)
                    if akey not in self._alpha:
                        self._alpha[akey] = Tensor(np.zeros(2), requires_grad=True)

        self.psi = Tensor(np.zeros(p.t_max), requires_grad=arch is None)
        last_ch = self.schedule[-1][0]
        self.fc_w = Tensor(rng.normal(0.0, np.sqrt(1.0 / last_ch),
                                      size=(last_ch, p.classes)), requires_grad=True)
        self.fc_b = Tensor(np.zeros(p.classes), requires_grad=True)

        self.aux_w = self.aux_b = None
        if spec.aux_cell is not None:
            if not 1 <= spec.aux_cell <= p.cells:
                raise ShapeError(f"aux cell {spec.aux_cell} out of range")
            aux_ch = self.schedule[spec.aux_cell - 1][0]
            self.aux_w = Tensor(rng.normal(0.0, np.sqrt(1.0 / aux_ch),
                                           size=(aux_ch, p.classes)), requires_grad=True)
            self.aux_b = Tensor(np.zeros(p.classes), requires_grad=True)

        if arch is not None and arch.masks:
            for name, mask in arch.masks.items():
                layer = self._conv_by_name().get(name)
                if layer is not None:
                    layer.pruning.frozen = mask.copy()

    # ------------------------------------------------------------------
    # parameter bookkeeping
    # ------------------------------------------------------------------

    def _alpha_key(self, cell: Cell, edge: tuple[int, int]) -> tuple:
        if self.spec.alpha_per_cell:
            return ("cell", cell.index, *edge)
        return ("reduce" if cell.reduction else "normal", *edge)

    def alpha(self, cell: Cell, edge: tuple[int, int]) -> Tensor:
        return self._alpha[self._alpha_key(cell, edge)]

    def _conv_by_name(self) -> dict[str, CompConvLayer]:
        out = {}
        for k, cell in enumerate(self.cells):
            for a, ad in enumerate(cell.adapters):
                out[f"cell{k}.adapter{a}"] = ad
            for (i, j), conv in cell.edge_convs.items():
                out[f"cell{k}.edge{i}_{j}"] = conv
        return out

    def named_parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {
            "stem.w": self.stem_w, "stem.bn_gamma": self.bn_gamma,
            "stem.bn_beta": self.bn_beta,
        }
        for name, conv in self._conv_by_name().items():
            params[f"{name}.w"] = conv.weights
            params[f"{name}.scores"] = conv.scores
        for k, cell in enumerate(self.cells):
            if self.arch is None:
                params[f"cell{k}.beta"] = cell.beta
        for akey, tensor in sorted(self._alpha.items(), key=lambda kv: str(kv[0])):
            params["alpha." + "_".join(str(x) for x in akey)] = tensor
        if self.arch is None:
            params["psi"] = self.psi
        params["fc.w"] = self.fc_w
        params["fc.b"] = self.fc_b
        if self.aux_w is not None:
            params["aux.w"] = self.aux_w
            params["aux.b"] = self.aux_b
        return params

    def arch_parameter_names(self) -> list[str]:
        names = [n for n in self.named_parameters()
                 if n.startswith("alpha.") or n.endswith(".beta")
                 or n.endswith(".scores") or n == "psi"]
        return names

    def weight_parameter_names(self) -> list[str]:
        arch = set(self.arch_parameter_names())
        return [n for n in self.named_parameters() if n not in arch]

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.zero_grad()

    # ------------------------------------------------------------------
    # forward
    # ------------------------------------------------------------------

    def _prepare_pass(self) -> dict:
        """Per-pass caches: effective conv weights, softmaxed mixture logits.

        Weights are constant within one unrolled pass, so masks and branch
        mixtures are computed once and the resulting graph nodes reused by
        every timestep (gradients accumulate across reuse).
        """
        ctx: dict = {"eff": {}, "alpha_w": {}}
        for name, conv in self._conv_by_name().items():
            ctx["eff"][name] = conv.effective_weights()
        if self.arch is None:
            for akey, tensor in self._alpha.items():
                ctx["alpha_w"][akey] = ops.softmax_vec(tensor)
        return ctx

    def _conv_forward(self, ctx, name: str, conv: CompConvLayer, x: Tensor) -> Tensor:
        return ops.conv2d(x, ctx["eff"][name], conv.stride, conv.pad)

    def _edge_out(self, ctx, cell: Cell, i: int, j: int, x: Tensor) -> Tensor:
        conv_name = f"cell{cell.index}.edge{i}_{j}"
        if cell.genotype is not None:
            op = cell.fixed_ops[(i, j)]
            if op == CONV_OP:
                return self._conv_forward(ctx, conv_name, cell.edge_convs[(i, j)], x)
            return cell.skip(i, x)
        w = ctx["alpha_w"][self._alpha_key(cell, (i, j))]
        conv_out = self._conv_forward(ctx, conv_name, cell.edge_convs[(i, j)], x)
        skip_out = cell.skip(i, x)
        return ops.add(ops.scale(conv_out, ops.index(w, 0)),
                       ops.scale(skip_out, ops.index(w, 1)))

    def _cell_step(self, ctx, cell: Cell, x_a: Tensor, x_b: Tensor,
                   state: CellState, stats, t: int,
                   active_edges: set | None) -> Tensor:
        k = cell.index
        sources = []
        for a, (ad, x) in enumerate(zip(cell.adapters, (x_a, x_b))):
            cur = self._conv_forward(ctx, f"cell{k}.adapter{a}", ad, x)
            state.adapters[a], sp = lif_step(state.adapters[a], cur, self.neuron)
            stats.add(f"cell{k}.adapter{a}.spike", t, sp.values)
            sources.append(sp)
        active = active_edges if active_edges is not None else cell.active
        for j in range(cell.nodes):
            acc = None
            for i in range(j + 2):
                if active is not None and (i, j) not in active:
                    continue
                out = self._edge_out(ctx, cell, i, j, sources[i])
                acc = out if acc is None else ops.add(acc, out)
            if acc is None:
                raise ShapeError(f"cell {k} node {j} has no active incoming edge")
            state.nodes[j], sp = lif_step(state.nodes[j], acc, self.neuron)
            stats.add(f"cell{k}.node{j}.spike", t, sp.values)
            sources.append(sp)
        out = ops.concat(sources[2:], axis=1)
        # the concatenated node spikes are themselves a spike population;
        # they feed the next cells' adapters
        stats.add(f"cell{k}.out", t, out.values)
        return out

    def init_state(self, batch: int, hw: tuple[int, int]) -> list[CellState]:
        states = []
        cur_hw = hw
        for cell in self.cells:
            ad_hw = cur_hw  # adapters live at the cell's input resolution
            node_hw = ((cur_hw[0] + 1) // 2, (cur_hw[1] + 1) // 2) if cell.reduction else cur_hw
            # adapter a may subsample a larger prev-prev input; its output is
            # always at the cell input resolution
            states.append(CellState(
                adapters=[LIFState.zeros((batch, cell.adapter_channels, *ad_hw))
                          for _ in range(2)],
                nodes=[LIFState.zeros((batch, cell.node_channels, *node_hw))
                       for _ in range(cell.nodes)],
            ))
            cur_hw = node_hw
        return states

    def forward_temporal(self, frames: list[Tensor], stats,
                         active_edges: dict[int, set] | None = None,
                         collect_aux: bool = False):
        p = self.spec.profile
        t_steps = len(frames)
        batch = frames[0].shape[0]
        if frames[0].shape[1] != p.in_channels:
            raise ShapeError(f"input channels {frames[0].shape[1]} != profile "
                             f"{p.in_channels}")

        # stem phase: conv -> spike for every step, then batchnorm with
        # statistics shared across batch and all timesteps jointly
        stem_state = LIFState.zeros((batch, p.channels,
                                     *ops.conv_output_hw(*frames[0].shape[2:], 3, 3, 1, 1)))
        stem_spikes = []
        for t, x in enumerate(frames):
            stats.add_input("input", t, x.values)
            cur = ops.conv2d(x, self.stem_w, 1, 1)
            stem_state, sp = lif_step(stem_state, cur, self.neuron)
            stats.add("stem.spike", t, sp.values)
            stem_spikes.append(sp)
        stacked = ops.concat(stem_spikes, axis=0) if t_steps > 1 else stem_spikes[0]
        normed = ops.batchnorm(stacked, self.bn_gamma, self.bn_beta)
        stem_out = [ops.narrow(normed, 0, t * batch, batch) for t in range(t_steps)]
        for t in range(t_steps):
            stats.add_input("stem.bn", t, stem_out[t].values)

        ctx = self._prepare_pass()
        cell_states = self.init_state(batch, stem_out[0].shape[2:])
        outputs, aux_outputs = [], []
        for t in range(t_steps):
            prev_prev = prev = stem_out[t]
            for ci, cell in enumerate(self.cells):
                act = active_edges.get(ci) if active_edges is not None else None
                out = self._cell_step(ctx, cell, prev_prev, prev,
                                      cell_states[ci], stats, t, act)
                prev_prev, prev = prev, out
                if collect_aux and self.aux_w is not None and ci == self.spec.aux_cell - 1:
                    pooled_aux = ops.mean_axes(out, (2, 3))
                    aux_outputs.append(ops.add_rowvec(
                        ops.matmul(pooled_aux, self.aux_w), self.aux_b))
            pooled = ops.mean_axes(prev, (2, 3))
            outputs.append(ops.add_rowvec(ops.matmul(pooled, self.fc_w), self.fc_b))
        if collect_aux:
            return outputs, aux_outputs
        return outputs

    # ------------------------------------------------------------------
    # cost model wiring
    # ------------------------------------------------------------------

    def conv_layer_infos(self) -> list[ConvLayerInfo]:
        p = self.spec.profile
        infos = [ConvLayerInfo(
            name="stem", kh=3, kw=3, c_in=p.in_channels, c_out=p.channels,
            h_out=p.in_hw[0], w_out=p.in_hw[1], stride=1, pad=1,
            pruning_rate=0.0, source="input", spike_input=False,
            cell_index=None, alpha_key=None, fixed_bits=32,
            h_in=p.in_hw[0], w_in=p.in_hw[1])]
        sources = ["stem.bn", "stem.bn"]  # input feeds (prev_prev, prev)
        spikey = [False, False]
        src_hw = [p.in_hw, p.in_hw]  # resolutions of the two input feeds
        cur_hw = p.in_hw
        for k, cell in enumerate(self.cells):
            node_hw = ((cur_hw[0] + 1) // 2, (cur_hw[1] + 1) // 2) if cell.reduction else cur_hw
            for a, ad in enumerate(cell.adapters):
                infos.append(ConvLayerInfo(
                    name=f"cell{k}.adapter{a}", kh=1, kw=1,
                    c_in=ad.shape[1], c_out=ad.shape[0],
                    h_out=cur_hw[0], w_out=cur_hw[1], stride=ad.stride, pad=0,
                    pruning_rate=ad.pruning.rate, source=sources[a],
                    spike_input=spikey[a], cell_index=k, alpha_key=None,
                    fixed_bits=ad.fixed_bitwidth,
                    h_in=src_hw[a][0], w_in=src_hw[a][1]))
            for (i, j), conv in cell.edge_convs.items():
                src = (f"cell{k}.adapter{i}.spike" if i < 2
                       else f"cell{k}.node{i - 2}.spike")
                edge_in_hw = cur_hw if i < 2 else node_hw
                infos.append(ConvLayerInfo(
                    name=f"cell{k}.edge{i}_{j}", kh=3, kw=3,
                    c_in=conv.shape[1], c_out=conv.shape[0],
                    h_out=node_hw[0], w_out=node_hw[1], stride=conv.stride, pad=1,
                    pruning_rate=conv.pruning.rate, source=src, spike_input=True,
                    cell_index=k,
                    alpha_key=None if cell.genotype is not None
                    else self._alpha_key(cell, (i, j)),
                    fixed_bits=conv.fixed_bitwidth,
                    h_in=edge_in_hw[0], w_in=edge_in_hw[1]))
            sources = [sources[1], f"cell{k}.out"]
            spikey = [spikey[1], True]
            src_hw = [src_hw[1], node_hw]
            cur_hw = node_hw
        last_ch = self.schedule[-1][0]
        infos.append(ConvLayerInfo(
            name="fc", kh=1, kw=1, c_in=last_ch, c_out=p.classes,
            h_out=1, w_out=1, stride=1, pad=0, pruning_rate=0.0,
            source=f"cell{len(self.cells) - 1}.out", spike_input=False,
            cell_index=None, alpha_key=None, fixed_bits=32, h_in=1, w_in=1))
        return infos

    # ------------------------------------------------------------------
    # decode
    # ------------------------------------------------------------------

    def decode(self, config_hash: str | None = None) -> DecodedArchitecture:
        """Pick the strongest structure: per node the two strongest incoming
        edges (strength = max over the edge's op logits) each with its argmax
        operation; per cell the argmax bit-width; the argmax timestep count.
        Ties resolve to the lowest index everywhere."""
        if self.arch is not None:
            raise ValueError("network is already decoded")
        cells = []
        for cell in self.cells:
            edges = []
            for j in range(cell.nodes):
                strength = np.array([self._alpha[self._alpha_key(cell, (i, j))].values.max()
                                     for i in range(j + 2)])
                keep = np.sort(np.argsort(-strength, kind="stable")[:2])
                for i in keep:
                    logits = self._alpha[self._alpha_key(cell, (int(i), j))].values
                    op = (CONV_OP, SKIP_OP)[int(np.argmax(logits))]
                    edges.append((int(i), j, op))
            bitwidth = self.spec.bit_candidates[int(np.argmax(cell.beta.values))]
            cells.append(CellGenotype(bitwidth=bitwidth, edges=edges))
        timesteps = int(np.argmax(self.psi.values)) + 1
        masks = {name: conv.pruning.current()
                 for name, conv in self._conv_by_name().items()}
        return DecodedArchitecture(cells=cells, timesteps=timesteps, masks=masks,
                                   config_hash=config_hash)


def build_backbone(spec: NetSpec, rng: np.random.Generator,
                   arch: DecodedArchitecture | None = None) -> SpikingSearchNet:
    return SpikingSearchNet(spec, rng, arch=arch)


def materialize_decoded(net: SpikingSearchNet, arch: DecodedArchitecture) -> SpikingSearchNet:
    """Decoded network sharing the supernet's trained parameter values."""
    decoded = SpikingSearchNet(replace(net.spec, aux_cell=None),
                               np.random.default_rng(0), arch=arch)
    src = net.named_parameters()
    for name, tensor in decoded.named_parameters().items():
        if name in src:
            tensor.values[...] = src[name].values
    # scores copied above; refreeze masks from the decode snapshot
    if arch.masks:
        convs = decoded._conv_by_name()
        for name, mask in arch.masks.items():
            if name in convs:
                convs[name].pruning.frozen = mask.copy()
    return decoded

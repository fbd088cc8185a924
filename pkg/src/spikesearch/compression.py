"""Shared-weight compressive convolution: mixed-precision branches + pruning.

A CompConv layer keeps one full-precision weight tensor and one learned score
tensor.  Each candidate bit-width quantizes the shared weights; the branch
mixture is a softmax over per-cell logits; a single top-k magnitude mask
(recomputed from scores every forward during search) prunes the mixed
weights.  The naive multi-branch block keeps per-branch weights and masks and
mixes branch *outputs*; it exists as the equivalence reference.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .autograd import Tensor, declare_custom_op, make_node, register_custom_gradient

QUANTIZE_OP_ID = "quantize_ste"
declare_custom_op(QUANTIZE_OP_ID)
# Straight-through: quantization is discrete forward, identity backward.
register_custom_gradient(QUANTIZE_OP_ID, lambda g, w: g)


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.floor(np.abs(x) + 0.5) * np.where(x < 0, -1.0, 1.0)


def quantize_array(w: np.ndarray, k: int) -> np.ndarray:
    """Symmetric per-tensor quantization to k bits.

    k >= 2: grid {m * delta} with delta = max|w| / (2^(k-1) - 1) and
    round-half-away-from-zero.  k == 1: sign(w) * mean|w| (zeros count as
    positive).  k >= 32 is full precision and passes through unchanged.
    All-zero input returns all zeros at any k.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise ValueError("quantize: empty weight tensor")
    if k < 1:
        raise ValueError(f"quantize: bitwidth must be >= 1, got {k}")
    if k >= 32:
        return w.copy()
    if k == 1:
        aw = np.abs(w)
        # exact mean of a constant array, so requantizing +-mu is a fixed point
        mu = aw.flat[0] if np.all(aw == aw.flat[0]) else np.mean(aw)
        return np.where(w < 0, -mu, mu)
    levels = 2 ** (k - 1) - 1
    maxabs = np.max(np.abs(w))
    if maxabs == 0.0:
        return np.zeros_like(w)
    # (m / levels) * maxabs rather than m * (maxabs / levels): the extreme
    # element maps back to exactly +-maxabs, which makes requantization a
    # bitwise fixed point.
    m = np.clip(round_half_away(w / maxabs * levels), -levels, levels)
    return m / levels * maxabs


def quantize_step(w: np.ndarray, k: int) -> float:
    """Grid step delta for k >= 2 (0 for an all-zero tensor)."""
    if k < 2:
        raise ValueError("grid step defined for k >= 2 only")
    maxabs = float(np.max(np.abs(w)))
    return maxabs / (2 ** (k - 1) - 1)


def quantize(w: Tensor, k: int) -> Tensor:
    """Tensor-level quantization with a straight-through backward."""
    return ops.apply_custom(QUANTIZE_OP_ID, lambda v: quantize_array(v, k), w)


def mask_from_scores(scores: np.ndarray, p: float) -> np.ndarray:
    """Binary keep-mask with exactly ceil((1 - p/100) * n) ones.

    Ones sit on the largest |scores|; ties keep the lowest flat index.
    """
    if not 0.0 <= p < 100.0:
        raise ValueError(f"pruning rate must be in [0, 100), got {p}")
    flat = np.abs(np.asarray(scores, dtype=np.float64)).reshape(-1)
    keep = math.ceil((1.0 - p / 100.0) * flat.size)
    order = np.argsort(-flat, kind="stable")  # stable: lowest index wins ties
    mask = np.zeros(flat.size, dtype=np.float64)
    mask[order[:keep]] = 1.0
    return mask.reshape(np.asarray(scores).shape)


def apply_mask(weights: Tensor, scores: Tensor, mask: np.ndarray) -> Tensor:
    """weights * mask with straight-through score gradients.

    Backward: d/d(weights) = g * mask; d/d(scores) = g, i.e. each score
    receives the gradient of the masked weight at its position.
    """

    def bwd(g):
        return g * mask, g.copy()

    return make_node(weights.values * mask, (weights, scores), bwd, "apply_mask")


@dataclass
class PruningMask:
    scores: Tensor
    rate: float
    frozen: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.rate < 100.0:
            raise ValueError(f"pruning rate must be in [0, 100), got {self.rate}")

    def current(self) -> np.ndarray:
        if self.frozen is not None:
            return self.frozen
        return mask_from_scores(self.scores.values, self.rate)

    def freeze(self) -> np.ndarray:
        self.frozen = self.current()
        return self.frozen

    def unfreeze(self) -> None:
        self.frozen = None


def mixed_precision_average(w: Tensor, candidates: tuple[int, ...],
                            beta_weights: Tensor) -> Tensor:
    """Softmax-weighted average of the shared weights quantized per candidate.

    ``beta_weights`` is the already-softmaxed branch distribution; exact in
    the branch weights, straight-through in w.
    """
    if len(candidates) == 0:
        raise ValueError("empty bit-width candidate set")
    if beta_weights.shape != (len(candidates),):
        raise ValueError(
            f"branch weights shape {beta_weights.shape} != candidates {len(candidates)}")
    mixed = None
    for j, k in enumerate(candidates):
        term = ops.scale(quantize(w, k), ops.index(beta_weights, j))
        mixed = term if mixed is None else ops.add(mixed, term)
    return mixed


class CompConvLayer:
    """Convolution with shared quantized-mixture weights and one pruning mask.

    The branch logits (beta) are owned by the enclosing cell and shared by
    every CompConv in it.  ``fixed_bitwidth`` switches the layer to a decoded
    single branch (exactly equal to a one-hot mixture).
    """

    def __init__(self, weights: np.ndarray, beta: Tensor,
                 bit_candidates: tuple[int, ...] = (1, 2, 4),
                 pruning_rate: float = 0.0, stride: int = 1, pad: int = 0,
                 fixed_bitwidth: int | None = None):
        self.weights = Tensor(np.asarray(weights, dtype=np.float64), requires_grad=True)
        # importance scores start as a copy of |W|
        self.scores = Tensor(np.abs(self.weights.values), requires_grad=True)
        self.beta = beta
        self.bit_candidates = tuple(bit_candidates)
        self.pruning = PruningMask(self.scores, pruning_rate)
        self.stride = stride
        self.pad = pad
        self.fixed_bitwidth = fixed_bitwidth

    @property
    def shape(self) -> tuple:
        return self.weights.shape

    def effective_weights(self) -> Tensor:
        if self.fixed_bitwidth is not None:
            wq = quantize(self.weights, self.fixed_bitwidth)
        else:
            wq = mixed_precision_average(self.weights, self.bit_candidates,
                                         ops.softmax_vec(self.beta))
        return apply_mask(wq, self.scores, self.pruning.current())

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.effective_weights(), self.stride, self.pad)


class NaiveBranchBlock:
    """Per-branch weights, masks and convolutions, mixed on branch outputs."""

    def __init__(self, branch_weights: list[np.ndarray], beta: Tensor,
                 bit_candidates: tuple[int, ...], pruning_rate: float = 0.0,
                 stride: int = 1, pad: int = 0,
                 branch_scores: list[np.ndarray] | None = None):
        if len(branch_weights) != len(bit_candidates):
            raise ValueError("branch count must match the candidate set")
        self.branch_weights = [Tensor(np.asarray(w, dtype=np.float64), requires_grad=True)
                               for w in branch_weights]
        if branch_scores is None:
            branch_scores = [np.abs(w.values) for w in self.branch_weights]
        self.branch_scores = [Tensor(np.asarray(s, dtype=np.float64), requires_grad=True)
                              for s in branch_scores]
        self.beta = beta
        self.bit_candidates = tuple(bit_candidates)
        self.pruning_rate = pruning_rate
        self.stride = stride
        self.pad = pad

    def forward(self, x: Tensor) -> Tensor:
        w_beta = ops.softmax_vec(self.beta)
        out = None
        for j, k in enumerate(self.bit_candidates):
            wq = quantize(self.branch_weights[j], k)
            mask = mask_from_scores(self.branch_scores[j].values, self.pruning_rate)
            wm = apply_mask(wq, self.branch_scores[j], mask)
            branch_out = ops.conv2d(x, wm, self.stride, self.pad)
            term = ops.scale(branch_out, ops.index(w_beta, j))
            out = term if out is None else ops.add(out, term)
        return out


def weight_histogram_export(layer: CompConvLayer, bins: int,
                            path: str | None = None) -> list[tuple[str, float, int]]:
    """Aligned histograms of W, the quantized mixture eW, and the masked
    output weights (kept entries only; pruned zeros reported as their own
    series row).  Returns (series, bin_center, frequency) rows; optionally
    writes them as CSV with columns series,bin_center,frequency.
    """
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    w = layer.weights.values.reshape(-1)
    softmax_beta = np.exp(layer.beta.values - layer.beta.values.max())
    softmax_beta = softmax_beta / softmax_beta.sum()
    if layer.fixed_bitwidth is not None:
        ew = quantize_array(w, layer.fixed_bitwidth)
    else:
        ew = sum(softmax_beta[j] * quantize_array(w, k)
                 for j, k in enumerate(layer.bit_candidates))
    mask = layer.pruning.current().reshape(-1)
    w_out_kept = (ew * mask)[mask == 1.0]

    lo = min(w.min(), ew.min(), w_out_kept.min() if w_out_kept.size else 0.0)
    hi = max(w.max(), ew.max(), w_out_kept.max() if w_out_kept.size else 0.0)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])

    rows: list[tuple[str, float, int]] = []
    for name, data in (("W", w), ("eW", ew), ("Woutput", w_out_kept)):
        freq, _ = np.histogram(data, bins=edges)
        rows.extend((name, float(c), int(f)) for c, f in zip(centers, freq))
    rows.append(("Woutput_pruned", 0.0, int(mask.size - mask.sum())))

    if path is not None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["series", "bin_center", "frequency"])
            writer.writerows(rows)
    return rows

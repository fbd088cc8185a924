"""Forward primitives with analytic reverse-mode rules.

The set is deliberately small: exactly what small convolutional spiking
networks unrolled over time need.  No general broadcasting; operand shapes
must conform as documented per primitive.
"""

from __future__ import annotations

import numpy as np

from .autograd import ShapeError, Tensor, make_node


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=requires_grad)


def constant(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64))


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.values.shape != b.values.shape:
        raise ShapeError(f"{op}: shapes {a.values.shape} and {b.values.shape} differ")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return make_node(a.values + b.values, (a, b),
                     lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return make_node(a.values - b.values, (a, b),
                     lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    av, bv = a.values, b.values
    return make_node(av * bv, (a, b),
                     lambda g: (g * bv, g * av), "mul")


def affine(x: Tensor, scale: float, shift: float) -> Tensor:
    """scale * x + shift with python-scalar coefficients."""
    return make_node(scale * x.values + shift, (x,),
                     lambda g: (g * scale,), "affine")


def square(x: Tensor) -> Tensor:
    xv = x.values
    return make_node(xv * xv, (x,), lambda g: (2.0 * g * xv,), "square")


def scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a scalar tensor; gradients reach both."""
    if s.values.size != 1:
        raise ShapeError(f"scale: scale factor must be scalar, got {s.shape}")
    xv, sv = x.values, float(s.values.reshape(())[()])

    def bwd(g):
        return g * sv, np.sum(g * xv).reshape(s.values.shape)

    return make_node(xv * sv, (x, s), bwd, "scale")


def threshold_ge(x: Tensor, thresh: float, op_id: str | None = None,
                 local_rule=None) -> Tensor:
    """Elementwise x >= thresh as exact {0.0, 1.0}.

    Non-differentiable: backward requires a registered or node-local rule
    (zero gradient can be requested explicitly with ``lambda g, *_: g * 0``).
    """
    vals = (x.values >= thresh).astype(np.float64)
    return make_node(vals, (x,), None, "threshold_ge",
                     op_id=op_id, local_rule=local_rule)


def apply_custom(op_id: str, forward_fn, *inputs: Tensor, local_rule=None) -> Tensor:
    """Apply a named custom primitive; backward comes from the rule registry
    (or the node-local rule)."""
    vals = forward_fn(*(t.values for t in inputs))
    return make_node(vals, inputs, None, op_id, op_id=op_id, local_rule=local_rule)


# ---------------------------------------------------------------------------
# reductions and vector ops
# ---------------------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    return make_node(np.sum(x.values).reshape(()), (x,),
                     lambda g: (np.full_like(x.values, float(g.reshape(())[()])),),
                     "sum_all")


def mean_axes(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    axes = tuple(sorted(ax % x.values.ndim for ax in axes))
    count = 1
    for ax in axes:
        count *= x.values.shape[ax]
    out = np.mean(x.values, axis=axes)

    def bwd(g):
        ge = np.expand_dims(g, axes)
        return (np.broadcast_to(ge, x.values.shape) / count,)

    return make_node(out, (x,), bwd, "mean_axes")


def index(v: Tensor, i: int) -> Tensor:
    """Pick one entry of a 1-D tensor as a scalar tensor."""
    if v.values.ndim != 1:
        raise ShapeError(f"index: expected 1-D tensor, got {v.shape}")

    def bwd(g):
        out = np.zeros_like(v.values)
        out[i] = float(g.reshape(())[()])
        return (out,)

    return make_node(np.asarray(v.values[i]).reshape(()), (v,), bwd, "index")


def dot_const(v: Tensor, c: np.ndarray) -> Tensor:
    """Dot product of a 1-D tensor with a constant vector."""
    c = np.asarray(c, dtype=np.float64)
    if v.values.shape != c.shape:
        raise ShapeError(f"dot_const: shapes {v.shape} and {c.shape} differ")
    return make_node(np.asarray(np.dot(v.values, c)).reshape(()), (v,),
                     lambda g: (float(g.reshape(())[()]) * c,), "dot_const")


def softmax_vec(x: Tensor) -> Tensor:
    """Softmax over a 1-D logit vector.  -inf logits yield exact zeros."""
    if x.values.ndim != 1:
        raise ShapeError(f"softmax_vec: expected 1-D tensor, got {x.shape}")
    z = x.values - np.max(x.values)
    e = np.exp(z)
    w = e / np.sum(e)

    def bwd(g):
        return (w * (g - np.dot(g, w)),)

    return make_node(w, (x,), bwd, "softmax_vec")


def cross_entropy_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of (B, K) logits against integer labels."""
    if logits.values.ndim != 2:
        raise ShapeError(f"cross_entropy_logits: expected (B, K) logits, got {logits.shape}")
    labels = np.asarray(labels)
    b, k = logits.values.shape
    if labels.shape != (b,):
        raise ShapeError(f"cross_entropy_logits: labels shape {labels.shape} != ({b},)")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels out of range [0, {k})")
    z = logits.values - logits.values.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=1))
    picked = z[np.arange(b), labels]
    loss = np.mean(lse - picked)
    probs = np.exp(z) / np.sum(np.exp(z), axis=1, keepdims=True)

    def bwd(g):
        gg = float(g.reshape(())[()])
        gl = probs.copy()
        gl[np.arange(b), labels] -= 1.0
        return (gl * (gg / b),)

    return make_node(np.asarray(loss).reshape(()), (logits,), bwd, "cross_entropy_logits")


# ---------------------------------------------------------------------------
# linear algebra and structure
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.values.shape[1] != b.values.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.shape} x {b.shape} do not agree")
    av, bv = a.values, b.values
    return make_node(av @ bv, (a, b),
                     lambda g: (g @ bv.T, av.T @ g), "matmul")


def add_rowvec(x: Tensor, b: Tensor) -> Tensor:
    """Add a (K,) bias to every row of a (B, K) tensor."""
    if x.values.ndim != 2 or b.values.ndim != 1 or x.values.shape[1] != b.values.shape[0]:
        raise ShapeError(f"add_rowvec: shapes {x.shape} and {b.shape} do not conform")
    return make_node(x.values + b.values[None, :], (x, b),
                     lambda g: (g, g.sum(axis=0)), "add_rowvec")


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat: empty input list")
    vals = [t.values for t in tensors]
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return make_node(np.concatenate(vals, axis=axis), tuple(tensors), bwd, "concat")


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    sl = [slice(None)] * x.values.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bwd(g):
        out = np.zeros_like(x.values)
        out[sl] = g
        return (out,)

    return make_node(x.values[sl], (x,), bwd, "narrow")


def subsample2(x: Tensor) -> Tensor:
    """Spatial stride-2 subsampling of an NCHW tensor (keeps even indices)."""
    if x.values.ndim != 4:
        raise ShapeError(f"subsample2: expected NCHW tensor, got {x.shape}")

    def bwd(g):
        out = np.zeros_like(x.values)
        out[:, :, ::2, ::2] = g
        return (out,)

    return make_node(x.values[:, :, ::2, ::2], (x,), bwd, "subsample2")


def dup_channels(x: Tensor) -> Tensor:
    """Duplicate the channel axis: (B, C, H, W) -> (B, 2C, H, W)."""
    return concat([x, x], axis=1)


# ---------------------------------------------------------------------------
# convolution (im2col based)
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    b, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    img = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=np.float64)
    for i in range(kh):
        i_max = i + stride * ho
        for j in range(kw):
            j_max = j + stride * wo
            cols[:, :, i, j, :, :] = img[:, :, i:i_max:stride, j:j_max:stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(b * ho * wo, c * kh * kw), ho, wo


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int):
    b, c, h, w = x_shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for i in range(kh):
        i_max = i + stride * ho
        for j in range(kw):
            j_max = j + stride * wo
            img[:, :, i:i_max:stride, j:j_max:stride] += cols[:, :, i, j, :, :]
    if pad:
        return img[:, :, pad:h + pad, pad:w + pad]
    return img


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution of NCHW input with (C_out, C_in, kh, kw) kernels.

    Zero padding, stride 1 or 2, odd kernels only.  Backward reuses the
    cached im2col matrix: dW = cols^T g, dX = col2im(g W).
    """
    if x.values.ndim != 4 or w.values.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and kernel, got {x.shape}, {w.shape}")
    b, cin, h, hw = x.values.shape
    cout, cin_w, kh, kw = w.values.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input channels {cin} != kernel channels {cin_w}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be odd-sized, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    if h + 2 * pad < kh or hw + 2 * pad < kw:
        raise ShapeError(f"conv2d: input {h}x{hw} (pad {pad}) smaller than kernel {kh}x{kw}")

    cols, ho, wo = _im2col(x.values, kh, kw, stride, pad)
    wmat = w.values.reshape(cout, cin * kh * kw)
    out = (cols @ wmat.T).reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)

    def bwd(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(b * ho * wo, cout)
        gw = (g2.T @ cols).reshape(w.values.shape)
        gx = _col2im(g2 @ wmat, x.values.shape, kh, kw, stride, pad)
        return gx, gw

    return make_node(np.ascontiguousarray(out), (x, w), bwd, "conv2d")


def conv_output_hw(h: int, w: int, kh: int, kw: int, stride: int, pad: int) -> tuple[int, int]:
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


# ---------------------------------------------------------------------------
# batch normalization with time-shared statistics
# ---------------------------------------------------------------------------

def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization of an (M, C, H, W) tensor over axes (0, 2, 3).

    Time-shared statistics are obtained by concatenating all timesteps along
    the leading axis before calling this.  Uses batch statistics always;
    gamma and beta are (C,) parameters.
    """
    if x.values.ndim != 4:
        raise ShapeError(f"batchnorm: expected 4-D input, got {x.shape}")
    c = x.values.shape[1]
    if gamma.values.shape != (c,) or beta.values.shape != (c,):
        raise ShapeError(f"batchnorm: gamma/beta must have shape ({c},)")
    axes = (0, 2, 3)
    mu = x.values.mean(axis=axes, keepdims=True)
    var = ((x.values - mu) ** 2).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.values - mu) * inv
    out = gamma.values[None, :, None, None] * xhat + beta.values[None, :, None, None]

    def bwd(g):
        ggamma = np.sum(g * xhat, axis=axes)
        gbeta = np.sum(g, axis=axes)
        gmean = g.mean(axis=axes, keepdims=True)
        gx_hat_mean = (g * xhat).mean(axis=axes, keepdims=True)
        gx = gamma.values[None, :, None, None] * inv * (g - gmean - xhat * gx_hat_mean)
        return gx, ggamma, gbeta

    return make_node(out, (x, gamma, beta), bwd, "batchnorm")

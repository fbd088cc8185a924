"""Dense float64 tensors with reverse-mode differentiation.

Values are contiguous float64 arrays; gradients accumulate additively into
``Tensor.grad`` until explicitly cleared.  Graphs are built dynamically: an
operation records a node only while gradients are enabled and at least one
input requires them.  A node may carry an ``op_id`` naming a custom-gradient
primitive instance; rules registered for that id replace the analytic
backward rule at walk time.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class GradientError(RuntimeError):
    """Backward-pass misuse: non-scalar loss, missing or unknown rules."""


_grad_enabled = True
_debug_nan = False

# op_ids announced by forward primitives; registration against any other id
# is rejected so typos fail loudly.
_declared_ops: set[str] = set()
_custom_rules: dict[str, Callable] = {}


def set_debug_nan(flag: bool) -> None:
    """When enabled, every primitive checks its output for NaN and raises."""
    global _debug_nan
    _debug_nan = bool(flag)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def declare_custom_op(op_id: str) -> None:
    _declared_ops.add(op_id)


def register_custom_gradient(op_id: str, backward_rule: Callable) -> None:
    """Attach ``backward_rule`` to the primitive named ``op_id``.

    The rule is called as ``rule(grad_output, *parent_values)`` and must
    return one gradient array per parent (a bare array for unary ops).
    Backward uses it instead of the node's analytic or node-local rule.
    """
    if op_id not in _declared_ops:
        raise GradientError(f"unknown op_id {op_id!r}; no such forward primitive")
    _custom_rules[op_id] = backward_rule


def clear_custom_gradient(op_id: str) -> None:
    _custom_rules.pop(op_id, None)


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward",
                 "_op_id", "_local_rule", "_op_name")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.ascontiguousarray(values, dtype=np.float64)
        self.values = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self._op_id = None
        self._local_rule = None
        self._op_name = "leaf"

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(())[()])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op_name}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; same-shape tensor operands or python scalars only.
    def __add__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.add(self, other)
        return ops.affine(self, 1.0, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.sub(self, other)
        return ops.affine(self, 1.0, -float(other))

    def __mul__(self, other):
        from . import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.affine(self, -1.0, 0.0)


def make_node(values: np.ndarray, parents: Iterable[Tensor], backward,
              name: str, op_id: str | None = None, local_rule=None) -> Tensor:
    """Create an operation-result tensor, recording a graph node if needed.

    ``backward`` is ``fn(grad_out) -> tuple(parent grads or None)``.  Custom
    primitives pass ``backward=None`` plus an ``op_id`` and optionally a
    node-local rule; resolution order at walk time is registered rule,
    node-local rule, analytic rule.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    if _debug_nan and np.isnan(values).any():
        raise FloatingPointError(f"NaN produced by op {name!r}")
    if op_id is not None:
        _declared_ops.add(op_id)
    parents = tuple(parents)
    if not _grad_enabled or not any(p.requires_grad for p in parents):
        return Tensor(values)
    out = Tensor(values, requires_grad=True)
    out._parents = parents
    out._backward = backward
    out._op_id = op_id
    out._local_rule = local_rule
    out._op_name = name
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and (p._parents or p.requires_grad):
                stack.append((p, False))
    return order


def _resolve_rule(node: Tensor):
    if node._op_id is not None and node._op_id in _custom_rules:
        rule = _custom_rules[node._op_id]
        return lambda g: rule(g, *(p.values for p in node._parents))
    if node._local_rule is not None:
        rule = node._local_rule
        return lambda g: rule(g, *(p.values for p in node._parents))
    if node._backward is not None:
        return node._backward
    raise GradientError(
        f"op {node._op_name!r} (op_id={node._op_id!r}) has no backward rule; "
        "register one with register_custom_gradient")


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` of every requires_grad tensor.

    Repeated calls without zeroing add gradients together.
    """
    if loss.values.size != 1:
        raise GradientError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        # Constant loss: nothing depends on any parameter.
        return
    order = _topo_order(loss)
    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad += g
        if not node._parents:
            continue
        rule = _resolve_rule(node)
        grads = rule(g)
        if not isinstance(grads, (tuple, list)):
            grads = (grads,)
        if len(grads) != len(node._parents):
            raise GradientError(
                f"backward rule for {node._op_name!r} returned {len(grads)} "
                f"gradients for {len(node._parents)} inputs")
        for parent, pg in zip(node._parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.values.shape:
                raise ShapeError(
                    f"gradient shape {pg.shape} does not match parent shape "
                    f"{parent.values.shape} in op {node._op_name!r}")
            acc = flowing.get(id(parent))
            if acc is None:
                # Copy: rules may return (views of) their input gradient, and
                # the stored array is mutated in place by later contributions.
                flowing[id(parent)] = np.array(pg)
            else:
                acc += pg


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor,
                      eps: float = 1e-5) -> float:
    """Max relative error between analytic grad of f at x and central differences.

    Relative error per coordinate is |analytic - numeric| / (|analytic| + 1e-12).
    Only meaningful where f is smooth around x.
    """
    probe = Tensor(x.values.copy(), requires_grad=True)
    out = f(probe)
    if out.values.size != 1:
        raise GradientError("finite_diff_check expects a scalar-valued function")
    backward(out)
    analytic = np.zeros_like(probe.values) if probe.grad is None else probe.grad.copy()

    numeric = np.zeros_like(analytic)
    flat = probe.values.reshape(-1)
    num_flat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f(Tensor(probe.values.copy())).item()
            flat[i] = orig - eps
            lo = f(Tensor(probe.values.copy())).item()
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2.0 * eps)
    err = np.abs(analytic - numeric) / (np.abs(analytic) + 1e-12)
    return float(err.max()) if err.size else 0.0

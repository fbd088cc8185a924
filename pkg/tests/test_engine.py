import math

import numpy as np
import pytest

from spikesearch import autograd, ops
from spikesearch.autograd import (GradientError, ShapeError, Tensor, backward,
                                  finite_diff_check)


def test_softmax_symmetry():
    out = ops.softmax_vec(Tensor([0.0, 0.0]))
    np.testing.assert_allclose(out.values, [0.5, 0.5], atol=0)


def test_softmax_hand_value():
    out = ops.softmax_vec(Tensor([math.log(2.0), 0.0]))
    np.testing.assert_allclose(out.values, [2.0 / 3.0, 1.0 / 3.0], atol=1e-15)


def test_softmax_positive_sums_to_one():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = Tensor(rng.uniform(-5, 5, size=rng.integers(2, 9)))
        w = ops.softmax_vec(x).values
        assert np.all(w > 0)
        assert abs(w.sum() - 1.0) < 1e-12


def test_conv2d_ones_padding_counts_neighbors():
    x = Tensor(np.ones((1, 1, 2, 2)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    out = ops.conv2d(x, w, stride=1, pad=1)
    # every output pixel of the 2x2 map sees the full in-bounds 2x2 block
    np.testing.assert_array_equal(out.values, np.full((1, 1, 2, 2), 4.0))


def test_conv2d_shape_errors():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    with pytest.raises(ShapeError):
        ops.conv2d(x, Tensor(np.zeros((1, 3, 3, 3))), 1, 1)  # channel mismatch
    with pytest.raises(ShapeError):
        ops.conv2d(x, Tensor(np.zeros((1, 2, 2, 2))), 1, 1)  # even kernel
    with pytest.raises(ShapeError):
        ops.conv2d(x, Tensor(np.zeros((1, 2, 3, 3))), 3, 1)  # bad stride


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(ops.sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_softmax_dot_hand_jacobian():
    beta = Tensor([0.0, 0.0, 0.0], requires_grad=True)
    loss = ops.dot_const(ops.softmax_vec(beta), np.array([1.0, 2.0, 4.0]))
    backward(loss)
    np.testing.assert_allclose(beta.grad, [-4.0 / 9.0, -1.0 / 9.0, 5.0 / 9.0],
                               atol=1e-15)


def test_backward_square_shift():
    x = Tensor([3.0], requires_grad=True)
    loss = ops.sum_all(ops.square(x - 1.0))
    backward(loss)
    np.testing.assert_allclose(x.grad, [4.0])


def test_backward_scalar_loss_grad_is_one():
    x = Tensor([2.0], requires_grad=True)
    loss = ops.sum_all(ops.square(x))
    backward(loss)
    assert loss.grad.reshape(()) == 1.0


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(GradientError):
        backward(ops.square(x))


def test_backward_accumulates_without_zeroing():
    x = Tensor([1.0, 2.0], requires_grad=True)
    for _ in range(2):
        backward(ops.sum_all(x))
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_diamond_graph_accumulates_both_paths():
    # f(x) = x*x + 3x uses x along two paths; df/dx = 2x + 3
    x = Tensor([2.0], requires_grad=True)
    loss = ops.sum_all(ops.mul(x, x) + x * 3.0)
    backward(loss)
    np.testing.assert_allclose(x.grad, [7.0])


def test_custom_gradient_identity_rule():
    autograd.declare_custom_op("probe_identity")
    autograd.register_custom_gradient("probe_identity", lambda g, xv: g)
    x = Tensor([1.0, -2.0], requires_grad=True)
    out = ops.apply_custom("probe_identity", lambda v: v.copy(), x)
    backward(ops.sum_all(out))
    np.testing.assert_array_equal(x.grad, [1.0, 1.0])
    autograd.clear_custom_gradient("probe_identity")


def test_custom_gradient_round_ste():
    autograd.declare_custom_op("probe_round")
    autograd.register_custom_gradient("probe_round", lambda g, xv: g)
    x = Tensor([0.4, 1.6], requires_grad=True)
    out = ops.apply_custom("probe_round", np.round, x)
    np.testing.assert_array_equal(out.values, [0.0, 2.0])
    backward(ops.sum_all(out * 2.0))
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])
    autograd.clear_custom_gradient("probe_round")


def test_register_unknown_op_id_rejected():
    with pytest.raises(GradientError):
        autograd.register_custom_gradient("never_declared_op", lambda g: g)


def test_missing_rule_raises_at_backward():
    x = Tensor([1.0], requires_grad=True)
    out = ops.threshold_ge(x, 0.5)
    with pytest.raises(GradientError):
        backward(ops.sum_all(out))


def test_registered_rule_overrides_node_local():
    autograd.declare_custom_op("probe_override")
    x = Tensor([1.0], requires_grad=True)
    out = ops.threshold_ge(x, 0.5, op_id="probe_override",
                           local_rule=lambda g, xv: g * 2.0)
    autograd.register_custom_gradient("probe_override", lambda g, xv: g * 5.0)
    try:
        backward(ops.sum_all(out))
        np.testing.assert_array_equal(x.grad, [5.0])
    finally:
        autograd.clear_custom_gradient("probe_override")


def test_finite_diff_sum_of_squares():
    err = finite_diff_check(lambda t: ops.sum_all(ops.square(t)),
                            Tensor([1.0, 2.0]), eps=1e-5)
    assert err < 1e-8


def test_finite_diff_softmax_dot():
    err = finite_diff_check(
        lambda t: ops.dot_const(ops.softmax_vec(t), np.array([1.0, 2.0, 4.0])),
        Tensor([0.0, 0.0, 0.0]), eps=1e-5)
    assert err < 1e-6


def test_finite_diff_detects_broken_gradient():
    autograd.declare_custom_op("probe_broken")
    autograd.register_custom_gradient("probe_broken", lambda g, xv: -g)  # negated
    try:
        err = finite_diff_check(
            lambda t: ops.sum_all(ops.apply_custom("probe_broken", lambda v: v.copy(), t)),
            Tensor([0.3, -0.7]), eps=1e-5)
        assert err > 1e-2
    finally:
        autograd.clear_custom_gradient("probe_broken")


def _rand(rng, *shape):
    return Tensor(rng.uniform(-1.0, 1.0, size=shape), requires_grad=True)


SMOOTH_CASES = []


def _case(name):
    def deco(fn):
        SMOOTH_CASES.append((name, fn))
        return fn
    return deco


@_case("add")
def _fd_add(rng):
    b = Tensor(rng.uniform(-1, 1, size=(3, 4)))
    return lambda t: ops.sum_all(ops.square(ops.add(t, b))), _rand(rng, 3, 4)


@_case("sub")
def _fd_sub(rng):
    b = Tensor(rng.uniform(-1, 1, size=(3, 4)))
    return lambda t: ops.sum_all(ops.square(ops.sub(t, b))), _rand(rng, 3, 4)


@_case("mul")
def _fd_mul(rng):
    b = Tensor(rng.uniform(-1, 1, size=(5,)))
    return lambda t: ops.sum_all(ops.mul(t, b)), _rand(rng, 5)


@_case("affine")
def _fd_affine(rng):
    return lambda t: ops.sum_all(ops.square(ops.affine(t, 1.7, -0.3))), _rand(rng, 4)


@_case("scale")
def _fd_scale(rng):
    x = Tensor(rng.uniform(-1, 1, size=(3, 3)))
    return lambda t: ops.sum_all(ops.scale(x, ops.sum_all(t))), _rand(rng, 1)


@_case("matmul")
def _fd_matmul(rng):
    b = Tensor(rng.uniform(-1, 1, size=(4, 2)))
    return lambda t: ops.sum_all(ops.square(ops.matmul(t, b))), _rand(rng, 3, 4)


@_case("add_rowvec")
def _fd_add_rowvec(rng):
    x = Tensor(rng.uniform(-1, 1, size=(3, 4)))
    return lambda t: ops.sum_all(ops.square(ops.add_rowvec(x, t))), _rand(rng, 4)


@_case("conv2d_s1")
def _fd_conv1(rng):
    x = Tensor(rng.uniform(-1, 1, size=(2, 2, 5, 5)))
    return lambda t: ops.sum_all(ops.square(ops.conv2d(x, t, 1, 1))), _rand(rng, 3, 2, 3, 3)


@_case("conv2d_s2_input")
def _fd_conv2(rng):
    w = Tensor(rng.uniform(-1, 1, size=(2, 1, 3, 3)))
    return lambda t: ops.sum_all(ops.square(ops.conv2d(t, w, 2, 1))), _rand(rng, 1, 1, 6, 6)


@_case("concat")
def _fd_concat(rng):
    b = Tensor(rng.uniform(-1, 1, size=(2, 3)))
    return lambda t: ops.sum_all(ops.square(ops.concat([t, b], axis=0))), _rand(rng, 2, 3)


@_case("narrow")
def _fd_narrow(rng):
    return lambda t: ops.sum_all(ops.square(ops.narrow(t, 0, 1, 2))), _rand(rng, 4, 2)


@_case("subsample2")
def _fd_subsample(rng):
    return lambda t: ops.sum_all(ops.square(ops.subsample2(t))), _rand(rng, 1, 2, 5, 5)


@_case("mean_axes")
def _fd_mean(rng):
    return lambda t: ops.sum_all(ops.square(ops.mean_axes(t, (2, 3)))), _rand(rng, 2, 3, 4, 4)


@_case("softmax_vec")
def _fd_softmax(rng):
    c = rng.uniform(-1, 1, size=6)
    return lambda t: ops.dot_const(ops.softmax_vec(t), c), _rand(rng, 6)


@_case("cross_entropy_logits")
def _fd_ce(rng):
    labels = rng.integers(0, 3, size=4)
    return lambda t: ops.cross_entropy_logits(t, labels), _rand(rng, 4, 3)


@_case("batchnorm_x")
def _fd_bn_x(rng):
    gamma = Tensor(rng.uniform(0.5, 1.5, size=3))
    beta = Tensor(rng.uniform(-0.5, 0.5, size=3))
    return (lambda t: ops.sum_all(ops.square(ops.batchnorm(t, gamma, beta))),
            _rand(rng, 4, 3, 2, 2))


@_case("batchnorm_gamma")
def _fd_bn_gamma(rng):
    x = Tensor(rng.uniform(-1, 1, size=(4, 3, 2, 2)))
    beta = Tensor(rng.uniform(-0.5, 0.5, size=3))
    return (lambda t: ops.sum_all(ops.square(ops.batchnorm(x, t, beta))),
            _rand(rng, 3))


@_case("dot_const")
def _fd_dot(rng):
    c = rng.uniform(-1, 1, size=5)
    return lambda t: ops.square(ops.dot_const(t, c)), _rand(rng, 5)


@_case("index")
def _fd_index(rng):
    return lambda t: ops.square(ops.index(t, 2)), _rand(rng, 5)


@pytest.mark.parametrize("name,builder", SMOOTH_CASES, ids=[n for n, _ in SMOOTH_CASES])
def test_smooth_primitive_matches_finite_differences(name, builder):
    rng = np.random.default_rng(hash(name) % (2**32))
    f, x = builder(rng)
    assert finite_diff_check(f, x, eps=1e-5) <= 1e-4


def test_nan_debug_flag():
    autograd.set_debug_nan(True)
    try:
        x = Tensor([np.inf], requires_grad=True)
        with pytest.raises(FloatingPointError):
            ops.sub(x, x)  # inf - inf -> NaN
    finally:
        autograd.set_debug_nan(False)
    # without the flag, NaN propagates silently
    out = ops.sub(Tensor([np.inf]), Tensor([np.inf]))
    assert np.isnan(out.values).all()


def test_no_grad_skips_recording():
    x = Tensor([1.0], requires_grad=True)
    with autograd.no_grad():
        out = ops.square(x)
    assert out._parents == ()
    assert not out.requires_grad

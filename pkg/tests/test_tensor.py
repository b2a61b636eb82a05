import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from syndiff import tensor as T

from conftest import central_diff, check_op_grad, rel_err


def test_add_elementwise():
    out = T.add(T.Tensor([1.0, 2.0]), T.Tensor([3.0, 4.0]))
    assert np.allclose(out.data, [4.0, 6.0])


def test_shape_mismatch_names_op():
    with pytest.raises(T.ShapeError, match="add"):
        T.add(T.Tensor([1.0, 2.0]), T.Tensor([1.0, 2.0, 3.0]))
    with pytest.raises(T.ShapeError, match="matmul"):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))
    with pytest.raises(T.ShapeError, match="conv2d"):
        T.conv2d(T.Tensor(np.ones((1, 3, 4, 4))), T.Tensor(np.ones((2, 1, 3, 3))))


def test_conv2d_identity_kernel(rng):
    img = T.Tensor(rng.standard_normal((2, 1, 6, 6)))
    ident = T.Tensor(np.ones((1, 1, 1, 1)))
    out = T.conv2d(img, ident)
    assert np.array_equal(out.data, img.data)


def test_matmul_against_triple_loop(rng):
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((3, 2))
    expected = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            for k in range(3):
                expected[i, j] += a[i, k] * b[k, j]
    out = T.matmul(T.Tensor(a), T.Tensor(b))
    assert rel_err(out.data, expected) < 1e-6


def test_square_gradient():
    x = T.Tensor(3.0, requires_grad=True)
    y = T.mul(x, x)
    (g,) = T.grad(y, [x])
    assert g.data == pytest.approx(6.0)


def test_leaky_relu_negative_slope():
    x = T.Tensor(np.array([-2.0, -0.5, 1.0]), requires_grad=True)
    loss = T.sum_(T.leaky_relu(x))
    (g,) = T.grad(loss, [x])
    assert np.allclose(g.data, [0.2, 0.2, 1.0])


def test_nonscalar_loss_rejected():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(T.ShapeError, match="grad"):
        T.grad(T.mul(x, x), [x])


def test_zero_path_parameters_get_exact_zeros():
    x = T.Tensor(np.ones(4), requires_grad=True)
    unused = T.Tensor(np.ones((2, 2)), requires_grad=True)
    loss = T.sum_(T.mul(x, x))
    gx, gu = T.grad(loss, [x, unused])
    assert np.all(gu.data == 0.0)
    assert gu.shape == unused.shape
    assert np.allclose(gx.data, 2 * x.data)


def test_backward_replay_is_identical(rng):
    x = T.Tensor(rng.standard_normal((3, 3)), requires_grad=True)
    loss = T.sum_(T.swish(T.mul(x, x)))
    g1 = T.grad(loss, [x])[0].data
    g2 = T.grad(loss, [x])[0].data
    assert np.array_equal(g1, g2)


def test_backward_linearity(rng):
    x = T.Tensor(rng.standard_normal(5), requires_grad=True)
    f = T.sum_(T.sigmoid(x))
    g = T.sum_(T.mul(x, x))
    a, b = 2.5, -1.25
    combined = T.add(T.mul_scalar(f, a), T.mul_scalar(g, b))
    gc = T.grad(combined, [x])[0].data
    gf = T.grad(f, [x])[0].data
    gg = T.grad(g, [x])[0].data
    assert rel_err(gc, a * gf + b * gg) < 1e-6


# -- finite-difference gradient checks, one per op ---------------------------


def test_grad_elementwise_ops(rng):
    sh = [(3, 4)]
    check_op_grad(T.add, sh * 2, rng, arg_index=0)
    check_op_grad(T.add, sh * 2, rng, arg_index=1)
    check_op_grad(T.sub, sh * 2, rng, arg_index=1)
    check_op_grad(T.mul, sh * 2, rng, arg_index=0)
    check_op_grad(T.mul, sh * 2, rng, arg_index=1)
    check_op_grad(T.neg, sh, rng)
    check_op_grad(lambda a: T.mul_scalar(a, 1.7), sh, rng)
    check_op_grad(lambda a: T.add_scalar(a, -0.3), sh, rng)
    check_op_grad(lambda a: T.pow_const(a, 1.5), sh, rng, positive=True)
    check_op_grad(T.square, sh, rng)


def test_grad_nonlinearities(rng):
    sh = [(3, 4)]
    check_op_grad(T.exp, sh, rng)
    check_op_grad(T.log, sh, rng, positive=True)
    check_op_grad(T.sigmoid, sh, rng)
    check_op_grad(T.tanh, sh, rng)
    check_op_grad(T.softplus, sh, rng)
    check_op_grad(T.swish, sh, rng)
    check_op_grad(T.leaky_relu, sh, rng, positive=True)
    check_op_grad(lambda a: T.leaky_relu(T.neg(a)), sh, rng, positive=True)
    check_op_grad(T.abs_, sh, rng, positive=True)


def test_grad_shape_and_reduction_ops(rng):
    check_op_grad(lambda a: T.reshape(a, (4, 3)), [(3, 4)], rng)
    check_op_grad(T.transpose, [(3, 4)], rng)
    check_op_grad(lambda a: T.broadcast_to(a, (3, 4)), [(3, 1)], rng)
    check_op_grad(lambda a: T.narrow(a, 1, 1, 2), [(3, 4)], rng)
    check_op_grad(lambda a, b: T.concat([a, b], axis=1), [(2, 1, 2, 2), (2, 2, 2, 2)], rng, arg_index=0)
    check_op_grad(lambda a, b: T.concat([a, b], axis=1), [(2, 1, 2, 2), (2, 2, 2, 2)], rng, arg_index=1)
    check_op_grad(T.sum_, [(3, 4)], rng)
    check_op_grad(lambda a: T.sum_(a, axis=1), [(3, 4)], rng)
    check_op_grad(lambda a: T.mean(a, axis=(2, 3), keepdims=True), [(2, 2, 3, 3)], rng)
    check_op_grad(T.l1_norm, [(3, 4)], rng, positive=True)
    check_op_grad(T.sq_l2_norm, [(3, 4)], rng)


def test_grad_linear_ops(rng):
    check_op_grad(T.matmul, [(2, 3), (3, 2)], rng, arg_index=0)
    check_op_grad(T.matmul, [(2, 3), (3, 2)], rng, arg_index=1)
    check_op_grad(T.bias_add, [(2, 3, 4, 4), (3,)], rng, arg_index=0)
    check_op_grad(T.bias_add, [(2, 3, 4, 4), (3,)], rng, arg_index=1)


def test_grad_conv_ops(rng):
    x_sh, w_sh = (1, 2, 5, 5), (3, 2, 3, 3)
    for stride, pad in [(1, 1), (2, 1), (1, 0)]:
        check_op_grad(T.conv2d, [x_sh, w_sh], rng, arg_index=0, stride=stride, padding=pad)
        check_op_grad(T.conv2d, [x_sh, w_sh], rng, arg_index=1, stride=stride, padding=pad)
    check_op_grad(T.conv_transpose2d, [(1, 2, 3, 3), (2, 3, 4, 4)], rng, arg_index=0)
    check_op_grad(T.conv_transpose2d, [(1, 2, 3, 3), (2, 3, 4, 4)], rng, arg_index=1)


def test_grad_norm_and_resize_ops(rng):
    x_sh = (2, 4, 4, 4)
    check_op_grad(T.instance_norm, [x_sh, (4,), (4,)], rng, arg_index=0, rel_tol=3e-5)
    check_op_grad(T.instance_norm, [x_sh, (4,), (4,)], rng, arg_index=1)
    check_op_grad(T.instance_norm, [x_sh, (4,), (4,)], rng, arg_index=2)
    check_op_grad(T.group_norm, [x_sh, (4,), (4,)], rng, arg_index=0, groups=2, rel_tol=3e-5)
    check_op_grad(T.group_norm, [x_sh, (4,), (4,)], rng, arg_index=1, groups=2)
    check_op_grad(T.nearest_upsample, [(1, 2, 3, 3)], rng)


def test_conv2d_grad_matches_finite_differences_tightly(rng):
    # 5x5 input, 64-bit, step 1e-4: the canonical convolution gradient check.
    x = rng.standard_normal((1, 1, 5, 5))
    w = rng.standard_normal((2, 1, 3, 3))

    def loss_fn(x64):
        out = T.conv2d(T.Tensor(x64), T.Tensor(w.astype(np.float64)), stride=1, padding=1)
        return T.sq_l2_norm(out).item()

    fd = central_diff(loss_fn, x)
    xt = T.Tensor(x, dtype=np.float64, requires_grad=True)
    loss = T.sq_l2_norm(T.conv2d(xt, T.Tensor(w, dtype=np.float64), stride=1, padding=1))
    (g,) = T.grad(loss, [xt])
    assert rel_err(g.data, fd) < 1e-5


# -- second-order / gradient-penalty path ------------------------------------


def test_grad_norm_sq_linear_map(rng):
    w = T.Tensor(rng.standard_normal((4, 1)), requires_grad=True)
    for _ in range(3):
        x = T.Tensor(rng.standard_normal((2, 4)), requires_grad=True)
        d_out = T.matmul(x, w)
        pen = T.grad_norm_sq(d_out, x)
        expected = float(np.sum(w.data**2))
        assert np.allclose(pen.data, expected, rtol=1e-6)


def test_grad_norm_sq_linear_map_weight_gradient(rng):
    # d/dw of ||w||^2 is 2w, reached through the double-backward path.
    w = T.Tensor(rng.standard_normal((4, 1)), requires_grad=True)
    x = T.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    pen = T.mean(T.grad_norm_sq(T.matmul(x, w), x))
    (gw,) = T.grad(pen, [w])
    assert rel_err(gw.data, 2 * w.data) < 1e-6


def test_grad_norm_sq_quadratic(rng):
    x = T.Tensor(rng.standard_normal((2, 5)), requires_grad=True)
    d_out = T.sum_(T.mul(x, x), axis=1)
    pen = T.grad_norm_sq(d_out, x)
    expected = np.sum((2 * x.data) ** 2, axis=1)
    assert rel_err(pen.data, expected) < 1e-6


def test_grad_norm_sq_requires_attached_input():
    x = T.Tensor(np.ones((2, 3)))
    with pytest.raises(T.ShapeError, match="grad_norm_sq"):
        T.grad_norm_sq(T.Tensor(np.ones(2)), x)


def _tiny_conv_disc(params, x):
    h = T.conv2d(x, params["w1"], stride=1, padding=1)
    h = T.bias_add(h, params["b1"])
    h = T.leaky_relu(h)
    h = T.conv2d(h, params["w2"], stride=2, padding=1)
    h = T.leaky_relu(h)
    n = x.shape[0]
    return T.sum_(T.reshape(h, (n, -1)), axis=1)


def test_gradient_penalty_weight_grads_match_finite_differences(rng):
    x_data = rng.standard_normal((2, 1, 6, 6))
    arrays = {
        "w1": rng.standard_normal((3, 1, 3, 3)) * 0.5,
        "b1": rng.standard_normal(3) * 0.1,
        "w2": rng.standard_normal((2, 3, 3, 3)) * 0.5,
    }

    def penalty_value(arrs):
        params = {k: T.Tensor(v, dtype=np.float64) for k, v in arrs.items()}
        x = T.Tensor(x_data, dtype=np.float64, requires_grad=True)
        return T.mean(T.grad_norm_sq(_tiny_conv_disc(params, x), x)).item()

    params = {k: T.Tensor(v, dtype=np.float64, requires_grad=True) for k, v in arrays.items()}
    x = T.Tensor(x_data, dtype=np.float64, requires_grad=True)
    pen = T.mean(T.grad_norm_sq(_tiny_conv_disc(params, x), x))
    grads = T.grad(pen, list(params.values()))

    for (name, _), g in zip(params.items(), grads):
        def f(v64, name=name):
            arrs = dict(arrays)
            arrs[name] = v64
            return penalty_value(arrs)

        fd = central_diff(f, arrays[name])
        assert rel_err(g.data, fd) < 1e-3, f"penalty grad mismatch for {name}"


# -- properties ---------------------------------------------------------------


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity_property(values, a, b):
    x = T.Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
    f = T.sum_(T.tanh(x))
    g = T.sum_(T.mul(x, x))
    combined = T.add(T.mul_scalar(f, a), T.mul_scalar(g, b))
    gc = T.grad(combined, [x])[0].data
    gf = T.grad(f, [x])[0].data
    gg = T.grad(g, [x])[0].data
    assert np.allclose(gc, a * gf + b * gg, rtol=1e-8, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 3))
def test_detached_tensors_produce_no_gradients(n, m, seed):
    rng = np.random.default_rng(seed)
    x = T.Tensor(rng.standard_normal((n, m)))
    y = T.mul(x, x)
    assert not y.requires_grad and y._parents == ()


def test_no_grad_suspends_recording():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad

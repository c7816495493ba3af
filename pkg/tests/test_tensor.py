"""Autodiff core: hand-computed references first, then tape gradients.

The convolution reference below is an independent dumb-loop implementation;
the library path (im2col + GEMM) must agree with it everywhere before any
gradient question is even asked.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bivad import tensor as T
from bivad.errors import InvalidArgumentError, NumericError, StateError
from gradtools import check_grads, sample_coords


# -- reference implementations (oracles) --------------------------------


def ref_conv2d(x, w, b=None, stride=1, padding="same"):
    """Direct-loop correlation with asymmetric 'same' zero padding."""
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    assert ci == c
    if padding == "same":
        oh = -(-h // stride)
        ow = -(-wd // stride)
        tot_h = max((oh - 1) * stride + kh - h, 0)
        tot_w = max((ow - 1) * stride + kw - wd, 0)
        pt, pl = tot_h // 2, tot_w // 2
    else:
        oh = (h - kh) // stride + 1
        ow = (wd - kw) // stride + 1
        pt = pl = 0
    out = np.zeros((n, co, oh, ow), dtype=np.float64)
    for bi in range(n):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ch in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                yy = i * stride + di - pt
                                xx = j * stride + dj - pl
                                if 0 <= yy < h and 0 <= xx < wd:
                                    acc += float(x[bi, ch, yy, xx]) * float(w[o, ch, di, dj])
                    out[bi, o, i, j] = acc + (float(b[o]) if b is not None else 0.0)
    return out


def test_conv_ones_smoothing_counts():
    # 3x3 ones kernel on a 3x3 ones image: centre sees 9 taps, edges 6, corners 4
    x = T.Tensor(np.ones((1, 1, 3, 3)))
    w = T.Tensor(np.ones((1, 1, 3, 3)))
    out = T.conv2d(x, w).numpy()[0, 0]
    assert np.array_equal(out, np.array([[4.0, 6.0, 4.0], [6.0, 9.0, 6.0], [4.0, 6.0, 4.0]]))


def test_conv_matches_loop_reference(rng):
    for stride, padding, (h, wd), (kh, kw) in [
        (1, "same", (5, 5), (3, 3)),
        (2, "same", (6, 7), (3, 3)),
        (2, "same", (5, 5), (5, 5)),
        (1, "valid", (6, 5), (3, 3)),
        (2, "valid", (7, 7), (3, 3)),
    ]:
        x = rng.normal(size=(2, 3, h, wd))
        w = rng.normal(size=(4, 3, kh, kw))
        b = rng.normal(size=(4,))
        want = ref_conv2d(x, w, b, stride, padding)
        got = T.conv2d(T.Tensor(x, dtype=np.float64), T.Tensor(w, dtype=np.float64),
                       T.Tensor(b, dtype=np.float64), stride, padding).numpy()
        assert got.shape == want.shape
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-10)


def test_conv_stride2_halves_extent(rng):
    x = T.Tensor(rng.normal(size=(1, 2, 9, 12)).astype(np.float32))
    w = T.Tensor(rng.normal(size=(5, 2, 3, 3)).astype(np.float32))
    assert T.conv2d(x, w, stride=2).shape == (1, 5, 5, 6)


def test_conv_correlation_orientation():
    # a kernel with its only tap right-of-centre reads the pixel to the right
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    w = np.zeros((1, 1, 3, 3), dtype=np.float32)
    w[0, 0, 1, 2] = 1.0
    out = T.conv2d(T.Tensor(x), T.Tensor(w)).numpy()
    np.testing.assert_array_equal(out[0, 0, :, :3], x[0, 0, :, 1:])
    np.testing.assert_array_equal(out[0, 0, :, 3], 0.0)


def test_conv_transpose_scatters_kernel():
    # 1x1 map through a 2x2 kernel at stride 2 paints the kernel scaled by the value
    x = T.Tensor(np.full((1, 1, 1, 1), 3.0))
    w = T.Tensor(np.array([[[[1.0, 2.0], [4.0, 8.0]]]]))
    out = T.conv_transpose2d(x, w, stride=2).numpy()
    np.testing.assert_allclose(out[0, 0], 3.0 * np.array([[1.0, 2.0], [4.0, 8.0]]))


def test_conv_transpose_doubles_extent(rng):
    x = T.Tensor(rng.normal(size=(2, 6, 4, 5)).astype(np.float32))
    w = T.Tensor(rng.normal(size=(6, 3, 3, 3)).astype(np.float32))
    assert T.conv_transpose2d(x, w, stride=2).shape == (2, 3, 8, 10)
    assert T.conv_transpose2d(x, w, stride=1).shape == (2, 3, 4, 5)


def test_conv_transpose_is_exact_adjoint(rng):
    # <conv(x, K), y> == <x, convT(y, K)> for shared kernel and geometry
    for stride in (1, 2):
        x = rng.normal(size=(2, 3, 8, 9)).astype(np.float32)
        w = rng.normal(size=(4, 3, 3, 3)).astype(np.float32)
        cx = T.conv2d(T.Tensor(x), T.Tensor(w), stride=stride).numpy()
        y = rng.normal(size=cx.shape).astype(np.float32)
        cty = T.conv_transpose2d(T.Tensor(y), T.Tensor(w), stride=stride,
                                 out_hw=(8, 9)).numpy()
        lhs = float((cx * y).sum())
        rhs = float((x * cty).sum())
        assert abs(lhs - rhs) <= 1e-5 * max(1.0, abs(lhs))


def test_conv_rejects_bad_shapes(rng):
    x = T.Tensor(rng.normal(size=(1, 3, 4, 4)).astype(np.float32))
    w = T.Tensor(rng.normal(size=(2, 4, 3, 3)).astype(np.float32))
    with pytest.raises(InvalidArgumentError):
        T.conv2d(x, w)
    with pytest.raises(InvalidArgumentError):
        T.conv2d(x, T.Tensor(np.zeros((2, 3, 3, 3), np.float32)), stride=0)
    with pytest.raises(InvalidArgumentError):
        T.conv2d(x, T.Tensor(np.zeros((2, 3, 3, 3), np.float32)), padding="reflect")


def test_conv_rejects_non_finite(rng):
    x = rng.normal(size=(1, 1, 4, 4)).astype(np.float32)
    x[0, 0, 2, 2] = np.inf
    with pytest.raises(NumericError):
        T.conv2d(T.Tensor(x), T.Tensor(np.ones((1, 1, 3, 3), np.float32)))


def test_conv_unbatched_input(rng):
    x = rng.normal(size=(3, 5, 5)).astype(np.float32)
    w = rng.normal(size=(2, 3, 3, 3)).astype(np.float32)
    got = T.conv2d(T.Tensor(x), T.Tensor(w)).numpy()
    batched = T.conv2d(T.Tensor(x[None]), T.Tensor(w)).numpy()[0]
    assert got.shape == (2, 5, 5)
    np.testing.assert_array_equal(got, batched)


# -- softmax -------------------------------------------------------------


def test_softmax_vec_against_direct_formula():
    got = T.softmax_vec([1.0, 2.0, 3.0])
    e = [math.exp(v) for v in (1.0, 2.0, 3.0)]
    want = [v / sum(e) for v in e]
    assert np.abs(got - np.array(want)).max() <= 1e-9
    assert abs(got.sum() - 1.0) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(min_value=-1e3, max_value=1e3), min_size=1, max_size=32),
       st.floats(min_value=-1e3, max_value=1e3))
def test_softmax_vec_stable_and_shift_invariant(vals, shift):
    a = T.softmax_vec(vals)
    assert np.isfinite(a).all()
    assert abs(a.sum() - 1.0) <= 1e-9
    b = T.softmax_vec([v + shift for v in vals])
    assert np.abs(a - b).max() <= 1e-9


def test_softmax_last_masking_zeroes_entries(rng):
    x = T.Tensor(rng.normal(size=(2, 3, 4)).astype(np.float32))
    bias = np.zeros((3, 4), dtype=np.float32)
    bias[:, 2:] = -1e9
    y = T.softmax_last(x, bias).numpy()
    assert np.all(y[..., 2:] == 0.0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)


# -- optimizer ------------------------------------------------------------


def test_adam_first_step_matches_closed_form():
    p = T.Parameter(np.zeros((1,), np.float64), "p")
    opt = T.Adam([p], lr=1e-3)
    p.grad = np.ones((1,), np.float64)
    opt.step()
    want = -1e-3 / (1.0 + 1e-8)
    assert abs(float(p.data[0]) - want) <= 1e-12
    assert opt.step_count == 1
    assert p.grad is None


def test_adam_zero_grad_leaves_param():
    p = T.Parameter(np.full((2,), 0.5, np.float32), "p")
    opt = T.Adam([p])
    p.grad = np.zeros((2,), np.float32)
    opt.step()
    np.testing.assert_array_equal(p.data, np.full((2,), 0.5, np.float32))
    assert opt.step_count == 1


def test_adam_missing_grad_raises():
    p = T.Parameter(np.zeros((2,), np.float32), "p")
    opt = T.Adam([p])
    with pytest.raises(StateError):
        opt.step()


def test_adam_trends_toward_minimum(rng):
    p = T.Parameter(rng.normal(size=(4,)).astype(np.float32), "p")
    target = np.array([1.0, -2.0, 0.5, 3.0], np.float32)
    opt = T.Adam([p], lr=0.05)
    for _ in range(400):
        diff = T.sub(p, T.Tensor(target))
        loss = T.mean(T.mul(diff, diff))
        T.backward(loss)
        opt.step()
    assert np.abs(p.data - target).max() < 0.05


# -- tape mechanics ---------------------------------------------------------


def test_backward_twice_raises(rng):
    x = T.Tensor(rng.normal(size=(3,)), requires_grad=True)
    loss = T.sum_(T.mul(x, x))
    T.backward(loss)
    with pytest.raises(StateError):
        T.backward(loss)


def test_backward_needs_scalar(rng):
    x = T.Tensor(rng.normal(size=(3,)), requires_grad=True)
    with pytest.raises(InvalidArgumentError):
        T.backward(T.mul(x, x))


def test_reused_tensor_accumulates():
    x = T.Tensor(np.array([2.0]), requires_grad=True)
    loss = T.sum_(T.add(x, x))
    T.backward(loss)
    np.testing.assert_allclose(x.grad, [2.0])


def test_no_grad_suppresses_tape(rng):
    x = T.Tensor(rng.normal(size=(3,)), requires_grad=True)
    with T.no_grad():
        y = T.mul(x, x)
    assert not y.requires_grad


def test_broadcast_bias_grad():
    x = T.Tensor(np.ones((2, 3, 2, 2), np.float64), requires_grad=True)
    b = T.Tensor(np.zeros((3, 1, 1), np.float64), requires_grad=True)
    T.backward(T.sum_(T.add(x, b)))
    np.testing.assert_allclose(b.grad, np.full((3, 1, 1), 8.0))


# -- gradient checks ----------------------------------------------------------


def test_grad_elementwise_chain(rng):
    a = rng.normal(size=(3, 4)) * 0.8 + 0.1

    def loss(x):
        y = T.tanh(T.mul(x, 1.7))
        y = T.sigmoid(T.add(y, 0.3))
        y = T.leaky_relu(T.sub(y, 0.5), 0.2)
        return T.mean(T.mul(y, y))

    check_grads(loss, [a])


def test_grad_abs_sqrt_div(rng):
    a = rng.normal(size=(4, 3)) + 3.0
    b = rng.normal(size=(4, 3)) * 0.5 + 2.0

    def loss(x, y):
        return T.sum_(T.div(T.abs_(x), T.add(T.sqrt(y), 1.0)))

    check_grads(loss, [a, b])


def test_grad_reductions_and_shapes(rng):
    a = rng.normal(size=(2, 3, 4))

    def loss(x):
        m = T.mean(x, axis=(1, 2), keepdims=True)
        d = T.sub(x, m)
        flat = T.reshape(T.transpose(d, (1, 0, 2)), (3, 8))
        return T.sum_(T.mul(flat, flat))

    check_grads(loss, [a])


def test_grad_concat_narrow_split(rng):
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(2, 2))

    def loss(x, y):
        cat = T.concat([x, y], axis=1)
        left, right = T.narrow(cat, 1, 0, 2), T.narrow(cat, 1, 2, 3)
        return T.add(T.sum_(T.mul(left, left)), T.mean(right))

    check_grads(loss, [a, b])


def test_grad_bmm_and_softmax(rng):
    q = rng.normal(size=(2, 3, 4))
    k = rng.normal(size=(2, 3, 4))
    v = rng.normal(size=(2, 3, 4))
    bias = np.triu(np.full((3, 3), -1e9), k=1)

    def loss(qq, kk, vv):
        scores = T.bmm(qq, kk, transpose_b=True)
        attn = T.softmax_last(scores, bias)
        out = T.bmm(attn, vv)
        return T.mean(T.mul(out, out))

    check_grads(loss, [q, k, v])


def test_grad_conv2d_all_inputs(rng):
    x = rng.normal(size=(2, 3, 5, 5))
    w = rng.normal(size=(4, 3, 3, 3)) * 0.5
    b = rng.normal(size=(4,)) * 0.1

    def loss(xx, ww, bb):
        y = T.conv2d(xx, ww, bb, stride=1, padding="same")
        return T.mean(T.mul(y, y))

    check_grads(loss, [x, w, b])


def test_grad_conv2d_stride2_valid(rng):
    x = rng.normal(size=(1, 2, 7, 6))
    w = rng.normal(size=(3, 2, 3, 3)) * 0.5

    def loss(xx, ww):
        s = T.conv2d(xx, ww, stride=2, padding="same")
        v = T.conv2d(xx, ww, stride=1, padding="valid")
        return T.add(T.mean(T.mul(s, s)), T.mean(T.abs_(v)))

    check_grads(loss, [x, w])


def test_grad_conv_transpose(rng):
    x = rng.normal(size=(2, 4, 3, 3))
    w = rng.normal(size=(4, 2, 3, 3)) * 0.5
    b = rng.normal(size=(2,)) * 0.1

    def loss(xx, ww, bb):
        y = T.conv_transpose2d(xx, ww, bb, stride=2)
        return T.mean(T.mul(y, y))

    check_grads(loss, [x, w, b])


def test_grad_sampled_deep_stack(rng):
    # conv -> norm-ish arithmetic -> conv, sampled coordinates
    x = rng.normal(size=(1, 3, 6, 6))
    w1 = rng.normal(size=(4, 3, 3, 3)) * 0.4
    w2 = rng.normal(size=(2, 4, 3, 3)) * 0.4

    def loss(xx, ww1, ww2):
        h = T.leaky_relu(T.conv2d(xx, ww1))
        h = T.conv2d(h, ww2, stride=2)
        return T.mean(T.mul(h, h))

    coords = [sample_coords(a.shape, rng, 6) for a in (x, w1, w2)]
    check_grads(loss, [x, w1, w2], coords=coords)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32 - 1))
def test_forward_ops_stay_finite(seed):
    # magnitudes up to 1e3 through every nonlinearity: no overflow anywhere
    r = np.random.default_rng(seed)
    x = T.Tensor((r.normal(size=(2, 8)) * 1e3).astype(np.float32))
    for y in (T.sigmoid(x), T.tanh(x), T.leaky_relu(x), T.abs_(x),
              T.softmax_last(x), T.sqrt(x)):
        assert np.isfinite(y.numpy()).all()


def test_float64_mode_preserved(rng):
    x = T.Tensor(rng.normal(size=(1, 2, 4, 4)), dtype=np.float64)
    w = T.Tensor(rng.normal(size=(2, 2, 3, 3)), dtype=np.float64)
    assert T.conv2d(x, w).dtype == np.float64
    assert T.tanh(x).dtype == np.float64

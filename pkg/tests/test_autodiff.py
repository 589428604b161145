import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from attnocr import autodiff as ad
from attnocr.autodiff import ShapeError


def leaf(x):
    return ad.parameter(np.asarray(x, dtype=np.float64))


finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


# matmul

def test_matmul_identity():
    b = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(np.eye(2), b).data, b)


def test_matmul_hand_case():
    assert ad.matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        ad.matmul(np.ones((2, 3)), np.ones((4, 2)))


def test_matmul_backward_rules():
    rng = np.random.default_rng(0)
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    g = rng.normal(size=(3, 2))
    ad.sum(ad.mul(ad.matmul(a, b), ad.constant(g))).backward()
    np.testing.assert_allclose(a.grad, g @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ g)


# conv2d

def test_conv_identity_kernel():
    x = np.random.default_rng(1).normal(size=(5, 4, 1))
    out = ad.conv2d(x, np.ones((1, 1, 1, 1)), 1, "same")
    np.testing.assert_array_equal(out.data, x)


def test_conv_indicator_propagation():
    x = np.zeros((5, 5, 1))
    x[2, 3, 0] = 1.0
    out = ad.conv2d(x, np.ones((3, 3, 1, 1)), 1, "valid").data[..., 0]
    assert out.shape == (3, 3)
    assert set(np.unique(out)) <= {0.0, 1.0}
    # output cell (r, c) covers input rows r..r+2 and cols c..c+2
    expected = np.array([[1.0 if r <= 2 <= r + 2 and c <= 3 <= c + 2 else 0.0 for c in range(3)] for r in range(3)])
    np.testing.assert_array_equal(out, expected)


def test_conv_is_cross_correlation():
    x = np.zeros((3, 3, 1))
    x[1, 1, 0] = 1.0
    k = np.arange(9.0).reshape(3, 3, 1, 1)
    out = ad.conv2d(x, k, 1, "same").data[..., 0]
    # a unit impulse returns the kernel flipped, which means the kernel itself is not flipped
    np.testing.assert_array_equal(out, k[::-1, ::-1, 0, 0])


@pytest.mark.parametrize("h,w,stride", [(7, 5, 1), (7, 5, 2), (8, 8, 3), (1, 9, 2)])
def test_conv_same_output_dims(h, w, stride):
    out = ad.conv2d(np.ones((h, w, 2)), np.ones((3, 3, 2, 4)), stride, "same")
    assert out.shape == (math.ceil(h / stride), math.ceil(w / stride), 4)


def test_conv_valid_dims_and_errors():
    out = ad.conv2d(np.ones((7, 6, 1)), np.ones((3, 2, 1, 1)), 2, "valid")
    assert out.shape == ((7 - 3) // 2 + 1, (6 - 2) // 2 + 1, 1)
    with pytest.raises(ShapeError):
        ad.conv2d(np.ones((2, 2, 1)), np.ones((3, 3, 1, 1)), 1, "valid")
    with pytest.raises(ShapeError):
        ad.conv2d(np.ones((4, 4, 2)), np.ones((3, 3, 1, 1)))


def test_conv_batched_matches_single():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 6, 5, 2))
    k = rng.normal(size=(3, 3, 2, 4))
    batched = ad.conv2d(x, k).data
    for i in range(3):
        np.testing.assert_allclose(batched[i], ad.conv2d(x[i], k).data, rtol=1e-12)


# maxpool

def test_maxpool_constant_field():
    out = ad.maxpool2d(np.full((4, 6, 2), 3.5), 2, 2)
    assert out.shape == (2, 3, 2)
    assert np.all(out.data == 3.5)


def test_maxpool_single_window():
    assert ad.maxpool2d(np.array([[1.0, 2.0], [3.0, 4.0]])[..., None], 2, 2).data.ravel().tolist() == [4.0]


def test_maxpool_window_too_large():
    with pytest.raises(ShapeError):
        ad.maxpool2d(np.ones((3, 1, 1)), 2, 2)


@pytest.mark.parametrize("window,stride", [(2, 2), (3, 2), (2, 1)])
def test_maxpool_ties_route_to_first_in_row_major(window, stride):
    x = leaf(np.zeros((4, 4, 1)))
    ad.sum(ad.maxpool2d(x, window, stride)).backward()
    oh = (4 - window) // stride + 1
    expected = np.zeros((4, 4))
    for r in range(oh):
        for c in range(oh):
            expected[r * stride, c * stride] += 1.0
    np.testing.assert_array_equal(x.grad[..., 0], expected)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 6, 2), elements=st.integers(-3, 3).map(float)),
       st.sampled_from([(2, 2), (3, 2), (2, 1), (3, 3)]))
def test_maxpool_matches_brute_force(x, ws):
    window, stride = ws
    t = leaf(x)
    out = ad.maxpool2d(t, window, stride)
    ad.sum(out).backward()
    oh, ow = (5 - window) // stride + 1, (6 - window) // stride + 1
    ref = np.zeros((oh, ow, 2))
    grad = np.zeros_like(x)
    for r in range(oh):
        for c in range(ow):
            for ch in range(2):
                patch = x[r * stride:r * stride + window, c * stride:c * stride + window, ch]
                ref[r, c, ch] = patch.max()
                a, b = divmod(int(np.argmax(patch)), window)  # np.argmax scans row-major, first wins
                grad[r * stride + a, c * stride + b, ch] += 1.0
    np.testing.assert_array_equal(out.data, ref)
    np.testing.assert_array_equal(t.grad, grad)


# pointwise

def test_symmetry_points():
    assert ad.tanh(np.array(0.0)).data == 0.0
    assert ad.sigmoid(np.array(0.0)).data == 0.5


def test_clip_lstm_bound():
    assert ad.clip(np.array(12.3), -10, 10).data == 10.0


def test_clip_gradient_inside_only():
    x = leaf([-11.0, -10.0, 0.5, 10.0, 12.0])
    ad.sum(ad.clip(x, -10, 10)).backward()
    assert x.grad.tolist() == [0.0, 0.0, 1.0, 0.0, 0.0]


def test_pointwise_dispatch_and_shape_errors():
    a, b = np.array([1.0, -2.0]), np.array([3.0, 4.0])
    assert ad.pointwise(a, "relu").data.tolist() == [1.0, 0.0]
    assert ad.pointwise(a, "add", b).data.tolist() == [4.0, 2.0]
    assert ad.pointwise(a, "mul", b).data.tolist() == [3.0, -8.0]
    assert ad.pointwise(a, "scale", c=2).data.tolist() == [2.0, -4.0]
    assert ad.pointwise(a, "clip", lo=0, hi=0.5).data.tolist() == [0.5, 0.0]
    with pytest.raises(ShapeError):
        ad.add(np.ones(2), np.ones(3))
    with pytest.raises(ShapeError):
        ad.mul(np.ones((2, 1)), np.ones(2))
    with pytest.raises(ValueError):
        ad.pointwise(a, "cosh")


@given(arrays(np.float64, 8, elements=st.floats(-800, 800)))
def test_sigmoid_finite_and_bounded(x):
    y = ad.sigmoid(x).data
    assert np.all(np.isfinite(y)) and np.all((y >= 0) & (y <= 1))


# softmax

def test_softmax_uniform():
    np.testing.assert_allclose(ad.softmax(np.full(7, 2.5)).data, np.full(7, 1 / 7))


def test_softmax_hand_case():
    np.testing.assert_allclose(ad.softmax(np.array([0.0, math.log(3)])).data, [0.25, 0.75])


def test_softmax_joint_grid_sums_to_one():
    y = ad.softmax(np.random.default_rng(3).normal(size=(4, 3)), over=(0, 1)).data
    assert abs(y.sum() - 1.0) < 1e-12


def test_softmax_empty_axes_rejected():
    with pytest.raises(ValueError):
        ad.softmax(np.ones(3), over=())


@settings(max_examples=50)
@given(arrays(np.float64, (3, 4, 5), elements=st.floats(-700, 700)),
       st.sampled_from([(-1,), (1, 2), (0, 2), (0, 1, 2)]))
def test_softmax_is_a_distribution(a, axes):
    y = ad.softmax(a, over=axes).data
    assert np.all(y >= 0) and np.all(np.isfinite(y))
    np.testing.assert_allclose(y.sum(axis=axes), 1.0, atol=1e-9)


# smoothed cross-entropy

def test_xent_degenerate_smoothing():
    logits = np.array([0.3, -1.2, 2.0])
    p = np.exp(logits) / np.exp(logits).sum()
    loss = ad.smoothed_cross_entropy(logits, 1, 1.0).data
    assert loss == pytest.approx(-math.log(p[1]), rel=1e-12)


@pytest.mark.parametrize("smoothing", [0.1, 0.9, 1.0])
def test_xent_uniform_logits_fsns_alphabet(smoothing):
    loss = ad.smoothed_cross_entropy(np.zeros(134), 17, smoothing).data
    assert loss == pytest.approx(math.log(134), rel=1e-12)


def test_xent_errors():
    with pytest.raises(IndexError):
        ad.smoothed_cross_entropy(np.zeros(4), 4, 0.9)
    with pytest.raises(ValueError):
        ad.smoothed_cross_entropy(np.zeros(4), 0, 0.0)


# backward

def test_backward_linear_functional():
    w = leaf(np.random.default_rng(4).normal(size=(3, 2)))
    ad.sum(w).backward()
    assert np.array_equal(w.grad, np.ones((3, 2)))


def test_backward_quadratic():
    w = leaf(np.random.default_rng(5).normal(size=5))
    ad.scale(ad.sum(ad.mul(w, w)), 0.5).backward()
    np.testing.assert_allclose(w.grad, w.data, rtol=1e-15)


def test_backward_accumulates_and_unused_is_zero():
    w, unused = leaf([1.0, 2.0]), leaf([3.0])
    ad.sum(w).backward()
    ad.sum(w).backward()
    assert w.grad.tolist() == [2.0, 2.0]
    assert unused.grad.tolist() == [0.0]


def test_backward_rejects_non_scalar():
    with pytest.raises(ShapeError):
        ad.scale(leaf([1.0, 2.0]), 2.0).backward()


def test_shared_subexpression_visited_once():
    x = leaf(3.0)
    y = ad.mul(x, x)
    z = ad.add(y, y)  # dz/dx = 4x
    z.backward()
    assert x.grad == pytest.approx(12.0)


def test_deep_chain_is_not_recursive():
    x = leaf(1.0)
    y = x
    for _ in range(5000):
        y = ad.scale(y, 1.0)
    y.backward()
    assert x.grad == 1.0


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with ad.no_grad():
        y = ad.scale(x, 2.0)
    assert not y.requires_grad and y.parents == ()


def test_forward_is_deterministic():
    def run():
        rng = np.random.default_rng(11)
        x = rng.normal(size=(2, 8, 8, 3))
        k = ad.truncated_normal(rng, (3, 3, 3, 4), dtype=np.float64)
        return ad.maxpool2d(ad.relu(ad.conv2d(x, k)), 2, 2).data

    assert np.array_equal(run(), run())


@given(arrays(np.float64, (4, 3), elements=finite))
def test_finite_inputs_give_finite_outputs(x):
    for y in (ad.tanh(x), ad.sigmoid(x), ad.softmax(x, over=(0, 1)), ad.log_softmax(x), ad.relu(x)):
        assert np.all(np.isfinite(y.data))


def test_truncated_normal_bounds():
    v = ad.truncated_normal(np.random.default_rng(0), (20000,), std=0.1)
    assert v.dtype == np.float32
    assert np.abs(v).max() <= 0.2
    assert 0.07 < v.std() < 0.1


# grad_check itself

def test_grad_check_matmul_graph_is_tight():
    rng = np.random.default_rng(6)
    a, b = leaf(rng.normal(size=(3, 4))), leaf(rng.normal(size=(4, 2)))
    rep = ad.grad_check(lambda: ad.sum(ad.matmul(a, b)), {"a": a, "b": b})
    assert rep.max_rel_err < 1e-8
    assert rep.checked == 12 + 8


def test_grad_check_excludes_maxpool_ties():
    x = leaf(np.zeros((2, 2, 1)))
    rep = ad.grad_check(lambda: ad.sum(ad.maxpool2d(x, 2, 2)), {"x": x})
    assert rep.excluded, "tie point should be detected as non-differentiable"


def test_grad_check_reports_wrong_gradient():
    x = leaf([0.3, -0.7])

    def bad(t):
        from attnocr.autodiff.tensor import make_node
        return make_node(t.data ** 2, (t,), lambda g: (g * 3.0 * t.data,), "bad")

    rep = ad.grad_check(lambda: ad.sum(bad(x)), {"x": x})
    assert rep.max_rel_err > 0.1
    assert rep.worst_param == "x"


def test_grad_check_eps_range():
    x = leaf([1.0])
    with pytest.raises(ValueError):
        ad.grad_check(lambda: ad.sum(x), {"x": x}, eps=1e-2)

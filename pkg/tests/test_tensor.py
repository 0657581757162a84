import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pointvsod import tensor as T
from pointvsod.tensor import Tensor

from gradcheck import max_relative_error

TOL = 1e-3
floats = st.floats(-50, 50, allow_nan=False, width=64)


def leaf(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


# -- examples ---------------------------------------------------------------
def test_matmul_examples():
    b = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal((Tensor(np.eye(3)) @ Tensor(b)).data, b)
    out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[1.0], [1.0]])
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3)
    np.testing.assert_allclose(T.softmax(Tensor([1000.0, 1000.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(T.softmax(Tensor([0.0, np.log(3.0)])).data, [0.25, 0.75])


def test_softmax_rejects_nonfinite():
    with pytest.raises(ValueError):
        T.softmax(Tensor([0.0, np.inf]))


def test_layer_norm_examples():
    one, zero = Tensor(np.ones(3)), Tensor(np.zeros(3))
    np.testing.assert_array_equal(T.layer_norm(Tensor([5.0, 5.0, 5.0]), one, zero).data, [0, 0, 0])
    out = T.layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12)
    np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-9)


def test_elementwise_examples():
    assert T.sigmoid(Tensor(0.0)).item() == 0.5
    a = Tensor(np.zeros((5, 3)))
    assert T.concat([a, a], axis=-1).shape == (5, 6)


def test_conv_examples():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(2, 5, 5, 3)))
    eye = Tensor(np.eye(3).reshape(1, 1, 3, 3))
    np.testing.assert_array_equal(T.conv2d(x, eye).data, x.data)
    const = Tensor(np.full((1, 2, 2, 1), 0.7))
    np.testing.assert_allclose(T.bilinear_interp(const, (4, 4)).data, 0.7, rtol=0, atol=1e-15)
    assert T.conv_output_size(8, 3, 2, 1) == 4
    out = T.conv2d(Tensor(np.zeros((1, 8, 8, 2))), Tensor(np.zeros((3, 3, 2, 4))), stride=2, padding=1)
    assert out.shape == (1, 4, 4, 4)


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 6, 7, 2))
    w = rng.normal(size=(3, 3, 2, 4))
    out = T.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    for i in range(out.shape[1]):
        for j in range(out.shape[2]):
            patch = xp[0, 2 * i:2 * i + 3, 2 * j:2 * j + 3, :]
            np.testing.assert_allclose(out[0, i, j], np.einsum("abc,abcd->d", patch, w), atol=1e-12)


def test_kernel_too_large_is_rejected():
    with pytest.raises(ValueError):
        T.unfold(Tensor(np.zeros((1, 2, 2, 1))), 5)


def test_backward_simple_rules():
    rng = np.random.default_rng(2)
    x = leaf(rng, 3, 4)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))
    x.grad = None
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, 2 * x.data)


def test_leaf_gradients_accumulate():
    x = Tensor(np.ones(3), requires_grad=True)
    x.sum().backward()
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, 2.0)


def test_shared_subexpression_gradient():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    (y + y * x).sum().backward()      # d/dx (x² + x³) = 2x + 3x²
    np.testing.assert_allclose(x.grad, [2 * 2 + 3 * 4])


def test_scalar_loss_required():
    with pytest.raises(ValueError):
        Tensor(np.ones(3), requires_grad=True).backward()


# -- finite-difference checks, 10 instances per op ------------------------------
UNARY = {
    "exp": lambda x: T.exp(x),
    "log": lambda x: T.log(x),
    "abs": lambda x: T.tabs(x),
    "sigmoid": T.sigmoid,
    "gelu": T.gelu,
    "clamp": lambda x: T.clamp(x, 0.2, 0.8),
    "softmax": lambda x: T.softmax(x, axis=-1),
    "mean": lambda x: T.tmean(x, axis=0),
    "pool": T.avg_pool_tokens,
    "reshape": lambda x: x.reshape(4, 3),
    "transpose": lambda x: x.transpose(1, 0),
    "getitem": lambda x: x[1:, ::2],
    "fancy": lambda x: T.getitem(x, np.array([0, 2, 2, 1])),
    "scale": lambda x: T.scale(x, -2.5),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_gradients(name):
    op = UNARY[name]
    for seed in range(10):
        rng = np.random.default_rng(seed)
        lo = 0.1 if name == "log" else -1.0
        x = leaf(rng, 3, 4, lo=lo, hi=1.0)
        if name == "abs":       # keep away from the kink at 0
            x.data = np.sign(x.data) * (0.25 + 0.5 * np.abs(x.data))
        elif name == "clamp":   # mix of clipped and pass-through entries, none near 0.2 or 0.8
            x.data = rng.choice([0.05, 0.35, 0.5, 0.65, 0.95], size=x.shape) + rng.uniform(-0.03, 0.03, x.shape)
        w = rng.normal(size=op(x).shape)
        assert max_relative_error(lambda: (op(x) * w).sum(), [x]) < TOL


BINARY = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "matmul": lambda a, b: a @ b.transpose(1, 0),
    "concat": lambda a, b: T.concat([a, b], axis=0),
    "stack": lambda a, b: T.stack([a, b], axis=1),
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_gradients(name):
    op = BINARY[name]
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        a = leaf(rng, 3, 4)
        b = leaf(rng, 3, 4, lo=0.5, hi=1.5)
        w = rng.normal(size=op(a, b).shape)
        assert max_relative_error(lambda: (op(a, b) * w).sum(), [a, b]) < TOL


def test_broadcast_gradients():
    for seed in range(10):
        rng = np.random.default_rng(200 + seed)
        a, b = leaf(rng, 2, 3, 4), leaf(rng, 4)
        w = rng.normal(size=(2, 3, 4))
        assert max_relative_error(lambda: ((a * b + b) * w).sum(), [a, b]) < TOL


def test_batched_matmul_gradient():
    for seed in range(10):
        rng = np.random.default_rng(300 + seed)
        a, b, c = leaf(rng, 2, 3, 4), leaf(rng, 2, 4, 5), leaf(rng, 5, 2)
        assert max_relative_error(lambda: T.tabs((a @ b) @ c).sum(), [a, b, c]) < TOL


def test_layer_norm_gradient():
    for seed in range(10):
        rng = np.random.default_rng(400 + seed)
        x, g, b = leaf(rng, 2, 3, 6), leaf(rng, 6), leaf(rng, 6)
        w = rng.normal(size=(2, 3, 6))
        assert max_relative_error(lambda: (T.layer_norm(x, g, b) * w).sum(), [x, g, b]) < TOL


def test_spatial_gradients():
    for seed in range(10):
        rng = np.random.default_rng(500 + seed)
        x, k, bias = leaf(rng, 2, 5, 6, 3), leaf(rng, 3, 3, 3, 2), leaf(rng, 2)

        def fn():
            y = T.conv2d(x, k, bias, stride=2, padding=1)
            cols = T.unfold(x, 2, 1, 0)
            return T.bilinear_interp(y, (7, 5)).sum() + (cols * cols).sum()

        assert max_relative_error(fn, [x, k, bias]) < TOL


# -- properties -------------------------------------------------------------
@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6), elements=floats))
def test_softmax_rows_are_distributions(x):
    p = T.softmax(Tensor(x), axis=-1).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    shifted = T.softmax(Tensor(x + 7.5), axis=-1).data
    np.testing.assert_allclose(shifted, p, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 8)), elements=floats))
def test_layer_norm_standardizes(x):
    if np.ptp(x, axis=-1).min() < 1e-3:
        return
    n = x.shape[-1]
    out = T.layer_norm(Tensor(x), Tensor(np.ones(n)), Tensor(np.zeros(n))).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)
    assert np.all(out.std(axis=-1) <= 1.0 + 1e-12)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5), st.integers(1, 6)),
                  elements=floats))
def test_reshape_transpose_round_trip_bit_exact(x):
    t = Tensor(x)
    back = t.reshape(x.shape[0], -1).reshape(*x.shape)
    assert back.data.tobytes() == x.tobytes()
    tt = t.transpose(2, 0, 1).transpose(1, 2, 0)
    assert np.ascontiguousarray(tt.data).tobytes() == x.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 7), st.integers(1, 4), st.integers(0, 3))
def test_unfold_extent_matches_formula(n, k, s, p):
    if n + 2 * p < k:
        with pytest.raises(ValueError):
            T.conv_output_size(n, k, s, p)
        return
    out = T.unfold(Tensor(np.zeros((1, n, n, 1))), k, s, p)
    assert out.shape[1] == (n + 2 * p - k) // s + 1

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from signcnn.tensor import ShapeError, as_shape, elementwise, map2, relu, reshape


def test_reshape_flat_image_to_batch():
    v = np.arange(784, dtype=np.float32)
    t = reshape(v, [1, 28, 28, 1])
    assert t.shape == (1, 28, 28, 1)
    np.testing.assert_array_equal(t.ravel(), v)


def test_reshape_row_major():
    t = reshape(np.arange(1, 7).reshape(2, 3), [3, 2])
    np.testing.assert_array_equal(t, [[1, 2], [3, 4], [5, 6]])


def test_reshape_same_shape_is_identity_and_fresh():
    a = np.random.default_rng(0).random((2, 3, 4))
    b = reshape(a, a.shape)
    np.testing.assert_array_equal(a, b)
    b[0, 0, 0] = -1
    assert a[0, 0, 0] != -1


def test_reshape_count_mismatch_names_both_counts():
    with pytest.raises(ShapeError, match=r"6 elements.*\(8 elements\)"):
        reshape(np.zeros(6), [2, 4])


def test_shape_extents_positive():
    with pytest.raises(ShapeError):
        as_shape([2, 0])


def test_relu_elementwise():
    np.testing.assert_array_equal(elementwise(np.array([-1.0, 0.0, 2.0]), relu), [0, 0, 2])


def test_identity_and_additive_identity():
    t = np.random.default_rng(1).random((3, 4))
    np.testing.assert_array_equal(elementwise(t, lambda x: x), t)
    np.testing.assert_array_equal(map2(t, np.zeros_like(t), np.add), t)


def test_map2_shape_mismatch():
    with pytest.raises(ShapeError):
        map2(np.zeros((2, 3)), np.zeros((3, 2)), np.add)


def test_inputs_not_mutated():
    t = np.array([-1.0, 2.0])

    def inplace(x):
        x *= 0
        return x

    elementwise(t, inplace)
    np.testing.assert_array_equal(t, [-1.0, 2.0])


arrays = hnp.arrays(
    np.float64,
    hnp.array_shapes(min_dims=1, max_dims=4, max_side=5),
    elements=st.floats(-1e6, 1e6),
)


@given(arrays)
def test_reshape_roundtrip(a):
    flat = reshape(a, [a.size])
    np.testing.assert_array_equal(reshape(flat, a.shape), a)


@given(arrays)
def test_elementwise_composition(a):
    f = lambda x: x * 2.0 - 1.0
    g = relu
    np.testing.assert_array_equal(elementwise(elementwise(a, f), g), elementwise(a, lambda x: g(f(x))))

# Tests for pyrgate.ops.conv2d

import numpy as np
import pytest
from pyrgate import ops
from pyrgate.errors import DegenerateOutput, ShapeMismatch
from pyrgate.gradcheck import check_gradients
from pyrgate.ops import ConvParams
from pyrgate.tensor import Tape


def _conv(tape, weight, bias, stride=1, padding=0):
    return ConvParams(tape.constant(weight), tape.constant(bias), stride, padding)


def test_conv2d_1x1_is_channel_mixing(rng):
    tape = Tape()
    x = rng.standard_normal((2, 3, 4, 4))
    weight = rng.standard_normal((5, 3, 1, 1))
    bias = rng.standard_normal((1, 5, 1, 1))

    out = ops.conv2d(tape.constant(x), _conv(tape, weight, bias))

    expected = np.einsum("oc,nchw->nohw", weight[:, :, 0, 0], x) + bias
    assert np.allclose(out.value, expected)


def test_conv2d_identity_kernel(rng):
    tape = Tape()
    x = rng.standard_normal((1, 2, 5, 5))
    weight = np.zeros((2, 2, 3, 3))
    weight[0, 0, 1, 1] = weight[1, 1, 1, 1] = 1.0

    out = ops.conv2d(tape.constant(x), _conv(tape, weight, np.zeros((1, 2, 1, 1)), padding=1))

    assert np.array_equal(out.value, x)


def test_conv2d_stride_two_shape(rng):
    tape = Tape()
    x = tape.constant(rng.standard_normal((1, 2, 8, 8)))
    p = _conv(tape, rng.standard_normal((4, 2, 3, 3)), np.zeros((1, 4, 1, 1)), stride=2, padding=1)

    assert ops.conv2d(x, p).shape == (1, 4, 4, 4)


def test_conv2d_errors(rng):
    tape = Tape()
    p = _conv(tape, rng.standard_normal((4, 2, 3, 3)), np.zeros((1, 4, 1, 1)))

    with pytest.raises(ShapeMismatch):
        ops.conv2d(tape.constant(np.ones((1, 3, 4, 4))), p)
    with pytest.raises(DegenerateOutput):
        ops.conv2d(tape.constant(np.ones((1, 2, 2, 2))), p)
    with pytest.raises(ShapeMismatch):
        _conv(tape, np.ones((1, 1, 5, 5)), np.zeros((1, 1, 1, 1)))
    with pytest.raises(ShapeMismatch):
        _conv(tape, np.ones((2, 1, 3, 3)), np.zeros((1, 3, 1, 1)))


@pytest.mark.parametrize("k,stride", [(1, 1), (3, 1), (3, 2)])
def test_conv2d_gradient(rng, k, stride):
    def fn(tape, nodes):
        x, w, b = nodes
        return ops.conv2d(x, ConvParams(w, b, stride, k // 2))

    inputs = [rng.standard_normal((2, 3, 6, 6)), rng.standard_normal((4, 3, k, k)),
              rng.standard_normal((1, 4, 1, 1))]

    assert check_gradients(fn, inputs, rng).passed(1e-4)

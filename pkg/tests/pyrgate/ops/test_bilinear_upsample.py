# Tests for pyrgate.ops.bilinear_upsample and f_up

import numpy as np
import pytest
from pyrgate import ops
from pyrgate.errors import InvalidFactor
from pyrgate.gradcheck import check_gradients
from pyrgate.tensor import Tape
from pyrgate.verify import reference_upsample


def test_bilinear_upsample_hand_example():
    tape = Tape()
    x = tape.constant(np.array([[[[0.0, 1.0], [2.0, 3.0]]]]))

    out = ops.bilinear_upsample(x, 2).value[0, 0]

    expected = np.array([
        [0.0, 0.25, 0.75, 1.0],
        [0.5, 0.75, 1.25, 1.5],
        [1.5, 1.75, 2.25, 2.5],
        [2.0, 2.25, 2.75, 3.0],
    ])
    assert np.abs(out - expected).max() <= 1e-12


@pytest.mark.parametrize("factor", ops.UPSAMPLE_FACTORS)
def test_bilinear_upsample_matches_per_pixel_reference(rng, factor):
    x = rng.standard_normal((2, 2, 3, 4))

    out = ops.bilinear_upsample(Tape().constant(x), factor).value

    assert out.shape == (2, 2, 3 * factor, 4 * factor)
    assert np.allclose(out, reference_upsample(x, factor), atol=1e-12)


def test_bilinear_upsample_preserves_constants():
    out = ops.bilinear_upsample(Tape().constant(np.full((1, 1, 3, 3), 2.5)), 8).value

    assert np.allclose(out, 2.5, atol=1e-12)


def test_bilinear_upsample_rejects_other_factors():
    with pytest.raises(InvalidFactor):
        ops.bilinear_upsample(Tape().constant(np.ones((1, 1, 2, 2))), 3)
    with pytest.raises(InvalidFactor):
        ops.f_up(Tape().constant(np.ones((1, 1, 2, 2))), 4)


@pytest.mark.parametrize("factor", ops.UPSAMPLE_FACTORS)
def test_bilinear_upsample_gradient(rng, factor):
    result = check_gradients(lambda tape, nodes: ops.bilinear_upsample(nodes[0], factor),
                             [rng.standard_normal((1, 2, 3, 3))], rng)

    assert result.passed(1e-4)


def test_f_up_cascade_differs_from_single_factor(rng):
    tape = Tape()
    x = tape.constant(rng.standard_normal((1, 1, 2, 2)))

    single = ops.f_up(x, 2).value
    cascade = ops.f_up(x, 2, cascade=True).value

    assert single.shape == cascade.shape == (1, 1, 8, 8)
    assert not np.allclose(single, cascade)
    assert np.allclose(cascade, ops.bilinear_upsample(ops.bilinear_upsample(x, 2), 2).value)

# Tests for pyrgate.gradcheck

import numpy as np
import pytest
from pyrgate import tensor as T
from pyrgate.gradcheck import check_gradients, relative_error


def test_relative_error():
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(2.0, 1.0) == pytest.approx(0.5)
    assert relative_error(0.0, 1e-9) == pytest.approx(1e-3)


def test_smooth_function_passes(rng):
    result = check_gradients(lambda tape, nodes: T.activation("tanh", T.hadamard(nodes[0], nodes[1])),
                             [rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((1, 2, 3, 3))], rng)

    assert result.passed(1e-4)
    assert result.n_checked == 20
    assert result.n_skipped == 0


def test_wrong_vjp_is_detected(rng):
    def doubled_gradient(tape, nodes):
        x = nodes[0]
        return tape.record(x.value ** 2, [(x, lambda g: 4 * x.value * g)])

    result = check_gradients(doubled_gradient, [rng.standard_normal((1, 1, 4, 4))], rng)

    assert not result.passed(1e-4)
    assert result.worst.startswith("input0[")


def test_inputs_are_restored(rng):
    x = rng.standard_normal((1, 1, 3, 3))
    original = x.copy()

    check_gradients(lambda tape, nodes: T.activation("sigmoid", nodes[0]), [x], rng)

    assert np.array_equal(x, original)


def test_kinks_are_skipped(rng):
    x = np.zeros((1, 1, 2, 2))
    x[0, 0, 0, 1] = 0.5
    x[0, 0, 1, 0] = -0.5

    plain = check_gradients(lambda tape, nodes: T.activation("relu", nodes[0]), [x], rng, n_coords=4)
    skipping = check_gradients(lambda tape, nodes: T.activation("relu", nodes[0]), [x], rng, n_coords=4,
                               skip_kinks=True)

    assert not plain.passed(1e-4)
    assert skipping.passed(1e-4)
    assert skipping.n_skipped == 2
    assert skipping.n_checked == 2


def test_unknown_parameter(rng):
    with pytest.raises(KeyError):
        check_gradients(lambda tape, nodes: nodes[0], [np.ones((1, 1, 1, 1))], rng, param_names=["w"])


def test_kinks_within_step_are_skipped(rng):
    # rectifier kinks a third of a step away from x bias the central difference by a third
    x = np.array([[[[-1e-3 / 3, 1e-3 / 3], [0.5, -0.5]]]])

    plain = check_gradients(lambda tape, nodes: T.activation("relu", nodes[0]), [x], rng, n_coords=4)
    skipping = check_gradients(lambda tape, nodes: T.activation("relu", nodes[0]), [x], rng, n_coords=4,
                               skip_kinks=True)

    assert plain.max_rel_error > 0.3
    assert skipping.passed(1e-4)
    assert (skipping.n_checked, skipping.n_skipped) == (2, 2)


def test_smooth_coordinates_survive_kink_skipping(rng):
    result = check_gradients(lambda tape, nodes: T.activation("tanh", nodes[0]),
                             [rng.standard_normal((1, 2, 3, 3))], rng, skip_kinks=True)

    assert result.passed(1e-4)
    assert result.n_checked == 10

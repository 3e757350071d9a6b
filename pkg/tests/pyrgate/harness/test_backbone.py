# Tests for pyrgate.backbone

import numpy as np
import pytest
from pyrgate import ops
from pyrgate import tensor as T
from pyrgate.backbone import ToyBackbone, backbone_forward, check_image
from pyrgate.errors import BadInputSize
from pyrgate.gradcheck import check_gradients
from pyrgate.params import ParameterSet
from pyrgate.tensor import Tape


@pytest.fixture
def backbone_params(rng):
    backbone = ToyBackbone(channels=(2, 3, 3, 4), blocks=(2, 3, 1, 2))
    params = ParameterSet()
    backbone.init_params(params, rng)
    return backbone, params


def test_stage_shapes(backbone_params, rng):
    backbone, params = backbone_params
    tape = Tape(params)

    stages = backbone.forward(tape.constant(rng.standard_normal((2, 1, 64, 64))), tape)

    assert [s.stage_index for s in stages] == [2, 3, 4, 5]
    assert [len(s.blocks) for s in stages] == [2, 3, 1, 2]
    assert [s.shape for s in stages] == [(2, 2, 16, 16), (2, 3, 8, 8), (2, 3, 4, 4), (2, 4, 2, 2)]
    assert stages[1].last is stages[1].blocks[-1]


def test_zero_image_gives_zero_blocks(backbone_params):
    backbone, params = backbone_params
    tape = Tape(params)

    stages = backbone.forward(tape.zeros((1, 1, 32, 32)), tape)

    assert all(not b.value.any() for s in stages for b in s.blocks)


def test_blocks_are_non_negative(backbone_params, rng):
    backbone, params = backbone_params
    tape = Tape(params)

    stages = backbone.forward(tape.constant(rng.standard_normal((1, 1, 32, 32))), tape)

    assert all((b.value >= 0).all() for s in stages for b in s.blocks)


@pytest.mark.parametrize("shape", [(1, 1, 16, 16), (1, 1, 48, 48), (1, 1, 32, 64), (1, 2, 32, 32)])
def test_check_image_rejects(shape):
    with pytest.raises(BadInputSize):
        check_image(shape)


def test_check_image_accepts_powers_of_two():
    check_image((3, 1, 32, 32))
    check_image((1, 1, 128, 128))


def test_backbone_gradient(backbone_params, rng):
    backbone, params = backbone_params

    def fn(tape, nodes):
        stages = backbone.forward(nodes[0], tape)
        return T.concat_channels([ops.global_pool("avg", s.last) for s in stages])

    result = check_gradients(fn, [rng.standard_normal((1, 1, 32, 32))], rng, params,
                             ["backbone.stem0.weight", "backbone.stage3.block2.weight",
                              "backbone.stage5.entry.bias"],
                             n_coords=4, skip_kinks=True)

    assert result.passed(1e-4)
    assert result.n_checked > 0


def test_backbone_forward_uses_given_stride(backbone_params, rng):
    backbone, params = backbone_params
    tape = Tape(params)

    stages = backbone_forward(tape.constant(rng.standard_normal((1, 1, 32, 32))), tape, backbone, sampling_stride=2)

    assert [s.sampling_stride for s in stages] == [2, 2, 2, 2]
    assert [s.former_indices() for s in stages] == [[], [0], [], []]

# Tests for pyrgate.isg.selected_blocks and StageBlocks

import numpy as np
import pytest
from pyrgate.errors import ShapeMismatch
from pyrgate.isg import StageBlocks, selected_blocks
from pyrgate.tensor import Tape


@pytest.mark.parametrize("n_blocks,stride,expected", [
    (4, 1, [0, 1, 2, 3]),
    (4, 2, [1, 3]),
    (3, 2, [0, 2]),
    (1, 1, [0]),
    (1, 2, [0]),
])
def test_selected_blocks(n_blocks, stride, expected):
    assert selected_blocks(n_blocks, stride) == expected


def test_selected_blocks_rejects_other_strides():
    with pytest.raises(ValueError):
        selected_blocks(4, 3)


def test_stage_blocks_share_one_shape():
    tape = Tape()
    stage = StageBlocks(3, [tape.zeros((1, 2, 4, 4)) for _ in range(3)], sampling_stride=2)

    assert stage.shape == (1, 2, 4, 4)
    assert stage.last is stage.blocks[-1]
    assert stage.former_indices() == [0]
    with pytest.raises(ShapeMismatch):
        StageBlocks(3, [tape.zeros((1, 2, 4, 4)), tape.zeros((1, 3, 4, 4))])
    with pytest.raises(ValueError):
        StageBlocks(3, [])

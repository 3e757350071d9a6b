import pytest
from pyrgate.isg import STAGES, StageBlocks


@pytest.fixture
def make_stages(rng):
    """Four octave-spaced stages of random block outputs on `tape`."""
    def make(tape, blocks=(3, 4, 2, 1), channels=(2, 3, 3, 4), size=16, n=2, sampling_stride=1):
        return [
            StageBlocks(stage, [tape.constant(rng.standard_normal((n, c, size >> j, size >> j)))
                                for _ in range(n_blocks)], sampling_stride)
            for j, (stage, n_blocks, c) in enumerate(zip(STAGES, blocks, channels))
        ]
    return make

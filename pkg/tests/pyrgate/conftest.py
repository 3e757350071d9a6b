import numpy as np
import pytest
from pyrgate.config import RunConfig


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_config(tmp_path):
    # small enough that a handful of training steps take seconds
    return RunConfig(
        channels=[2, 3, 3, 4],
        blocks=[2, 3, 1, 2],
        d=3,
        ccu_hidden=3,
        image_size=32,
        steps=4,
        batch_size=2,
        log_every=2,
        record_every=2,
        n_val=3,
        seeds=[1],
        out_dir=str(tmp_path / "run"),
    )


@pytest.fixture
def make_pyramid(rng):
    def make(channels=(2, 3, 4, 5), size=8, n=1):
        return [rng.standard_normal((n, c, size >> j, size >> j)) for j, c in enumerate(channels)]
    return make

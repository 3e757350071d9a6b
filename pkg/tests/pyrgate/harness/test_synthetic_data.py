# Tests for pyrgate.data

import numpy as np
import pytest
from pyrgate.data import (
    BLOB_SCALES,
    LEVELS,
    generate_sample,
    level_for_radius,
    overlap_fraction,
    render_heatmap,
)


@pytest.mark.parametrize("radius, level", [(2.0, 2), (3.99, 2), (4.0, 3), (10.0, 4), (16.0, 5), (31.9, 5)])
def test_level_for_radius(radius, level):
    assert level_for_radius(radius) == level


@pytest.mark.parametrize("radius", [1.99, 32.0, 100.0])
def test_level_for_radius_out_of_range(radius):
    with pytest.raises(ValueError):
        level_for_radius(radius)


def test_overlap_fraction():
    assert overlap_fraction((0, 0, 2), (10, 0, 2)) == 0.0
    assert overlap_fraction((0, 0, 8), (1, 1, 2)) == 1.0
    assert overlap_fraction((0, 0, 3), (0, 0, 3)) == 1.0
    half = overlap_fraction((0, 0, 4), (4, 0, 4))
    assert 0.0 < half < 1.0
    assert half == pytest.approx(overlap_fraction((4, 0, 4), (0, 0, 4)))


def test_radius_ten_blob_only_on_level_four():
    blob = [(24.0, 40.0, 10.0)]

    maps = {k: render_heatmap(blob, 64, k) for k in LEVELS}

    assert [m.shape for m in maps.values()] == [(1, 1, 16, 16), (1, 1, 8, 8), (1, 1, 4, 4), (1, 1, 2, 2)]
    assert not maps[2].any() and not maps[3].any() and not maps[5].any()
    assert maps[4][0, 0, 2, 1] == pytest.approx(1.0, abs=1e-9)
    assert maps[4].max() == maps[4][0, 0, 2, 1]


def test_generate_sample_is_deterministic():
    a, b = generate_sample(7), generate_sample(7)

    assert a.blobs == b.blobs
    assert np.array_equal(a.image, b.image)
    assert all(np.array_equal(x, y) for x, y in zip(a.targets, b.targets))
    assert generate_sample(8).blobs != a.blobs


def test_generated_blobs_respect_constraints():
    for seed in range(30):
        sample = generate_sample(seed)
        assert 1 <= len(sample.blobs) <= 4
        assert sample.image.shape == (1, 1, 64, 64)
        assert sample.image.max() <= 1.0
        for j, (cx, cy, r) in enumerate(sample.blobs):
            assert 2.0 <= r < 32.0
            k = level_for_radius(r)
            stride = 2 ** k
            heat = sample.targets[LEVELS.index(k)][0, 0]
            assert heat[int(cy // stride), int(cx // stride)] == pytest.approx(1.0, abs=1e-9)
            for other in sample.blobs[:j]:
                assert overlap_fraction((cx, cy, r), other) <= 0.5


def test_blob_scale_ranges():
    for seed in range(20):
        small = generate_sample(seed, radius_range=BLOB_SCALES["small"])
        large = generate_sample(seed, radius_range=BLOB_SCALES["large"])
        assert all(2.0 <= r < 8.0 for _, _, r in small.blobs)
        assert all(8.0 <= r < 32.0 for _, _, r in large.blobs)


def test_blobs_at_level_partitions_blobs():
    sample = generate_sample(3)

    assert sorted(b for k in LEVELS for b in sample.blobs_at_level(k)) == sorted(sample.blobs)


def test_empty_sample():
    sample = generate_sample(0, blob_count=(0, 0), image_size=32)

    assert sample.blobs == []
    assert not sample.image.any()
    assert [t.shape[2] for t in sample.targets] == [8, 4, 2, 1]

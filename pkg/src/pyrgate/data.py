"""
Synthetic multi-scale data: images of Gaussian blobs whose radii span four
octaves, with one centre heatmap per pyramid level.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LEVELS = (2, 3, 4, 5)
RADIUS_RANGE = (2.0, 32.0)
BLOB_SCALES = {
    "any": RADIUS_RANGE,
    "small": (2.0, 8.0),
    "large": (8.0, 32.0),
}
VAL_SEED_OFFSET = 10 ** 6


def level_for_radius(radius: float) -> int:
    """Radius bins [2, 4), [4, 8), [8, 16), [16, 32) map to levels 2..5."""
    if not RADIUS_RANGE[0] <= radius < RADIUS_RANGE[1]:
        raise ValueError(f"radius {radius} outside {RADIUS_RANGE}")
    return int(math.floor(math.log2(radius))) + 1


def overlap_fraction(a: tuple[float, float, float], b: tuple[float, float, float]) -> float:
    """
    Intersection area of two discs ``(cx, cy, r)`` as a fraction of the
    smaller disc's area.
    """
    (x1, y1, r1), (x2, y2, r2) = a, b
    d = math.hypot(x1 - x2, y1 - y2)
    small = math.pi * min(r1, r2) ** 2
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        return 1.0
    c1 = min(max((d * d + r1 * r1 - r2 * r2) / (2 * d * r1), -1.0), 1.0)
    c2 = min(max((d * d + r2 * r2 - r1 * r1) / (2 * d * r2), -1.0), 1.0)
    lens = (r1 * r1 * math.acos(c1) + r2 * r2 * math.acos(c2)
            - 0.5 * math.sqrt(max((-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2), 0.0)))
    return lens / small


@dataclass
class SynthSample:
    image: np.ndarray
    targets: list[np.ndarray]
    blobs: list[tuple[float, float, float]]
    seed: int

    def blobs_at_level(self, level: int) -> list[tuple[float, float, float]]:
        return [b for b in self.blobs if level_for_radius(b[2]) == level]


def render_image(blobs: list[tuple[float, float, float]], image_size: int) -> np.ndarray:
    coords = np.arange(image_size) + 0.5
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    image = np.zeros((image_size, image_size))
    for cx, cy, r in blobs:
        sigma = r / 2.0
        image = np.maximum(image, np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma * sigma)))
    return image.reshape(1, 1, image_size, image_size)


def render_heatmap(blobs: list[tuple[float, float, float]], image_size: int, level: int) -> np.ndarray:
    """
    Heatmap on the level's grid: ``exp(-dist^2 / (2 sigma^2))`` in cell units
    with ``sigma = radius / stride``, maximised over the level's blobs.
    """
    stride = 2 ** level
    cells = image_size // stride
    coords = (np.arange(cells) + 0.5) * stride
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    heat = np.zeros((cells, cells))
    for cx, cy, r in blobs:
        if level_for_radius(r) != level:
            continue
        sigma = r / stride
        dist2 = ((xx - cx) ** 2 + (yy - cy) ** 2) / (stride * stride)
        heat = np.maximum(heat, np.exp(-dist2 / (2 * sigma * sigma)))
    return heat.reshape(1, 1, cells, cells)


def generate_sample(seed: int, blob_count: tuple[int, int] = (1, 4), image_size: int = 64,
                    radius_range: tuple[float, float] = RADIUS_RANGE,
                    max_retries: int = 50) -> SynthSample:
    """
    Draw a deterministic sample for `seed`.

    Radii are log-uniform over `radius_range`. Each blob centre sits on a cell
    centre of the level its radius is assigned to, so that level's heatmap
    peaks at exactly 1. A placement overlapping an accepted blob by more than
    half of the smaller area is redrawn; after `max_retries` failures the blob
    is dropped.
    """
    lo, hi = blob_count
    rng = np.random.default_rng(seed)
    n_blobs = int(rng.integers(lo, hi + 1))
    log_lo, log_hi = math.log(radius_range[0]), math.log(radius_range[1])
    blobs: list[tuple[float, float, float]] = []
    for _ in range(n_blobs):
        for _attempt in range(max_retries):
            r = float(math.exp(rng.uniform(log_lo, log_hi)))
            if r >= RADIUS_RANGE[1]:
                continue
            stride = 2 ** level_for_radius(r)
            u, v = rng.integers(0, image_size // stride, size=2)
            candidate = ((int(u) + 0.5) * stride, (int(v) + 0.5) * stride, r)
            if all(overlap_fraction(candidate, b) <= 0.5 for b in blobs):
                blobs.append(candidate)
                break

    return SynthSample(
        image=render_image(blobs, image_size),
        targets=[render_heatmap(blobs, image_size, k) for k in LEVELS],
        blobs=blobs,
        seed=seed,
    )

"""
File formats: tensor fixture blobs, tensor CSV exports, convolution parameter
blobs and 8-bit PGM renderings of gate matrices.

A tensor blob is four little-endian uint32 shape fields followed by the
values as little-endian float64 in C order.
"""
from pathlib import Path

import numpy as np
import polars as pl

from pyrgate.errors import ShapeMismatch
from pyrgate.tensor import Tensor4, tensor4

_SHAPE = np.dtype("<u4")
_VALUES = np.dtype("<f8")


def tensor_to_bytes(x: np.ndarray) -> bytes:
    x = tensor4(x)
    return np.asarray(x.shape, dtype=_SHAPE).tobytes() + x.astype(_VALUES).tobytes()


def tensor_from_bytes(data: bytes, offset: int = 0) -> tuple[Tensor4, int]:
    """
    Decode one tensor blob starting at `offset`.

    Returns
    -------
    The tensor and the offset just past it.
    """
    if len(data) < offset + 16:
        raise ShapeMismatch("truncated tensor header")
    shape = tuple(int(s) for s in np.frombuffer(data, dtype=_SHAPE, count=4, offset=offset))
    size = int(np.prod(shape))
    end = offset + 16 + 8 * size
    if len(data) < end:
        raise ShapeMismatch(f"tensor blob of shape {shape} needs {end - offset} bytes, got {len(data) - offset}")
    values = np.frombuffer(data, dtype=_VALUES, count=size, offset=offset + 16)
    return tensor4(values.astype(np.float64), shape), end


def save_tensor(path: str | Path, x: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(x))


def load_tensor(path: str | Path) -> Tensor4:
    data = Path(path).read_bytes()
    x, end = tensor_from_bytes(data)
    if end != len(data):
        raise ShapeMismatch(f"{len(data) - end} trailing bytes after tensor blob")
    return x


def tensor_frame(x: np.ndarray) -> pl.DataFrame:
    """
    One row per (batch, channel) pair, holding that channel's h*w values in
    row-major order as columns ``v0 .. v{h*w-1}``.
    """
    x = tensor4(x)
    n, c, h, w = x.shape
    flat = x.reshape(n * c, h * w)
    columns = {"n": np.repeat(np.arange(n), c), "c": np.tile(np.arange(c), n)}
    columns.update({f"v{j}": flat[:, j] for j in range(h * w)})
    return pl.DataFrame(columns)


def tensor_to_csv(path: str | Path, x: np.ndarray) -> None:
    tensor_frame(x).write_csv(path)


def save_conv_params(path: str | Path, weight: np.ndarray, bias: np.ndarray, stride: int, padding: int) -> None:
    """Weight blob, bias blob, then stride and padding as uint32."""
    extra = np.asarray([stride, padding], dtype=_SHAPE).tobytes()
    Path(path).write_bytes(tensor_to_bytes(weight) + tensor_to_bytes(bias) + extra)


def load_conv_params(path: str | Path) -> tuple[Tensor4, Tensor4, int, int]:
    data = Path(path).read_bytes()
    weight, offset = tensor_from_bytes(data)
    bias, offset = tensor_from_bytes(data, offset)
    if len(data) != offset + 8:
        raise ShapeMismatch("conv parameter blob must end with stride and padding fields")
    stride, padding = (int(v) for v in np.frombuffer(data, dtype=_SHAPE, count=2, offset=offset))
    if bias.shape != (1, weight.shape[0], 1, 1):
        raise ShapeMismatch(f"bias {bias.shape} does not match weight {weight.shape}")
    return weight, bias, stride, padding


def pgm_bytes(matrix: np.ndarray) -> bytes:
    """
    Binary PGM (P5) with one 8-bit pixel per entry, ``round(255 * value)``
    for values in [0, 1].
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ShapeMismatch(f"PGM export needs a 2-d matrix, got shape {matrix.shape}")
    h, w = matrix.shape
    pixels = np.rint(255 * np.clip(matrix, 0.0, 1.0)).astype(np.uint8)
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def write_pgm(path: str | Path, matrix: np.ndarray) -> None:
    Path(path).write_bytes(pgm_bytes(matrix))

"""
Neural operators on tape nodes: convolution, bilinear upsampling, global
pooling, channel normalisation and the repeated resampling compositions used
to bring pyramid levels to a common resolution.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from pyrgate.errors import DegenerateOutput, InvalidFactor, ShapeMismatch
from pyrgate.tensor import Node, Tape, Tensor4

UPSAMPLE_FACTORS = (2, 4, 8)


@dataclass(frozen=True)
class ConvParams:
    """
    Weights (out_c, in_c, k, k) and bias (1, out_c, 1, 1) nodes of a
    convolution, with its stride and zero padding.
    """
    weight: Node
    bias: Node
    stride: int = 1
    padding: int = 0

    def __post_init__(self) -> None:
        out_c, _, kh, kw = self.weight.shape
        if kh not in (1, 3) or kw not in (1, 3):
            raise ShapeMismatch(f"only 1x1 and 3x3 kernels are supported, got {kh}x{kw}")
        if self.bias.shape != (1, out_c, 1, 1):
            raise ShapeMismatch(f"bias shape {self.bias.shape} does not match {out_c} output channels")
        if self.stride < 1 or self.padding < 0:
            raise ValueError(f"invalid stride {self.stride} or padding {self.padding}")


    @property
    def in_c(self) -> int:
        return self.weight.shape[1]


    @property
    def out_c(self) -> int:
        return self.weight.shape[0]


    @classmethod
    def bind(cls, tape: Tape, prefix: str, stride: int = 1, padding: int | None = None) -> "ConvParams":
        """
        Bind ``prefix.weight`` / ``prefix.bias`` from the tape's parameters.
        Padding defaults to "same" padding for the kernel size.
        """
        weight = tape.param(f"{prefix}.weight")
        if padding is None:
            padding = weight.shape[2] // 2
        return cls(weight, tape.param(f"{prefix}.bias"), stride, padding)


def _conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Node, p: ConvParams) -> Node:
    """
    Cross-correlate `x` with the kernel of `p` and add its bias.
    """
    n, c, h, w = x.shape
    out_c, in_c, kh, kw = p.weight.shape
    if c != in_c:
        raise ShapeMismatch(f"input has {c} channels but kernel expects {in_c}")
    s, pad = p.stride, p.padding
    oh, ow = _conv_output_size(h, kh, s, pad), _conv_output_size(w, kw, s, pad)
    if oh < 1 or ow < 1:
        raise DegenerateOutput(f"convolution of {h}x{w} input gives {oh}x{ow} output")

    xp = np.pad(x.value, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.value
    # (n, c, oh, ow, kh, kw)
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :oh, :ow]
    weight = p.weight.value
    out = np.einsum("nchwij,ocij->nohw", windows, weight, optimize=True) + p.bias.value

    def grad_x(g: Tensor4) -> Tensor4:
        gw = np.einsum("nohw,ocij->nchwij", g, weight, optimize=True)
        gxp = np.zeros(xp.shape)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += gw[..., i, j]
        return gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp

    return x.tape.record(
        np.ascontiguousarray(out),
        [(x, grad_x),
         (p.weight, lambda g: np.einsum("nchwij,nohw->ocij", windows, g, optimize=True)),
         (p.bias, lambda g: g.sum(axis=(0, 2, 3), keepdims=True))]
    )


@functools.lru_cache(maxsize=None)
def _bilinear_matrix(size: int, factor: int) -> np.ndarray:
    """
    Interpolation matrix of shape (size * factor, size) for one axis, with
    half-pixel sample centres and edge clamping.
    """
    out = np.zeros((size * factor, size))
    for j in range(size * factor):
        src = min(max((j + 0.5) / factor - 0.5, 0.0), size - 1.0)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, size - 1)
        frac = src - i0
        out[j, i0] += 1.0 - frac
        out[j, i1] += frac
    out.setflags(write=False)
    return out


def bilinear_upsample(x: Node, factor: int) -> Node:
    if factor not in UPSAMPLE_FACTORS:
        raise InvalidFactor(f"upsampling factor must be one of {UPSAMPLE_FACTORS}, got {factor}")
    _, _, h, w = x.shape
    rows = _bilinear_matrix(h, factor)
    cols = _bilinear_matrix(w, factor)
    out = np.einsum("Hh,nchw,Ww->ncHW", rows, x.value, cols, optimize=True)
    return x.tape.record(
        np.ascontiguousarray(out),
        [(x, lambda g: np.einsum("Hh,ncHW,Ww->nchw", rows, g, cols, optimize=True))]
    )


def f_down(x: Node, t: int, params: Sequence[ConvParams]) -> Node:
    """
    `t` successive channel-preserving 3x3 stride-2 convolutions.
    """
    if t < 1 or len(params) != t:
        raise ValueError(f"f_down needs t >= 1 and exactly t parameter sets, got t={t} and {len(params)}")
    for p in params:
        if p.weight.shape[2:] != (3, 3) or p.stride != 2 or p.padding != 1 or p.in_c != p.out_c:
            raise ShapeMismatch("f_down steps must be channel-preserving 3x3 convolutions with stride 2, padding 1")
    for p in params:
        x = conv2d(x, p)
    return x


def f_up(x: Node, t: int, cascade: bool = False) -> Node:
    """
    Upsample by ``2**t``: one bilinear interpolation by default, or `t`
    successive x2 interpolations when `cascade` is set.
    """
    if t not in (1, 2, 3):
        raise InvalidFactor(f"f_up supports t in (1, 2, 3), got {t}")
    if cascade:
        for _ in range(t):
            x = bilinear_upsample(x, 2)
        return x
    return bilinear_upsample(x, 2 ** t)


def global_pool(kind: str, x: Node) -> Node:
    """
    Per-channel mean or max over all spatial positions. The max routes its
    gradient to the first maximal position in row-major order.
    """
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeMismatch(f"cannot pool over empty spatial dims {h}x{w}")
    if kind == "avg":
        return x.tape.record(
            x.value.mean(axis=(2, 3), keepdims=True),
            [(x, lambda g: np.broadcast_to(g / (h * w), x.shape))]
        )
    if kind == "max":
        flat = x.value.reshape(n, c, h * w)
        idx = np.argmax(flat, axis=2)

        def vjp(g: Tensor4) -> Tensor4:
            out = np.zeros((n, c, h * w))
            np.put_along_axis(out, idx[..., None], g.reshape(n, c, 1), axis=2)
            return out.reshape(n, c, h, w)

        return x.tape.record(
            np.take_along_axis(flat, idx[..., None], axis=2).reshape(n, c, 1, 1),
            [(x, vjp)]
        )
    raise ValueError(f"unknown pool kind {kind!r}, expected 'avg' or 'max'")


def channel_l2_normalize(x: Node, eps: float = 1e-6) -> Node:
    """
    Divide every spatial position by the L2 norm of its channel vector plus `eps`.
    """
    v = x.value
    r = np.sqrt((v * v).sum(axis=1, keepdims=True))
    denom = r + eps
    safe_r = np.where(r > 0, r, 1.0)

    def vjp(g: Tensor4) -> Tensor4:
        dot = (g * v).sum(axis=1, keepdims=True)
        return g / denom - v * dot / (denom * denom * safe_r)

    return x.tape.record(v / denom, [(x, vjp)])

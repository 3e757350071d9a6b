"""
Cross-scale selection: bring every pyramid input to every output resolution,
let a central control unit decide per sample which paths open (scalar gates
``w_ik``) and where they contribute (pixel maps ``s_ik``), and sum the gated
paths into the output pyramid.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pyrgate import tensor as T
from pyrgate.errors import ShapeMismatch
from pyrgate.gate import GateMode, GateSignal, Placement, forced_signal, gate_apply, gate_openness, squash
from pyrgate.ops import ConvParams, channel_l2_normalize, conv2d, f_down, f_up, global_pool
from pyrgate.params import ParameterSet
from pyrgate.tensor import Node, Tape

LEVELS = (2, 3, 4, 5)


def _check_pyramid(pyramid: Sequence[Node]) -> None:
    if len(pyramid) != len(LEVELS):
        raise ShapeMismatch(f"expected {len(LEVELS)} pyramid levels, got {len(pyramid)}")
    for lo, hi in zip(pyramid[:-1], pyramid[1:]):
        if lo.shape[0] != hi.shape[0] or lo.shape[2] != 2 * hi.shape[2] or lo.shape[3] != 2 * hi.shape[3]:
            raise ShapeMismatch(f"pyramid levels are not octave-spaced: {lo.shape} then {hi.shape}")


def init_lateral_params(params: ParameterSet, prefix: str, in_channels: Sequence[int], d: int,
                        rng: np.random.Generator) -> None:
    for k, c in zip(LEVELS, in_channels):
        params.add_conv(f"{prefix}.lateral{k}", d, c, 1, rng)


def init_down_params(params: ParameterSet, prefix: str, d: int, rng: np.random.Generator) -> None:
    """One independent chain of 3x3 stride-2 convolutions per (source, target) pair."""
    for i in LEVELS:
        for k in LEVELS:
            for step in range(k - i):
                params.add_conv(f"{prefix}.down{i}{k}.{step}", d, d, 3, rng)


def init_csg_params(params: ParameterSet, in_channels: Sequence[int], d: int, rng: np.random.Generator,
                    ccu_hidden: int | None = None, gate_init_scale: float = 0.1,
                    prefix: str = "csg") -> None:
    """
    Add lateral projections, down-sampling chains and one unshared central
    control unit per target level.
    """
    hidden = ccu_hidden or d
    init_lateral_params(params, prefix, in_channels, d, rng)
    init_down_params(params, prefix, d, rng)
    for k in LEVELS:
        params.add_conv(f"{prefix}.ccu{k}.hidden", hidden, len(LEVELS) * d, 1, rng)
        params.add_conv(f"{prefix}.ccu{k}.signal", len(LEVELS), hidden, 1, rng, scale=gate_init_scale)
        params.add_conv(f"{prefix}.ccu{k}.shared", 1, d, 3, rng)
        for i in LEVELS:
            params.add_conv(f"{prefix}.ccu{k}.map{i}", 1, d, 3, rng)


@dataclass
class ResampledLattice:
    """``cells[(i, k)]`` is input level i brought to the resolution of level k."""
    cells: dict[tuple[int, int], Node]
    d: int

    def column(self, k: int) -> list[Node]:
        return [self.cells[(i, k)] for i in LEVELS]


@dataclass
class CCUOutput:
    w: dict[tuple[int, int], GateSignal]
    s: dict[tuple[int, int], GateSignal]

    def openness_matrix(self) -> np.ndarray:
        """
        Array of shape (n, 4, 4); entry ``[b, i, k]`` is the openness of the
        path from input level ``LEVELS[i]`` to output level ``LEVELS[k]``.
        """
        n = next(iter(self.w.values())).squashed.shape[0]
        out = np.zeros((n, len(LEVELS), len(LEVELS)))
        for (i, k), sig in self.w.items():
            out[:, LEVELS.index(i), LEVELS.index(k)] = gate_openness(sig).mean(axis=1)
        return out


@dataclass
class CSGOutput:
    pyramid: list[Node]
    lattice: ResampledLattice
    ccu: CCUOutput


def project_inputs(pyramid: Sequence[Node], tape: Tape, prefix: str = "csg") -> list[Node]:
    """1x1 projection of every level to the common width d."""
    _check_pyramid(pyramid)
    return [conv2d(c, ConvParams.bind(tape, f"{prefix}.lateral{k}")) for k, c in zip(LEVELS, pyramid)]


def build_lattice(projected: Sequence[Node], tape: Tape, prefix: str = "csg",
                  cascade_up: bool = False) -> ResampledLattice:
    """
    Resample every projected level to every level: higher resolutions go down
    through their own 3x3 stride-2 chains, lower resolutions go up by bilinear
    interpolation with factor ``2**(i - k)``.
    """
    _check_pyramid(projected)
    d = projected[0].shape[1]
    cells = {}
    for i, x in zip(LEVELS, projected):
        for k, target in zip(LEVELS, projected):
            if i < k:
                chain = [ConvParams.bind(tape, f"{prefix}.down{i}{k}.{step}", stride=2, padding=1)
                         for step in range(k - i)]
                cell = f_down(x, k - i, chain)
            elif i > k:
                cell = f_up(x, i - k, cascade=cascade_up)
            else:
                cell = x
            if cell.shape[2:] != target.shape[2:]:
                raise ShapeMismatch(f"path {i}->{k} produced {cell.shape}, level {k} is {target.shape}")
            cells[(i, k)] = cell
    return ResampledLattice(cells, d)


def ccu(column: Sequence[Node], k: int, tape: Tape,
        mode: GateMode = GateMode.RECTIFIED_TANH,
        prefix: str = "csg") -> tuple[list[GateSignal], list[GateSignal]]:
    """
    Central control unit for target level `k`.

    Returns
    -------
    (w, s): the scalar path gates, each of shape (n, 1, 1, 1), and the pixel
    selection maps, each of shape (n, 1, h_k, w_k), ordered by source level.
    """
    if len(column) != len(LEVELS):
        raise ShapeMismatch(f"CCU expects {len(LEVELS)} inputs, got {len(column)}")
    shape = column[0].shape
    for m in column[1:]:
        if m.shape != shape:
            raise ShapeMismatch(f"CCU inputs must share one shape, got {shape} and {m.shape}")
    name = f"{prefix}.ccu{k}"

    pooled = T.concat_channels([global_pool("avg", m) for m in column])
    hidden = T.activation("relu", conv2d(pooled, ConvParams.bind(tape, f"{name}.hidden")))
    raw = conv2d(hidden, ConvParams.bind(tape, f"{name}.signal"))
    w = squash([T.slice_channels(raw, j, j + 1) for j in range(len(LEVELS))], mode)

    normed = [channel_l2_normalize(m) for m in column]
    shared = conv2d(normed[LEVELS.index(k)], ConvParams.bind(tape, f"{name}.shared"))
    s_raw = [T.add(conv2d(x, ConvParams.bind(tape, f"{name}.map{i}")), shared) for i, x in zip(LEVELS, normed)]
    s = squash(s_raw, mode)
    return w, s


def _forced_value(force: float | np.ndarray, i: int, k: int) -> float:
    arr = np.asarray(force, dtype=np.float64)
    if arr.ndim == 0:
        return float(arr)
    return float(arr[LEVELS.index(i), LEVELS.index(k)])


def csg_forward(pyramid: Sequence[Node], tape: Tape,
                mode: GateMode = GateMode.RECTIFIED_TANH,
                placement: Placement = Placement.SIGNAL,
                force_w: float | np.ndarray | None = None,
                force_s: float | None = None,
                cascade_up: bool = False,
                prefix: str = "csg") -> CSGOutput:
    """
    Compute ``P'_k = sum_i G(w_ik, M_ik) * s_ik`` for every output level k.

    Parameters
    ----------
    pyramid: Sequence[Node]
        Inputs ``C'_2 .. C'_5``.
    force_w: float | np.ndarray | None
        Pin the squashed path gates, either to one value or to a 4x4 array
        indexed ``[source, target]``.
    force_s: float | None
        Pin every selection map to one value.
    cascade_up: bool
        Build upward paths from repeated x2 interpolations instead of a single
        interpolation by ``2**(i - k)``.
    """
    projected = project_inputs(pyramid, tape, prefix)
    lattice = build_lattice(projected, tape, prefix, cascade_up)
    if force_w is not None:
        placement = Placement.SIGNAL

    w_all: dict[tuple[int, int], GateSignal] = {}
    s_all: dict[tuple[int, int], GateSignal] = {}
    outputs = []
    for k in LEVELS:
        column = lattice.column(k)
        n, _, h, w = column[0].shape
        if force_w is None or force_s is None:
            w_k, s_k = ccu(column, k, tape, mode, prefix)
        if force_w is not None:
            w_k = [forced_signal(tape, (n, 1, 1, 1), _forced_value(force_w, i, k)) for i in LEVELS]
        if force_s is not None:
            s_k = [forced_signal(tape, (n, 1, h, w), force_s) for _ in LEVELS]

        p_k = None
        for i, m, w_ik, s_ik in zip(LEVELS, column, w_k, s_k):
            path = T.hadamard_map(gate_apply(w_ik, m, mode=mode, placement=placement), s_ik.squashed)
            p_k = path if p_k is None else T.add(p_k, path)
            w_all[(i, k)] = w_ik
            s_all[(i, k)] = s_ik
        outputs.append(p_k)
    return CSGOutput(outputs, lattice, CCUOutput(w_all, s_all))

"""
Intra-scale selection: per backbone stage, gate the outputs of the former
blocks (coarse selection) and blend the result with the last block's output
through a channel-wise gate (fine selection).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pyrgate import tensor as T
from pyrgate.errors import ShapeMismatch
from pyrgate.gate import GateMode, GateSignal, Placement, forced_signal, gate_apply, gate_openness, squash
from pyrgate.ops import ConvParams, conv2d, global_pool
from pyrgate.params import ParameterSet
from pyrgate.tensor import Node, Tape

STAGES = (2, 3, 4, 5)
SAMPLING_STRIDES = (1, 2)


def selected_blocks(n_blocks: int, sampling_stride: int) -> list[int]:
    """
    0-based indices of the blocks taking part in selection, ascending. The
    last block is always kept; with stride 2 every second predecessor counting
    back from it is kept as well.
    """
    if sampling_stride not in SAMPLING_STRIDES:
        raise ValueError(f"sampling stride must be one of {SAMPLING_STRIDES}, got {sampling_stride}")
    return list(range(n_blocks - 1, -1, -sampling_stride))[::-1]


@dataclass
class StageBlocks:
    stage_index: int
    blocks: list[Node]
    sampling_stride: int = 1

    def __post_init__(self) -> None:
        if len(self.blocks) < 1:
            raise ValueError(f"stage {self.stage_index} has no blocks")
        shape = self.blocks[0].shape
        for b in self.blocks[1:]:
            if b.shape != shape:
                raise ShapeMismatch(f"stage {self.stage_index} mixes block shapes {shape} and {b.shape}")


    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.blocks[0].shape


    @property
    def last(self) -> Node:
        return self.blocks[-1]


    def former_indices(self) -> list[int]:
        return selected_blocks(len(self.blocks), self.sampling_stride)[:-1]


@dataclass
class CoarseResult:
    b_signals: list[GateSignal]
    fused: Node
    block_indices: list[int]
    last_index: int = 0


@dataclass
class FineResult:
    a_signal: GateSignal | None
    selected: Node


@dataclass
class ISGOutput:
    pyramid: list[Node]
    coarse: list[CoarseResult]
    fine: list[FineResult]

    def openness(self) -> list[tuple[str, int, int, np.ndarray]]:
        """
        ``(kind, stage, block, values)`` entries with one openness value per
        sample, averaged over channels. Block indices are 1-based; the fine
        selection gate is reported against the stage's last block.
        """
        entries = []
        for stage, cs, fs in zip(STAGES, self.coarse, self.fine):
            for j, sig in zip(cs.block_indices, cs.b_signals):
                entries.append(("isg_b", stage, j + 1, gate_openness(sig).mean(axis=1)))
            if fs.a_signal is not None:
                entries.append(("isg_a", stage, cs.last_index + 1, gate_openness(fs.a_signal).mean(axis=1)))
        return entries


def init_isg_params(params: ParameterSet, channels: Sequence[int], blocks: Sequence[int],
                    sampling_stride: int, rng: np.random.Generator,
                    gate_init_scale: float = 0.1, prefix: str = "isg") -> None:
    """
    Add the per-stage (non-shared) coarse selection parameters: a 1x1 reduction
    of the concatenated former blocks and one 1x1 signal projection per former
    block.
    """
    for stage, c, n in zip(STAGES, channels, blocks):
        former = selected_blocks(n, sampling_stride)[:-1]
        if not former:
            continue
        params.add_conv(f"{prefix}.stage{stage}.reduce", c, c * len(former), 1, rng)
        for j in former:
            params.add_conv(f"{prefix}.stage{stage}.proj{j + 1}", c, c, 1, rng, scale=gate_init_scale)


def coarse_select(blocks: StageBlocks, tape: Tape,
                  mode: GateMode = GateMode.RECTIFIED_TANH,
                  placement: Placement = Placement.SIGNAL,
                  force_b: float | None = None,
                  prefix: str = "isg") -> CoarseResult:
    """
    Gate every former block with its own channel signal and sum the results.

    Signals come from the concatenated former blocks: 1x1 reduction to the
    stage width, global average pooling, then a 1x1 projection per block.
    A stage with a single block yields a zero tensor and no signals.
    """
    former = blocks.former_indices()
    if not former:
        return CoarseResult([], tape.zeros(blocks.shape), [], len(blocks.blocks) - 1)

    n, c = blocks.shape[:2]
    name = f"{prefix}.stage{blocks.stage_index}"
    if force_b is None:
        z = T.concat_channels([blocks.blocks[j] for j in former])
        pooled = global_pool("avg", conv2d(z, ConvParams.bind(tape, f"{name}.reduce")))
        raws = [conv2d(pooled, ConvParams.bind(tape, f"{name}.proj{j + 1}")) for j in former]
        signals = squash(raws, mode)
    else:
        signals = [forced_signal(tape, (n, c, 1, 1), force_b) for _ in former]
        placement = Placement.SIGNAL

    fused = None
    for j, sig in zip(former, signals):
        gated = gate_apply(sig, blocks.blocks[j], mode=mode, placement=placement)
        fused = gated if fused is None else T.add(fused, gated)
    return CoarseResult(signals, fused, former, len(blocks.blocks) - 1)


def _squash_fine(raw: Node, mode: GateMode) -> GateSignal:
    if GateMode.parse(mode) is GateMode.SOFTMAX_GROUP:
        # two-way softmax over (raw, 0): a and 1 - a are the pair's weights
        a, _ = T.softmax_over_group([raw, raw.tape.zeros(raw.shape)])
        return GateSignal(raw, a)
    return squash([raw], mode)[0]


def fine_select(cs: CoarseResult, last_block: Node,
                mode: GateMode = GateMode.RECTIFIED_TANH,
                force_a: float | None = None) -> FineResult:
    """
    Blend the coarse result with the last block: ``a * B_cs + (1 - a) * B_last``
    where ``a`` is squashed from global average plus global max pooling of
    ``B_cs + B_last``. Stages without former blocks pass the last block through.
    """
    if cs.fused.shape != last_block.shape:
        raise ShapeMismatch(f"coarse result {cs.fused.shape} and last block {last_block.shape} differ")
    if not cs.block_indices:
        return FineResult(None, last_block)

    tape = last_block.tape
    n, c = last_block.shape[:2]
    if force_a is None:
        z = T.add(cs.fused, last_block)
        a = _squash_fine(T.add(global_pool("avg", z), global_pool("max", z)), mode)
    else:
        a = forced_signal(tape, (n, c, 1, 1), force_a)
    rest = GateSignal(None, T.sub(tape.full((n, c, 1, 1), 1.0), a.squashed))
    selected = T.add(gate_apply(a, cs.fused), gate_apply(rest, last_block))
    return FineResult(a, selected)


def isg_forward(stages: Sequence[StageBlocks], tape: Tape,
                mode: GateMode = GateMode.RECTIFIED_TANH,
                placement: Placement = Placement.SIGNAL,
                fs_enabled: bool = True,
                force_b: float | None = None,
                force_a: float | None = None,
                prefix: str = "isg") -> ISGOutput:
    """
    Run coarse and fine selection on every stage and return the selected
    pyramid inputs ``C'_2 .. C'_5``. With `fs_enabled` false the coarse result
    is simply added to the last block.
    """
    if len(stages) != len(STAGES):
        raise ShapeMismatch(f"expected {len(STAGES)} stages, got {len(stages)}")
    for lo, hi in zip(stages[:-1], stages[1:]):
        if lo.shape[2] != 2 * hi.shape[2] or lo.shape[3] != 2 * hi.shape[3]:
            raise ShapeMismatch(f"stages are not octave-spaced: {lo.shape} then {hi.shape}")

    coarse, fine = [], []
    for blocks in stages:
        cs = coarse_select(blocks, tape, mode, placement, force_b, prefix)
        if fs_enabled:
            fs = fine_select(cs, blocks.last, mode, force_a)
        elif cs.block_indices:
            fs = FineResult(None, T.add(cs.fused, blocks.last))
        else:
            fs = FineResult(None, blocks.last)
        coarse.append(cs)
        fine.append(fs)
    return ISGOutput([fs.selected for fs in fine], coarse, fine)

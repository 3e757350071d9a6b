"""
A small convolutional backbone that keeps every block output, so that the
intra-scale selection can look at all of them rather than only the last one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pyrgate import tensor as T
from pyrgate.errors import BadInputSize
from pyrgate.isg import STAGES, StageBlocks
from pyrgate.ops import ConvParams, conv2d
from pyrgate.params import ParameterSet
from pyrgate.tensor import Node, Tape


@dataclass(frozen=True)
class ToyBackbone:
    """
    Stem (two stride-2 3x3 convolutions) followed by four stages. Stages 3-5
    open with a stride-2 3x3 convolution; every block is
    ``relu(x + conv3x3(x))``, so all blocks of a stage share one shape.
    """
    channels: Sequence[int] = (8, 16, 32, 64)
    blocks: Sequence[int] = (3, 4, 4, 3)
    in_channels: int = 1
    prefix: str = "backbone"

    def init_params(self, params: ParameterSet, rng: np.random.Generator) -> None:
        c2 = self.channels[0]
        params.add_conv(f"{self.prefix}.stem0", c2, self.in_channels, 3, rng)
        params.add_conv(f"{self.prefix}.stem1", c2, c2, 3, rng)
        prev = c2
        for stage, c, n in zip(STAGES, self.channels, self.blocks):
            if stage > STAGES[0]:
                params.add_conv(f"{self.prefix}.stage{stage}.entry", c, prev, 3, rng)
            for j in range(n):
                params.add_conv(f"{self.prefix}.stage{stage}.block{j + 1}", c, c, 3, rng)
            prev = c


    def forward(self, image: Node, tape: Tape, sampling_stride: int = 1) -> list[StageBlocks]:
        """
        Run the backbone and return the outputs of every block, stage by stage.
        """
        check_image(image.shape, self.in_channels)
        x = T.activation("relu", conv2d(image, ConvParams.bind(tape, f"{self.prefix}.stem0", stride=2)))
        x = T.activation("relu", conv2d(x, ConvParams.bind(tape, f"{self.prefix}.stem1", stride=2)))
        stages = []
        for stage, n in zip(STAGES, self.blocks):
            name = f"{self.prefix}.stage{stage}"
            if stage > STAGES[0]:
                x = T.activation("relu", conv2d(x, ConvParams.bind(tape, f"{name}.entry", stride=2)))
            outputs = []
            for j in range(n):
                x = T.activation("relu", T.add(x, conv2d(x, ConvParams.bind(tape, f"{name}.block{j + 1}"))))
                outputs.append(x)
            stages.append(StageBlocks(stage, outputs, sampling_stride))
        return stages


def check_image(shape: tuple[int, ...], in_channels: int = 1) -> None:
    """
    Images must be square with a power-of-two side of at least 32 pixels so
    that stage 5 is at least 1x1.
    """
    _, c, h, w = shape
    if c != in_channels or h != w or h < 32 or h & (h - 1):
        raise BadInputSize(f"expected a square (n, {in_channels}, 2^m, 2^m) image with side >= 32, got {shape}")


def backbone_forward(image: Node, tape: Tape, backbone: ToyBackbone | None = None,
                     sampling_stride: int = 1) -> list[StageBlocks]:
    return (backbone or ToyBackbone()).forward(image, tape, sampling_stride)

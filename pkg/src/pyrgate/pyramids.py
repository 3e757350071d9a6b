"""
Fixed reference connectors: the classic top-down FPN and the fully connected
FPN in which every input level feeds every output level.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pyrgate import tensor as T
from pyrgate.csg import LEVELS, build_lattice, init_down_params, init_lateral_params, project_inputs
from pyrgate.errors import ConfigError
from pyrgate.ops import ConvParams, conv2d, f_up
from pyrgate.params import ParameterSet
from pyrgate.tensor import Node, Tape

CONNECTOR_KINDS = ("fpn", "fc_fpn", "dsic", "dsic_inside_fpn", "dsic_after_fpn")
MERGE_KINDS = ("sum",)


@dataclass(frozen=True)
class ConnectorTopology:
    kind: str = "dsic"
    merge: str = "sum"
    d: int = 32

    def __post_init__(self) -> None:
        if self.kind not in CONNECTOR_KINDS:
            raise ConfigError(f"unknown connector kind {self.kind!r}; expected one of {CONNECTOR_KINDS}")
        if self.merge not in MERGE_KINDS:
            raise ConfigError(f"unknown merge {self.merge!r}; expected one of {MERGE_KINDS}")
        if self.d < 1:
            raise ConfigError(f"channel width d must be positive, got {self.d}")


    @property
    def gated(self) -> bool:
        return self.kind.startswith("dsic")


def init_fpn_params(params: ParameterSet, in_channels: Sequence[int], d: int, rng: np.random.Generator,
                    smooth: bool = False, prefix: str = "fpn") -> None:
    init_lateral_params(params, prefix, in_channels, d, rng)
    if smooth:
        for k in LEVELS:
            params.add_conv(f"{prefix}.smooth{k}", d, d, 3, rng)


def init_fc_fpn_params(params: ParameterSet, in_channels: Sequence[int], d: int, rng: np.random.Generator,
                       prefix: str = "fc_fpn") -> None:
    init_lateral_params(params, prefix, in_channels, d, rng)
    init_down_params(params, prefix, d, rng)


def top_down(laterals: Sequence[Node]) -> list[Node]:
    """
    Sum-merge top-down pathway: ``P_5 = L_5``, ``P_k = L_k + up2(P_(k+1))``.
    """
    outputs = [laterals[-1]]
    for lateral in reversed(laterals[:-1]):
        outputs.insert(0, T.add(lateral, f_up(outputs[0], 1)))
    return outputs


def fpn_forward(pyramid: Sequence[Node], tape: Tape, smooth: bool = False,
                prefix: str = "fpn") -> list[Node]:
    """
    Classic FPN: 1x1 laterals to d channels and the top-down sum-merge. With
    `smooth`, a 3x3 convolution follows every merged level.
    """
    outputs = top_down(project_inputs(pyramid, tape, prefix))
    if smooth:
        outputs = [conv2d(p, ConvParams.bind(tape, f"{prefix}.smooth{k}")) for k, p in zip(LEVELS, outputs)]
    return outputs


def fc_fpn_forward(pyramid: Sequence[Node], tape: Tape, cascade_up: bool = False,
                   prefix: str = "fc_fpn") -> list[Node]:
    """
    Fully connected FPN: every output level is the sum of all laterals
    resampled to its resolution, using the cross-scale lattice.
    """
    lattice = build_lattice(project_inputs(pyramid, tape, prefix), tape, prefix, cascade_up)
    outputs = []
    for k in LEVELS:
        column = lattice.column(k)
        p_k = column[0]
        for m in column[1:]:
            p_k = T.add(p_k, m)
        outputs.append(p_k)
    return outputs

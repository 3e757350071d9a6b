"""
The trainable pyramid model: toy backbone, optional intra-scale selection,
a pluggable connector and one heatmap head per pyramid level.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logit

from pyrgate import tensor as T
from pyrgate.backbone import ToyBackbone
from pyrgate.config import RunConfig
from pyrgate.csg import LEVELS, CCUOutput, csg_forward, init_csg_params
from pyrgate.errors import ConfigError, ShapeMismatch
from pyrgate.gate import GateMode, Placement
from pyrgate.isg import ISGOutput, init_isg_params, isg_forward
from pyrgate.ops import ConvParams, conv2d
from pyrgate.params import ParameterSet
from pyrgate.pyramids import (
    fc_fpn_forward,
    fpn_forward,
    init_fc_fpn_params,
    init_fpn_params,
    top_down,
)
from pyrgate.tensor import Node, Tape

GATED_PLACEMENTS = ("pure", "inside", "after")


class Connector(abc.ABC):
    """
    Maps the four pyramid inputs to four d-channel outputs.
    """
    def __init__(self, config: RunConfig) -> None:
        self.config = config


    @abc.abstractmethod
    def init_params(self, params: ParameterSet, in_channels: Sequence[int], rng: np.random.Generator) -> None:
        pass


    @abc.abstractmethod
    def forward(self, pyramid: Sequence[Node], tape: Tape) -> tuple[list[Node], CCUOutput | None]:
        """
        Returns the output pyramid and, for gated connectors, the CCU signals.
        """


class FPNConnector(Connector):
    def init_params(self, params: ParameterSet, in_channels: Sequence[int], rng: np.random.Generator) -> None:
        init_fpn_params(params, in_channels, self.config.d, rng, smooth=self.config.fpn_smooth)


    def forward(self, pyramid: Sequence[Node], tape: Tape) -> tuple[list[Node], CCUOutput | None]:
        return fpn_forward(pyramid, tape, smooth=self.config.fpn_smooth), None


class FCFPNConnector(Connector):
    def init_params(self, params: ParameterSet, in_channels: Sequence[int], rng: np.random.Generator) -> None:
        init_fc_fpn_params(params, in_channels, self.config.d, rng)


    def forward(self, pyramid: Sequence[Node], tape: Tape) -> tuple[list[Node], CCUOutput | None]:
        return fc_fpn_forward(pyramid, tape, cascade_up=self.config.cascade_up), None


class GatedConnector(Connector):
    """
    Cross-scale selection on its own (``"pure"``), in place of the FPN
    laterals followed by the top-down merge (``"inside"``), or on the outputs
    of a full FPN (``"after"``).
    """
    def __init__(self, config: RunConfig, placement: str = "pure") -> None:
        super().__init__(config)
        if placement not in GATED_PLACEMENTS:
            raise ConfigError(f"unknown gated connector placement {placement!r}; expected one of {GATED_PLACEMENTS}")
        self.placement = placement


    def init_params(self, params: ParameterSet, in_channels: Sequence[int], rng: np.random.Generator) -> None:
        cfg = self.config
        csg_in = in_channels
        if self.placement == "after":
            init_fpn_params(params, in_channels, cfg.d, rng, smooth=cfg.fpn_smooth)
            csg_in = [cfg.d] * len(LEVELS)
        init_csg_params(params, csg_in, cfg.d, rng, ccu_hidden=cfg.ccu_hidden, gate_init_scale=cfg.gate_init_scale)


    def forward(self, pyramid: Sequence[Node], tape: Tape) -> tuple[list[Node], CCUOutput | None]:
        cfg = self.config
        if self.placement == "after":
            pyramid = fpn_forward(pyramid, tape, smooth=cfg.fpn_smooth)
        out = csg_forward(pyramid, tape, GateMode.parse(cfg.csg_mode), Placement.parse(cfg.placement),
                          cascade_up=cfg.cascade_up)
        outputs = out.pyramid
        if self.placement == "inside":
            outputs = top_down(outputs)
        return outputs, out.ccu


def make_connector(config: RunConfig) -> Connector:
    kind = config.connector
    if kind == "fpn":
        return FPNConnector(config)
    if kind == "fc_fpn":
        return FCFPNConnector(config)
    if kind == "dsic":
        return GatedConnector(config, "pure")
    if kind == "dsic_inside_fpn":
        return GatedConnector(config, "inside")
    if kind == "dsic_after_fpn":
        return GatedConnector(config, "after")
    raise ConfigError(f"unknown connector kind {kind!r}")


@dataclass
class ModelOutput:
    predictions: list[Node]
    pyramid: list[Node]
    isg: ISGOutput | None
    ccu: CCUOutput | None


class PyramidModel:
    """
    Parameters
    ----------
    config: RunConfig
        Architecture fields (connector, gates, widths, blocks) are read here;
        optimisation fields are ignored.
    """
    def __init__(self, config: RunConfig) -> None:
        self.config = config
        self.backbone = ToyBackbone(tuple(config.channels), tuple(config.blocks))
        self.connector = make_connector(config)


    def init_params(self, rng: np.random.Generator) -> ParameterSet:
        cfg = self.config
        params = ParameterSet()
        self.backbone.init_params(params, rng)
        if cfg.isg:
            init_isg_params(params, cfg.channels, cfg.blocks, cfg.sampling_stride, rng,
                            gate_init_scale=cfg.gate_init_scale)
        self.connector.init_params(params, cfg.channels, rng)
        for k in LEVELS:
            params.add_conv(f"head{k}", 1, cfg.d, 1, rng)
            # heads start near the background value of the heatmaps
            params[f"head{k}.bias"].value = np.full((1, 1, 1, 1), logit(cfg.head_prior))
        return params


    def forward(self, image: Node, tape: Tape) -> ModelOutput:
        cfg = self.config
        stages = self.backbone.forward(image, tape, cfg.sampling_stride)
        isg_out = None
        if cfg.isg:
            isg_out = isg_forward(stages, tape, GateMode.parse(cfg.isg_mode), Placement.parse(cfg.placement),
                                  fs_enabled=cfg.fs_enabled)
            pyramid = isg_out.pyramid
        else:
            pyramid = [s.last for s in stages]
        outputs, ccu_out = self.connector.forward(pyramid, tape)
        predictions = [
            T.activation("sigmoid", conv2d(p, ConvParams.bind(tape, f"head{k}")))
            for k, p in zip(LEVELS, outputs)
        ]
        return ModelOutput(predictions, outputs, isg_out, ccu_out)


    def loss(self, out: ModelOutput, targets: Sequence[np.ndarray]) -> Node:
        """
        Mean squared error per level, averaged over levels.
        """
        if len(targets) != len(out.predictions):
            raise ShapeMismatch(f"expected {len(out.predictions)} target maps, got {len(targets)}")
        total = None
        for pred, target in zip(out.predictions, targets):
            if pred.shape != target.shape:
                raise ShapeMismatch(f"prediction {pred.shape} and target {target.shape} differ")
            diff = T.sub(pred, pred.tape.constant(target))
            level = T.mean(T.hadamard(diff, diff))
            total = level if total is None else T.add(total, level)
        return T.scale(total, 1.0 / len(out.predictions))

"""
The gate operator: scale a data-flow path by a squashed control signal.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from pyrgate import tensor as T
from pyrgate.errors import ConfigError, ShapeMismatch
from pyrgate.ops import ConvParams, conv2d
from pyrgate.tensor import Node


class GateMode(str, enum.Enum):
    SOFTMAX_GROUP = "softmax_group"
    SIGMOID = "sigmoid"
    RECTIFIED_TANH = "rectified_tanh"

    @classmethod
    def parse(cls, value: "str | GateMode") -> "GateMode":
        aliases = {"softmax": "softmax_group", "tanh": "rectified_tanh"}
        if isinstance(value, cls):
            return value
        try:
            return cls(aliases.get(value, value))
        except ValueError:
            raise ConfigError(f"unknown gate mode {value!r}; expected one of "
                              f"{[m.value for m in cls]} or aliases {list(aliases)}") from None


class Placement(str, enum.Enum):
    SIGNAL = "signal"
    OUTER = "outer"

    @classmethod
    def parse(cls, value: "str | Placement") -> "Placement":
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"unknown gate placement {value!r}; expected 'signal' or 'outer'") from None


@dataclass
class GateSignal:
    """
    A control signal of shape (n, m, 1, 1) and its squashed counterpart.
    Forced signals have no raw part.
    """
    raw: Node | None
    squashed: Node


@dataclass
class AdapterSet:
    """
    Convolutions applied to the incoming flow and summed. An empty set passes
    the flow through unchanged.
    """
    convs: list[ConvParams] = field(default_factory=list)

    def __call__(self, x: Node) -> Node:
        if not self.convs:
            return x
        outs = [conv2d(x, p) for p in self.convs]
        shape = outs[0].shape
        if any(o.shape != shape for o in outs[1:]):
            raise ShapeMismatch(f"adapters disagree on output shape: {[o.shape for o in outs]}")
        result = outs[0]
        for o in outs[1:]:
            result = T.add(result, o)
        return result


def squash(raws: Sequence[Node], mode: GateMode) -> list[GateSignal]:
    """
    Apply the gate mode to a group of raw signals. Only ``softmax_group``
    couples the members of the group.
    """
    mode = GateMode.parse(mode)
    if mode is GateMode.SOFTMAX_GROUP:
        return [GateSignal(r, s) for r, s in zip(raws, T.softmax_over_group(raws))]
    return [GateSignal(r, T.activation(mode.value, r)) for r in raws]


def forced_signal(tape: T.Tape, shape: tuple[int, ...], value: float | np.ndarray) -> GateSignal:
    """A constant signal, used to pin gates open or closed."""
    return GateSignal(None, tape.constant(np.broadcast_to(np.asarray(value, dtype=np.float64), shape)))


def gate_apply(signal: GateSignal, x: Node, adapters: AdapterSet | None = None,
               mode: GateMode = GateMode.RECTIFIED_TANH,
               placement: Placement = Placement.SIGNAL) -> Node:
    """
    Gate the flow `x` after passing it through `adapters`.

    With ``placement="signal"`` the squashed signal multiplies the adapted flow
    channel-wise. With ``placement="outer"`` the raw signal multiplies the flow
    and the mode's nonlinearity is applied to the product.
    """
    placement = Placement.parse(placement)
    mode = GateMode.parse(mode)
    if placement is Placement.OUTER and mode is GateMode.SOFTMAX_GROUP:
        raise ConfigError("outer placement is not defined for softmax_group gates")

    flow = (adapters or AdapterSet())(x)
    sig = signal.squashed if placement is Placement.SIGNAL else signal.raw
    if sig is None:
        raise ValueError("outer placement needs a raw signal; forced signals only have a squashed value")
    m = sig.shape[1]
    if m not in (1, flow.shape[1]):
        raise ShapeMismatch(f"signal has {m} channels but the gated flow has {flow.shape[1]}")
    gated = T.hadamard(flow, sig)
    if placement is Placement.SIGNAL:
        return gated
    return T.activation(mode.value, gated)


def gate_openness(signal: GateSignal) -> np.ndarray:
    """
    Mean squashed value per sample and channel, shape (n, m).
    """
    return signal.squashed.value.mean(axis=(2, 3))

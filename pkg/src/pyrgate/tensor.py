"""
Dense rank-4 float64 tensors recorded on a tape for reverse-mode
differentiation.

Every value in pyrgate is a ``(batch, channels, height, width)`` float64 array.
Operations take and return :class:`Node` objects; each node remembers, for
every parent that requires a gradient, a function mapping the gradient of the
node to the gradient contribution for that parent. Nodes are appended to their
:class:`Tape` in creation order, so walking the tape backwards visits children
before parents.
"""
from __future__ import annotations

from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np
import numpy.typing as npt
from scipy.special import expit, softmax

from pyrgate.errors import NonScalarLoss, ShapeMismatch

if TYPE_CHECKING:
    from pyrgate.params import ParameterSet

Tensor4 = npt.NDArray[np.float64]
VJP = Callable[[Tensor4], Tensor4]

ELEMENTWISE_KINDS = ("add", "sub", "hadamard")
ACTIVATION_KINDS = ("tanh", "sigmoid", "relu", "rectified_tanh")


def tensor4(data, shape: tuple[int, int, int, int] | None = None) -> Tensor4:
    """
    Coerce `data` to a C-contiguous float64 array of rank 4.
    """
    arr = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    if arr.ndim != 4:
        raise ShapeMismatch(f"expected a rank-4 tensor, got shape {arr.shape}")
    return arr


class Node:
    __slots__ = ("tape", "id", "value", "parents", "requires_grad", "name")

    def __init__(self, tape: Tape, id: int, value: Tensor4,
                 parents: list[tuple[int, VJP]], requires_grad: bool,
                 name: str | None = None) -> None:
        self.tape = tape
        self.id = id
        self.value = value
        self.parents = parents
        self.requires_grad = requires_grad
        self.name = name


    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.value.shape  # type: ignore[return-value]


    def __add__(self, other: Node) -> Node:
        return elementwise("add", self, other)


    def __sub__(self, other: Node) -> Node:
        return elementwise("sub", self, other)


    def __mul__(self, other: Node) -> Node:
        return elementwise("hadamard", self, other)


    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node(id={self.id}{label}, shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    """
    Ordered record of the nodes created during one forward pass.

    Parameters
    ----------
    params: ParameterSet | None
        Named parameters that :meth:`param` binds into the tape. Each name is
        bound at most once per tape so that fan-out accumulates into a single
        node.
    """
    def __init__(self, params: ParameterSet | None = None) -> None:
        self.nodes: list[Node] = []
        self.params = params
        self._param_nodes: dict[str, Node] = {}


    def __len__(self) -> int:
        return len(self.nodes)


    def _append(self, value: Tensor4, parents: list[tuple[int, VJP]],
                requires_grad: bool, name: str | None = None) -> Node:
        node = Node(self, len(self.nodes), value, parents, requires_grad, name)
        self.nodes.append(node)
        return node


    def leaf(self, value, requires_grad: bool = True, name: str | None = None) -> Node:
        return self._append(tensor4(value), [], requires_grad, name)


    def constant(self, value) -> Node:
        return self.leaf(value, requires_grad=False)


    def zeros(self, shape: tuple[int, ...]) -> Node:
        return self.constant(np.zeros(shape))


    def full(self, shape: tuple[int, ...], fill_value: float) -> Node:
        return self.constant(np.full(shape, fill_value, dtype=np.float64))


    def param(self, name: str) -> Node:
        """
        Bind the parameter `name` from `self.params`, reusing the node if it
        was already bound on this tape.
        """
        node = self._param_nodes.get(name)
        if node is None:
            if self.params is None:
                raise KeyError(f"tape has no parameter set, cannot bind {name!r}")
            p = self.params[name]
            node = self._append(p.value, [], p.trainable, name)
            self._param_nodes[name] = node
        return node


    def param_grads(self, grads: dict[int, Tensor4]) -> dict[str, Tensor4]:
        """
        Translate a gradient map from :func:`backward` into parameter names.
        Parameters bound on this tape but unreached by the loss get zeros.
        """
        return {
            name: grads[node.id] if node.id in grads else np.zeros_like(node.value)
            for name, node in self._param_nodes.items()
            if node.requires_grad
        }


    def record(self, value: Tensor4, parents: Sequence[tuple[Node, VJP]]) -> Node:
        """
        Append an operation result. Parents that do not require gradients are
        dropped from the graph.
        """
        kept = []
        for parent, vjp in parents:
            if parent.tape is not self:
                raise ValueError("cannot combine nodes recorded on different tapes")
            if parent.requires_grad:
                kept.append((parent.id, vjp))
        return self._append(value, kept, requires_grad=bool(kept))


def _unbroadcast(grad: Tensor4, shape: tuple[int, ...]) -> Tensor4:
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        return grad.sum(axis=axes, keepdims=True)
    return grad


def _check_signal_broadcast(a_shape: tuple[int, ...], b_shape: tuple[int, ...]) -> None:
    if a_shape == b_shape:
        return
    n, c = a_shape[:2]
    if b_shape[2:] == (1, 1) and b_shape[0] in (1, n) and b_shape[1] in (1, c):
        return
    raise ShapeMismatch(f"cannot combine shapes {a_shape} and {b_shape}: "
                        "b must equal a or be a (1|n, c|1, 1, 1) signal")


def _product(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    return a.tape.record(
        av * bv,
        [(a, lambda g: _unbroadcast(g * bv, av.shape)),
         (b, lambda g: _unbroadcast(g * av, bv.shape))]
    )


def elementwise(op_kind: str, a: Node, b: Node) -> Node:
    """
    Add, subtract or multiply `b` into `a`.

    `b` must either have the shape of `a` or be a channel signal of shape
    ``(1, c, 1, 1)`` / ``(n, c, 1, 1)`` (``c`` may also be 1), which is
    broadcast over the spatial positions of `a`.
    """
    _check_signal_broadcast(a.shape, b.shape)
    av, bv = a.value, b.value
    if op_kind == "add":
        return a.tape.record(av + bv, [(a, lambda g: g), (b, lambda g: _unbroadcast(g, bv.shape))])
    if op_kind == "sub":
        return a.tape.record(av - bv, [(a, lambda g: g), (b, lambda g: -_unbroadcast(g, bv.shape))])
    if op_kind == "hadamard":
        return _product(a, b)
    raise ValueError(f"unknown elementwise op {op_kind!r}, expected one of {ELEMENTWISE_KINDS}")


def add(a: Node, b: Node) -> Node:
    return elementwise("add", a, b)


def sub(a: Node, b: Node) -> Node:
    return elementwise("sub", a, b)


def hadamard(a: Node, b: Node) -> Node:
    return elementwise("hadamard", a, b)


def hadamard_map(x: Node, m: Node) -> Node:
    """
    Multiply `x` by a single-channel spatial map of shape ``(n|1, 1, h, w)``
    broadcast over the channels of `x`.
    """
    n, _, h, w = x.shape
    if m.shape[1:] != (1, h, w) or m.shape[0] not in (1, n):
        raise ShapeMismatch(f"spatial map of shape {m.shape} does not fit tensor of shape {x.shape}")
    return _product(x, m)


def scale(x: Node, factor: float) -> Node:
    return x.tape.record(x.value * factor, [(x, lambda g: g * factor)])


def activation(kind: str, x: Node) -> Node:
    """
    Apply an elementwise nonlinearity. ``rectified_tanh`` is ``max(tanh(v), 0)``
    with subgradient 0 at ``v = 0``.
    """
    v = x.value
    if kind == "tanh":
        y = np.tanh(v)
        dy = 1.0 - y * y
    elif kind == "sigmoid":
        y = expit(v)
        dy = y * (1.0 - y)
    elif kind == "relu":
        y = np.maximum(v, 0.0)
        dy = (v > 0).astype(np.float64)
    elif kind == "rectified_tanh":
        t = np.tanh(v)
        y = np.maximum(t, 0.0)
        dy = np.where(v > 0, 1.0 - t * t, 0.0)
    else:
        raise ValueError(f"unknown activation {kind!r}, expected one of {ACTIVATION_KINDS}")
    return x.tape.record(y, [(x, lambda g: g * dy)])


def _softmax_values(stacked: np.ndarray) -> np.ndarray:
    return softmax(stacked, axis=0)


def _softmax_vjp(y: np.ndarray, i: int, j: int) -> VJP:
    delta = 1.0 if i == j else 0.0
    return lambda g: g * y[j] * (delta - y[i])


def softmax_over_group(values: Sequence[Node]) -> list[Node]:
    """
    Normalise a group of equally shaped tensors against each other: at every
    index the outputs are positive and sum to one.
    """
    if len(values) == 0:
        raise ValueError("softmax_over_group needs at least one tensor")
    shape = values[0].shape
    for v in values[1:]:
        if v.shape != shape:
            raise ShapeMismatch(f"group members have shapes {shape} and {v.shape}")
    tape = values[0].tape
    y = _softmax_values(np.stack([v.value for v in values]))
    return [
        tape.record(np.ascontiguousarray(y[j]), [(v, _softmax_vjp(y, i, j)) for i, v in enumerate(values)])
        for j in range(len(values))
    ]


def concat_channels(parts: Sequence[Node]) -> Node:
    if len(parts) == 0:
        raise ValueError("concat_channels needs at least one part")
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        if (p.shape[0], p.shape[2], p.shape[3]) != (n, h, w):
            raise ShapeMismatch(f"cannot concatenate shapes {parts[0].shape} and {p.shape} along channels")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    return parts[0].tape.record(
        np.concatenate([p.value for p in parts], axis=1),
        [(p, _channel_slicer(int(bounds[i]), int(bounds[i + 1]))) for i, p in enumerate(parts)]
    )


def _channel_slicer(start: int, stop: int) -> VJP:
    return lambda g: g[:, start:stop]


def slice_channels(x: Node, start: int, stop: int) -> Node:
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeMismatch(f"channel slice [{start}:{stop}] out of range for shape {x.shape}")

    def vjp(g: Tensor4) -> Tensor4:
        out = np.zeros(x.shape)
        out[:, start:stop] = g
        return out

    return x.tape.record(np.ascontiguousarray(x.value[:, start:stop]), [(x, vjp)])


def total(x: Node) -> Node:
    """Sum of all entries, as a (1, 1, 1, 1) tensor."""
    shape = x.shape
    return x.tape.record(
        np.full((1, 1, 1, 1), x.value.sum()),
        [(x, lambda g: np.broadcast_to(g, shape))]
    )


def mean(x: Node) -> Node:
    return scale(total(x), 1.0 / x.value.size)


def backward(tape: Tape, loss_node: Node) -> dict[int, Tensor4]:
    """
    Reverse-mode sweep from `loss_node`.

    Returns
    -------
    dict mapping node ids to gradients of the loss, for every node on the tape
    that requires a gradient and is reached from the loss. Contributions from
    several children are summed.
    """
    if loss_node.shape != (1, 1, 1, 1):
        raise NonScalarLoss(f"loss must have shape (1, 1, 1, 1), got {loss_node.shape}")
    if loss_node.tape is not tape:
        raise ValueError("loss node was not recorded on this tape")

    grads: dict[int, Tensor4] = {loss_node.id: np.ones((1, 1, 1, 1))}
    for node in reversed(tape.nodes[: loss_node.id + 1]):
        g = grads.get(node.id)
        if g is None:
            continue
        for parent_id, vjp in node.parents:
            contribution = vjp(g)
            prev = grads.get(parent_id)
            grads[parent_id] = contribution if prev is None else prev + contribution

    return {node_id: g for node_id, g in grads.items() if tape.nodes[node_id].requires_grad}

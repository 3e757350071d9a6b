"""
Central finite-difference checks of tape gradients.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from pyrgate import tensor as T
from pyrgate.params import ParameterSet
from pyrgate.tensor import Node, Tape


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: str
    n_checked: int
    n_skipped: int = 0

    def passed(self, rtol: float = 1e-4) -> bool:
        return self.max_rel_error <= rtol


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(fn: Callable[[Tape, list[Node]], Node], inputs: Sequence[np.ndarray],
                    rng: np.random.Generator, params: ParameterSet | None = None,
                    param_names: Sequence[str] = (), n_coords: int = 10,
                    eps: float = 1e-3, floor: float = 1e-6,
                    skip_kinks: bool = False, kink_rtol: float = 1e-5) -> GradCheckResult:
    """
    Compare analytic and central-difference gradients of ``fn``.

    `fn` receives a fresh tape (bound to `params`) and one leaf per input and
    may return a tensor of any shape; it is reduced to a scalar by a fixed
    random projection. For every input and every name in `param_names`, up to
    `n_coords` random coordinates are perturbed by ``+-eps``.

    Parameters
    ----------
    skip_kinks: bool
        Reject coordinates whose ``+-eps`` interval straddles a point where the
        function is not differentiable (a rectifier or max switching) and draw
        another. A coordinate is kept when the central differences at
        ``eps / 10`` and ``eps / 100`` agree with the one at `eps` to within
        `kink_rtol`, relative, and the one-sided slopes at ``eps / 100`` do
        not differ by a jump that survives the step reduction.

    Returns
    -------
    The largest relative error ``|a - n| / max(|a|, |n|, floor)``, where it
    occurred and how many coordinates were compared and skipped.
    """
    projection: list[np.ndarray] = []

    def loss_of(arrays: Sequence[np.ndarray]) -> tuple[Tape, list[Node], Node]:
        tape = Tape(params)
        nodes = [tape.leaf(a) for a in arrays]
        out = fn(tape, nodes)
        if not projection:
            projection.append(rng.standard_normal(out.shape))
        return tape, nodes, T.total(T.hadamard(out, tape.constant(projection[0])))

    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    tape, nodes, loss = loss_of(arrays)
    grads = T.backward(tape, loss)
    by_name = tape.param_grads(grads)

    base = loss.value.item()

    def evaluate_at(flat: np.ndarray, c: int, value: float) -> float:
        orig = flat[c]
        flat[c] = value
        try:
            return loss_of(arrays)[2].value.item()
        finally:
            flat[c] = orig

    def differences(flat: np.ndarray, c: int, h: float) -> tuple[float, float]:
        x = flat[c]
        plus, minus = evaluate_at(flat, c, x + h), evaluate_at(flat, c, x - h)
        return (plus - minus) / (2 * h), (plus - base) / h - (base - minus) / h

    def numeric(flat: np.ndarray, c: int) -> float | None:
        central, _ = differences(flat, c, eps)
        if not skip_kinks:
            return central
        tol = kink_rtol * max(abs(central), floor)
        mid, jump_mid = differences(flat, c, eps / 10)
        fine, jump_fine = differences(flat, c, eps / 100)
        # a kink away from x shifts the central difference as the step shrinks
        if abs(mid - central) > tol or abs(fine - central) > tol:
            return None
        # a kink at x leaves a slope jump that does not shrink with the step
        if abs(jump_fine) / 2 > tol and abs(jump_fine) > 0.5 * abs(jump_mid):
            return None
        return central

    targets: list[tuple[str, np.ndarray, np.ndarray]] = []
    for idx, (x, node) in enumerate(zip(arrays, nodes)):
        targets.append((f"input{idx}", x, grads.get(node.id, np.zeros_like(x))))
    for name in param_names:
        if params is None:
            raise KeyError(f"cannot check parameter {name!r} without a parameter set")
        targets.append((name, params[name].value, by_name.get(name, np.zeros_like(params[name].value))))

    worst, where, count, skipped = 0.0, "", 0, 0
    for label, array, analytic in targets:
        flat = array.reshape(-1)
        accepted = 0
        for c in rng.permutation(array.size)[: 4 * n_coords]:
            if accepted == n_coords:
                break
            value = numeric(flat, int(c))
            if value is None:
                skipped += 1
                continue
            accepted += 1
            err = relative_error(float(analytic.reshape(-1)[c]), value, floor)
            if err > worst or not where:
                worst, where = err, f"{label}[{int(c)}]"
        count += accepted
    if count == 0:
        return GradCheckResult(float("inf"), "no smooth coordinates", 0, skipped)
    return GradCheckResult(worst, where, count, skipped)

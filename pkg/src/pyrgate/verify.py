"""
Self-checks of the numerical kernels and the module equivalences, with
optional fault injection to confirm that each check can fail.
"""
from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence
from unittest import mock

import numpy as np

from pyrgate import ops
from pyrgate import tensor as T
from pyrgate.config import RunConfig
from pyrgate.csg import LEVELS, csg_forward, init_csg_params, init_down_params, init_lateral_params
from pyrgate.data import generate_sample
from pyrgate.gate import AdapterSet, GateMode, Placement, gate_apply, squash
from pyrgate.gradcheck import check_gradients
from pyrgate.isg import StageBlocks, coarse_select, fine_select, init_isg_params, isg_forward
from pyrgate.model import PyramidModel
from pyrgate.ops import ConvParams
from pyrgate.params import ParameterSet
from pyrgate.pyramids import fc_fpn_forward, fpn_forward
from pyrgate.tensor import Tape

logger = logging.getLogger(__name__)

UNIT_RTOL = 1e-4
END_TO_END_RTOL = 1e-3
EQUIVALENCE_ATOL = 1e-9
CHECK_SEEDS = (0, 1, 2)
FAULTS = ("bilinear", "softmax", "detach")

CheckFn = Callable[[np.random.Generator], tuple[bool, str]]
CHECKS: dict[str, CheckFn] = {}


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def check(name: str) -> Callable[[CheckFn], CheckFn]:
    def register(fn: CheckFn) -> CheckFn:
        CHECKS[name] = fn
        return fn
    return register


def _grad_outcome(results, rtol: float = UNIT_RTOL) -> tuple[bool, str]:
    worst = max(results, key=lambda r: r.max_rel_error)
    return all(r.passed(rtol) for r in results), f"max rel error {worst.max_rel_error:.2e} at {worst.worst}"


def _pyramid(rng: np.random.Generator, channels: Sequence[int], size: int = 8, n: int = 1) -> list[np.ndarray]:
    return [rng.standard_normal((n, c, size >> j, size >> j)) for j, c in enumerate(channels)]


def reference_upsample(x: np.ndarray, factor: int) -> np.ndarray:
    """
    Per-pixel bilinear interpolation with half-pixel centres and edge
    clamping, written without interpolation matrices.
    """
    n, c, h, w = x.shape
    out = np.zeros((n, c, h * factor, w * factor))

    def taps(j: int, size: int) -> tuple[int, int, float]:
        src = min(max((j + 0.5) / factor - 0.5, 0.0), size - 1.0)
        i0 = int(np.floor(src))
        return i0, min(i0 + 1, size - 1), src - i0

    for oy in range(h * factor):
        y0, y1, fy = taps(oy, h)
        for ox in range(w * factor):
            x0, x1, fx = taps(ox, w)
            out[:, :, oy, ox] = ((1 - fy) * (1 - fx) * x[:, :, y0, x0] + (1 - fy) * fx * x[:, :, y0, x1]
                                 + fy * (1 - fx) * x[:, :, y1, x0] + fy * fx * x[:, :, y1, x1])
    return out


@check("elementwise_gradient")
def _elementwise_gradient(rng: np.random.Generator) -> tuple[bool, str]:
    def fn(tape, nodes):
        a, b, s = nodes
        return T.add(T.hadamard(T.add(a, b), s), T.sub(a, s))

    shapes = [(2, 3, 4, 4), (2, 3, 4, 4), (2, 3, 1, 1)]
    return _grad_outcome([check_gradients(fn, [rng.standard_normal(s) for s in shapes], rng)])


@check("activation_gradient")
def _activation_gradient(rng: np.random.Generator) -> tuple[bool, str]:
    results = []
    for kind in T.ACTIVATION_KINDS:
        x = rng.standard_normal((2, 3, 3, 3))
        x = np.sign(x) * (np.abs(x) + 0.05)
        results.append(check_gradients(lambda tape, nodes, kind=kind: T.activation(kind, nodes[0]), [x], rng))
    return _grad_outcome(results)


@check("conv2d_gradient")
def _conv2d_gradient(rng: np.random.Generator) -> tuple[bool, str]:
    results = []
    for k, stride in ((3, 1), (3, 2), (1, 1)):
        def fn(tape, nodes, stride=stride, k=k):
            x, w, b = nodes
            return ops.conv2d(x, ConvParams(w, b, stride, k // 2))

        inputs = [rng.standard_normal((2, 3, 6, 6)), rng.standard_normal((4, 3, k, k)),
                  rng.standard_normal((1, 4, 1, 1))]
        results.append(check_gradients(fn, inputs, rng))
    return _grad_outcome(results)


@check("bilinear_gradient")
def _bilinear_gradient(rng: np.random.Generator) -> tuple[bool, str]:
    results = [
        check_gradients(lambda tape, nodes, f=f: ops.bilinear_upsample(nodes[0], f),
                        [rng.standard_normal((1, 2, 3, 3))], rng)
        for f in ops.UPSAMPLE_FACTORS
    ]
    return _grad_outcome(results)


@check("pool_normalize_gradient")
def _pool_normalize_gradient(rng: np.random.Generator) -> tuple[bool, str]:
    # distinct values 0.01 apart keep the max position fixed under +-eps
    spread = rng.permutation(2 * 3 * 4 * 4).reshape(2, 3, 4, 4) * 0.01
    results = [check_gradients(lambda tape, nodes, kind=kind: ops.global_pool(kind, nodes[0]), [spread], rng)
               for kind in ("avg", "max")]
    results.append(check_gradients(lambda tape, nodes: ops.channel_l2_normalize(nodes[0]),
                                   [rng.standard_normal((2, 3, 4, 4))], rng))
    return _grad_outcome(results)


@check("softmax_normalization")
def _softmax_normalization(rng: np.random.Generator) -> tuple[bool, str]:
    worst = 0.0
    tape = Tape()
    for _ in range(100):
        raws = [tape.constant(rng.standard_normal((2, 1, 1, 1)) * 5) for _ in LEVELS]
        total = sum(s.squashed.value for s in squash(raws, GateMode.SOFTMAX_GROUP))
        worst = max(worst, float(np.abs(total - 1.0).max()))
    params = ParameterSet()
    init_csg_params(params, (2, 3, 4, 5), 3, rng, ccu_hidden=4, gate_init_scale=1.0)
    tape = Tape(params)
    out = csg_forward([tape.constant(x) for x in _pyramid(rng, (2, 3, 4, 5), n=2)], tape, GateMode.SOFTMAX_GROUP)
    for k in LEVELS:
        total = sum(out.ccu.w[(i, k)].squashed.value for i in LEVELS)
        worst = max(worst, float(np.abs(total - 1.0).max()))
    return worst <= 1e-12, f"max deviation from 1: {worst:.2e}"


@check("softmax_gradient")
def _softmax_gradient(rng: np.random.Generator) -> tuple[bool, str]:
    def fn(tape, nodes):
        parts = T.softmax_over_group(nodes)
        return T.concat_channels(parts)

    return _grad_outcome([check_gradients(fn, [rng.standard_normal((2, 3, 1, 1)) for _ in range(4)], rng)])


@check("gate_gradient")
def _gate_gradient(rng: np.random.Generator) -> tuple[bool, str]:
    results = []
    for placement in (Placement.SIGNAL, Placement.OUTER):
        def fn(tape, nodes, placement=placement):
            raw, x, w, b = nodes
            sig = squash([raw], GateMode.SIGMOID)[0]
            return gate_apply(sig, x, AdapterSet([ConvParams(w, b, 1, 1)]), GateMode.SIGMOID, placement)

        inputs = [rng.standard_normal((2, 3, 1, 1)), rng.standard_normal((2, 2, 4, 4)),
                  rng.standard_normal((3, 2, 3, 3)), rng.standard_normal((1, 3, 1, 1))]
        results.append(check_gradients(fn, inputs, rng))
    return _grad_outcome(results)


def _stage_inputs(rng: np.random.Generator, n_blocks: int, c: int = 3, size: int = 4) -> list[np.ndarray]:
    blocks = [rng.standard_normal((2, c, size, size)) for _ in range(n_blocks)]
    for b in blocks:
        # a dominant corner fixes the global max position
        b[:, :, 0, 0] += 8.0
    return blocks


@check("isg_gradient")
def _isg_gradient(rng: np.random.Generator) -> tuple[bool, str]:
    params = ParameterSet()
    init_isg_params(params, (3, 3, 3, 3), (3, 1, 1, 1), 1, rng, gate_init_scale=1.0)
    results = []
    for mode in (GateMode.SIGMOID, GateMode.SOFTMAX_GROUP, GateMode.RECTIFIED_TANH):
        def fn(tape, nodes, mode=mode):
            stage = StageBlocks(2, list(nodes))
            cs = coarse_select(stage, tape, mode)
            return fine_select(cs, stage.last, mode).selected

        results.append(check_gradients(fn, _stage_inputs(rng, 3), rng, params,
                                       ["isg.stage2.reduce.weight", "isg.stage2.proj1.weight"],
                                       skip_kinks=True))
    return _grad_outcome(results)


@check("isg_closed_gates")
def _isg_closed_gates(rng: np.random.Generator) -> tuple[bool, str]:
    tape = Tape()
    stages = [StageBlocks(i, [tape.constant(rng.standard_normal((2, 2, 16 >> j, 16 >> j))) for _ in range(n)], s)
              for j, (i, n, s) in enumerate(zip((2, 3, 4, 5), (3, 4, 2, 1), (1, 2, 1, 2)))]
    for fs_enabled in (True, False):
        out = isg_forward(stages, tape, fs_enabled=fs_enabled, force_b=0.0, force_a=0.0)
        for stage, selected in zip(stages, out.pyramid):
            if not np.array_equal(selected.value, stage.last.value):
                return False, f"stage {stage.stage_index} differs from its last block (fs_enabled={fs_enabled})"
    return True, "closed coarse gates reproduce the last blocks exactly"


@check("csg_gradient")
def _csg_gradient(rng: np.random.Generator) -> tuple[bool, str]:
    params = ParameterSet()
    init_csg_params(params, (2, 2, 2, 2), 2, rng, ccu_hidden=3, gate_init_scale=1.0)
    results = []
    for mode in (GateMode.SIGMOID, GateMode.SOFTMAX_GROUP):
        results.append(check_gradients(
            lambda tape, nodes, mode=mode: T.concat_channels(
                [ops.global_pool("avg", p) for p in csg_forward(nodes, tape, mode).pyramid]),
            _pyramid(rng, (2, 2, 2, 2)), rng, params,
            ["csg.ccu2.signal.weight", "csg.ccu3.map4.weight", "csg.down24.1.weight"],
            skip_kinks=True,
        ))
    return _grad_outcome(results)


def _lateral_values(params: ParameterSet, prefix: str, pyramid: Sequence[np.ndarray]) -> list[np.ndarray]:
    return [
        np.einsum("oc,nchw->nohw", params[f"{prefix}.lateral{k}.weight"].value[:, :, 0, 0], x)
        + params[f"{prefix}.lateral{k}.bias"].value
        for k, x in zip(LEVELS, pyramid)
    ]


@check("fpn_unrolled_equivalence")
def _fpn_unrolled(rng: np.random.Generator) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(10):
        params = ParameterSet()
        init_lateral_params(params, "fpn", (2, 3, 4, 5), 3, rng)
        pyramid = _pyramid(rng, (2, 3, 4, 5))
        tape = Tape(params)
        out = fpn_forward([tape.constant(x) for x in pyramid], tape)
        laterals = _lateral_values(params, "fpn", pyramid)
        for a, k in enumerate(LEVELS):
            expected = np.zeros_like(laterals[a])
            for b in range(a, len(LEVELS)):
                term = laterals[b]
                for _ in range(b - a):
                    term = reference_upsample(term, 2)
                expected = expected + term
            worst = max(worst, float(np.abs(out[a].value - expected).max()))
    return worst <= 1e-10, f"max abs difference {worst:.2e}"


@check("bilinear_oracle")
def _bilinear_oracle(rng: np.random.Generator) -> tuple[bool, str]:
    tape = Tape()
    hand = ops.bilinear_upsample(tape.constant(np.array([[[[0.0, 1.0], [2.0, 3.0]]]])), 2).value[0, 0]
    expected = np.array([[0.0, 0.25, 0.75, 1.0], [0.5, 0.75, 1.25, 1.5],
                         [1.5, 1.75, 2.25, 2.5], [2.0, 2.25, 2.75, 3.0]])
    err = float(np.abs(hand - expected).max())
    for factor in ops.UPSAMPLE_FACTORS:
        x = rng.standard_normal((1, 2, 3, 2))
        out = ops.bilinear_upsample(tape.constant(x), factor).value
        err = max(err, float(np.abs(out - reference_upsample(x, factor)).max()))
    return err <= 1e-12, f"max abs error {err:.2e}"


def _equivalence_params(rng: np.random.Generator) -> ParameterSet:
    params = ParameterSet()
    init_lateral_params(params, "csg", (2, 3, 4, 5), 3, rng)
    init_down_params(params, "csg", 3, rng)
    return params


@check("fpn_subset_equivalence")
def _fpn_subset(rng: np.random.Generator) -> tuple[bool, str]:
    kronecker = np.array([[1.0 if i >= k else 0.0 for k in LEVELS] for i in LEVELS])
    worst = 0.0
    for _ in range(10):
        params = _equivalence_params(rng)
        tape = Tape(params)
        pyramid = [tape.constant(x) for x in _pyramid(rng, (2, 3, 4, 5))]
        gated = csg_forward(pyramid, tape, force_w=kronecker, force_s=1.0, cascade_up=True)
        reference = fpn_forward(pyramid, tape, prefix="csg")
        for p, q in zip(gated.pyramid, reference):
            worst = max(worst, float(np.abs(p.value - q.value).max()))
    return worst <= EQUIVALENCE_ATOL, f"max abs difference {worst:.2e}"


@check("fc_fpn_superset_equivalence")
def _fc_fpn_superset(rng: np.random.Generator) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(10):
        params = _equivalence_params(rng)
        tape = Tape(params)
        pyramid = [tape.constant(x) for x in _pyramid(rng, (2, 3, 4, 5))]
        gated = csg_forward(pyramid, tape, force_w=1.0, force_s=1.0)
        reference = fc_fpn_forward(pyramid, tape, prefix="csg")
        for p, q in zip(gated.pyramid, reference):
            worst = max(worst, float(np.abs(p.value - q.value).max()))
    return worst <= EQUIVALENCE_ATOL, f"max abs difference {worst:.2e}"


def tiny_config(**changes) -> RunConfig:
    """A small dsic configuration for end-to-end checks."""
    values = dict(channels=[2, 3, 3, 4], blocks=[2, 3, 1, 2], d=3, ccu_hidden=3, image_size=32,
                  gate_init_scale=1.0, isg_mode="sigmoid", csg_mode="sigmoid")
    values.update(changes)
    return RunConfig(**values)


@check("end_to_end_gradient")
def _end_to_end_gradient(rng: np.random.Generator) -> tuple[bool, str]:
    config = tiny_config()
    model = PyramidModel(config)
    params = model.init_params(rng)
    sample = generate_sample(int(rng.integers(0, 10 ** 6)), image_size=config.image_size)
    names = list(params)
    chosen = [names[i] for i in rng.choice(len(names), size=20, replace=False)]

    def fn(tape, nodes):
        return model.loss(model.forward(nodes[0], tape), sample.targets)

    result = check_gradients(fn, [sample.image], rng, params, chosen, n_coords=1, skip_kinks=True)
    return _grad_outcome([result], END_TO_END_RTOL)


@contextlib.contextmanager
def inject_fault(fault: str | None) -> Iterator[None]:
    """
    Temporarily break one kernel: bilinear weights scaled by 1.01, softmax
    left unnormalised, or the broadcast gradient reduction returning zeros.
    """
    if fault is None:
        yield
        return
    if fault == "bilinear":
        original = ops._bilinear_matrix
        patch = mock.patch.object(ops, "_bilinear_matrix", lambda size, factor: original(size, factor) * 1.01)
    elif fault == "softmax":
        patch = mock.patch.object(T, "_softmax_values", lambda stacked: np.exp(stacked - stacked.max(axis=0)))
    elif fault == "detach":
        patch = mock.patch.object(T, "_unbroadcast", lambda grad, shape: np.zeros(shape))
    else:
        raise ValueError(f"unknown fault {fault!r}; expected one of {FAULTS}")
    with patch:
        yield


def run_checks(fault: str | None = None, seeds: Sequence[int] = CHECK_SEEDS,
               names: Sequence[str] | None = None) -> list[CheckResult]:
    """
    Run every registered check (or those in `names`) once per seed; a check
    passes only if it passes for all seeds.
    """
    results = []
    with inject_fault(fault):
        for name in names or list(CHECKS):
            passed, detail = True, ""
            for seed in seeds:
                ok, detail = CHECKS[name](np.random.default_rng(seed))
                if not ok:
                    passed, detail = False, f"seed {seed}: {detail}"
                    break
            logger.debug("check %s: %s", name, detail)
            results.append(CheckResult(name, passed, detail))
    return results

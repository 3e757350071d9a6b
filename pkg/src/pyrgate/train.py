"""
Training, evaluation and ablation runs on the synthetic blob data.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
import numpy as np
import polars as pl
from joblib import Parallel, delayed

from pyrgate.config import RunConfig
from pyrgate.data import VAL_SEED_OFFSET, SynthSample, generate_sample
from pyrgate.errors import ConfigError
from pyrgate.metrics import score_sample, summarize
from pyrgate.model import PyramidModel
from pyrgate.params import ParameterSet
from pyrgate.records import GateRecord, gate_records, records_frame
from pyrgate.tensor import Tape, backward

logger = logging.getLogger(__name__)

TRAIN_SEED_RANGE = 10 ** 6
ABLATION_AXES = ("component", "stride", "fs", "csg_placement", "mode")
MODES = ("softmax_group", "sigmoid", "rectified_tanh")


@dataclass
class TrainState:
    config: RunConfig
    params: ParameterSet
    velocity: dict[str, np.ndarray]
    rng: np.random.Generator
    step: int = 0
    loss_history: list[float] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)
    records: list[tuple[int, GateRecord]] = field(default_factory=list)

    def metrics_frame(self) -> pl.DataFrame:
        return pl.DataFrame(self.log, schema={"step": pl.Int64, "loss": pl.Float64, "lr": pl.Float64}, orient="row")


    def records_frame(self) -> pl.DataFrame:
        """Gate records of every recorded step; sample ids read ``step<t>/seed<s>``."""
        return records_frame([rec for _, rec in self.records])


def init_state(config: RunConfig) -> TrainState:
    """
    Fresh parameters and optimiser state. Parameter initialisation and data
    sampling draw from two independent streams of the run seed.
    """
    model = PyramidModel(config)
    params = model.init_params(np.random.default_rng([config.seed, 0]))
    velocity = {name: np.zeros_like(p.value) for name, p in params.items() if p.trainable}
    return TrainState(config, params, velocity, np.random.default_rng([config.seed, 1]))


def learning_rate(config: RunConfig, step: int) -> float:
    """Step decay by `lr_decay` at each milestone fraction of the run."""
    passed = sum(step >= round(m * config.steps) for m in config.lr_milestones)
    return config.lr * config.lr_decay ** passed


def sgd_update(params: ParameterSet, velocity: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               lr: float, momentum: float, weight_decay: float) -> None:
    """
    Heavy-ball momentum with L2 weight decay:
    ``v = momentum * v + g + weight_decay * w``; ``w = w - lr * v``.
    """
    for name, g in grads.items():
        p = params[name]
        v = momentum * velocity[name] + g + weight_decay * p.value
        velocity[name] = v
        p.value = p.value - lr * v


def sample_gradients(model: PyramidModel, params: ParameterSet,
                     sample: SynthSample) -> tuple[float, dict[str, np.ndarray], GateRecord]:
    """
    Forward and backward pass for one sample on its own tape.
    """
    tape = Tape(params)
    out = model.forward(tape.constant(sample.image), tape)
    loss = model.loss(out, sample.targets)
    grads = tape.param_grads(backward(tape, loss))
    record = gate_records([f"seed{sample.seed}"], out.isg, out.ccu)[0]
    return float(loss.value.item()), grads, record


def batch_gradients(model: PyramidModel, params: ParameterSet,
                    samples: list[SynthSample]) -> tuple[float, dict[str, np.ndarray], list[GateRecord]]:
    """
    Forward and backward pass for a whole batch stacked along the sample axis
    of one tape. The loss and gradients are batch means.
    """
    tape = Tape(params)
    image = np.concatenate([s.image for s in samples])
    targets = [np.concatenate(level) for level in zip(*(s.targets for s in samples))]
    out = model.forward(tape.constant(image), tape)
    loss = model.loss(out, targets)
    grads = tape.param_grads(backward(tape, loss))
    records = gate_records([f"seed{s.seed}" for s in samples], out.isg, out.ccu)
    return float(loss.value.item()), grads, records


def _batch_gradients(model: PyramidModel, params: ParameterSet, samples: list[SynthSample],
                     workers: int) -> tuple[float, dict[str, np.ndarray], list[GateRecord]]:
    if workers == 1:
        return batch_gradients(model, params, samples)
    results = Parallel(n_jobs=workers, prefer="threads")(
        delayed(sample_gradients)(model, params, s) for s in samples
    )
    n = len(samples)
    grads = {}
    for _, g, _ in results:
        for name, value in g.items():
            grads[name] = value if name not in grads else grads[name] + value
    return (
        sum(loss for loss, _, _ in results) / n,
        {name: value / n for name, value in grads.items()},
        [rec for _, _, rec in results],
    )


def train(config: RunConfig) -> TrainState:
    """
    Run `config.steps` SGD updates on freshly drawn batches.

    The loss is logged at step 0, every `log_every` steps and at the final
    step; the loss at step t is measured with the parameters after t updates.
    Gate records are kept every `record_every` steps.
    """
    state = init_state(config)
    model = PyramidModel(config)
    blob_count = (config.blob_count[0], config.blob_count[1])
    logger.info("training %s for %d steps, %d trainable parameters",
                config.connector, config.steps, state.params.n_parameters())
    for step in range(config.steps + 1):
        lr = learning_rate(config, step)
        seeds = state.rng.integers(0, TRAIN_SEED_RANGE, size=config.batch_size)
        samples = [generate_sample(int(s), blob_count, config.image_size) for s in seeds]
        loss, grads, records = _batch_gradients(model, state.params, samples, config.workers)
        if not np.isfinite(loss):
            raise FloatingPointError(f"loss became {loss} at step {step}")
        state.loss_history.append(loss)
        if step % config.log_every == 0 or step == config.steps:
            state.log.append({"step": step, "loss": loss, "lr": lr})
            logger.info("step %d loss %.6f lr %.5f", step, loss, lr)
        if step % config.record_every == 0:
            for rec in records:
                rec.sample_id = f"step{step}/{rec.sample_id}"
                state.records.append((step, rec))
        if step < config.steps:
            sgd_update(state.params, state.velocity, grads, lr, config.momentum, config.weight_decay)
            state.step += 1
    return state


def predict(model: PyramidModel, params: ParameterSet,
            sample: SynthSample) -> tuple[list[np.ndarray], GateRecord]:
    tape = Tape(params)
    out = model.forward(tape.constant(sample.image), tape)
    record = gate_records([f"seed{sample.seed}"], out.isg, out.ccu)[0]
    return [p.value for p in out.predictions], record


def evaluate_params(config: RunConfig, params: ParameterSet, n_val: int | None = None) -> pl.DataFrame:
    """
    Per-sample, per-level scores on the validation seeds
    ``VAL_SEED_OFFSET .. VAL_SEED_OFFSET + n_val - 1``.
    """
    model = PyramidModel(config)
    n_val = config.n_val if n_val is None else n_val
    blob_count = (config.blob_count[0], config.blob_count[1])
    rows = []
    for j in range(n_val):
        sample = generate_sample(VAL_SEED_OFFSET + j, blob_count, config.image_size)
        predictions, _ = predict(model, params, sample)
        rows += score_sample(predictions, sample)
    return pl.DataFrame(rows, schema={"sample": pl.Int64, "level": pl.Int64, "mse": pl.Float64,
                                      "tp": pl.Int64, "n_pred": pl.Int64, "n_true": pl.Int64}, orient="row")


def evaluate(state: TrainState, n_val: int | None = None) -> dict[str, float]:
    """
    Validation metrics: MSE and center-detection F1 overall and per level.
    """
    return summarize(evaluate_params(state.config, state.params, n_val))


def ablation_arms(axis: str, config: RunConfig) -> list[tuple[str, RunConfig]]:
    """
    Named configurations compared along `axis`. Every arm inherits the
    optimisation settings and seeds of `config`.
    """
    base = config.replace(connector="fpn", isg=False)
    with_isg = base.replace(isg=True)
    if axis == "component":
        arms = [("baseline", base), ("+isg", with_isg),
                ("+csg", base.replace(connector="dsic")), ("+both", with_isg.replace(connector="dsic"))]
    elif axis == "stride":
        arms = [("baseline", base)] + [(f"stride{s}", with_isg.replace(sampling_stride=s)) for s in (1, 2)]
    elif axis == "fs":
        arms = [("baseline", base), ("isg_without_fs", with_isg.replace(fs_enabled=False)),
                ("isg", with_isg.replace(fs_enabled=True))]
    elif axis == "csg_placement":
        arms = [("baseline", base), ("pure", base.replace(connector="dsic")),
                ("inside", base.replace(connector="dsic_inside_fpn")),
                ("after", base.replace(connector="dsic_after_fpn"))]
    elif axis == "mode":
        arms = [(f"isg:{m}", with_isg.replace(isg_mode=m)) for m in MODES]
        arms += [(f"csg:{m}", base.replace(connector="dsic", csg_mode=m)) for m in MODES]
    else:
        raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")
    return arms


def ablate(axis: str, config: RunConfig) -> pl.DataFrame:
    """
    Train and evaluate every arm of `axis` once per seed in `config.seeds`.

    Returns
    -------
    One row per arm with its settings, trainable parameter count and the
    median over seeds of the final training loss and validation metrics.
    """
    arms = ablation_arms(axis, config)
    rows = []
    for name, arm in arms:
        runs = []
        for seed in arm.seeds:
            state = train(arm.replace(seed=seed))
            metrics = evaluate(state)
            metrics["final_loss"] = state.loss_history[-1]
            runs.append(metrics)
        row = {
            "arm": name,
            "connector": arm.connector,
            "isg": arm.isg,
            "isg_mode": arm.isg_mode,
            "csg_mode": arm.csg_mode,
            "sampling_stride": arm.sampling_stride,
            "fs_enabled": arm.fs_enabled,
            "n_params": PyramidModel(arm).init_params(np.random.default_rng(0)).n_parameters(),
        }
        for key in runs[0]:
            row[key] = float(np.median([r[key] for r in runs]))
        logger.info("arm %s: val mse %.6f f1 %.4f", name, row["mse"], row["f1"])
        rows.append(row)
    return pl.DataFrame(rows)

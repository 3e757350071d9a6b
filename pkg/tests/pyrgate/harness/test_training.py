# Tests for pyrgate.train

import numpy as np
import pytest
from polars.testing import assert_frame_equal
from pyrgate.data import generate_sample
from pyrgate.errors import ConfigError
from pyrgate.model import PyramidModel
from pyrgate.params import ParameterSet
from pyrgate.train import (
    ABLATION_AXES,
    ablate,
    ablation_arms,
    batch_gradients,
    evaluate,
    init_state,
    learning_rate,
    sample_gradients,
    sgd_update,
    train,
)


def test_learning_rate_schedule(tiny_config):
    config = tiny_config.replace(steps=9, lr=0.1)

    rates = [learning_rate(config, t) for t in range(10)]

    assert rates[:6] == [0.1] * 6
    assert rates[6:8] == pytest.approx([0.01, 0.01])
    assert rates[8:] == pytest.approx([0.001, 0.001])


def test_sgd_update():
    params = ParameterSet()
    params.add("w", np.ones((1, 1, 1, 1)))
    velocity = {"w": np.zeros((1, 1, 1, 1))}

    sgd_update(params, velocity, {"w": np.full((1, 1, 1, 1), 2.0)}, lr=0.1, momentum=0.9, weight_decay=0.01)
    assert params["w"].value.item() == pytest.approx(0.799)
    assert velocity["w"].item() == pytest.approx(2.01)

    sgd_update(params, velocity, {"w": np.zeros((1, 1, 1, 1))}, lr=0.1, momentum=0.9, weight_decay=0.01)
    assert params["w"].value.item() == pytest.approx(0.617301)


def test_zero_steps_logs_initial_loss(tiny_config):
    config = tiny_config.replace(steps=0)

    state = train(config)

    initial = init_state(config).params
    assert state.step == 0
    assert state.metrics_frame()["step"].to_list() == [0]
    assert len(state.loss_history) == 1
    assert all(np.array_equal(state.params[name].value, p.value) for name, p in initial.items())
    assert state.records_frame()["sample_id"].str.starts_with("step0/seed").all()


def test_training_log_cadence(tiny_config):
    state = train(tiny_config.replace(steps=5))

    frame = state.metrics_frame()
    assert frame.columns == ["step", "loss", "lr"]
    assert frame["step"].to_list() == [0, 2, 4, 5]
    assert len(state.loss_history) == 6
    assert {r.split("/")[0] for r in state.records_frame()["sample_id"]} == {"step0", "step2", "step4"}
    assert np.isfinite(state.loss_history).all()


def test_training_is_deterministic(tiny_config):
    a, b = train(tiny_config), train(tiny_config)

    assert a.loss_history == b.loss_history
    assert_frame_equal(a.metrics_frame(), b.metrics_frame())
    assert all(np.array_equal(a.params[name].value, b.params[name].value) for name in a.params)


def test_parallel_workers_match_sequential(tiny_config):
    sequential = train(tiny_config.replace(steps=2))
    parallel = train(tiny_config.replace(steps=2, workers=2))

    assert parallel.loss_history == pytest.approx(sequential.loss_history, rel=1e-9)


def test_batched_step_matches_per_sample_mean(tiny_config):
    model = PyramidModel(tiny_config)
    params = init_state(tiny_config).params
    samples = [generate_sample(seed, image_size=tiny_config.image_size) for seed in (5, 6, 7)]

    loss, grads, records = batch_gradients(model, params, samples)
    singles = [sample_gradients(model, params, s) for s in samples]

    assert loss == pytest.approx(np.mean([s[0] for s in singles]), rel=1e-12)
    for name, value in grads.items():
        np.testing.assert_allclose(value, np.mean([s[1][name] for s in singles], axis=0), rtol=1e-9, atol=1e-14)
    assert [r.sample_id for r in records] == ["seed5", "seed6", "seed7"]
    for batched, single in zip(records, singles):
        np.testing.assert_allclose(batched.csg_w, single[2].csg_w, atol=1e-12)


def test_evaluate_fresh_state(tiny_config):
    metrics = evaluate(init_state(tiny_config), n_val=2)

    assert set(metrics) >= {"mse", "f1", "mse_level2", "f1_level5"}
    assert 0.0 <= metrics["f1"] <= 1.0
    assert metrics["mse"] > 0.0


@pytest.mark.parametrize("axis, names", [
    ("component", ["baseline", "+isg", "+csg", "+both"]),
    ("stride", ["baseline", "stride1", "stride2"]),
    ("fs", ["baseline", "isg_without_fs", "isg"]),
    ("csg_placement", ["baseline", "pure", "inside", "after"]),
    ("mode", ["isg:softmax_group", "isg:sigmoid", "isg:rectified_tanh",
              "csg:softmax_group", "csg:sigmoid", "csg:rectified_tanh"]),
])
def test_ablation_arms(tiny_config, axis, names):
    arms = ablation_arms(axis, tiny_config)

    assert [name for name, _ in arms] == names
    assert all(arm.seeds == tiny_config.seeds and arm.steps == tiny_config.steps for _, arm in arms)
    assert axis in ABLATION_AXES


def test_ablation_baseline_is_plain_fpn(tiny_config):
    _, base = ablation_arms("component", tiny_config)[0]

    assert base.connector == "fpn"
    assert base.isg is False


def test_unknown_ablation_axis(tiny_config):
    with pytest.raises(ConfigError):
        ablation_arms("depth", tiny_config)


def test_ablate_component_table(tiny_config):
    config = tiny_config.replace(steps=1, n_val=2)

    table = ablate("component", config)

    assert table["arm"].to_list() == ["baseline", "+isg", "+csg", "+both"]
    assert {"connector", "isg", "n_params", "mse", "f1", "final_loss"} <= set(table.columns)
    params = table["n_params"].to_list()
    assert params[0] < params[1] < params[3]
    assert params[0] < params[2] < params[3]
    again = ablate("component", config)
    assert again.row(0) == table.row(0)

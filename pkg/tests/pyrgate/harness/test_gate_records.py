# Tests for pyrgate.records

import numpy as np
import polars as pl
import pytest
from pyrgate.data import generate_sample
from pyrgate.model import PyramidModel
from pyrgate.records import RECORD_SCHEMA, GateRecord, records_frame
from pyrgate.train import predict


def test_record_rows():
    matrix = np.arange(16, dtype=np.float64).reshape(4, 4) / 16
    record = GateRecord("s0", isg_b={(2, 1): 0.25}, isg_a={3: 0.5}, csg_w=matrix)

    frame = records_frame([record])

    assert dict(frame.schema) == RECORD_SCHEMA
    assert frame.height == 18
    assert frame.row(0) == ("s0", "isg_b", 2, 1, 0.25)
    assert frame.row(1) == ("s0", "isg_a", 3, 3, 0.5)
    w = frame.filter(kind="csg_w", i=3, j_or_k=5)
    assert w["value"].item() == pytest.approx(matrix[1, 3])


def test_empty_records_frame():
    frame = records_frame([GateRecord("s1")])

    assert frame.is_empty()
    assert frame.columns == ["sample_id", "kind", "i", "j_or_k", "value"]


def test_model_gate_records(tiny_config, rng):
    model = PyramidModel(tiny_config)
    params = model.init_params(rng)

    _, record = predict(model, params, generate_sample(5, image_size=32))

    assert record.sample_id == "seed5"
    assert record.csg_w.shape == (4, 4)
    frame = records_frame([record])
    assert set(frame["kind"]) == {"isg_b", "isg_a", "csg_w"}
    assert frame["value"].is_between(0.0, 1.0).all()
    # stage 4 has a single block and nothing to select from
    assert sorted(record.isg_a) == [2, 3, 5]


def test_ungated_model_has_no_matrix(tiny_config, rng):
    config = tiny_config.replace(connector="fpn", isg=False)
    model = PyramidModel(config)

    _, record = predict(model, model.init_params(rng), generate_sample(5, image_size=32))

    assert record.csg_w is None
    assert records_frame([record]).is_empty()

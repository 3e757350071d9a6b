# Tests for pyrgate.cli

import numpy as np
import polars as pl
import pytest
from pyrgate import __version__
from pyrgate.cli import build_parser, main
from pyrgate.config import load_config
from pyrgate.params import ParameterSet
from pyrgate.verify import run_checks


def _fast_checks(fault):
    return run_checks(fault, seeds=(0,), names=["softmax_normalization", "fpn_unrolled_equivalence"])


def test_train_writes_artifacts(config_file, tmp_path):
    out = tmp_path / "train"

    code = main(["train", "--config", str(config_file(steps=10, log_every=10)), "--out", str(out)])

    assert code == 0
    metrics = pl.read_csv(out / "metrics.csv")
    assert metrics.columns == ["step", "loss", "lr"]
    assert metrics["step"].to_list() == [0, 10]
    gates = pl.read_csv(out / "gates.csv")
    assert gates.columns == ["sample_id", "kind", "i", "j_or_k", "value"]
    assert (out / "params.npz").exists()
    assert load_config(out / "config.toml").steps == 10


def test_train_is_byte_identical(config_file, tmp_path):
    path = str(config_file(steps=3))

    main(["train", "--config", path, "--out", str(tmp_path / "a")])
    main(["train", "--config", path, "--out", str(tmp_path / "b")])

    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_seed_override_changes_run(config_file, tmp_path):
    path = str(config_file(steps=1))

    main(["train", "--config", path, "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["train", "--config", path, "--out", str(tmp_path / "b"), "--seed", "2"])

    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()
    assert load_config(tmp_path / "b" / "config.toml").seed == 2


def test_missing_config_exits_2(tmp_path, capsys):
    code = main(["train", "--config", str(tmp_path / "nope.toml")])

    assert code == 2
    assert "error" in capsys.readouterr().err


def test_unparsable_config_exits_2(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("steps = = 3\n")

    assert main(["train", "--config", str(path)]) == 2


def test_invalid_config_exits_3(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text('placement = "outer"\ncsg_mode = "softmax"\n')

    code = main(["train", "--config", str(path)])

    assert code == 3
    assert "configuration error" in capsys.readouterr().err


def test_unknown_ablation_axis_exits_3(config_file):
    assert main(["ablate", "depth", "--config", str(config_file())]) == 3


def test_ablate_writes_table(config_file, tmp_path, capsys):
    out = tmp_path / "ablate"

    code = main(["ablate", "fs", "--config", str(config_file(steps=1, n_val=1)), "--out", str(out)])

    assert code == 0
    table = pl.read_csv(out / "ablation_fs.csv")
    assert table["arm"].to_list() == ["baseline", "isg_without_fs", "isg"]
    assert "isg_without_fs" in capsys.readouterr().out


def test_missing_snapshot_exits_2(tmp_path):
    assert main(["export-gates", "--snapshot", str(tmp_path / "none.npz")]) == 2
    assert main(["eval", "--snapshot", str(tmp_path / "none.npz")]) == 2


def test_corrupt_snapshot_exits_2(tmp_path):
    path = tmp_path / "params.npz"
    path.write_bytes(b"not a zip archive")

    assert main(["eval", "--snapshot", str(path)]) == 2


def test_undecodable_config_exits_2(tmp_path, capsys):
    path = tmp_path / "run.toml"
    path.write_bytes(b"steps = 3\n# \xff\xfe\n")

    assert main(["train", "--config", str(path)]) == 2
    assert "UTF-8" in capsys.readouterr().err


def test_empty_snapshot_exits_2(tmp_path):
    path = tmp_path / "params.npz"
    np.savez(path)

    assert main(["export-gates", "--snapshot", str(path)]) == 2
    assert main(["eval", "--snapshot", str(path)]) == 2


def test_snapshot_of_other_architecture_exits_2(config_file, tmp_path, capsys):
    run = tmp_path / "run"
    main(["train", "--config", str(config_file(steps=0)), "--out", str(run)])
    params, config_text = ParameterSet.load(run / "params.npz")
    params.save(tmp_path / "other.npz", config_text.replace("isg = true", "isg = false"))

    assert main(["export-gates", "--snapshot", str(tmp_path / "other.npz")]) == 2
    assert "does not match" in capsys.readouterr().err


def test_export_gates_from_closed_gates(config_file, tmp_path):
    run = tmp_path / "run"
    main(["train", "--config", str(config_file(steps=0, gate_init_scale=0.0)), "--out", str(run)])
    out = tmp_path / "export"

    code = main(["export-gates", "--snapshot", str(run / "params.npz"), "--seeds", "3", "4", "--out", str(out)])

    assert code == 0
    for seed in (3, 4):
        matrix = pl.read_csv(out / f"gates_seed{seed}.csv")
        assert matrix.columns == ["from", "to_p2", "to_p3", "to_p4", "to_p5"]
        assert matrix["from"].to_list() == ["c2", "c3", "c4", "c5"]
        assert not matrix.select(pl.exclude("from")).to_numpy().any()
        assert (out / f"gates_seed{seed}.pgm").read_bytes() == b"P5\n4 4\n255\n" + bytes(16)
        isg = pl.read_csv(out / f"isg_seed{seed}.csv")
        assert set(isg["kind"]) <= {"isg_b", "isg_a"}


def test_eval_writes_level_table(config_file, tmp_path, capsys):
    run = tmp_path / "run"
    main(["train", "--config", str(config_file(steps=1, n_val=2)), "--out", str(run)])

    code = main(["eval", "--snapshot", str(run / "params.npz"), "--out", str(tmp_path / "eval")])

    assert code == 0
    table = pl.read_csv(tmp_path / "eval" / "eval.csv")
    assert table.columns == ["level", "mse", "f1"]
    assert table["level"].to_list() == [2, 3, 4, 5]
    assert np.isfinite(table["mse"].to_numpy()).all()
    assert "f1" in capsys.readouterr().out


def test_verify_subset_passes(mocker, capsys):
    mocker.patch("pyrgate.cli.run_checks", side_effect=_fast_checks)

    code = main(["verify"])

    captured = capsys.readouterr()
    assert code == 0
    assert "PASS softmax_normalization" in captured.out
    assert "2/2 checks passed" in captured.out


def test_verify_reports_first_failure(mocker, capsys):
    mocker.patch("pyrgate.cli.run_checks", side_effect=_fast_checks)

    code = main(["verify", "--inject-fault", "bilinear"])

    captured = capsys.readouterr()
    assert code == 1
    assert "FAIL fpn_unrolled_equivalence" in captured.out
    assert "first failing check: fpn_unrolled_equivalence" in captured.err


def test_parser():
    parser = build_parser()

    args = parser.parse_args(["ablate", "mode", "--workers", "2"])
    assert args.axis == "mode" and args.workers == 2

    with pytest.raises(SystemExit):
        parser.parse_args(["verify", "--inject-fault", "conv"])
    assert __version__

import json

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from labelalbedo.cli import RESOLVED_CONFIG_NAME, cli
from labelalbedo.colorspace import save_png


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    """A 6-label corpus at 32 px and a 1-epoch model trained on it."""
    root = tmp_path_factory.mktemp("cli")
    r = CliRunner()
    res = r.invoke(cli, ["synth", "--labels", "6", "--renders-per-label", "2", "--size", "32", "--out", str(root / "data")])
    assert res.exit_code == 0, res.output
    cfg = root / "train.yaml"
    cfg.write_text("base_channels: 8\ndisc_base_channels: 8\ndisc_layers: 2\nbatch_size: 4\n")
    res = r.invoke(
        cli,
        ["train", "--data", str(root / "data"), "--epochs", "1", "--seed", "0", "--config", str(cfg),
         "--out", str(root / "model")],
    )
    assert res.exit_code == 0, res.output
    return root


def test_synth_counts_message(runner, tmp_path):
    res = runner.invoke(cli, ["synth", "--labels", "30", "--renders-per-label", "1", "--size", "32", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    assert "30 pairs, 24 train labels / 6 test labels" in res.output
    resolved = json.loads((tmp_path / RESOLVED_CONFIG_NAME).read_text())
    assert resolved["labels"] == 30 and resolved["size"] == 32 and resolved["split_ratio"] == 0.8


def test_synth_missing_out_is_usage_error(runner):
    res = runner.invoke(cli, ["synth", "--labels", "3"])
    assert res.exit_code == 2
    assert "--out" in res.output


def test_config_unknown_key_rejected(runner, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("labels: 2\nlabelz: 3\n")
    res = runner.invoke(cli, ["synth", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert res.exit_code == 2
    assert "labelz" in res.output


@pytest.mark.filterwarnings("ignore::labelalbedo.dataset.EmptyTestSplitWarning")
def test_config_file_and_flag_precedence(runner, tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("labels: 2\nrenders_per_label: 2\nsize: 32\n")
    res = runner.invoke(cli, ["synth", "--config", str(cfg), "--labels", "3", "--out", str(tmp_path / "o")])
    assert res.exit_code == 0, res.output
    assert res.output.startswith("6 pairs")
    resolved = json.loads((tmp_path / "o" / RESOLVED_CONFIG_NAME).read_text())
    assert resolved["labels"] == 3 and resolved["renders_per_label"] == 2


def test_synth_runtime_failure_exit_1(runner, tmp_path):
    res = runner.invoke(cli, ["synth", "--labels", "2", "--size", "48", "--out", str(tmp_path / "o")])
    assert res.exit_code == 1
    assert "width" in res.output


def test_train_outputs(small_run):
    model = small_run / "model"
    assert (model / "checkpoints" / "last.ckpt").exists()
    assert (model / "checkpoints" / "epoch_0001.ckpt").exists()
    log = [json.loads(line) for line in (model / "losses.jsonl").read_text().splitlines()]
    assert log[0]["epoch"] == 1
    resolved = json.loads((model / RESOLVED_CONFIG_NAME).read_text())
    assert resolved["base_channels"] == 8 and resolved["epochs"] == 1 and resolved["lambda_rec"] == 100.0
    assert resolved["augment"] is True


def test_train_lambda_rec_zero_passthrough(runner, small_run, tmp_path):
    res = runner.invoke(
        cli,
        ["train", "--data", str(small_run / "data"), "--epochs", "1", "--lambda-rec", "0",
         "--config", str(small_run / "train.yaml"), "--out", str(tmp_path / "m")],
    )
    assert res.exit_code == 0, res.output
    from labelalbedo.gan import load_checkpoint

    b = load_checkpoint(tmp_path / "m" / "checkpoints" / "last.ckpt")
    assert b.train_cfg.lambda_rec == 0.0 and b.train_cfg.lambda_adv == 1.0


def test_train_no_augment_flag(runner, small_run, tmp_path):
    res = runner.invoke(
        cli,
        ["train", "--data", str(small_run / "data"), "--epochs", "1", "--no-augment",
         "--config", str(small_run / "train.yaml"), "--out", str(tmp_path / "m")],
    )
    assert res.exit_code == 0, res.output
    from labelalbedo.gan import load_checkpoint

    assert load_checkpoint(tmp_path / "m" / "checkpoints" / "last.ckpt").train_cfg.augment is False
    assert json.loads((tmp_path / "m" / RESOLVED_CONFIG_NAME).read_text())["augment"] is False


def test_train_invalid_data_dir(runner, tmp_path):
    res = runner.invoke(cli, ["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "m")])
    assert res.exit_code == 1
    assert "manifest" in res.output


def test_train_data_from_env(runner, small_run, tmp_path, monkeypatch):
    monkeypatch.setenv("LABELALBEDO_DATA", str(small_run / "data"))
    res = runner.invoke(
        cli, ["train", "--epochs", "0", "--config", str(small_run / "train.yaml"), "--out", str(tmp_path / "m")]
    )
    assert res.exit_code == 0, res.output


def test_eval_reports_and_grid(runner, small_run, tmp_path):
    grid = tmp_path / "grid.png"
    res = runner.invoke(
        cli,
        ["eval", "--data", str(small_run / "data"), "--ckpt", str(small_run / "model" / "checkpoints" / "last.ckpt"),
         "--split", "test", "--grid", str(grid)],
    )
    assert res.exit_code == 0, res.output
    assert "identity L1" in res.output
    model = json.loads((tmp_path / "report_model_test.json").read_text())
    ident = json.loads((tmp_path / "report_identity_test.json").read_text())
    assert model["baseline"] == "model" and ident["baseline"] == "identity"
    # ceil(0.8 * 6) = 5 train labels, so 1 test label x 2 renders
    assert model["count"] == ident["count"] == 2
    from labelalbedo.metrics import grid_size

    assert Image.open(grid).size == grid_size(2, 3, 32, 32)


def test_eval_train_split(runner, small_run, tmp_path):
    res = runner.invoke(
        cli,
        ["eval", "--data", str(small_run / "data"), "--ckpt", str(small_run / "model" / "checkpoints" / "last.ckpt"),
         "--split", "train", "--out", str(tmp_path)],
    )
    assert res.exit_code == 0, res.output
    assert json.loads((tmp_path / "report_model_train.json").read_text())["count"] == 10


@pytest.mark.filterwarnings("ignore::labelalbedo.dataset.EmptyTestSplitWarning")
def test_eval_size_mismatch(runner, small_run, tmp_path):
    res = runner.invoke(cli, ["synth", "--labels", "2", "--renders-per-label", "1", "--size", "64", "--out", str(tmp_path / "d64")])
    assert res.exit_code == 0
    res = runner.invoke(
        cli,
        ["eval", "--data", str(tmp_path / "d64"), "--ckpt", str(small_run / "model" / "checkpoints" / "last.ckpt"),
         "--split", "train", "--out", str(tmp_path)],
    )
    assert res.exit_code == 1
    assert "32px" in res.output and "64px" in res.output


def test_infer_preserves_dims(runner, small_run, tmp_path):
    src = tmp_path / "wild.png"
    save_png(src, np.random.default_rng(0).uniform(0, 1, (45, 70, 3)))
    out = tmp_path / "alb.png"
    res = runner.invoke(
        cli, ["infer", "--ckpt", str(small_run / "model" / "checkpoints" / "last.ckpt"), "--input", str(src), "--output", str(out)]
    )
    assert res.exit_code == 0, res.output
    assert Image.open(out).size == (70, 45)


def test_infer_corrupt_input(runner, small_run, tmp_path):
    src = tmp_path / "bad.png"
    src.write_bytes(b"garbage")
    res = runner.invoke(
        cli, ["infer", "--ckpt", str(small_run / "model" / "checkpoints" / "last.ckpt"), "--input", str(src), "--output", str(tmp_path / "o.png")]
    )
    assert res.exit_code == 1


def _dirs(tmp_path, names, roles=("in", "ours", "theirs", "gt")):
    rng = np.random.default_rng(0)
    for role in roles:
        (tmp_path / role).mkdir()
        for n in names:
            save_png(tmp_path / role / f"{n}.png", rng.uniform(0, 1, (32, 32, 3)))


def test_compare_four_columns(runner, tmp_path):
    _dirs(tmp_path, ["a", "b", "c", "d"])
    grid = tmp_path / "cmp.png"
    res = runner.invoke(
        cli,
        ["compare", "--inputs", str(tmp_path / "in"), "--ours", str(tmp_path / "ours"),
         "--theirs", str(tmp_path / "theirs"), "--gt", str(tmp_path / "gt"), "--grid", str(grid)],
    )
    assert res.exit_code == 0, res.output
    from labelalbedo.metrics import grid_size

    assert Image.open(grid).size == grid_size(4, 4, 32, 32)


def test_compare_three_columns_without_gt(runner, tmp_path):
    _dirs(tmp_path, ["a"], roles=("in", "ours", "theirs"))
    res = runner.invoke(
        cli,
        ["compare", "--inputs", str(tmp_path / "in"), "--ours", str(tmp_path / "ours"),
         "--theirs", str(tmp_path / "theirs"), "--grid", str(tmp_path / "g.png")],
    )
    assert res.exit_code == 0, res.output
    assert "1 rows x 3 columns" in res.output


def test_compare_mismatch(runner, tmp_path):
    _dirs(tmp_path, ["a", "b"])
    (tmp_path / "gt" / "b.png").rename(tmp_path / "gt" / "z.png")
    res = runner.invoke(
        cli,
        ["compare", "--inputs", str(tmp_path / "in"), "--ours", str(tmp_path / "ours"),
         "--theirs", str(tmp_path / "theirs"), "--gt", str(tmp_path / "gt"), "--grid", str(tmp_path / "g.png")],
    )
    assert res.exit_code == 1
    assert "b (missing in Ground truth)" in res.output and "z (missing in" in res.output

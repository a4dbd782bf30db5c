"""Command-line surface: subcommand wiring, printed formats, exit codes."""

import os
import re

import numpy as np
import pytest

from ligar import cli, dataio
from ligar.config import RunConfig, ScaleConfig, save_config

CFG = RunConfig(
    seed=11,
    feature_dim=8,
    head_count=2,
    scales=(ScaleConfig(8, 0.8, 6), ScaleConfig(4, 1.6, 6), ScaleConfig(2, 3.0, 6)),
    frames=3,
    epochs=1,
    batch_size=8,
    learning_rate=3e-4,
).validate()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = str(root / "run.cfg")
    save_config(CFG, config)
    data = str(root / "ds")
    out = str(root / "out")
    assert cli.main(["generate", "--config", config, "--out", data,
                     "--train", "12", "--val", "4", "--test", "4"]) == 0
    assert cli.main(["train", "--config", config, "--data", data,
                     "--out", out]) == 0
    return {"root": str(root), "config": config, "data": data, "out": out,
            "checkpoint": os.path.join(out, "last.bin")}


def test_train_writes_log_and_checkpoints(workspace):
    assert os.path.exists(workspace["checkpoint"])
    assert os.path.exists(os.path.join(workspace["out"], "best.bin"))
    with open(os.path.join(workspace["out"], "training.log")) as fh:
        lines = fh.read().splitlines()
    assert any(line.startswith("epoch=0 split=train") for line in lines)
    assert any(line.startswith("epoch=0 split=val") for line in lines)


def test_eval_accepts_every_mask(workspace, capsys):
    for mask in cli.MASK_CHOICES:
        code = cli.main(["eval", "--checkpoint", workspace["checkpoint"],
                         "--data", workspace["data"], "--split", "val",
                         "--mask", mask])
        assert code == 0
        head = capsys.readouterr().out.splitlines()[0]
        assert head == f"split=val mask={mask} n=4"


def test_eval_appends_machine_readable_line(workspace, tmp_path):
    report = str(tmp_path / "report.txt")
    for _ in range(2):
        assert cli.main(["eval", "--checkpoint", workspace["checkpoint"],
                         "--data", workspace["data"], "--split", "val",
                         "--out", report]) == 0
    with open(report) as fh:
        lines = fh.read().splitlines()
    assert len(lines) == 2
    assert lines[0] == lines[1]
    assert lines[0].startswith("epoch=0 split=val/all n=4 ")


def test_infer_prints_one_line_per_frame_with_normalized_alphas(
        workspace, capsys):
    assert cli.main(["infer", "--checkpoint", workspace["checkpoint"],
                     "--data", workspace["data"], "--split", "test",
                     "--index", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    header = re.match(r"sample=test\[1\] mask=all frames=(\d+) agents=(\d+) "
                      r"groups=(\d+)", lines[0])
    assert header is not None
    frames = int(header.group(1))
    body = [line for line in lines[1:] if line.startswith("frame=")]
    assert frames == CFG.frames
    assert len(body) == frames
    for line in body:
        weights = re.findall(r"alpha\d=([0-9.]+),([0-9.]+),([0-9.]+)", line)
        assert len(weights) == len(CFG.scales)
        for triple in weights:
            assert abs(sum(float(w) for w in triple) - 1.0) <= 1e-6 + 5e-7


def test_embed_rows_are_reproducible_and_fused_width(workspace, tmp_path):
    first = str(tmp_path / "a.txt")
    second = str(tmp_path / "b.txt")
    for path in (first, second):
        assert cli.main(["embed", "--checkpoint", workspace["checkpoint"],
                         "--data", workspace["data"], "--split", "val",
                         "--out", path]) == 0
    with open(first) as fa, open(second) as fb:
        text_a, text_b = fa.read(), fb.read()
    assert text_a == text_b
    rows = text_a.splitlines()
    assert len(rows) == 4
    width = len(CFG.scales) * CFG.feature_dim
    for row in rows:
        values = [float(v) for v in row.split()]
        assert len(values) == width
        assert np.isfinite(values).all()


def test_gradcheck_matches_central_differences(workspace, capsys):
    assert cli.main(["gradcheck", "--config", workspace["config"]]) == 0
    tail = capsys.readouterr().out.splitlines()[-1]
    match = re.match(r"tensors=(\d+) h=1e-05 max_rel_err=([0-9.e+-]+) "
                     r"worst=\S+ seconds=", tail)
    assert match is not None
    assert int(match.group(1)) > 100
    assert float(match.group(2)) < 1e-4


def test_usage_errors_exit_one(workspace):
    for argv in (
            [],
            ["frobnicate"],
            ["train", "--data", workspace["data"]],
            ["eval", "--checkpoint", workspace["checkpoint"],
             "--data", workspace["data"], "--mask", "text+video"],
            ["generate", "--out", "/tmp/x", "--train", "many"],
    ):
        with pytest.raises(SystemExit) as err:
            cli.main(argv)
        assert err.value.code == 1


def test_unreadable_config_exits_one(tmp_path):
    assert cli.main(["generate", "--config", str(tmp_path / "nope.cfg"),
                     "--out", str(tmp_path / "ds")]) == 1


def test_malformed_config_exits_one(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[model]\nfeature_dim = eight\n")
    assert cli.main(["generate", "--config", str(path),
                     "--out", str(tmp_path / "ds")]) == 1


def test_missing_data_and_checkpoints_exit_two(workspace, tmp_path):
    assert cli.main(["eval", "--checkpoint", workspace["checkpoint"],
                     "--data", str(tmp_path / "missing")]) == 2
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "none.bin"),
                     "--data", workspace["data"]]) == 2
    assert cli.main(["infer", "--checkpoint", workspace["checkpoint"],
                     "--data", workspace["data"], "--split", "val",
                     "--index", "99"]) == 2


def test_corrupt_checkpoint_exits_two(workspace, tmp_path):
    broken = str(tmp_path / "broken.bin")
    with open(workspace["checkpoint"], "rb") as fh:
        blob = fh.read()
    with open(broken, "wb") as fh:
        fh.write(b"XXXX" + blob[4:])
    assert cli.main(["eval", "--checkpoint", broken,
                     "--data", workspace["data"]]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_exits_three(workspace, tmp_path):
    cfg, params, state, seed, epoch, extras = dataio.load_checkpoint(
        workspace["checkpoint"])
    params["dec.scn.mlp.w1"].data[0, 0] = np.nan
    poisoned = str(tmp_path / "poisoned.bin")
    dataio.save_checkpoint(poisoned, cfg, params, state, seed, epoch, extras)
    config = str(tmp_path / "more.cfg")
    save_config(RunConfig(**{**CFG.__dict__, "epochs": 2}), config)
    assert cli.main(["train", "--config", config,
                     "--data", workspace["data"],
                     "--out", str(tmp_path / "out"),
                     "--resume", poisoned]) == 3


def test_thread_cap_env_var_is_validated(workspace, tmp_path, monkeypatch):
    monkeypatch.setenv("LIGAR_THREADS", "zero")
    assert cli.main(["generate", "--config", workspace["config"],
                     "--out", str(tmp_path / "a"), "--train", "1",
                     "--val", "0", "--test", "0"]) == 1
    monkeypatch.setenv("LIGAR_THREADS", "0")
    assert cli.main(["generate", "--config", workspace["config"],
                     "--out", str(tmp_path / "b"), "--train", "1",
                     "--val", "0", "--test", "0"]) == 1
    monkeypatch.setenv("LIGAR_THREADS", "4")
    assert cli.main(["generate", "--config", workspace["config"],
                     "--out", str(tmp_path / "c"), "--train", "1",
                     "--val", "0", "--test", "0"]) == 0


def test_seed_override_changes_generated_scenes(workspace, tmp_path):
    other = str(tmp_path / "ds12")
    assert cli.main(["generate", "--config", workspace["config"],
                     "--seed", "12", "--out", other, "--train", "1",
                     "--val", "0", "--test", "0"]) == 0
    with open(os.path.join(workspace["data"], "train", "sample_00000",
                           "points.csv")) as fh:
        base = fh.read()
    with open(os.path.join(other, "train", "sample_00000", "points.csv")) as fh:
        reseeded = fh.read()
    assert base != reseeded

"""Dataset directory and checkpoint formats: byte-identical regeneration,
exact float round-trips, masked loading, and checkpoint persistence."""

import filecmp
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ligar import dataio, model
from ligar.config import RunConfig, ScaleConfig
from ligar.errors import DataError
from ligar.fusion import MASK_BY_NAME
from ligar.nn import AdamState

CFG = RunConfig(
    feature_dim=8,
    head_count=2,
    scales=(ScaleConfig(8, 0.8, 6), ScaleConfig(4, 1.6, 6), ScaleConfig(2, 3.0, 6)),
    frames=3,
).validate()

COUNTS = {"train": 3, "val": 1, "test": 2}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "set"
    dataio.write_dataset(str(root), CFG, 42, COUNTS)
    return str(root)


def walk_bytes(root):
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            path = os.path.join(dirpath, name)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_formatting_round_trips_exactly(x):
    assert float(dataio._fmt(x)) == x


def test_regeneration_is_byte_identical(dataset, tmp_path):
    again = tmp_path / "again"
    dataio.write_dataset(str(again), CFG, 42, COUNTS)
    assert walk_bytes(dataset) == walk_bytes(str(again))


def test_loaded_samples_match_fresh_renders_bitwise(dataset):
    loaded = dataio.load_split(dataset, "train", CFG)
    for i, got in enumerate(loaded):
        want = model.make_sample(CFG, dataio.sample_entropy(42, "train", i))
        assert got.video.tobytes() == want.video.tobytes()
        assert got.text_ids.tobytes() == want.text_ids.tobytes()
        assert got.query_feats.tobytes() == want.query_feats.tobytes()
        for fa, fb in zip(got.lidar_frames, want.lidar_frames):
            assert fa.tobytes() == fb.tobytes()
        for key in ("actions", "activities", "membership", "scene"):
            assert got.targets[key].tobytes() == want.targets[key].tobytes()


def test_manifest_splits_are_disjoint(dataset):
    manifest = dataio.read_manifest(dataset)
    seen = set()
    for split in dataio.SPLITS:
        for path, entropy in manifest[split]:
            assert path not in seen and entropy not in seen
            seen.add(path)
            seen.add(entropy)


def test_video_only_load_skips_lidar_and_text_files(dataset, tmp_path):
    spare = tmp_path / "spare"
    dataio.write_dataset(str(spare), CFG, 43, {"train": 0, "val": 0, "test": 2})
    for path, _ in dataio.read_manifest(str(spare))["test"]:
        os.remove(os.path.join(path, "points.csv"))
        os.remove(os.path.join(path, "text.txt"))
    samples = dataio.load_split(str(spare), "test", CFG, MASK_BY_NAME["video"])
    assert len(samples) == 2
    assert samples[0].lidar_frames is None and samples[0].text_ids is None
    assert samples[0].video.shape == (3, 32, 32)


def test_empty_split_rejected(dataset, tmp_path):
    spare = tmp_path / "novl"
    dataio.write_dataset(str(spare), CFG, 44, {"train": 1, "val": 0, "test": 0})
    with pytest.raises(DataError):
        dataio.load_split(str(spare), "val", CFG)


def test_missing_sample_directory_rejected(dataset, tmp_path):
    spare = tmp_path / "broken"
    dataio.write_dataset(str(spare), CFG, 45, {"train": 1, "val": 0, "test": 0})
    entry = dataio.read_manifest(str(spare))["train"][0][0]
    os.rename(entry, entry + ".gone")
    with pytest.raises(DataError):
        dataio.read_manifest(str(spare))


def checkpoint_fixture(tmp_path, seed=0):
    params = model.init_params(np.random.default_rng(seed), CFG)
    state = AdamState(params)
    state.step = 17
    state.m["dec.query.base"] += 0.5
    path = str(tmp_path / "ck.bin")
    dataio.save_checkpoint(path, CFG, params, state, 7, 3,
                           extras={"best_f1": np.asarray(0.25)})
    return path, params, state


def test_checkpoint_save_load_save_is_bitwise_stable(tmp_path):
    path, params, state = checkpoint_fixture(tmp_path)
    cfg2, params2, state2, seed, epoch, extras = dataio.load_checkpoint(path)
    assert (seed, epoch, state2.step) == (7, 3, 17)
    assert cfg2 == CFG
    assert sorted(params2) == sorted(params)
    assert float(extras["best_f1"]) == 0.25
    for name in params:
        assert params2[name].data.tobytes() == params[name].data.tobytes()
        assert state2.m[name].tobytes() == state.m[name].tobytes()
        assert state2.v[name].tobytes() == state.v[name].tobytes()
    second = str(tmp_path / "ck2.bin")
    dataio.save_checkpoint(second, cfg2, params2, state2, seed, epoch,
                           extras={"best_f1": extras["best_f1"]})
    assert filecmp.cmp(path, second, shallow=False)


def test_checkpoint_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(DataError):
        dataio.load_checkpoint(str(path))


def test_checkpoint_rejects_truncation(tmp_path):
    path, _, _ = checkpoint_fixture(tmp_path)
    with open(path, "rb") as fh:
        blob = fh.read()
    cut = tmp_path / "cut.bin"
    cut.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(DataError):
        dataio.load_checkpoint(str(cut))

import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from wavesde.__main__ import cli, exit_code_for
from wavesde.errors import ConfigurationError, NumericError, OracleLookupError, StorageError, VolumeIOError
from wavesde.motion import MotionSpec, corrupt
from wavesde.phantom import ellipsoid_phantom, make_pairs, save_pairs
from wavesde.rng import substream
from wavesde.volume import load_volume, save_volume


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def clean_path(tmp_path):
    return save_volume(ellipsoid_phantom((8, 8, 8), rng=substream(0, "phantom")), tmp_path / "clean.vol")


@pytest.fixture
def corrupt_path(tmp_path, clean_path):
    vT, _ = corrupt(load_volume(clean_path), MotionSpec.preset("mild", seed=1))
    return save_volume(vT, tmp_path / "corrupt.vol")


def test_exit_codes():
    assert exit_code_for(VolumeIOError("bad", field="dims")) == 3
    assert exit_code_for(OracleLookupError("missing")) == 3
    assert exit_code_for(StorageError("disk full")) == 3
    assert exit_code_for(NumericError("nan")) == 4
    assert exit_code_for(ConfigurationError("no ckpt")) == 2


# ============================================================================
# SIMULATE
# ============================================================================

def test_simulate_writes_volume_and_report(runner, tmp_path, clean_path):
    out = tmp_path / "sim.vol"
    result = runner.invoke(cli, ["simulate", str(clean_path), str(out), "--preset", "mild", "--seed", "3"])
    assert result.exit_code == 0, result.output
    assert load_volume(out).dims == (8, 8, 8)
    report = json.loads((tmp_path / "sim.motion.json").read_text())
    assert 0.30 <= report["drawn_fraction"] <= 0.45
    config = json.loads((tmp_path / "sim.config.json").read_text())
    assert config["motion"]["seed"] == 3


def test_simulate_is_reproducible(runner, tmp_path, clean_path):
    for name in ("a.vol", "b.vol"):
        result = runner.invoke(cli, ["simulate", str(clean_path), str(tmp_path / name), "--seed", "9"])
        assert result.exit_code == 0, result.output
    assert (tmp_path / "a.vol").read_bytes() == (tmp_path / "b.vol").read_bytes()


def test_simulate_without_motion_copies_input(runner, tmp_path, clean_path):
    out = tmp_path / "same.vol"
    result = runner.invoke(cli, ["simulate", str(clean_path), str(out), "--preset", "none"])
    assert result.exit_code == 0, result.output
    assert out.read_bytes() == clean_path.read_bytes()


def test_simulate_bad_input_is_a_data_error(runner, tmp_path):
    bad = tmp_path / "bad.vol"
    bad.write_bytes(b'{"dims":[3,4,4],"dtype":"f32le","range":[0.0,1.0]}\n')
    result = runner.invoke(cli, ["simulate", str(bad), str(tmp_path / "out.vol")])
    assert result.exit_code == 3
    assert "dims" in result.output


def test_simulate_bad_range_is_a_usage_error(runner, tmp_path, clean_path):
    result = runner.invoke(cli, ["simulate", str(clean_path), str(tmp_path / "o.vol"), "--mmin", "0.5", "--mmax", "0.2"])
    assert result.exit_code == 2


def test_simulate_reads_config_file(runner, tmp_path, clean_path):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"motion": {"m_min": 0.0, "m_max": 0.0}}))
    out = tmp_path / "cfg_out.vol"
    result = runner.invoke(cli, ["simulate", str(clean_path), str(out), "--config", str(config)])
    assert result.exit_code == 0, result.output
    assert out.read_bytes() == clean_path.read_bytes()


# ============================================================================
# RESTORE
# ============================================================================

@pytest.mark.parametrize("mode", ["3d", "2d"])
def test_oracle_restore_recovers_clean_volume(runner, tmp_path, clean_path, corrupt_path, mode):
    out = tmp_path / f"restored_{mode}.vol"
    result = runner.invoke(cli, [
        "restore", str(corrupt_path), str(out), "--oracle", str(clean_path),
        "--diffusion-steps", "6", "--mode", mode,
    ])
    assert result.exit_code == 0, result.output
    restored, clean = load_volume(out), load_volume(clean_path)
    assert float(np.abs(restored.data - clean.data).max()) <= 1e-4
    timing = json.loads((tmp_path / f"restored_{mode}.timing.json").read_text())
    assert timing["steps"] == 6
    assert timing["xy_steps"] == (3 if mode == "3d" else 6)
    assert (tmp_path / f"restored_{mode}.oracle_noise.npz").exists()


def test_restore_needs_checkpoints(runner, tmp_path, corrupt_path):
    result = runner.invoke(cli, ["restore", str(corrupt_path), str(tmp_path / "o.vol")])
    assert result.exit_code == 2


@pytest.fixture
def checkpoints(runner, tmp_path):
    data = tmp_path / "data"
    save_pairs(make_pairs(2, shape=(8, 8, 8)), data)
    paths = {}
    for plane in ("xy", "xz"):
        ckpt = tmp_path / f"{plane}.pt"
        result = runner.invoke(cli, [
            "train", str(data), str(ckpt), "--plane", plane, "--steps", "2", "--batch-size", "2",
            "--width", "4", "--levels", "0", "--diffusion-steps", "4", "--eval-size", "4", "--eval-every", "1",
        ])
        assert result.exit_code == 0, result.output
        paths[plane] = ckpt
    return paths


def test_train_writes_checkpoint_and_curve(tmp_path, checkpoints):
    assert checkpoints["xy"].exists()
    manifest = json.loads((tmp_path / "xy.json").read_text())
    assert manifest["plane"] == "xy"
    assert manifest["schedule"]["T"] == 4
    curve = pd.read_csv(tmp_path / "xy.loss.csv")
    assert list(curve.columns) == ["step", "loss"]
    assert len(curve) == 2
    evaluation = pd.read_csv(tmp_path / "xy.eval.csv")
    assert evaluation["step"].tolist() == [0, 1, 2]


def test_restore_with_trained_networks(runner, tmp_path, corrupt_path, checkpoints):
    out = tmp_path / "net.vol"
    result = runner.invoke(cli, [
        "restore", str(corrupt_path), str(out),
        "--ckpt-xy", str(checkpoints["xy"]), "--ckpt-xz", str(checkpoints["xz"]),
    ])
    assert result.exit_code == 0, result.output
    restored = load_volume(out)
    assert restored.dims == (8, 8, 8)
    assert restored.data.min() >= 0.0 and restored.data.max() <= 1.0
    assert json.loads((tmp_path / "net.timing.json").read_text())["steps"] == 4


def test_swapped_checkpoints_rejected(runner, tmp_path, corrupt_path, checkpoints):
    result = runner.invoke(cli, [
        "restore", str(corrupt_path), str(tmp_path / "o.vol"),
        "--ckpt-xy", str(checkpoints["xz"]), "--ckpt-xz", str(checkpoints["xy"]),
    ])
    assert result.exit_code == 2


def test_train_on_missing_dataset(runner, tmp_path):
    result = runner.invoke(cli, ["train", str(tmp_path / "nothing"), str(tmp_path / "x.pt"), "--steps", "1"])
    assert result.exit_code == 3


# ============================================================================
# EVAL / BENCH
# ============================================================================

def test_eval_writes_report(runner, tmp_path):
    ref = ellipsoid_phantom((12, 12, 12), rng=substream(1, "phantom"))
    pred, _ = corrupt(ref, MotionSpec.preset("mild"))
    ref_path, pred_path = save_volume(ref, tmp_path / "ref.vol"), save_volume(pred, tmp_path / "case7.vol")
    result = runner.invoke(cli, ["eval", str(pred_path), str(ref_path), str(tmp_path / "m.csv")])
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(tmp_path / "m.csv")
    assert len(frame) == 9
    assert set(frame["volume_id"]) == {"case7"}
    config = json.loads((tmp_path / "m.config.json").read_text())
    assert config["eval"] == {"data_range": 1.0, "volume_id": "case7"}


def test_eval_shape_mismatch(runner, tmp_path):
    a = save_volume(ellipsoid_phantom((12, 12, 12)), tmp_path / "a.vol")
    b = save_volume(ellipsoid_phantom((12, 12, 14)), tmp_path / "b.vol")
    result = runner.invoke(cli, ["eval", str(a), str(b), str(tmp_path / "m.csv")])
    assert result.exit_code == 3


def test_bench(runner, tmp_path):
    out = tmp_path / "bench.csv"
    result = runner.invoke(cli, ["bench", str(out), "--sizes", "16", "--steps", "1", "--depth", "2"])
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(out)
    assert sorted(frame["mode"]) == ["image", "wavelet"]
    assert (frame["mean_ms"] > 0).all()


# ============================================================================
# FAILURES OUTSIDE THE LIBRARY
# ============================================================================

def test_unwritable_outputs_are_data_errors(runner, tmp_path, clean_path):
    blocker = tmp_path / "blocker"
    blocker.write_text("not a directory")
    result = runner.invoke(cli, ["simulate", str(clean_path), str(blocker / "out.vol")])
    assert result.exit_code == 3
    result = runner.invoke(cli, ["eval", str(clean_path), str(clean_path), str(blocker / "m.csv")])
    assert result.exit_code == 3
    assert "cannot write" in result.output


def test_malformed_seed_variable_is_a_usage_error(runner, monkeypatch, tmp_path, clean_path):
    monkeypatch.setenv("WAVESDE_SEED", "abc")
    result = runner.invoke(cli, ["simulate", str(clean_path), str(tmp_path / "out.vol")])
    assert result.exit_code == 2
    assert "WAVESDE_SEED" in result.output

import pandas as pd
import pytest
from pydantic import ValidationError

from wavesde.experiment import (
    ExperimentOptions,
    acceptance_failures,
    quality_table,
    run_experiment,
    smoothness_table,
)
from wavesde.volume import Plane


def _frame(psnr_gain=3.0, ssim_gain=0.1, z=((0.4, 0.5),) * 5):
    rows = []
    for plane in ("xy", "xz", "yz"):
        for method, psnr, ssim in (("corrupted", 20.0, 0.6), ("pseudo3d", 20.0 + psnr_gain, 0.6 + ssim_gain)):
            rows.append({"plane": plane, "metric": "psnr", "value": psnr, "case": 0, "method": method})
            rows.append({"plane": plane, "metric": "ssim", "value": ssim, "case": 0, "method": method})
    for case, (pseudo, flat) in enumerate(z):
        for run, jitter in enumerate((-0.01, 0.01)):
            rows.append({"plane": "z", "metric": "z_discontinuity", "value": pseudo + jitter, "case": case, "method": "pseudo3d", "run": run})
            rows.append({"plane": "z", "metric": "z_discontinuity", "value": flat + jitter, "case": case, "method": "slice2d", "run": run})
    return pd.DataFrame(rows)


def test_passing_results_have_no_failures():
    assert acceptance_failures(_frame()) == []


def test_small_psnr_gain_fails_in_every_plane():
    failures = acceptance_failures(_frame(psnr_gain=1.5))
    assert len(failures) == 3
    assert all("PSNR gain 1.50 dB" in f for f in failures)


def test_flat_ssim_fails():
    failures = acceptance_failures(_frame(ssim_gain=0.0))
    assert [f.split(":")[0] for f in failures] == ["xy", "xz", "yz"]


def test_ablation_needs_four_of_five_smoother_cases():
    three = ((0.4, 0.5),) * 3 + ((0.6, 0.5),) * 2
    four = ((0.4, 0.5),) * 4 + ((0.6, 0.5),)
    assert acceptance_failures(_frame(z=four)) == []
    failures = acceptance_failures(_frame(z=three))
    assert failures == ["pseudo-3D is at most as discontinuous along z as 2D in 3/5 cases, need 4"]


def test_smoothness_is_seed_averaged():
    table = smoothness_table(_frame(z=((0.4, 0.5),)))
    assert table.loc[0, "pseudo3d"] == pytest.approx(0.4)
    assert table.loc[0, "slice2d"] == pytest.approx(0.5)


def test_options_validation():
    with pytest.raises(ValidationError):
        ExperimentOptions(n_test=3)
    assert ExperimentOptions(n_test=3, min_smoother=3).n_test == 3


def test_tiny_experiment_frame(tmp_path):
    opts = ExperimentOptions(size=16, n_train=1, n_test=1, steps=1, T=2, runs=2, min_smoother=0)
    nets, frame = run_experiment(opts, tmp_path)
    assert set(nets) == {Plane.XY, Plane.XZ}
    assert set(frame.method) == {"corrupted", "pseudo3d", "slice2d"}
    assert sorted(frame[frame.method == "pseudo3d"].run.unique()) == [0, 1]
    assert list(quality_table(frame).columns) == ["xy", "xz", "yz"]
    assert (tmp_path / "case0.pseudo3d.vol").exists()
    assert (tmp_path / "xy_loss.csv").exists()


@pytest.mark.slow
def test_held_out_restoration_meets_targets():
    opts = ExperimentOptions()
    assert opts.n_train + opts.n_test == 30 and opts.size == 32
    _, frame = run_experiment(opts)
    assert acceptance_failures(frame, opts) == []

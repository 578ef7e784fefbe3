import math

import numpy as np
import pytest

from wavesde.errors import MetricError
from wavesde.metrics import evaluate, plane_means, psnr, ssim, write_report, z_discontinuity
from wavesde.volume import Volume


def test_psnr_identical_is_infinite(rng):
    a = rng.random((8, 8))
    assert psnr(a, a) == math.inf


def test_psnr_known_value():
    assert psnr(np.full((4, 4), 0.1), np.zeros((4, 4))) == pytest.approx(20.0)
    assert psnr(np.full((4, 4), 2.0), np.zeros((4, 4)), data_range=20.0) == pytest.approx(20.0)


def test_psnr_falls_with_noise(rng):
    ref = rng.random((16, 16))
    values = [psnr(ref + s * rng.standard_normal(ref.shape), ref) for s in (0.01, 0.05, 0.2)]
    assert values[0] > values[1] > values[2]


def test_psnr_errors():
    with pytest.raises(MetricError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))
    with pytest.raises(MetricError):
        psnr(np.zeros((4, 4)), np.ones((4, 4)), data_range=0.0)


def test_ssim_identical_is_one(rng):
    a = rng.random((16, 16))
    assert ssim(a, a) == pytest.approx(1.0)


def test_ssim_of_inverted_binary_image_is_low(rng):
    a = (rng.random((32, 32)) > 0.5).astype(float)
    assert ssim(a, 1.0 - a) < 0.5


def test_ssim_of_constant_images():
    a, b = 0.3, 0.6
    c1 = (0.01 * 1.0) ** 2
    expected = (2 * a * b + c1) / (a ** 2 + b ** 2 + c1)
    assert ssim(np.full((16, 16), a), np.full((16, 16), b)) == pytest.approx(expected, rel=1e-6)


def test_ssim_window_too_large():
    with pytest.raises(MetricError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_z_discontinuity_of_a_ramp():
    a, b = 0.02, 0.05
    x = np.arange(16)[:, None, None]
    z = np.arange(8)[None, None, :]
    vol = a * x + b * z + np.zeros((16, 16, 8))
    assert z_discontinuity(vol) == pytest.approx(b / a)


def test_z_discontinuity_edge_cases():
    assert z_discontinuity(np.full((4, 4, 4), 0.5)) == 0.0
    layered = np.zeros((4, 4, 4))
    layered[:, :, 1::2] = 1.0
    assert z_discontinuity(layered) == math.inf
    with pytest.raises(MetricError):
        z_discontinuity(np.zeros((4, 4)))


def test_plane_means_ignore_voxel_order_within_slices(rng):
    ref = rng.random((12, 12, 12))
    pred = ref + 0.05 * rng.standard_normal(ref.shape)
    table = plane_means(pred, ref)
    assert set(table) == {"xy", "xz", "yz"}
    perm = rng.permutation(12)
    flipped = plane_means(pred[:, :, perm], ref[:, :, perm])
    assert flipped["xy"]["psnr"] == pytest.approx(table["xy"]["psnr"])
    assert flipped["xy"]["ssim"] == pytest.approx(table["xy"]["ssim"])


def test_evaluate_rows(tmp_path, rng):
    ref = Volume(rng.random((12, 12, 12)))
    pred = Volume(np.clip(ref.data + 0.02, 0, 1))
    frame = evaluate(pred, ref, volume_id="case1")
    assert list(frame.columns) == ["volume_id", "plane", "metric", "value"]
    assert len(frame) == 1 + 3 * 2 + 2
    assert set(frame["volume_id"]) == {"case1"}
    assert frame.query("plane == '3d'")["value"].iloc[0] == pytest.approx(psnr(pred, ref))
    lines = write_report(frame, tmp_path / "out" / "metrics.csv").read_text().splitlines()
    assert lines[0] == "volume_id,plane,metric,value"
    assert len(lines) == len(frame) + 1

import pytest

from wavesde.bench import COLUMNS, BenchOptions, bench_sampler
from wavesde.errors import ConfigurationError


def test_default_options():
    opts = BenchOptions()
    assert opts.steps == 50
    assert opts.sizes[-1] == 240


def test_small_grid_frame():
    frame = bench_sampler(BenchOptions(sizes=[16], steps=2, depth=2))
    assert list(frame.columns) == COLUMNS
    assert frame["mode"].tolist() == ["wavelet", "image"]
    assert (frame["steps"] == 2).all()
    assert (frame["median_ms"] > 0).all()


def test_size_must_fit_the_network():
    with pytest.raises(ConfigurationError):
        bench_sampler(BenchOptions(sizes=[20], modes=["wavelet"], steps=1, depth=2))


@pytest.mark.slow
def test_wavelet_steps_are_faster_at_240():
    frame = bench_sampler(BenchOptions(sizes=[240], steps=50)).set_index("mode")
    assert int(frame.loc["wavelet", "steps"]) == 50
    assert frame.loc["wavelet", "median_ms"] <= 0.6 * frame.loc["image", "median_ms"]

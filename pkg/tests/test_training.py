import numpy as np
import pytest
import torch

from wavesde.errors import DatasetError
from wavesde.network import Denoiser, DenoiserConfig
from wavesde.phantom import make_pairs, save_pairs
from wavesde.rng import substream
from wavesde.sde import build_schedule, exact_noise, forward_marginal
from wavesde.training import (
    SliceSampler,
    TrainOptions,
    TrainResult,
    grad_check,
    load_pairs,
    network_predictor,
    train,
    training_loss,
)
from wavesde.volume import Plane, Volume
from wavesde.wavelet import analysis


def _batch(rng, n=3, ch=4, size=4, t=(3, 7, 10), sched=None):
    x0 = torch.as_tensor(rng.random((n, ch, size, size)))
    mu = torch.as_tensor(rng.random((n, ch, size, size)))
    states = [forward_marginal(x0[i], mu[i], t[i], sched, rng=substream(0, "batch", i))[0] for i in range(n)]
    return torch.stack(states), mu, x0, torch.tensor(t)


def test_exact_noise_gives_zero_loss(rng, sched):
    x_t, mu, x0, steps = _batch(rng, sched=sched)

    def oracle(x, m, s):
        return torch.stack([exact_noise(x[i], x0[i], m[i], int(s[i]), sched) for i in range(len(s))])

    for norm in ("l1", "l2"):
        assert float(training_loss(oracle, x_t, mu, x0, steps, sched, norm)) < 1e-10


def test_scalar_step_is_broadcast(rng, sched):
    x_t, mu, x0, _ = _batch(rng, sched=sched, t=(4, 4, 4))
    seen = []

    def record(x, m, s):
        seen.append(s.tolist())
        return torch.zeros_like(x)

    training_loss(record, x_t, mu, x0, 4, sched)
    assert seen == [[4, 4, 4]]


def test_zero_batch_bias_gradient(linear_head, sched):
    t = 6
    with torch.no_grad():
        linear_head.conv.weight.zero_()
        linear_head.conv.bias.copy_(torch.tensor([0.5, -1.0, 2.0, 0.25], dtype=torch.float64))
    zeros = torch.zeros(2, 4, 4, 4, dtype=torch.float64)
    loss = training_loss(lambda x, m, s: linear_head(x, m, s), zeros, zeros, zeros, t, sched, norm="l2")
    loss.backward()

    _, c_x0 = sched.posterior_coefficients(t)
    k = c_x0 * np.exp(sched.theta_bar[t]) * sched.std(t)
    expected = 2 * k ** 2 * linear_head.conv.bias.detach() / 4
    torch.testing.assert_close(linear_head.conv.bias.grad, expected)
    assert torch.count_nonzero(linear_head.conv.weight.grad) == 0


def test_l2_loss_is_domain_independent(rng, sched):
    a, b = 0.7, -0.3
    image_x0 = torch.as_tensor(rng.random((3, 1, 8, 8)))
    image_mu = torch.as_tensor(rng.random((3, 1, 8, 8)))
    steps = (2, 5, 9)
    image_xt = torch.stack([
        forward_marginal(image_x0[i], image_mu[i], steps[i], sched, rng=substream(1, i))[0] for i in range(3)
    ])

    def model(x, m, s):
        return a * x + b * m

    image = training_loss(model, image_xt, image_mu, image_x0, steps, sched, norm="l2")
    wave = training_loss(model, analysis(image_xt), analysis(image_mu), analysis(image_x0), steps, sched, norm="l2")
    assert float(image) == pytest.approx(float(wave), abs=1e-8)


# ============================================================================
# GRADIENT CHECKS
# ============================================================================

def test_grad_check_linear_head(rng, linear_head, sched):
    x_t, mu, x0, steps = _batch(rng, sched=sched)

    def loss_fn(model):
        return training_loss(lambda x, m, s: model(x, m, s), x_t, mu, x0, steps, sched, norm="l2")

    report = grad_check(linear_head, loss_fn, n_weights=100, h=1e-4)
    assert report.n_checked == 100
    assert report.max_rel_error <= 1e-7


def test_grad_check_denoiser(rng, tiny_net, sched):
    x_t, mu, x0, steps = _batch(rng, size=8, sched=sched)

    def loss_fn(model):
        return training_loss(network_predictor(model, sched), x_t, mu, x0, steps, sched, norm="l2")

    report = grad_check(tiny_net, loss_fn, n_weights=100, h=1e-4)
    assert report.n_checked == 100
    assert report.max_rel_error <= 1e-3
    assert next(tiny_net.parameters()).dtype == torch.float32


# ============================================================================
# DATA
# ============================================================================

def test_load_pairs_from_directory(tmp_path):
    save_pairs(make_pairs(2, shape=(8, 8, 8), seed=3), tmp_path)
    pairs = load_pairs(tmp_path)
    assert len(pairs) == 2
    assert all(clean.dims == (8, 8, 8) for clean, _ in pairs)


def test_load_pairs_errors(tmp_path):
    with pytest.raises(DatasetError):
        load_pairs(tmp_path)
    with pytest.raises(DatasetError):
        load_pairs(tmp_path / "missing")
    save_pairs(make_pairs(1, shape=(8, 8, 8)), tmp_path)
    (tmp_path / "phantom000.corrupt.vol").unlink()
    with pytest.raises(DatasetError):
        load_pairs(tmp_path)


def test_sampler_rejects_bad_pairs(sched):
    a, b = Volume(np.zeros((8, 8, 8))), Volume(np.zeros((8, 8, 4)))
    with pytest.raises(DatasetError):
        SliceSampler([], Plane.XY, sched, True, substream(0))
    with pytest.raises(DatasetError):
        SliceSampler([(a, b)], Plane.XY, sched, True, substream(0))
    with pytest.raises(DatasetError):
        SliceSampler([(a, a)], Plane.XY, sched, True, substream(0), multiple=8)


def test_sampler_batch_shapes(sched):
    vol = Volume(np.full((8, 8, 16), 0.5))
    sampler = SliceSampler([(vol, vol)], Plane.XZ, sched, True, substream(0), multiple=4)
    x_t, mu, x0, steps = sampler.sample(5)
    assert x_t.shape == mu.shape == x0.shape == (5, 4, 4, 8)
    assert steps.dtype == torch.long
    assert int(steps.min()) >= 1 and int(steps.max()) <= sched.T


# ============================================================================
# TRAINING LOOP
# ============================================================================

def test_zero_learning_rate_keeps_weights(tiny_net, sched):
    before = {k: v.clone() for k, v in tiny_net.state_dict().items()}
    pairs = make_pairs(1, shape=(8, 8, 8))
    result = train(tiny_net, pairs, sched, TrainOptions(steps=3, lr=0.0, batch_size=2))
    assert len(result.losses) == 3
    assert tiny_net.plane is Plane.XY
    for key, value in tiny_net.state_dict().items():
        assert torch.equal(value, before[key])


def test_train_result_curve(tmp_path):
    result = TrainResult(plane=Plane.XZ, steps=4, losses=[4.0, 2.0, 1.0, 1.0])
    assert result.final_loss == 1.0
    assert result.smoothed(2) == [4.0, 3.0, 1.5, 1.0]
    text = result.save_curve(tmp_path / "curve.csv").read_text().splitlines()
    assert text[0] == "step,loss"
    assert len(text) == 5


def test_evaluation_batch_is_fixed_and_covers_every_step(sched):
    vol = Volume(np.linspace(0.0, 1.0, 512).reshape(8, 8, 8))
    sampler = SliceSampler([(vol, vol)], Plane.XY, sched, True, substream(0), multiple=4)
    first = sampler.evaluation_batch(20, substream(5, "eval"))
    sampler.sample(3)
    second = sampler.evaluation_batch(20, substream(5, "eval"))
    assert first[3].tolist() == [1 + i // 2 for i in range(20)]
    for a, b in zip(first, second):
        assert torch.equal(a, b)
    with pytest.raises(DatasetError):
        sampler.sample(2, steps=[1, 2, 3])


def test_eval_loss_lookup():
    result = TrainResult(plane=Plane.XY, steps=20, losses=[1.0] * 20, eval_steps=[0, 10, 20], eval_losses=[3.0, 2.0, 1.0])
    assert result.eval_loss_at(10) == 2.0
    with pytest.raises(KeyError):
        result.eval_loss_at(5)


def test_training_records_evaluation_curve(tiny_net, sched, tmp_path):
    pairs = make_pairs(1, shape=(8, 8, 8))
    result = train(tiny_net, pairs, sched, TrainOptions(steps=5, lr=0.0, batch_size=2, eval_size=3, eval_every=2))
    assert result.eval_steps == [0, 2, 4, 5]
    # weights never move, so the fixed batch scores the same every time
    assert result.eval_losses == [result.eval_losses[0]] * 4
    text = result.save_eval_curve(tmp_path / "eval.csv").read_text().splitlines()
    assert text[0] == "step,loss"
    assert len(text) == 5


@pytest.mark.slow
def test_short_training_halves_the_evaluation_loss():
    sched = build_schedule(T=5)
    pairs = make_pairs(1, shape=(16, 16, 8), seed=1)
    torch.manual_seed(0)
    net = Denoiser(DenoiserConfig(width=8, levels=0))
    assert net.param_count <= 5000
    opts = TrainOptions(steps=200, lr=1e-2, batch_size=4, seed=2, eval_size=20, eval_every=10)
    result = train(net, pairs, sched, opts)
    assert result.eval_steps[:3] == [0, 10, 20]
    assert result.eval_loss_at(200) <= 0.5 * result.eval_loss_at(10)

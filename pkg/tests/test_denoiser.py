import math

import numpy as np
import pytest

from inflare.checkpoint import load as load_ckpt, save as save_ckpt
from inflare.core import RngStream
from inflare.datasets import EigenFrame
from inflare.denoiser import (
    DenoiserNet,
    TrainConfig,
    TrainedDenoiser,
    TrainingDiverged,
    forward,
    input_vjp,
    loss_and_grad,
    precondition,
    train,
)
from inflare.schedule import InflationSchedule


PRP = InflationSchedule.prp(2, t_max=7.01)


def make_model(params=None, hidden=(8,), embed_dim=0, d=2, schedule=PRP, seed=0):
    cfg = TrainConfig(hidden=hidden, embed_dim=embed_dim, seed=seed)
    net = DenoiserNet(d, hidden, embed_dim)
    if params is None:
        params = net.init_params(RngStream(seed))
    return TrainedDenoiser(net, params, params.copy(), schedule, cfg)


class TestPrecondition:
    def test_closed_forms_at_gamma_three(self):
        t = math.log(4.0) / 2.0  # gamma = e^{2t} - 1 = 3 under PRP rho=2
        pre = precondition(PRP, t)
        assert np.allclose(pre.c_in, 0.5, atol=1e-12)
        assert np.allclose(pre.c_skip, 0.25, atol=1e-12)
        assert np.allclose(pre.c_out, math.sqrt(0.75), atol=1e-12)
        assert np.allclose(pre.loss_weight, 1.0 / math.sqrt(0.75), atol=1e-12)

    def test_c_noise_scaling(self):
        assert precondition(PRP, 0.5).c_noise == pytest.approx(499.5, abs=1e-12)

    def test_identities_on_time_grid(self):
        sched = InflationSchedule.prr(3, preserved=2, gap=1.02, t_max=15.01)
        for t in np.linspace(1e-7, sched.t_max, 50):
            pre = precondition(sched, float(t))
            gamma = sched.at(float(t)).gamma
            assert np.max(np.abs(pre.c_in**2 * (1 + gamma) - 1.0)) <= 1e-12
            assert np.max(np.abs(pre.loss_weight * pre.c_out - 1.0)) <= 1e-12
            assert np.max(np.abs(pre.c_skip + pre.c_out**2 - 1.0)) <= 1e-12
            assert np.all(pre.c_in > 0) and np.all(pre.c_out > 0)

    def test_below_t_min_rejected(self):
        with pytest.raises(ValueError, match="t_min"):
            precondition(PRP, 1e-9)


class TestForward:
    def test_zero_parameters_reduce_to_skip_path(self):
        model = make_model(params=np.zeros(DenoiserNet(2, (8,), 0).n_params))
        x = np.array([1.5, -2.0])
        t = 0.7
        pre = precondition(PRP, t)
        assert np.allclose(forward(model, x, t), pre.c_skip * x, atol=1e-15)

    def test_deterministic(self):
        model = make_model()
        x = np.array([0.3, -0.1])
        a = forward(model, x, 1.2)
        b = forward(model, x, 1.2)
        assert a.tobytes() == b.tobytes()

    def test_batch_matches_single(self):
        model = make_model(hidden=(16, 16), embed_dim=8)
        xs = RngStream(4).normal((5, 2))
        batch = forward(model, xs, 0.9)
        for i in range(5):
            assert np.allclose(batch[i], forward(model, xs[i], 0.9), atol=1e-15)

    def test_ideal_gaussian_denoiser_reference(self):
        # For whitened standard-normal data the optimal denoiser is
        # x / (1 + gamma); an untrained net is far from it, but the skip
        # path already has the right form at gamma -> 0.
        model = make_model(params=np.zeros(DenoiserNet(2, (8,), 0).n_params))
        x = np.array([0.2, 0.4])
        t = 1e-6
        gamma = PRP.at(t).gamma
        assert np.allclose(forward(model, x, t), x / (1 + gamma), atol=1e-12)


class TestLossAndGrad:
    def test_loss_nonnegative(self):
        net = DenoiserNet(2, (8,), 0)
        params = net.init_params(RngStream(1))
        batch = RngStream(2).normal((16, 2))
        loss, _ = loss_and_grad(net, params, batch, RngStream(3), PRP, TrainConfig(hidden=(8,), embed_dim=0))
        assert loss >= 0.0

    def test_empty_batch_rejected(self):
        net = DenoiserNet(2, (8,), 0)
        with pytest.raises(ValueError, match="empty"):
            loss_and_grad(net, net.init_params(RngStream(0)), np.zeros((0, 2)), RngStream(0), PRP, TrainConfig())

    def test_gradient_matches_finite_differences(self):
        # Tiny net, every parameter, central differences with h = 1e-5.
        net = DenoiserNet(2, (8,), 0)
        params = net.init_params(RngStream(1))
        batch = RngStream(2).normal((4, 2))
        cfg = TrainConfig(hidden=(8,), embed_dim=0)

        def loss_at(p):
            val, _ = loss_and_grad(net, p, batch, RngStream(7), PRP, cfg)
            return val

        _, grad = loss_and_grad(net, params, batch, RngStream(7), PRP, cfg)
        h = 1e-5
        fd = np.empty_like(grad)
        for i in range(params.size):
            up = params.copy()
            up[i] += h
            dn = params.copy()
            dn[i] -= h
            fd[i] = (loss_at(up) - loss_at(dn)) / (2 * h)
        assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) <= 1e-4
        scale = np.maximum(np.abs(fd), 1e-6)
        assert np.max(np.abs(grad - fd) / scale) <= 1e-4

    def test_single_hidden_unit_hand_trace(self):
        # d=1, one hidden unit, no embedding: trace the forward/backward
        # pass by hand for one sample and compare every gradient entry.
        sched = InflationSchedule.prp(1, t_max=7.01)
        net = DenoiserNet(1, (1,), 0)
        w0, b0, w1, b1 = 0.8, -0.2, 1.3, 0.05
        params = np.array([w0, b0, w1, b1])
        cfg = TrainConfig(hidden=(1,), embed_dim=0)
        y = np.array([[0.6]])

        draws = RngStream(11)
        t = float(draws.uniform(cfg.t_min, sched.t_max, (1,))[0])
        z = float(draws.normal((1, 1))[0, 0])

        gamma = math.expm1(sched.rho * t)
        c_in = (1 + gamma) ** -0.5
        c_skip = 1.0 / (1 + gamma)
        c_out = math.sqrt(gamma / (1 + gamma))
        x = 0.6 + math.sqrt(gamma) * z
        u = c_in * x
        z0 = w0 * u + b0
        sig = 1.0 / (1.0 + math.exp(-z0))
        h = z0 * sig
        f = w1 * h + b1
        target = (0.6 - c_skip * x) / c_out
        resid = f - target
        loss_hand = resid * resid

        d_f = 2.0 * resid
        d_w1 = d_f * h
        d_b1 = d_f
        d_h = d_f * w1
        d_z0 = d_h * (sig * (1 + z0 * (1 - sig)))
        d_w0 = d_z0 * u
        d_b0 = d_z0

        loss, grad = loss_and_grad(net, params, y, RngStream(11), sched, cfg)
        assert loss == pytest.approx(loss_hand, rel=1e-12)
        assert grad == pytest.approx(np.array([d_w0, d_b0, d_w1, d_b1]), rel=1e-12)

    def test_target_statistics_under_ideal_denoiser(self):
        # The preconditioned regression target has zero mean and unit
        # variance per dimension for whitened Gaussian data.
        rng = RngStream(5)
        n = 10**5
        t = 1.3
        gamma = PRP.at(t).gamma[0]
        y = rng.normal((n,))
        noise = math.sqrt(gamma) * rng.normal((n,))
        x = y + noise
        target = (y - x / (1 + gamma)) * math.sqrt((1 + gamma) / gamma)
        assert abs(target.mean()) < 0.03
        assert abs(target.var() - 1.0) < 0.03


class TestInputVjp:
    def test_zero_cotangent(self):
        model = make_model()
        out = input_vjp(model, np.array([0.1, 0.2]), 1.0, np.zeros(2))
        assert np.array_equal(out, np.zeros(2))

    def test_zero_parameters_gives_skip_scaling(self):
        model = make_model(params=np.zeros(DenoiserNet(2, (8,), 0).n_params))
        t = 0.9
        cot = np.array([1.0, -2.0])
        pre = precondition(PRP, t)
        assert np.allclose(input_vjp(model, np.zeros(2), t, cot), pre.c_skip * cot, atol=1e-15)

    def test_matches_directional_derivative(self):
        model = make_model(hidden=(16,), embed_dim=8, seed=3)
        x = np.array([0.4, -0.7])
        t = 1.7
        u = np.array([0.3, 1.1])
        v = np.array([-0.5, 0.2])
        h = 1e-5
        phi = lambda s: float(u @ forward(model, x + s * v, t))
        fd = (phi(h) - phi(-h)) / (2 * h)
        analytic = float(v @ input_vjp(model, x, t, u))
        assert abs(analytic - fd) / max(abs(fd), 1e-12) <= 1e-4


class TestTrain:
    def test_loss_decreases_on_gaussian_data(self):
        data = RngStream(0).normal((10**4, 2))
        cfg = TrainConfig(steps=400, batch_size=128, lr=1e-3, hidden=(32, 32), embed_dim=16, seed=1)
        model = train(data, PRP, cfg)
        first = float(np.mean(model.loss_curve[:50]))
        last = float(np.mean(model.loss_curve[-50:]))
        assert last < first

    def test_same_seed_identical_parameters(self):
        data = RngStream(0).normal((512, 2))
        cfg = TrainConfig(steps=30, batch_size=64, hidden=(16,), embed_dim=8, seed=9)
        a = train(data, PRP, cfg)
        b = train(data, PRP, cfg)
        assert a.params.tobytes() == b.params.tobytes()
        assert a.ema_params.tobytes() == b.ema_params.tobytes()

    def test_gaussian_net_approaches_ideal_denoiser(self):
        data = RngStream(10).normal((10**4, 2))
        cfg = TrainConfig(steps=3000, batch_size=256, lr=1e-3, seed=2)
        model = train(data, PRP, cfg)
        rng = RngStream(3)
        errs = []
        for t in np.linspace(0.05, PRP.t_max, 12):
            gamma = PRP.at(float(t)).gamma
            x = rng.normal((200, 2)) * np.sqrt(1.0 + gamma)  # in-distribution at t
            ideal = x / (1.0 + gamma)
            errs.append(np.mean(np.abs(forward(model, x, float(t)) - ideal)))
        assert float(np.mean(errs)) <= 0.1

    def test_divergence_aborts_with_step(self):
        data = RngStream(0).normal((256, 2))
        cfg = TrainConfig(steps=200, batch_size=64, lr=1e200, hidden=(16,), embed_dim=8, seed=0)
        with pytest.raises(TrainingDiverged, match="step"):
            train(data, PRP, cfg)


class TestCheckpoint:
    def test_byte_exact_roundtrip(self, tmp_path):
        data = RngStream(0).normal((512, 2))
        cfg = TrainConfig(steps=20, batch_size=64, hidden=(16,), embed_dim=8, seed=4)
        model = train(data, PRP, cfg)
        model.frame = EigenFrame(
            mean=np.array([0.1, -0.2]), w=np.eye(2), sigma0_sq=np.array([2.0, 0.5])
        )
        model.preprocess = {"mean": [0.0, 0.0], "scale": [1.0, 2.0]}

        p1 = tmp_path / "model.ckpt"
        p2 = tmp_path / "model2.ckpt"
        save_ckpt(model, p1)
        back = load_ckpt(p1)
        save_ckpt(back, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert back.params.tobytes() == model.params.tobytes()
        assert back.ema_params.tobytes() == model.ema_params.tobytes()
        assert back.schedule.to_json() == model.schedule.to_json()
        assert back.config == model.config
        assert np.array_equal(back.frame.w, model.frame.w)
        assert back.loss_curve == model.loss_curve

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"NOTIFLOW" + b"\x00" * 32)
        with pytest.raises(ValueError, match="magic"):
            load_ckpt(p)

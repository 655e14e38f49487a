"""Trainable denoiser: an MLP with sinusoidal time embedding wrapped in
per-dimension preconditioning factors, trained by noisy regression onto
clean samples.

In whitened coordinates the factors have closed forms in the kernel
variance gamma(t):

    c_in  = (1 + gamma)^(-1/2)   input scaled to unit variance
    c_skip = (1 + gamma)^(-1)    optimal skip connection
    c_out = (gamma / (1 + gamma))^(1/2)   output scaled to unit variance
    loss_weight = 1 / c_out      equalizes loss across noise levels
    c_noise = (M - 1) * t        scalar conditioning input

and the denoiser is ``D(x, t) = c_skip * x + c_out * F(c_in * x; c_noise)``
with F the raw network. All gradients are reverse-mode by hand; no autodiff
framework is used, which keeps training and evaluation bit-deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import RngStream
from .datasets import EigenFrame
from .schedule import InflationSchedule


class TrainingDiverged(RuntimeError):
    pass


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _silu(z: np.ndarray) -> np.ndarray:
    return z * _sigmoid(z)


def _silu_grad(z: np.ndarray) -> np.ndarray:
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def time_embedding(c_noise: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of the scalar conditioning input, shape (B, dim)."""
    c = np.atleast_1d(np.asarray(c_noise, dtype=float))
    if dim == 0:
        return np.zeros((c.shape[0], 0))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    angles = c[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class DenoiserNet:
    """MLP with explicit flat-parameter layout and hand-written backprop.

    Hidden layers use the sigmoid-weighted linear activation; the output
    layer is linear. Input is the preconditioned sample concatenated with
    the time embedding.
    """

    def __init__(self, d: int, hidden: tuple[int, ...] = (128, 128, 128), embed_dim: int = 64):
        self.d = d
        self.hidden = tuple(hidden)
        self.embed_dim = embed_dim
        self.widths = [d + embed_dim, *hidden, d]
        self.layout: list[tuple[str, int, tuple[int, ...]]] = []
        offset = 0
        for i, (n_in, n_out) in enumerate(zip(self.widths[:-1], self.widths[1:])):
            self.layout.append((f"w{i}", offset, (n_out, n_in)))
            offset += n_out * n_in
            self.layout.append((f"b{i}", offset, (n_out,)))
            offset += n_out
        self.n_params = offset
        self.n_layers = len(self.widths) - 1

    def init_params(self, rng: RngStream) -> np.ndarray:
        params = np.zeros(self.n_params)
        for name, offset, shape in self.layout:
            if name.startswith("w"):
                fan_in = shape[1]
                size = shape[0] * shape[1]
                params[offset : offset + size] = rng.normal((size,)) / math.sqrt(fan_in)
        return params

    def unpack(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        views = {}
        for name, offset, shape in self.layout:
            views[name] = params[offset : offset + int(np.prod(shape))].reshape(shape)
        return [(views[f"w{i}"], views[f"b{i}"]) for i in range(self.n_layers)]

    def forward(self, params: np.ndarray, x_in: np.ndarray) -> tuple[np.ndarray, list]:
        """Forward pass on a (B, in_dim) batch; returns output and cache."""
        layers = self.unpack(params)
        h = x_in
        cache = [x_in]
        for i, (w, b) in enumerate(layers):
            with np.errstate(over="ignore", invalid="ignore"):
                z = h @ w.T + b
            if not np.all(np.isfinite(z)):
                raise FloatingPointError(f"non-finite activation at layer {i}")
            if i < self.n_layers - 1:
                cache.append(z)
                h = _silu(z)
                cache.append(h)
            else:
                h = z
        return h, cache

    def backward(
        self,
        params: np.ndarray,
        cache: list,
        d_out: np.ndarray,
        need_param_grad: bool = True,
        need_input_grad: bool = False,
    ) -> tuple[np.ndarray | None, np.ndarray | None]:
        """Reverse pass: cotangents of parameters and/or the input batch."""
        layers = self.unpack(params)
        grad = np.zeros(self.n_params) if need_param_grad else None
        grad_views = self.unpack(grad) if need_param_grad else None

        d_h = d_out
        for i in range(self.n_layers - 1, -1, -1):
            w, _ = layers[i]
            h_prev = cache[2 * i]
            if i < self.n_layers - 1:
                z = cache[2 * i + 1]
                d_z = d_h * _silu_grad(z)
            else:
                d_z = d_h
            if need_param_grad:
                gw, gb = grad_views[i]
                gw += d_z.T @ h_prev
                gb += d_z.sum(axis=0)
            if i > 0 or need_input_grad:
                d_h = d_z @ w
        return grad, (d_h if need_input_grad else None)


@dataclass(frozen=True)
class Preconditioner:
    """Per-dimension factors at one time, plus the scalar network input."""

    c_in: np.ndarray
    c_skip: np.ndarray
    c_out: np.ndarray
    loss_weight: np.ndarray
    c_noise: float


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 512
    steps: int = 20_000
    ema_half_life: float = 5e5  # in training samples
    t_min: float = 1e-7
    noise_scales: int = 1000  # the M in c_noise = (M - 1) t
    seed: int = 0
    hidden: tuple[int, ...] = (128, 128, 128)
    embed_dim: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if min(self.lr, self.batch_size, self.steps, self.ema_half_life, self.t_min) <= 0:
            raise ValueError("lr, batch_size, steps, ema_half_life, t_min must be positive")


def _gamma_of(schedule: InflationSchedule, t: np.ndarray) -> np.ndarray:
    """Kernel variances for a vector of times, shape (B, d)."""
    return np.expm1(np.multiply.outer(t, schedule.rho * schedule.rates))


def precondition(
    schedule: InflationSchedule, t: float, t_min: float = 1e-7, noise_scales: int = 1000
) -> Preconditioner:
    """Preconditioning factors at time t; rejects t < t_min where the
    output scale degenerates."""
    if t < t_min:
        raise ValueError(f"t={t} below t_min={t_min}: output scaling degenerates as gamma -> 0")
    gamma = schedule.at(t).gamma
    one_plus = 1.0 + gamma
    c_in = 1.0 / np.sqrt(one_plus)
    c_skip = 1.0 / one_plus
    c_out = np.sqrt(gamma / one_plus)
    return Preconditioner(c_in, c_skip, c_out, 1.0 / c_out, float((noise_scales - 1) * t))


@dataclass
class TrainedDenoiser:
    """Network weights plus the context needed to evaluate the denoiser."""

    net: DenoiserNet
    params: np.ndarray
    ema_params: np.ndarray
    schedule: InflationSchedule
    config: TrainConfig
    frame: EigenFrame | None = None
    preprocess: dict | None = None  # standardization {mean, scale} if applied
    loss_curve: list = field(default_factory=list)

    def __post_init__(self):
        if self.ema_params.shape != self.params.shape:
            raise ValueError("EMA parameter count must match the network's")

    def denoise(self, x: np.ndarray, t: float, ema: bool = True) -> np.ndarray:
        return forward(self, x, t, ema=ema)

    def active_params(self, ema: bool = True) -> np.ndarray:
        return self.ema_params if ema else self.params


def _denoise_parts(
    model: TrainedDenoiser, x: np.ndarray, t: float, ema: bool
) -> tuple[np.ndarray, Preconditioner, np.ndarray, list]:
    pre = precondition(model.schedule, t, model.config.t_min, model.config.noise_scales)
    batch = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(batch)):
        raise ValueError("input contains non-finite entries")
    emb = time_embedding(np.full(batch.shape[0], pre.c_noise), model.net.embed_dim)
    net_in = np.concatenate([pre.c_in * batch, emb], axis=1)
    f, cache = model.net.forward(model.active_params(ema), net_in)
    return batch, pre, f, cache


def forward(model: TrainedDenoiser, x: np.ndarray, t: float, ema: bool = True) -> np.ndarray:
    """Denoised estimate D(x, t) for a point or an (N, d) batch."""
    batch, pre, f, _ = _denoise_parts(model, x, t, ema)
    out = pre.c_skip * batch + pre.c_out * f
    return out[0] if np.ndim(x) == 1 else out


def input_vjp(
    model: TrainedDenoiser, x: np.ndarray, t: float, cotangent: np.ndarray, ema: bool = True
) -> np.ndarray:
    """(dD/dx)^T cotangent through both the skip and the network path."""
    batch, pre, _, cache = _denoise_parts(model, x, t, ema)
    cot = np.atleast_2d(np.asarray(cotangent, dtype=float))
    _, d_in = model.net.backward(
        model.active_params(ema), cache, pre.c_out * cot, need_param_grad=False, need_input_grad=True
    )
    pulled = pre.c_skip * cot + pre.c_in * d_in[:, : model.net.d]
    return pulled[0] if np.ndim(x) == 1 else pulled


def loss_and_grad(
    net: DenoiserNet,
    params: np.ndarray,
    batch: np.ndarray,
    rng: RngStream,
    schedule: InflationSchedule,
    config: TrainConfig,
) -> tuple[float, np.ndarray]:
    """Mean preconditioned denoising loss over a whitened batch, and its
    parameter gradient.

    Times are drawn uniformly on [t_min, t_max] and noise from the kernel
    N(0, diag(gamma(t))), per sample. Summation order is fixed, so results
    are deterministic for a given rng state.
    """
    y = np.atleast_2d(np.asarray(batch, dtype=float))
    b = y.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    if y.shape[1] != schedule.d:
        raise ValueError(f"batch dimension {y.shape[1]} does not match schedule d={schedule.d}")
    t = rng.uniform(config.t_min, schedule.t_max, (b,))
    z = rng.normal(y.shape)

    gamma = _gamma_of(schedule, t)
    one_plus = 1.0 + gamma
    c_in = 1.0 / np.sqrt(one_plus)
    c_skip = 1.0 / one_plus
    c_out = np.sqrt(gamma / one_plus)
    c_noise = (config.noise_scales - 1) * t

    x = y + np.sqrt(gamma) * z
    net_in = np.concatenate([c_in * x, time_embedding(c_noise, net.embed_dim)], axis=1)
    f, cache = net.forward(params, net_in)
    target = (y - c_skip * x) / c_out
    resid = f - target
    loss = float(np.sum(resid * resid) / b)
    grad, _ = net.backward(params, cache, (2.0 / b) * resid)
    return loss, grad


def train(
    data_whitened: np.ndarray,
    schedule: InflationSchedule,
    config: TrainConfig,
) -> TrainedDenoiser:
    """Adam training loop with an EMA copy of the parameters.

    The EMA decay per step is ``2**(-batch_size / ema_half_life)`` with the
    half-life measured in training samples. Raises TrainingDiverged (with
    the offending step) if the loss stops being finite.
    """
    data = np.atleast_2d(np.asarray(data_whitened, dtype=float))
    n, d = data.shape
    net = DenoiserNet(d, config.hidden, config.embed_dim)
    rng = RngStream(config.seed)
    params = net.init_params(rng.substream(0))
    draws = rng.substream(1)

    ema = params.copy()
    ema_decay = 2.0 ** (-config.batch_size / config.ema_half_life)
    m = np.zeros_like(params)
    v = np.zeros_like(params)
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    losses = []

    for step in range(1, config.steps + 1):
        idx = draws.integers(0, n, (config.batch_size,))
        try:
            loss, grad = loss_and_grad(net, params, data[idx], draws, schedule, config)
        except FloatingPointError as err:
            raise TrainingDiverged(f"step {step}: {err}") from err
        if not math.isfinite(loss):
            raise TrainingDiverged(f"step {step}: loss is {loss}")
        losses.append(loss)

        m = b1 * m + (1 - b1) * grad
        v = b2 * v + (1 - b2) * grad * grad
        m_hat = m / (1 - b1**step)
        v_hat = v / (1 - b2**step)
        params = params - config.lr * m_hat / (np.sqrt(v_hat) + eps)
        ema = ema_decay * ema + (1 - ema_decay) * params

    return TrainedDenoiser(
        net=net,
        params=params,
        ema_params=ema,
        schedule=schedule,
        config=config,
        loss_curve=losses,
    )

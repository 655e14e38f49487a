"""Posterior calibration by Hamiltonian Monte Carlo.

Observations are built by pushing latent draws from a known 3-component
Gaussian mixture through the generative flow and adding a little isotropic
noise. HMC then samples the joint posterior over the latents and the
mixture weights, with the likelihood gradient obtained by reverse mode
through the unrolled flow integrator. Weights live in softmax coordinates
(two free logits, the last pinned to zero) with the product-of-weights
Jacobian correction and a flat Dirichlet prior.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import RngStream
from .pfode import Discretization, generate_with_pullback, generate, unscale
from .schedule import InflationSchedule


class HmcDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class GmmPrior:
    means: np.ndarray  # (3, 2)
    cov_diags: np.ndarray  # (3, 2)
    weights: np.ndarray  # (3,), on the simplex

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "cov_diags", np.asarray(self.cov_diags, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if np.any(self.cov_diags <= 0):
            raise ValueError("component covariances must be positive")

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        u = rng.uniform(0.0, 1.0, (n,))
        comp = np.searchsorted(np.cumsum(self.weights), u)
        comp = np.clip(comp, 0, self.n_components - 1)
        z = rng.normal((n, self.means.shape[1]))
        return self.means[comp] + np.sqrt(self.cov_diags[comp]) * z


def prp_prior() -> GmmPrior:
    """Ground-truth mixture used with the dimension-preserving flow."""
    return GmmPrior(
        means=[[0.0, 0.0], [-5e-2, 0.0], [5e-2, 0.0]],
        cov_diags=[[0.5625, 0.5625], [1e-2, 1.0], [1.0, 1e-2]],
        weights=[0.5, 0.25, 0.25],
    )


def prr_prior() -> GmmPrior:
    """Ground-truth mixture used with the dimension-reducing flow."""
    return GmmPrior(
        means=[[0.0, 0.0], [-5e-2, 0.0], [5e-2, 0.0]],
        cov_diags=[[0.5625, 5.625e-3], [1e-2, 1e-2], [1.0, 1e-4]],
        weights=[0.5, 0.25, 0.25],
    )


@dataclass(frozen=True)
class ObservationSet:
    x_obs: np.ndarray
    noise_var: float
    z_true: np.ndarray
    w_true: np.ndarray

    def __post_init__(self):
        if self.noise_var <= 0:
            raise ValueError("observation noise variance must be positive")


@dataclass(frozen=True)
class GenerativeFlow:
    """Latent-to-data map through the flow, with reverse-mode gradients.

    Heun integration throughout, so gradients differentiate exactly the map
    being evaluated.
    """

    schedule: InflationSchedule
    source: object
    disc: Discretization

    def generate(self, z: np.ndarray) -> np.ndarray:
        traj = generate(z, self.schedule, self.source, self.disc, solver="heun")
        return unscale(traj.final, self.schedule, float(self.disc.times[0]))

    def generate_with_pullback(self, z: np.ndarray):
        return generate_with_pullback(z, self.schedule, self.source, self.disc)


def synthesize_observations(
    prior: GmmPrior,
    n: int,
    flow: GenerativeFlow,
    rng: RngStream,
    noise_var: float = 1e-2,
) -> ObservationSet:
    """Draw latents from the mixture, run generation, add isotropic noise."""
    if n < 1:
        raise ValueError("need at least one observation")
    z = prior.sample(rng, n)
    x_clean = flow.generate(z)
    if noise_var > 0:
        x_obs = x_clean + math.sqrt(noise_var) * rng.normal(x_clean.shape)
    else:
        x_obs = x_clean
    return ObservationSet(x_obs, max(noise_var, 1e-300), z, prior.weights.copy())


def _softmax_weights(logits_free: np.ndarray) -> np.ndarray:
    v = np.concatenate([np.asarray(logits_free, dtype=float), [0.0]])
    v = v - v.max()
    e = np.exp(v)
    return e / e.sum()


def log_posterior_and_grad(
    z_all: np.ndarray,
    w_logits: np.ndarray,
    obs: ObservationSet,
    prior: GmmPrior,
    flow: GenerativeFlow,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Joint log posterior over (latents, weight logits) and its gradients.

    log p = sum_j [ log N(x_obs_j; G(z_j), s^2 I) + log sum_i w_i N(z_j; m_i, C_i) ]
            + log Dirichlet(1,1,1)(w) + sum_i log w_i   (softmax Jacobian)

    The likelihood gradient w.r.t. z routes through the unrolled integrator.
    """
    z = np.atleast_2d(np.asarray(z_all, dtype=float))
    n_obs, d = z.shape
    k = prior.n_components

    x_pred, pullback = flow.generate_with_pullback(z)
    resid = obs.x_obs - x_pred
    loglik = -0.5 * float(np.sum(resid * resid)) / obs.noise_var
    loglik -= 0.5 * n_obs * d * math.log(2.0 * math.pi * obs.noise_var)
    gz = pullback(resid / obs.noise_var)

    w = _softmax_weights(w_logits)
    log_w = np.log(w)
    diff = z[:, None, :] - prior.means[None, :, :]  # (J, K, d)
    comp = -0.5 * np.sum(diff * diff / prior.cov_diags[None, :, :], axis=2)
    comp -= 0.5 * np.sum(np.log(2.0 * math.pi * prior.cov_diags), axis=1)[None, :]
    scores = log_w[None, :] + comp
    m = scores.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(scores - m), axis=1))
    log_prior_z = float(lse.sum())
    resp = np.exp(scores - lse[:, None])  # (J, K) responsibilities

    gz += np.einsum("jk,jkl->jl", resp, -diff / prior.cov_diags[None, :, :])

    # log Dirichlet(1,..,1) = log Gamma(K); softmax Jacobian adds sum log w.
    log_prior_w = math.lgamma(k) + float(log_w.sum())
    a = resp.sum(axis=0)  # (K,)
    d_v = (a + 1.0) - w * (n_obs + k)
    gu = d_v[: k - 1]

    logpost = loglik + log_prior_z + log_prior_w
    if not (math.isfinite(logpost) and np.all(np.isfinite(gz)) and np.all(np.isfinite(gu))):
        raise FloatingPointError("non-finite log posterior or gradient")
    return logpost, gz, gu


@dataclass(frozen=True)
class HmcConfig:
    step_size: float
    leapfrog_steps: int = 15
    n_samples: int = 300  # retained, after burn-in and thinning
    burn_in: int = 500
    thinning: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.leapfrog_steps < 1 or self.step_size <= 0:
            raise ValueError("need leapfrog_steps >= 1 and step_size > 0")
        if self.n_samples < 1 or self.burn_in < 0 or self.thinning < 1:
            raise ValueError("invalid sample counts")


@dataclass
class Chain:
    samples: np.ndarray  # (M, Q) retained states
    acceptance_rate: float
    energy_errors: np.ndarray  # per-proposal Hamiltonian error
    n_latents: int

    def __post_init__(self):
        if not 0.0 <= self.acceptance_rate <= 1.0:
            raise ValueError("acceptance rate must lie in [0, 1]")


def leapfrog(q: np.ndarray, p: np.ndarray, grad: np.ndarray, target, step: float, n_steps: int):
    """Standard leapfrog for H(q, p) = -log p(q) + |p|^2 / 2.

    ``target(q)`` returns (log density, gradient). Returns the endpoint
    (q, p, logp, grad).
    """
    q = q.copy()
    p = p + 0.5 * step * grad
    logp = None
    for step_i in range(n_steps):
        q = q + step * p
        logp, grad = target(q)
        if step_i < n_steps - 1:
            p = p + step * grad
    p = p + 0.5 * step * grad
    return q, p, logp, grad


def hmc_run(config: HmcConfig, init: np.ndarray, target) -> Chain:
    """Leapfrog HMC with Metropolis correction and standard-normal momenta.

    ``target(q)`` returns (log density, gradient). Burn-in samples are
    dropped and the remainder thinned; aborts with diagnostics if the first
    100 proposals are all rejected.
    """
    rng = RngStream(config.seed)
    q = np.asarray(init, dtype=float).copy()
    logp, grad = target(q)

    total = config.burn_in + config.n_samples * config.thinning
    kept = []
    energy_errors = np.empty(total)
    accepted = 0
    for it in range(total):
        p = rng.normal(q.shape)
        h0 = -logp + 0.5 * float(p @ p)
        q_new, p_new, logp_new, grad_new = leapfrog(
            q, p, grad, target, config.step_size, config.leapfrog_steps
        )
        h1 = -logp_new + 0.5 * float(p_new @ p_new)
        delta_h = h1 - h0
        energy_errors[it] = delta_h
        if math.log(rng.uniform(0.0, 1.0)) < -delta_h:
            q, logp, grad = q_new, logp_new, grad_new
            accepted += 1
        if it == 99 and accepted == 0:
            raise HmcDiverged(
                f"all of the first 100 proposals rejected (step_size={config.step_size}, "
                f"L={config.leapfrog_steps}, last |dH|={abs(delta_h):.3g}); reduce the step size"
            )
        if it >= config.burn_in and (it - config.burn_in) % config.thinning == config.thinning - 1:
            kept.append(q.copy())

    return Chain(np.asarray(kept), accepted / total, energy_errors, n_latents=0)


class WeightPosterior:
    """Flat view of the (latents, weight logits) posterior for hmc_run."""

    def __init__(self, obs: ObservationSet, prior: GmmPrior, flow: GenerativeFlow):
        self.obs = obs
        self.prior = prior
        self.flow = flow
        self.n_latents = obs.x_obs.shape[0]
        self.d = obs.x_obs.shape[1]
        self.n_free_logits = prior.n_components - 1

    def pack(self, z: np.ndarray, logits: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(z, dtype=float).ravel(), np.asarray(logits, dtype=float)])

    def unpack(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        split = self.n_latents * self.d
        return q[:split].reshape(self.n_latents, self.d), q[split:]

    def __call__(self, q: np.ndarray) -> tuple[float, np.ndarray]:
        z, logits = self.unpack(q)
        logpost, gz, gu = log_posterior_and_grad(z, logits, self.obs, self.prior, self.flow)
        return logpost, np.concatenate([gz.ravel(), gu])


def truth_logits(weights: np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    return np.log(w[:-1]) - np.log(w[-1])


def summarize(chain: Chain) -> dict:
    """Posterior means and standard deviations of the mixture weights."""
    if chain.samples.shape[0] == 0:
        raise ValueError("empty chain")
    logits = chain.samples[:, 2 * chain.n_latents :]
    v = np.concatenate([logits, np.zeros((logits.shape[0], 1))], axis=1)
    v = v - v.max(axis=1, keepdims=True)
    e = np.exp(v)
    w = e / e.sum(axis=1, keepdims=True)
    return {
        "w_mean": w.mean(axis=0).tolist(),
        "w_sd": w.std(axis=0).tolist(),
        "acceptance_rate": chain.acceptance_rate,
        "n_samples": int(w.shape[0]),
    }


def weight_quantiles(chain: Chain, lo: float = 0.025, hi: float = 0.975) -> tuple[np.ndarray, np.ndarray]:
    """Central-region bounds of the sampled weights, per component."""
    logits = chain.samples[:, 2 * chain.n_latents :]
    v = np.concatenate([logits, np.zeros((logits.shape[0], 1))], axis=1)
    e = np.exp(v - v.max(axis=1, keepdims=True))
    w = e / e.sum(axis=1, keepdims=True)
    return np.quantile(w, lo, axis=0), np.quantile(w, hi, axis=0)


def weight_posterior_experiment(
    prior: GmmPrior,
    flow: GenerativeFlow,
    n_obs: int,
    config: HmcConfig,
    rng: RngStream,
    noise_var: float = 1e-2,
) -> tuple[ObservationSet, Chain, dict]:
    """Full calibration run: synthesize observations, sample, summarize.

    Initialized at the ground-truth latents and weights (other inits
    converge to the same region but waste burn-in on flow integration).
    """
    obs = synthesize_observations(prior, n_obs, flow, rng.substream(0), noise_var)
    target = WeightPosterior(obs, prior, flow)
    q0 = target.pack(obs.z_true, truth_logits(prior.weights))
    chain = hmc_run(config, q0, target)
    chain.n_latents = target.n_latents
    return obs, chain, summarize(chain)


def save_chain_csv(chain: Chain, path: str | Path) -> None:
    """One retained sample per row: latent coordinates then free logits."""
    rows, cols = chain.samples.shape
    n_logits = cols - 2 * chain.n_latents
    header = [f"z{j}_{i}" for j in range(chain.n_latents) for i in range(2)]
    header += [f"logit{i}" for i in range(n_logits)]
    lines = [",".join(header)]
    for row in chain.samples:
        lines.append(",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def save_summary_json(summary: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

"""Probability-flow ODE: right-hand side, discretizations, and integrators.

The flow is integrated in the rescaled whitened coordinates x_tilde with

    dx_tilde/dt = -1/2 * alpha * gamma_dot * s(x_tilde / alpha, t)
                  + (alpha_dot / alpha) * x_tilde

where s is the score of the noise-smoothed data density in unscaled
coordinates; with a denoiser it is s = (D(x, t) - x) / gamma. Forward-time
integration ("inflate") maps data to the Gaussian latent; traversing the
same grid in reverse ("generate") maps latents back to data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .denoiser import TrainedDenoiser, forward as denoiser_forward, input_vjp
from .schedule import InflationSchedule

TRAJECTORY_MAGIC = b"IFLOT1"


class IntegrationError(RuntimeError):
    pass


class OracleGaussian:
    """Closed-form score for whitened standard-normal data.

    The smoothed density stays diagonal Gaussian with variance 1 + gamma,
    so the score is -x / (1 + gamma) and is valid at every t >= 0.
    """

    min_time = 0.0

    def __init__(self, schedule: InflationSchedule):
        self.schedule = schedule

    def score(self, x: np.ndarray, t: float) -> np.ndarray:
        return -x / (1.0 + self.schedule.at(t).gamma)

    def score_jac_diag(self, t: float) -> np.ndarray:
        return -1.0 / (1.0 + self.schedule.at(t).gamma)

    def score_vjp(self, x: np.ndarray, t: float, cotangent: np.ndarray) -> np.ndarray:
        return self.score_jac_diag(t) * cotangent


class NetworkScore:
    """Score backed by a trained denoiser, valid for t >= t_min."""

    def __init__(self, model: TrainedDenoiser, ema: bool = True):
        self.model = model
        self.ema = ema
        self.min_time = model.config.t_min

    @property
    def schedule(self) -> InflationSchedule:
        return self.model.schedule

    def score(self, x: np.ndarray, t: float) -> np.ndarray:
        return score_from_denoiser(self.model, x, t, ema=self.ema)

    def score_vjp(self, x: np.ndarray, t: float, cotangent: np.ndarray) -> np.ndarray:
        gamma = self.model.schedule.at(t).gamma
        pulled = input_vjp(self.model, x, t, cotangent / gamma, ema=self.ema)
        return pulled - cotangent / gamma


def oracle_score(x: np.ndarray, t: float, schedule: InflationSchedule) -> np.ndarray:
    """Score of the smoothed whitened-Gaussian reference: -x / (1 + gamma)."""
    return -np.asarray(x, dtype=float) / (1.0 + schedule.at(t).gamma)


def score_from_denoiser(model: TrainedDenoiser, x: np.ndarray, t: float, ema: bool = True) -> np.ndarray:
    """Score recovered from denoiser output: (D(x, t) - x) / gamma(t)."""
    if t < model.config.t_min:
        raise ValueError(f"t={t} below t_min={model.config.t_min}: gamma vanishes")
    gamma = model.schedule.at(t).gamma
    return (denoiser_forward(model, x, t, ema=ema) - x) / gamma


def rhs(x_tilde: np.ndarray, t: float, schedule: InflationSchedule, source) -> np.ndarray:
    """Velocity of the rescaled coordinate at time t."""
    ev = schedule.at(t)
    x = np.asarray(x_tilde, dtype=float)
    s = source.score(x / ev.alpha, t)
    out = -0.5 * ev.alpha * ev.gamma_dot * s + (ev.alpha_dot / ev.alpha) * x
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite velocity at t={t}")
    return out


def rhs_vjp(x_tilde: np.ndarray, t: float, schedule: InflationSchedule, source, cotangent: np.ndarray) -> np.ndarray:
    """(d rhs / d x_tilde)^T cotangent, for reverse mode through the flow."""
    ev = schedule.at(t)
    x = np.asarray(x_tilde, dtype=float)
    pulled = source.score_vjp(x / ev.alpha, t, -0.5 * ev.alpha * ev.gamma_dot * cotangent)
    return pulled / ev.alpha + (ev.alpha_dot / ev.alpha) * cotangent


def conditional_vf(x: np.ndarray, t: float, x1: np.ndarray, schedule: InflationSchedule) -> np.ndarray:
    """Vector field of the matrix-affine Gaussian interpolant conditioned on
    the data point x1: mean alpha * x1, covariance diag(alpha^2 gamma).

    Equals :func:`rhs` evaluated with the exact single-point score; used for
    the flow-matching equivalence checks. Undefined at t = 0 where the
    conditional covariance is singular.
    """
    if t <= 0.0:
        raise ValueError("conditional field undefined at t = 0 (singular covariance)")
    ev = schedule.at(t)
    x = np.asarray(x, dtype=float)
    return 0.5 * (ev.gamma_dot / ev.gamma) * (x - ev.alpha * x1) + (ev.alpha_dot / ev.alpha) * x


def isotropic_rhs(x: np.ndarray, t: float, schedule: InflationSchedule, source) -> np.ndarray:
    """Standard isotropic form -alpha^2 c cdot grad_x log p(x / alpha)
    + (alpha_dot / alpha) x, where c = sqrt(gamma) and the gradient is taken
    through the rescaled argument (contributing a 1/alpha chain factor).

    Only defined when gamma and alpha are uniform across dimensions; used to
    check that the general right-hand side reduces to it.
    """
    ev = schedule.at(t)
    if np.ptp(ev.gamma) != 0.0 or np.ptp(ev.alpha) != 0.0:
        raise ValueError("isotropic form requires uniform gamma and alpha")
    alpha = float(ev.alpha[0])
    c = np.sqrt(float(ev.gamma[0]))
    c_dot = float(ev.gamma_dot[0]) / (2.0 * c) if c > 0 else 0.0
    x = np.asarray(x, dtype=float)
    grad_rescaled = source.score(x / alpha, t) / alpha
    return -(alpha**2) * c_dot * c * grad_rescaled + (float(ev.alpha_dot[0]) / alpha) * x


@dataclass(frozen=True)
class Discretization:
    times: np.ndarray
    kind: str

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        object.__setattr__(self, "times", t)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("need at least two time points")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def n(self) -> int:
        return self.times.size


def uniform_grid(h: float, t_max: float) -> Discretization:
    """Linearly spaced nodes covering [0, t_max] with step h, both ends included."""
    if h <= 0:
        raise ValueError("step size must be positive")
    steps = int(round(t_max / h))
    if steps < 1:
        raise ValueError("step size exceeds t_max")
    return Discretization(np.linspace(0.0, t_max, steps + 1), "uniform")


def shifted_grid(n: int, eps_s: float, t_max: float) -> Discretization:
    """Linearly spaced nodes t_i = (i/(N-1)) (t_max - eps_s) + eps_s.

    Starts at eps_s > 0, so denoiser-backed flows stay away from the
    singular t = 0 endpoint.
    """
    if n < 2:
        raise ValueError("need at least two time points")
    if not 0 < eps_s < t_max:
        raise ValueError("require 0 < eps_s < t_max")
    i = np.arange(n)
    return Discretization(i / (n - 1) * (t_max - eps_s) + eps_s, "edm")


def discretize(kind: str, **params) -> Discretization:
    if kind == "uniform":
        return uniform_grid(params["h"], params["t_max"])
    if kind == "edm":
        return shifted_grid(params["n"], params.get("eps_s", 1e-2), params["t_max"])
    raise ValueError(f"unknown discretization kind {kind!r}")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), N, d), rescaled coordinates
    direction: str

    def __post_init__(self):
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError("state count must equal time count")

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def integrate(
    points: np.ndarray,
    disc: Discretization,
    direction: str,
    solver: str,
    schedule: InflationSchedule,
    source,
    keep_trajectory: bool = False,
) -> Trajectory:
    """Integrate the flow across the grid with Euler or Heun steps.

    ``points`` are rescaled coordinates at the first grid node ("inflate"
    traverses the grid forward, "generate" in reverse). Heun takes the Euler
    predictor then applies the trapezoidal corrector; the corrector is
    skipped only on a final step landing exactly on t = 0, where a
    denoiser-backed score is singular (the oracle has no singularity).
    Aborts with the step index if a state stops being finite.
    """
    if direction not in ("inflate", "generate"):
        raise ValueError(f"unknown direction {direction!r}")
    if solver not in ("euler", "heun"):
        raise ValueError(f"unknown solver {solver!r}")
    times = disc.times if direction == "inflate" else disc.times[::-1]
    min_time = getattr(source, "min_time", 0.0)

    x = np.atleast_2d(np.asarray(points, dtype=float)).copy()
    kept = [x.copy()] if keep_trajectory else None
    for i in range(times.size - 1):
        t0, t1 = float(times[i]), float(times[i + 1])
        if t0 < min_time:
            raise IntegrationError(
                f"step {i}: node t={t0} below the score's minimum valid time "
                f"{min_time}; use a grid starting above it"
            )
        h = t1 - t0
        d1 = rhs(x, t0, schedule, source)
        x_pred = x + h * d1
        if solver == "heun" and not (t1 < min_time):
            d2 = rhs(x_pred, t1, schedule, source)
            x = x + 0.5 * h * (d1 + d2)
        else:
            x = x_pred
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"non-finite state after step {i} (t={t1})")
        if keep_trajectory:
            kept.append(x.copy())

    if keep_trajectory:
        return Trajectory(times.copy(), np.stack(kept), direction)
    return Trajectory(np.array([times[0], times[-1]]), np.stack([np.atleast_2d(points), x]), direction)


def inflate(
    points_whitened: np.ndarray,
    schedule: InflationSchedule,
    source,
    disc: Discretization,
    solver: str = "heun",
    keep_trajectory: bool = False,
) -> Trajectory:
    """Data to latent: scale by alpha(t0) and integrate forward in time."""
    a0 = schedule.at(float(disc.times[0])).alpha
    return integrate(
        np.atleast_2d(points_whitened) * a0, disc, "inflate", solver, schedule, source, keep_trajectory
    )


def generate(
    latents: np.ndarray,
    schedule: InflationSchedule,
    source,
    disc: Discretization,
    solver: str = "heun",
    keep_trajectory: bool = False,
) -> Trajectory:
    """Latent to data: integrate the same grid in reverse.

    The final states are still rescaled; divide by alpha at the first grid
    node (:func:`unscale`) to recover whitened data coordinates.
    """
    return integrate(latents, disc, "generate", solver, schedule, source, keep_trajectory)


def unscale(x_tilde: np.ndarray, schedule: InflationSchedule, t: float) -> np.ndarray:
    return np.asarray(x_tilde, dtype=float) / schedule.at(t).alpha


def roundtrip(
    points_whitened: np.ndarray,
    schedule: InflationSchedule,
    source,
    disc: Discretization,
    solver: str = "heun",
) -> tuple[np.ndarray, np.ndarray]:
    """Inflate then generate; returns (reconstructed whitened points, latents)."""
    latents = inflate(points_whitened, schedule, source, disc, solver).final
    back = generate(latents, schedule, source, disc, solver).final
    return unscale(back, schedule, float(disc.times[0])), latents


def generate_with_pullback(
    latents: np.ndarray,
    schedule: InflationSchedule,
    source,
    disc: Discretization,
):
    """Generate with Heun, returning the whitened output and a pullback that
    maps cotangents on the output to cotangents on the latents by reverse
    mode through the unrolled steps."""
    times = disc.times[::-1]
    min_time = getattr(source, "min_time", 0.0)
    if float(times[-1]) < min_time:
        raise IntegrationError("grid endpoint below the score's minimum valid time")

    x = np.atleast_2d(np.asarray(latents, dtype=float)).copy()
    tape = []
    for i in range(times.size - 1):
        t0, t1 = float(times[i]), float(times[i + 1])
        h = t1 - t0
        d1 = rhs(x, t0, schedule, source)
        x_pred = x + h * d1
        d2 = rhs(x_pred, t1, schedule, source)
        tape.append((x.copy(), x_pred, t0, t1, h))
        x = x + 0.5 * h * (d1 + d2)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"non-finite state after step {i} (t={t1})")

    a_end = schedule.at(float(times[-1])).alpha
    out = x / a_end

    def pullback(cotangent: np.ndarray) -> np.ndarray:
        cot = np.atleast_2d(np.asarray(cotangent, dtype=float)) / a_end
        for x0, x_pred, t0, t1, h in reversed(tape):
            w = rhs_vjp(x_pred, t1, schedule, source, cot)
            cot = cot + 0.5 * h * w + 0.5 * h * rhs_vjp(x0, t0, schedule, source, cot + h * w)
        return cot

    return out, pullback


def save_trajectory(traj: Trajectory, path: str | Path) -> None:
    """Binary trajectory block mirroring the checkpoint container."""
    header = {
        "times": traj.times.tolist(),
        "direction": traj.direction,
        "shape": list(traj.states.shape),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(TRAJECTORY_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        fh.write(np.ascontiguousarray(traj.states, dtype="<f8").tobytes())


def load_trajectory(path: str | Path) -> Trajectory:
    raw = Path(path).read_bytes()
    if raw[: len(TRAJECTORY_MAGIC)] != TRAJECTORY_MAGIC:
        raise ValueError(f"{path}: not a trajectory file (bad magic)")
    header_len = int.from_bytes(raw[len(TRAJECTORY_MAGIC) : len(TRAJECTORY_MAGIC) + 8], "little")
    start = len(TRAJECTORY_MAGIC) + 8
    header = json.loads(raw[start : start + header_len].decode("utf-8"))
    shape = tuple(header["shape"])
    states = np.frombuffer(raw, dtype="<f8", count=int(np.prod(shape)), offset=start + header_len)
    return Trajectory(np.asarray(header["times"]), states.reshape(shape).astype(float), header["direction"])

"""Variance-inflation schedules in the whitened eigenbasis.

A schedule fixes, per dimension j, the smoothing-kernel variance
``gamma_j(t) = exp(rho * g_j * t) - 1`` and the coordinate rescaling
``alpha(t) = exp(-rho * g_star * t / 2)`` with ``g_star = max(g)``. The
PR-preserving (PRP) schedule inflates all dimensions at the same rate
(g = 1, rho = 2 by default) and leaves the participation ratio constant;
the PR-reducing (PRR) schedule inflates the top ``K`` eigendirections
faster, shrinking the rest by ``exp(-rho * gap * t)`` in the rescaled
coordinates. Whitened data (unit variance per axis) is assumed throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import RngStream, sample_diag_gaussian

EXP_GUARD = 700.0


def build_rates(d: int, preserved: int, gap: float) -> np.ndarray:
    """Per-dimension rate multipliers: 2 on the top ``preserved``
    eigendirections, ``2 - gap`` on the rest.

    ``gap = 0`` with ``preserved = d`` degenerates to the all-equal case.
    """
    if not 1 <= preserved <= d:
        raise ValueError(f"preserved count {preserved} out of range [1, {d}]")
    if not 0.0 <= gap <= 2.0:
        raise ValueError(f"gap {gap} out of range [0, 2]")
    g = np.full(d, 2.0 - gap)
    g[:preserved] = 2.0
    return g


@dataclass(frozen=True)
class ScheduleEval:
    """Kernel variances, rescaling factors, and their time derivatives."""

    gamma: np.ndarray
    gamma_dot: np.ndarray
    alpha: np.ndarray
    alpha_dot: np.ndarray


@dataclass(frozen=True)
class InflationSchedule:
    kind: str  # "prp" | "prr"
    d: int
    rho: float
    rates: np.ndarray  # per-dimension multiplier g, max entry g_star
    t_max: float

    def __post_init__(self):
        object.__setattr__(self, "rates", np.asarray(self.rates, dtype=float))
        if self.kind not in ("prp", "prr"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.rates.shape != (self.d,):
            raise ValueError("rates must be a length-d vector")
        if self.kind == "prp" and not np.all(self.rates == 1.0):
            raise ValueError("PRP schedule requires all rates equal to 1")
        if np.any(self.rates < 0):
            raise ValueError("rates must be nonnegative")
        if self.rate_star <= 0 or self.t_max <= 0 or self.rho <= 0:
            raise ValueError("rho, max rate, and t_max must be positive")

    @classmethod
    def prp(cls, d: int, t_max: float, rho: float = 2.0) -> "InflationSchedule":
        return cls("prp", d, rho, np.ones(d), t_max)

    @classmethod
    def prr(
        cls,
        d: int,
        preserved: int,
        gap: float,
        t_max: float,
        rho: float = 1.0,
        top_rate: float = 2.0,
    ) -> "InflationSchedule":
        """PRR schedule keeping the top ``preserved`` eigendirections.

        ``top_rate`` defaults to the standard 2; the softened variants used
        by the mesh/posterior experiments pass e.g. top_rate=1.15, gap=0.3.
        """
        if not 1 <= preserved <= d:
            raise ValueError(f"preserved count {preserved} out of range [1, {d}]")
        if gap < 0 or gap > top_rate:
            raise ValueError(f"gap {gap} out of range [0, {top_rate}]")
        g = np.full(d, top_rate - gap)
        g[:preserved] = top_rate
        return cls("prr", d, rho, g, t_max)

    @property
    def rate_star(self) -> float:
        return float(np.max(self.rates))

    @property
    def preserved(self) -> np.ndarray:
        """Indices inflated at the top rate."""
        return np.flatnonzero(self.rates == self.rate_star)

    @property
    def gap(self) -> float:
        return float(self.rate_star - np.min(self.rates))

    def at(self, t: float) -> ScheduleEval:
        """Evaluate gamma, alpha, and derivatives at time t in [0, t_max]."""
        if not 0.0 <= t <= self.t_max * (1 + 1e-12):
            raise ValueError(f"t={t} outside [0, {self.t_max}]")
        exponents = self.rho * self.rates * t
        if np.max(exponents) > EXP_GUARD:
            raise ValueError(f"exponent overflow: rho*g*t = {np.max(exponents):.1f} > {EXP_GUARD}")
        growth = np.exp(exponents)
        gamma = np.expm1(exponents)
        gamma_dot = self.rho * self.rates * growth
        a = np.exp(-0.5 * self.rho * self.rate_star * t)
        alpha = np.full(self.d, a)
        alpha_dot = np.full(self.d, -0.5 * self.rho * self.rate_star * a)
        return ScheduleEval(gamma, gamma_dot, alpha, alpha_dot)

    def latent_cov(self) -> np.ndarray:
        """Rescaled total variance alpha^2 (1 + gamma) at t_max, per axis.

        Exactly 1 on dimensions inflated at the top rate,
        ``exp(-rho * (g_star - g_j) * t_max)`` on the rest.
        """
        return np.exp(-self.rho * (self.rate_star - self.rates) * self.t_max)

    def to_json(self) -> dict:
        rle: list[list] = []
        for g in self.rates:
            if rle and rle[-1][0] == float(g):
                rle[-1][1] += 1
            else:
                rle.append([float(g), 1])
        return {"kind": self.kind, "d": self.d, "rho": self.rho, "g": rle, "t_max": self.t_max}

    @classmethod
    def from_json(cls, obj: dict) -> "InflationSchedule":
        rates = np.concatenate([np.full(int(count), float(value)) for value, count in obj["g"]])
        return cls(obj["kind"], int(obj["d"]), float(obj["rho"]), rates, float(obj["t_max"]))


def sample_latent(schedule: InflationSchedule, n: int, rng: RngStream) -> np.ndarray:
    """Draw n latent points from N(0, diag(latent_cov)) in rescaled coords."""
    cov = schedule.latent_cov()
    return sample_diag_gaussian(rng, np.zeros((n, schedule.d)), np.broadcast_to(cov, (n, schedule.d)))


def _participation_ratio(variances: np.ndarray) -> float:
    total = variances.sum()
    return float(total * total / np.square(variances).sum())


def pr_trajectory(sigma0_sq: Sequence[float], rates: Sequence[float], rho: float, t: float) -> float:
    """Participation ratio of diag(sigma0^2 * exp(rho * g * t)).

    Exponents are normalized by their maximum before exponentiation (the PR
    is scale invariant), so arbitrarily long times do not overflow.
    """
    s0 = np.asarray(sigma0_sq, dtype=float)
    g = np.asarray(rates, dtype=float)
    if np.any(s0 <= 0):
        raise ValueError("sigma0_sq must be positive")
    expo = rho * g * t
    variances = s0 * np.exp(expo - np.max(expo))
    return _participation_ratio(variances)


def pr_attractor(sigma0_sq: Sequence[float], rates: Sequence[float], rho: float, t: float) -> float:
    """The value the PR dynamics is driven toward at time t:
    ``(sum gamma)(sum g gamma) / (sum g gamma^2)`` with
    ``gamma_j = sigma0_j^2 exp(rho g_j t)``.

    Under an expansive flow the signed gap (PR - attractor) decays, and for
    anisotropic rates the attractor converges to the PR of the truncated
    spectrum (top-rate dimensions only).
    """
    s0 = np.asarray(sigma0_sq, dtype=float)
    g = np.asarray(rates, dtype=float)
    expo = rho * g * t
    gamma = s0 * np.exp(expo - np.max(expo))
    denom = float(np.sum(g * gamma * gamma))
    if denom == 0.0:
        raise ValueError("zero denominator in PR attractor")
    return float(np.sum(gamma) * np.sum(g * gamma) / denom)

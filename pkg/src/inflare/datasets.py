"""Toy dataset generators, standardization, and the whitened eigenbasis.

Every flow in this package operates on whitened coordinates
``x_w = diag(1/sigma0) W^T (x - mean)`` built from the sample covariance of
the (usually standardized) data, so that each coordinate has unit variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import RngStream, sym_eig

KINDS = (
    "circles",
    "moons",
    "sine",
    "s_curve",
    "swirl",
    "circles_embedded_plane",
    "circles_embedded_curved",
    "s_curve_scaled",
    "swirl_scaled",
)

EMBEDDED_KINDS = ("circles_embedded_plane", "circles_embedded_curved")

EIGENVALUE_FLOOR_RATIO = 1e-6

# Population moments of the raw 3D generators, used by the *_scaled variants
# to rescale coordinates to exact population variances (thickness axis 0.5,
# the rest 1). Closed forms for theta ~ U(-3pi/2, 3pi/2) (s_curve) and
# theta ~ U(pi, 4pi) (swirl).
S_CURVE_MEAN = np.array([0.0, 1.0, 0.0])
S_CURVE_VAR = np.array([0.5, 1.0 / 3.0, 1.5 + 4.0 / (3.0 * math.pi)])
SWIRL_MEAN = np.array(
    [2.0 / (9.0 * math.pi**2), 0.5, -5.0 / (9.0 * math.pi)]
)
SWIRL_VAR = np.array(
    [
        (3.5 * math.pi**2 + 0.25) / (9.0 * math.pi**2) - (2.0 / (9.0 * math.pi**2)) ** 2,
        1.0 / 12.0,
        (3.5 * math.pi**2 - 0.25) / (9.0 * math.pi**2) - (5.0 / (9.0 * math.pi)) ** 2,
    ]
)
# Coordinate rescaled to variance 0.5 by the *_scaled variants.
SCALED_HALF_VAR_AXIS = {"s_curve_scaled": 2, "swirl_scaled": 1}


@dataclass(frozen=True)
class DatasetKind:
    """A named generator plus its parameters."""

    name: str
    n: int
    noise_sd: float = 0.0
    seed: int = 0
    thickness_sd: float = 0.0

    def __post_init__(self):
        if self.name not in KINDS:
            raise ValueError(f"unknown dataset kind {self.name!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if self.thickness_sd != 0.0 and self.name not in EMBEDDED_KINDS:
            raise ValueError("thickness_sd only applies to embedded kinds")


@dataclass
class PointCloud:
    name: str
    points: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ValueError("points must be a nonempty N x d array")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points contain non-finite entries")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class EigenFrame:
    """Mean, eigenvector columns W, and (floored) eigenvalues of a cloud."""

    mean: np.ndarray
    w: np.ndarray
    sigma0_sq: np.ndarray

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @property
    def sigma0(self) -> np.ndarray:
        return np.sqrt(self.sigma0_sq)


def _circles_2d(n: int, rng: RngStream) -> np.ndarray:
    n_out = (n + 1) // 2
    n_in = n - n_out
    theta = rng.uniform(0.0, 2.0 * math.pi, (n,))
    radii = np.concatenate([np.full(n_out, 1.0), np.full(n_in, 0.5)])
    return np.column_stack([radii * np.cos(theta), radii * np.sin(theta)])


def _moons(n: int, rng: RngStream) -> np.ndarray:
    n_out = (n + 1) // 2
    n_in = n - n_out
    t_out = rng.uniform(0.0, math.pi, (n_out,))
    t_in = rng.uniform(0.0, math.pi, (n_in,))
    outer = np.column_stack([np.cos(t_out), np.sin(t_out)])
    inner = np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)])
    return np.vstack([outer, inner])


def _sine(n: int, rng: RngStream) -> np.ndarray:
    x = rng.uniform(-math.pi, math.pi, (n,))
    return np.column_stack([x, np.sin(2.0 * x)])


def _s_curve(n: int, rng: RngStream) -> np.ndarray:
    theta = rng.uniform(-1.5 * math.pi, 1.5 * math.pi, (n,))
    u = rng.uniform(0.0, 2.0, (n,))
    return np.column_stack([np.sin(theta), u, np.sign(theta) * (np.cos(theta) - 1.0)])


def _swirl(n: int, rng: RngStream) -> np.ndarray:
    theta = rng.uniform(math.pi, 4.0 * math.pi, (n,))
    y = rng.uniform(0.0, 1.0, (n,))
    r = theta / (3.0 * math.pi)
    return np.column_stack([r * np.cos(theta), y, r * np.sin(theta)])


def embedding_matrix() -> np.ndarray:
    """Fixed orthonormal 3x2 matrix used by the planar embedding.

    Built once from a QR factorization of a seeded random matrix; the seed
    is a build constant so every run embeds into the same plane.
    """
    gen = RngStream(1618033988)
    q, r = np.linalg.qr(gen.normal((3, 2)))
    return q * np.sign(np.diag(r))


def generate(kind: DatasetKind) -> PointCloud:
    """Draw a point cloud from one of the named toy generators.

    ``noise_sd`` adds isotropic Gaussian jitter to the generated points (for
    embedded kinds it jitters the base 2D circles before embedding, keeping
    the noiseless clouds exactly rank-2); ``thickness_sd`` adds isotropic 3D
    jitter after embedding. The *_scaled kinds return clouds rescaled by
    their analytic population moments so one axis has variance 0.5 and the
    others 1.
    """
    rng = RngStream(kind.seed)
    name, n = kind.name, kind.n

    if name in ("circles", "circles_embedded_plane", "circles_embedded_curved"):
        base = _circles_2d(n, rng)
        if kind.noise_sd > 0:
            base = base + kind.noise_sd * rng.normal(base.shape)
        if name == "circles":
            points = base
        elif name == "circles_embedded_plane":
            m = embedding_matrix()
            points = base @ m.T
        else:
            z = np.sign(base[:, 1]) * base[:, 1] ** 2
            points = np.column_stack([base, z])
        if name in EMBEDDED_KINDS and kind.thickness_sd > 0:
            points = points + kind.thickness_sd * rng.normal(points.shape)
        meta = {"embedding": embedding_matrix().tolist()} if name == "circles_embedded_plane" else {}
        return PointCloud(name, points, meta)

    if name == "moons":
        points = _moons(n, rng)
    elif name == "sine":
        points = _sine(n, rng)
    elif name in ("s_curve", "s_curve_scaled"):
        points = _s_curve(n, rng)
    elif name in ("swirl", "swirl_scaled"):
        points = _swirl(n, rng)
    else:  # pragma: no cover - guarded by DatasetKind
        raise ValueError(f"unknown dataset kind {name!r}")

    if name in SCALED_HALF_VAR_AXIS:
        mean, var = (S_CURVE_MEAN, S_CURVE_VAR) if name.startswith("s_curve") else (SWIRL_MEAN, SWIRL_VAR)
        target = np.ones(3)
        target[SCALED_HALF_VAR_AXIS[name]] = 0.5
        points = (points - mean) * np.sqrt(target / var)

    if kind.noise_sd > 0:
        points = points + kind.noise_sd * rng.normal(points.shape)
    return PointCloud(name, points)


def standardize(pc: PointCloud) -> tuple[PointCloud, np.ndarray, np.ndarray]:
    """Shift/scale each coordinate to sample mean 0 and variance 1.

    Returns the standardized cloud plus the affine parameters (mean, scale)
    needed to invert the map. Raises on a constant coordinate.
    """
    mean = pc.points.mean(axis=0)
    scale = pc.points.std(axis=0)
    if np.any(scale == 0):
        bad = int(np.flatnonzero(scale == 0)[0])
        raise ValueError(f"coordinate {bad} is constant; cannot standardize")
    out = PointCloud(pc.name, (pc.points - mean) / scale, dict(pc.meta))
    return out, mean, scale


def estimate_eigenframe(pc: PointCloud, floor_ratio: float = EIGENVALUE_FLOOR_RATIO) -> EigenFrame:
    """Eigenframe of the sample covariance, eigenvalues floored.

    Eigenvalues below ``floor_ratio * max`` are clamped so whitening stays
    finite on rank-deficient clouds (the embedded toys at zero noise).
    Requires N > d.
    """
    x = pc.points
    n, d = x.shape
    if n <= d:
        raise ValueError(f"need more points than dimensions (N={n}, d={d})")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / n
    vals, vecs = sym_eig(cov)
    floor = floor_ratio * vals[0]
    vals = np.maximum(vals, floor)
    return EigenFrame(mean=mean, w=vecs, sigma0_sq=vals)


def whiten(points: np.ndarray, frame: EigenFrame) -> np.ndarray:
    """Map points into the whitened eigenbasis diag(1/sigma0) W^T (x - mean)."""
    points = np.asarray(points, dtype=float)
    if points.shape[-1] != frame.d:
        raise ValueError(f"dimension mismatch: points d={points.shape[-1]}, frame d={frame.d}")
    return (points - frame.mean) @ frame.w / frame.sigma0


def unwhiten(points_w: np.ndarray, frame: EigenFrame) -> np.ndarray:
    """Exact inverse of :func:`whiten`."""
    points_w = np.asarray(points_w, dtype=float)
    if points_w.shape[-1] != frame.d:
        raise ValueError(f"dimension mismatch: points d={points_w.shape[-1]}, frame d={frame.d}")
    return (points_w * frame.sigma0) @ frame.w.T + frame.mean


def save_csv(pc: PointCloud, path: str | Path) -> None:
    """Write one point per row with header x0,...,x{d-1}, full f64 precision."""
    path = Path(path)
    header = ",".join(f"x{i}" for i in range(pc.d))
    lines = [header]
    for row in pc.points:
        lines.append(",".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


def load_csv(path: str | Path, name: str | None = None) -> PointCloud:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
        if not all(h == f"x{i}" for i, h in enumerate(header)):
            raise ValueError(f"unexpected CSV header {header!r}")
        rows = [[float(v) for v in line.strip().split(",")] for line in fh if line.strip()]
    return PointCloud(name or path.stem, np.asarray(rows, dtype=float))

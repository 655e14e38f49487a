"""Evaluation metrics and calibration geometry: participation ratio,
round-trip error, transported-boundary coverage, and residual
autocorrelation along flow trajectories."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import RngStream
from .denoiser import TrainedDenoiser, forward as denoiser_forward
from .pfode import Discretization, NetworkScore, generate, inflate, integrate
from .schedule import InflationSchedule, sample_latent

INCIDENCE_TOL = 1e-12

# Fixed, slightly irrational ray direction for 3D parity tests; avoids
# grazing edges of the symmetric icosphere meshes.
RAY_DIRECTION = np.array([0.5403023058681398, 0.8414709848078965, 0.0173205080756888])
RAY_DIRECTION = RAY_DIRECTION / np.linalg.norm(RAY_DIRECTION)


class BoundaryTopologyError(RuntimeError):
    pass


def participation_ratio(eigvals_or_cov: np.ndarray) -> float:
    """Second-moment dimensionality (sum of variances)^2 / sum of squares.

    Accepts a spectrum (1-D) or a covariance matrix (2-D, computed as
    tr(S)^2 / tr(S^2) without an eigendecomposition).
    """
    a = np.asarray(eigvals_or_cov, dtype=float)
    if a.ndim == 1:
        total = a.sum()
        denom = np.square(a).sum()
    elif a.ndim == 2 and a.shape[0] == a.shape[1]:
        total = np.trace(a)
        denom = np.trace(a @ a)
    else:
        raise ValueError(f"expected a spectrum or square covariance, got shape {a.shape}")
    if denom == 0.0:
        raise ValueError("all-zero spectrum")
    return float(total * total / denom)


def roundtrip_mse(original: np.ndarray, reconstructed: np.ndarray) -> float:
    """Mean squared coordinate error between matched point sets."""
    a = np.asarray(original, dtype=float)
    b = np.asarray(reconstructed, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


@dataclass
class BoundarySet:
    """Closed boundary transported through the flow for coverage tests.

    2D: vertices form an ordered simple loop. 3D: a watertight, orientable
    triangulation (every edge shared by exactly two triangles). The
    triangulation is fixed before transport, so only vertex positions move.
    """

    vertices: np.ndarray
    faces: np.ndarray | None  # (F, 3) triangle indices, None in 2D
    mahal_radius: float
    ref_cov: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float)
        if self.faces is not None:
            self.faces = np.asarray(self.faces, dtype=int)
        self.validate()

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    def validate(self) -> None:
        if not np.all(np.isfinite(self.vertices)):
            raise BoundaryTopologyError("boundary has non-finite vertices")
        if self.dim == 2:
            if self.faces is not None:
                raise BoundaryTopologyError("2D boundary must be a vertex loop")
            if self.vertices.shape[0] < 3:
                raise BoundaryTopologyError("2D loop needs at least 3 vertices")
            if _loop_self_intersects(self.vertices):
                raise BoundaryTopologyError("2D loop is self-intersecting")
        elif self.dim == 3:
            if self.faces is None:
                raise BoundaryTopologyError("3D boundary needs a triangulation")
            _check_watertight(self.vertices, self.faces)
        else:
            raise BoundaryTopologyError(f"unsupported boundary dimension {self.dim}")

    def replace_vertices(self, vertices: np.ndarray) -> "BoundarySet":
        return BoundarySet(vertices, self.faces, self.mahal_radius, self.ref_cov)


def _segments_properly_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(p3, p4, p1)
    d2 = orient(p3, p4, p2)
    d3 = orient(p1, p2, p3)
    d4 = orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def _loop_self_intersects(verts: np.ndarray) -> bool:
    b = verts.shape[0]
    for i in range(b):
        p1, p2 = verts[i], verts[(i + 1) % b]
        for j in range(i + 1, b):
            if j == i or (j + 1) % b == i or (i + 1) % b == j:
                continue  # adjacent edges share a vertex
            if _segments_properly_intersect(p1, p2, verts[j], verts[(j + 1) % b]):
                return True
    return False


def _check_watertight(verts: np.ndarray, faces: np.ndarray) -> None:
    edges: dict[tuple[int, int], int] = {}
    directed: set[tuple[int, int]] = set()
    for f in faces:
        a, b, c = (int(v) for v in f)
        for u, v in ((a, b), (b, c), (c, a)):
            if (u, v) in directed:
                raise BoundaryTopologyError("triangulation is not orientable (repeated directed edge)")
            directed.add((u, v))
            key = (min(u, v), max(u, v))
            edges[key] = edges.get(key, 0) + 1
    counts = set(edges.values())
    if counts != {2}:
        raise BoundaryTopologyError(f"mesh is not watertight (edge incidence counts {sorted(counts)})")
    areas = np.linalg.norm(
        np.cross(verts[faces[:, 1]] - verts[faces[:, 0]], verts[faces[:, 2]] - verts[faces[:, 0]]),
        axis=1,
    )
    if np.any(areas < 1e-300):
        raise BoundaryTopologyError("mesh contains degenerate triangles")


def icosphere(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere: icosahedron subdivided ``level`` times, vertices on
    the sphere, outward-oriented faces. Level 2 has 162 vertices and 320
    triangles."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=int,
    )
    for _ in range(level):
        vlist = list(verts)
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = vlist[i] + vlist[j]
                vlist.append(m / np.linalg.norm(m))
                cache[key] = len(vlist) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.asarray(vlist)
        faces = np.asarray(new_faces, dtype=int)

    volume = np.einsum("ij,ij->i", verts[faces[:, 0]], np.cross(verts[faces[:, 1]], verts[faces[:, 2]])).sum()
    if volume < 0:
        faces = faces[:, ::-1]
    return verts, faces


def make_ball_boundary(
    d: int, radius: float, latent_cov_diag: np.ndarray, n_target: int = 200
) -> BoundarySet:
    """Boundary of a Mahalanobis ball of the reference covariance.

    2D: ``n_target`` angle-ordered vertices on the scaled circle. 3D: the
    icosphere whose vertex count is closest to ``n_target`` (162 for the
    default 200), scaled per axis by radius * sqrt(cov).
    """
    cov = np.asarray(latent_cov_diag, dtype=float)
    if radius <= 0:
        raise ValueError("radius must be positive")
    if np.any(cov <= 0):
        raise ValueError("reference covariance must be positive")
    if cov.shape != (d,):
        raise ValueError(f"covariance diagonal must have length {d}")
    scale = radius * np.sqrt(cov)
    if d == 2:
        theta = np.linspace(0.0, 2.0 * np.pi, n_target, endpoint=False)
        verts = np.column_stack([np.cos(theta), np.sin(theta)]) * scale
        return BoundarySet(verts, None, radius, cov)
    if d == 3:
        best_level, best_gap = 0, np.inf
        for level in range(5):
            n_verts = 12
            for _ in range(level):
                n_verts = 4 * n_verts - 6  # V' = V + E with E = 3V - 6 on a sphere
            if abs(n_verts - n_target) < best_gap:
                best_level, best_gap = level, abs(n_verts - n_target)
        verts, faces = icosphere(best_level)
        return BoundarySet(verts * scale, faces, radius, cov)
    raise ValueError(f"unsupported dimension {d}")


def _inside_loop(points: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Even-odd horizontal ray casting; points within 1e-12 of an edge count
    as inside."""
    px = points[:, 0][:, None]
    py = points[:, 1][:, None]
    x0, y0 = verts[:, 0][None, :], verts[:, 1][None, :]
    nxt = np.roll(np.arange(verts.shape[0]), -1)
    x1, y1 = verts[nxt, 0][None, :], verts[nxt, 1][None, :]

    straddles = (y0 > py) != (y1 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    crossings = straddles & (px < x_cross)
    inside = (crossings.sum(axis=1) % 2) == 1

    ex, ey = x1 - x0, y1 - y0
    seg_len_sq = ex * ex + ey * ey
    tt = np.clip(((px - x0) * ex + (py - y0) * ey) / seg_len_sq, 0.0, 1.0)
    dist_sq = (px - (x0 + tt * ex)) ** 2 + (py - (y0 + tt * ey)) ** 2
    on_edge = np.any(dist_sq <= INCIDENCE_TOL**2, axis=1)
    return inside | on_edge


def _inside_mesh(points: np.ndarray, verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Ray-triangle parity along the fixed ray direction; on-surface points
    (hit distance within 1e-12) count as inside."""
    v0 = verts[faces[:, 0]]
    e1 = verts[faces[:, 1]] - v0
    e2 = verts[faces[:, 2]] - v0
    pvec = np.cross(RAY_DIRECTION, e2)
    det = np.einsum("fj,fj->f", e1, pvec)
    ok_det = np.abs(det) > 1e-300
    inv_det = np.where(ok_det, 1.0 / np.where(ok_det, det, 1.0), 0.0)

    inside = np.zeros(points.shape[0], dtype=bool)
    chunk = max(1, int(4e6 // max(faces.shape[0], 1)))
    for lo in range(0, points.shape[0], chunk):
        p = points[lo : lo + chunk]
        tvec = p[:, None, :] - v0[None, :, :]
        u = np.einsum("pfj,fj->pf", tvec, pvec) * inv_det
        qvec = np.cross(tvec, e1[None, :, :])
        v = np.einsum("pfj,j->pf", qvec, RAY_DIRECTION) * inv_det
        t_hit = np.einsum("pfj,fj->pf", qvec, e2) * inv_det
        valid = ok_det[None, :] & (u >= 0) & (v >= 0) & (u + v <= 1)
        hits = valid & (t_hit > INCIDENCE_TOL)
        on_surface = valid & (np.abs(t_hit) <= INCIDENCE_TOL)
        inside[lo : lo + chunk] = ((hits.sum(axis=1) % 2) == 1) | np.any(on_surface, axis=1)
    return inside


def coverage_fraction(points: np.ndarray, boundary: BoundarySet) -> float:
    """Fraction of points strictly inside the boundary (boundary-incident
    points, within 1e-12, count as inside)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != boundary.dim:
        raise ValueError("point dimension does not match boundary")
    if boundary.dim == 2:
        mask = _inside_loop(pts, boundary.vertices)
    else:
        mask = _inside_mesh(pts, boundary.vertices, boundary.faces)
    return float(mask.mean())


@dataclass(frozen=True)
class CoverageReport:
    radius: float
    frac_before: float
    frac_after: float
    n_test: int
    direction: str

    def __post_init__(self):
        if not (0.0 <= self.frac_before <= 1.0 and 0.0 <= self.frac_after <= 1.0):
            raise ValueError("coverage fractions must lie in [0, 1]")

    def to_json(self) -> dict:
        return {
            "radius": self.radius,
            "frac_before": self.frac_before,
            "frac_after": self.frac_after,
            "n_test": self.n_test,
            "direction": self.direction,
        }


def coverage_experiment(
    source,
    schedule: InflationSchedule,
    radii,
    n_test: int,
    solver: str,
    disc: Discretization,
    rng: RngStream,
    n_boundary: int = 200,
) -> list[CoverageReport]:
    """Transport latent test points and ball boundaries through generation,
    then back through inflation, recomputing coverage at each end.

    The boundary topology is fixed; after each transport the boundary is
    re-validated and failures raise rather than being silently accepted.
    Reports carry (radius, coverage before, coverage after) per direction.
    """
    radii = [float(r) for r in radii]
    cov = schedule.latent_cov()
    test_points = sample_latent(schedule, n_test, rng)
    boundaries = [make_ball_boundary(schedule.d, r, cov, n_boundary) for r in radii]
    counts = [b.vertices.shape[0] for b in boundaries]

    def split(block: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        pts = block[:n_test]
        out, at = [], n_test
        for c in counts:
            out.append(block[at : at + c])
            at += c
        return pts, out

    block = np.vstack([test_points] + [b.vertices for b in boundaries])
    frac_latent = [coverage_fraction(test_points, b) for b in boundaries]

    gen_block = generate(block, schedule, source, disc, solver).final
    gen_pts, gen_verts = split(gen_block)
    gen_boundaries = [b.replace_vertices(v) for b, v in zip(boundaries, gen_verts)]
    frac_generated = [coverage_fraction(gen_pts, b) for b in gen_boundaries]

    back_block = integrate(gen_block, disc, "inflate", solver, schedule, source).final
    back_pts, back_verts = split(back_block)
    back_boundaries = [b.replace_vertices(v) for b, v in zip(boundaries, back_verts)]
    frac_back = [coverage_fraction(back_pts, b) for b in back_boundaries]

    reports = []
    for i, r in enumerate(radii):
        reports.append(CoverageReport(r, frac_latent[i], frac_generated[i], n_test, "generate"))
        reports.append(CoverageReport(r, frac_generated[i], frac_back[i], n_test, "inflate"))
    return reports


@dataclass
class AcfReport:
    """Mean scaled diagonal correlation of denoiser residuals per time lag."""

    lag_times: np.ndarray
    acf: np.ndarray

    def __post_init__(self):
        if abs(self.acf[0] - 1.0) > 1e-10:
            raise ValueError("lag-0 correlation must be 1")


def residual_acf_from_residuals(residuals: np.ndarray, times: np.ndarray | None = None) -> AcfReport:
    """Scaled cross-correlation of residuals along a trajectory, averaged on
    the diagonal band per lag.

    ``residuals`` has shape (T, N, d): per time node, N samples of the
    d-dimensional residual. Correlations are normalized by the per-time,
    per-dimension residual standard deviations; constant residuals raise.
    """
    res = np.asarray(residuals, dtype=float)
    if res.ndim != 3:
        raise ValueError("residuals must have shape (T, N, d)")
    n_t, n, d = res.shape
    centered = res - res.mean(axis=1, keepdims=True)
    sd = centered.std(axis=1)
    if np.any(sd == 0.0):
        raise ValueError("zero-variance residuals")

    acf = np.zeros(n_t)
    for i in range(d):
        e = centered[:, :, i]
        corr = (e @ e.T) / n / np.outer(sd[:, i], sd[:, i])
        for lag in range(n_t):
            acf[lag] += np.mean(np.diagonal(corr, offset=lag))
    acf /= d
    if times is None:
        lag_times = np.arange(n_t, dtype=float)
    else:
        lag_times = np.asarray(times, dtype=float) - float(times[0])
    return AcfReport(lag_times, acf)


def residual_autocorrelation(
    model: TrainedDenoiser,
    points_whitened: np.ndarray,
    schedule: InflationSchedule,
    disc: Discretization,
    ema: bool = True,
    solver: str = "heun",
) -> AcfReport:
    """Denoiser-residual autocorrelation along inflation trajectories.

    Each clean sample y is inflated through the grid; the residual at node k
    is D(x(t_k), t_k) - y in unscaled coordinates.
    """
    y = np.atleast_2d(np.asarray(points_whitened, dtype=float))
    traj = inflate(y, schedule, NetworkScore(model, ema), disc, solver, keep_trajectory=True)
    residuals = np.empty_like(traj.states)
    for k, t in enumerate(traj.times):
        x = traj.states[k] / schedule.at(float(t)).alpha
        residuals[k] = denoiser_forward(model, x, float(t), ema=ema) - y
    return residual_acf_from_residuals(residuals, traj.times)


def save_boundary(boundary: BoundarySet, path: str | Path) -> None:
    """CSV loop for 2D boundaries, OFF-format text for 3D meshes."""
    path = Path(path)
    if boundary.dim == 2:
        lines = ["x0,x1"] + [",".join(repr(float(v)) for v in row) for row in boundary.vertices]
        path.write_text("\n".join(lines) + "\n")
        return
    lines = ["OFF", f"{boundary.vertices.shape[0]} {boundary.faces.shape[0]} 0"]
    lines += [" ".join(repr(float(v)) for v in row) for row in boundary.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in f) for f in boundary.faces]
    path.write_text("\n".join(lines) + "\n")

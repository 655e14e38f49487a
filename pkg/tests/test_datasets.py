import numpy as np
import pytest

from inflare.core import sym_eig
from inflare.datasets import (
    KINDS,
    DatasetKind,
    PointCloud,
    S_CURVE_MEAN,
    S_CURVE_VAR,
    SWIRL_MEAN,
    SWIRL_VAR,
    embedding_matrix,
    estimate_eigenframe,
    generate,
    load_csv,
    save_csv,
    standardize,
    unwhiten,
    whiten,
)


def cloud(kind, n, noise=0.0, seed=0, thickness=0.0):
    return generate(DatasetKind(kind, n, noise, seed, thickness))


def manifold_residual(name: str, pts: np.ndarray) -> np.ndarray:
    """Distance-like residual of noise-free samples from the declared shapes."""
    if name == "circles":
        r = np.linalg.norm(pts, axis=1)
        return np.minimum(np.abs(r - 1.0), np.abs(r - 0.5))
    if name == "moons":
        r1 = np.abs(np.linalg.norm(pts, axis=1) - 1.0)
        r2 = np.abs(np.linalg.norm(pts - np.array([1.0, 0.5]), axis=1) - 1.0)
        return np.minimum(r1, r2)
    if name == "sine":
        return np.abs(pts[:, 1] - np.sin(2.0 * pts[:, 0]))
    if name == "s_curve":
        return np.abs(pts[:, 0] ** 2 + (1.0 - np.abs(pts[:, 2])) ** 2 - 1.0)
    if name == "swirl":
        r = np.hypot(pts[:, 0], pts[:, 2])
        theta = 3.0 * np.pi * r
        target = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        return np.linalg.norm(pts[:, [0, 2]] - target, axis=1)
    if name == "circles_embedded_plane":
        m = embedding_matrix()
        off_plane = pts - (pts @ m) @ m.T
        return np.linalg.norm(off_plane, axis=1)
    if name == "circles_embedded_curved":
        return np.abs(pts[:, 2] - np.sign(pts[:, 1]) * pts[:, 1] ** 2)
    if name == "s_curve_scaled":
        raw = pts / np.sqrt(np.array([1.0, 1.0, 0.5]) / S_CURVE_VAR) + S_CURVE_MEAN
        return manifold_residual("s_curve", raw)
    if name == "swirl_scaled":
        raw = pts / np.sqrt(np.array([1.0, 0.5, 1.0]) / SWIRL_VAR) + SWIRL_MEAN
        return manifold_residual("swirl", raw)
    raise AssertionError(name)


class TestGenerate:
    def test_circles_noise_free_radii(self):
        pts = cloud("circles", 4).points
        r = np.sort(np.linalg.norm(pts, axis=1))
        assert np.allclose(r, [0.5, 0.5, 1.0, 1.0], atol=1e-12)

    def test_embedded_plane_rank_two(self):
        pts = cloud("circles_embedded_plane", 500).points
        cov = np.cov(pts.T)
        vals, _ = sym_eig(cov)
        assert vals[-1] < 1e-12 * vals[0]

    def test_s_curve_scaled_third_coordinate_variance(self):
        pts = cloud("s_curve_scaled", 10**5).points
        assert abs(pts[:, 2].var() - 0.5) / 0.5 < 0.05
        assert abs(pts[:, 0].var() - 1.0) < 0.05
        assert abs(pts[:, 1].var() - 1.0) < 0.05

    def test_swirl_scaled_thickness_variance(self):
        pts = cloud("swirl_scaled", 10**5).points
        assert abs(pts[:, 1].var() - 0.5) / 0.5 < 0.05

    @pytest.mark.parametrize("name", KINDS)
    def test_noise_free_points_on_manifold(self, name):
        pts = cloud(name, 400).points
        assert np.max(manifold_residual(name, pts)) <= 1e-12

    @pytest.mark.parametrize("name", KINDS)
    def test_deterministic_per_seed(self, name):
        a = cloud(name, 64, noise=0.1 if name not in ("circles_embedded_plane",) else 0.0, seed=5)
        b = cloud(name, 64, noise=0.1 if name not in ("circles_embedded_plane",) else 0.0, seed=5)
        assert a.points.tobytes() == b.points.tobytes()

    def test_population_moments_match_quadrature(self):
        # The scaled variants rescale by closed-form population moments;
        # cross-check those constants by numerical quadrature.
        from scipy.integrate import quad

        span = 3.0 * np.pi
        ez2, _ = quad(lambda t: (np.cos(t) - 1.0) ** 2 / span, -1.5 * np.pi, 1.5 * np.pi)
        ex2, _ = quad(lambda t: np.sin(t) ** 2 / span, -1.5 * np.pi, 1.5 * np.pi)
        assert abs(ez2 - S_CURVE_VAR[2]) < 1e-10
        assert abs(ex2 - S_CURVE_VAR[0]) < 1e-10
        assert abs(1.0 / 3.0 - S_CURVE_VAR[1]) < 1e-12

        span = 3.0 * np.pi
        mean_x, _ = quad(lambda t: t * np.cos(t) / (3 * np.pi) / span, np.pi, 4 * np.pi)
        ex2, _ = quad(lambda t: (t * np.cos(t) / (3 * np.pi)) ** 2 / span, np.pi, 4 * np.pi)
        mean_z, _ = quad(lambda t: t * np.sin(t) / (3 * np.pi) / span, np.pi, 4 * np.pi)
        ez2, _ = quad(lambda t: (t * np.sin(t) / (3 * np.pi)) ** 2 / span, np.pi, 4 * np.pi)
        assert abs(mean_x - SWIRL_MEAN[0]) < 1e-10
        assert abs(mean_z - SWIRL_MEAN[2]) < 1e-10
        assert abs(ex2 - mean_x**2 - SWIRL_VAR[0]) < 1e-10
        assert abs(ez2 - mean_z**2 - SWIRL_VAR[2]) < 1e-10

    def test_embedded_thickness_noise_lifts_rank(self):
        pts = cloud("circles_embedded_plane", 2000, thickness=0.2).points
        cov = np.cov(pts.T)
        vals, _ = sym_eig(cov)
        assert vals[-1] > 1e-3

    def test_invalid_parameters(self):
        with pytest.raises(ValueError, match="unknown dataset kind"):
            DatasetKind("spiral", 10)
        with pytest.raises(ValueError, match="n must be"):
            DatasetKind("circles", 0)
        with pytest.raises(ValueError, match="thickness_sd"):
            DatasetKind("sine", 10, thickness_sd=0.1)


class TestStandardize:
    def test_idempotent_on_standard_cloud(self):
        pc = cloud("circles", 500, noise=0.05)
        std, _, _ = standardize(pc)
        again, mean, scale = standardize(std)
        assert np.max(np.abs(again.points - std.points)) < 1e-10
        assert np.max(np.abs(mean)) < 1e-10
        assert np.max(np.abs(scale - 1.0)) < 1e-10

    def test_two_point_coordinate(self):
        pc = PointCloud("pair", np.array([[0.0, 5.0], [2.0, 7.0]]))
        std, mean, scale = standardize(pc)
        assert np.allclose(std.points[:, 0], [-1.0, 1.0])
        assert np.allclose(mean, [1.0, 6.0])

    def test_constant_coordinate_rejected(self):
        pc = PointCloud("flat", np.array([[1.0, 2.0], [1.0, 3.0]]))
        with pytest.raises(ValueError, match="constant"):
            standardize(pc)


class TestEigenframe:
    def test_axis_aligned_variances(self):
        rng = np.random.default_rng(0)
        pts = rng.standard_normal((10**5, 2)) * np.array([2.0, 1.0])
        frame = estimate_eigenframe(PointCloud("gauss", pts))
        assert abs(frame.sigma0_sq[0] - 4.0) / 4.0 < 0.05
        assert abs(frame.sigma0_sq[1] - 1.0) < 0.05

    def test_whitened_cloud_has_unit_spectrum(self):
        pc = cloud("moons", 5000, noise=0.1)
        frame = estimate_eigenframe(pc)
        w = whiten(pc.points, frame)
        frame2 = estimate_eigenframe(PointCloud("w", w))
        assert np.allclose(frame2.sigma0_sq, 1.0, atol=1e-8)

    def test_requires_more_points_than_dims(self):
        pc = PointCloud("tiny", np.eye(2))
        with pytest.raises(ValueError, match="more points"):
            estimate_eigenframe(pc)

    def test_floor_keeps_whitening_finite(self):
        pc = cloud("circles_embedded_plane", 300)
        frame = estimate_eigenframe(pc)
        w = whiten(pc.points, frame)
        assert np.all(np.isfinite(w))
        # Degenerate direction collapses to (floored) near-zero coordinates.
        assert np.max(np.abs(w[:, 2])) <= 1e-5

    def test_whiten_unwhiten_roundtrip(self):
        pc = cloud("s_curve", 2000, noise=0.05)
        frame = estimate_eigenframe(pc)
        back = unwhiten(whiten(pc.points, frame), frame)
        assert np.max(np.abs(back - pc.points)) < 1e-12

    def test_whitened_covariance_near_identity(self):
        pc = cloud("swirl", 10**5, noise=0.02)
        frame = estimate_eigenframe(pc)
        w = whiten(pc.points, frame)
        cov = np.cov(w.T)
        assert np.max(np.abs(cov - np.eye(3))) < 0.05

    def test_dimension_mismatch(self):
        pc = cloud("circles", 100)
        frame = estimate_eigenframe(pc)
        with pytest.raises(ValueError, match="mismatch"):
            whiten(np.zeros((5, 3)), frame)


class TestCsv:
    def test_full_precision_roundtrip(self, tmp_path):
        pc = cloud("sine", 137, noise=0.3, seed=9)
        save_csv(pc, tmp_path / "cloud.csv")
        back = load_csv(tmp_path / "cloud.csv")
        assert back.points.tobytes() == pc.points.tobytes()

    def test_header_checked(self, tmp_path):
        (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
        with pytest.raises(ValueError, match="header"):
            load_csv(tmp_path / "bad.csv")

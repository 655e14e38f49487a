import numpy as np
import pytest

from inflare.core import RngStream
from inflare.schedule import (
    InflationSchedule,
    build_rates,
    pr_attractor,
    pr_trajectory,
    sample_latent,
)


class TestBuildRates:
    def test_image_scale_values(self):
        g = build_rates(3072, preserved=2, gap=1.02)
        assert g[0] == g[1] == 2.0
        assert np.all(g[2:] == 0.98)

    def test_all_preserved_degenerates(self):
        assert np.all(build_rates(5, preserved=5, gap=0.0) == 2.0)

    def test_full_gap(self):
        assert np.allclose(build_rates(2, preserved=1, gap=2.0), [2.0, 0.0])

    def test_range_checks(self):
        with pytest.raises(ValueError):
            build_rates(4, preserved=0, gap=1.0)
        with pytest.raises(ValueError):
            build_rates(4, preserved=5, gap=1.0)
        with pytest.raises(ValueError):
            build_rates(4, preserved=1, gap=2.5)


class TestEval:
    def test_initial_condition(self):
        for sched in (
            InflationSchedule.prp(3, t_max=7.01),
            InflationSchedule.prr(3, preserved=2, gap=1.02, t_max=15.01),
        ):
            ev = sched.at(0.0)
            assert np.all(ev.gamma == 0.0)
            assert np.all(ev.alpha == 1.0)

    def test_prp_closed_form(self):
        sched = InflationSchedule.prp(2, t_max=7.01, rho=2.0)
        ev = sched.at(1.0)
        assert np.allclose(ev.gamma, np.exp(2.0) - 1.0, rtol=1e-14)
        assert np.allclose(ev.alpha, np.exp(-1.0), rtol=1e-14)
        assert np.allclose(ev.gamma_dot, 2.0 * np.exp(2.0), rtol=1e-14)
        assert np.allclose(ev.alpha_dot, -np.exp(-1.0), rtol=1e-14)

    def test_prr_compressed_total_variance(self):
        # Rescaled total variance of the compressed dimension at t:
        # alpha^2 (1 + gamma) = exp(-rho * gap * t).
        sched = InflationSchedule.prr(2, preserved=1, gap=1.02, t_max=15.01, rho=1.0)
        ev = sched.at(15.01)
        total = ev.alpha[1] ** 2 * (1.0 + ev.gamma[1])
        assert abs(total - np.exp(-15.3102)) / np.exp(-15.3102) < 1e-12

    def test_out_of_range_rejected(self):
        sched = InflationSchedule.prp(2, t_max=5.0)
        with pytest.raises(ValueError):
            sched.at(-0.1)
        with pytest.raises(ValueError):
            sched.at(5.1)

    def test_overflow_guard(self):
        sched = InflationSchedule.prr(2, preserved=1, gap=1.0, t_max=1000.0, rho=1.0)
        with pytest.raises(ValueError, match="overflow"):
            sched.at(400.0)

    def test_prp_requires_unit_rates(self):
        with pytest.raises(ValueError, match="rates equal to 1"):
            InflationSchedule("prp", 2, 2.0, np.array([1.0, 2.0]), 5.0)


class TestLatentCov:
    def test_prp_exactly_ones(self):
        cov = InflationSchedule.prp(4, t_max=7.01).latent_cov()
        assert np.all(cov == 1.0)

    def test_prr_preserved_exactly_one(self):
        cov = InflationSchedule.prr(3, preserved=2, gap=1.02, t_max=15.01).latent_cov()
        assert cov[0] == 1.0 and cov[1] == 1.0

    def test_prr_compressed_matches_paper_value(self):
        cov = InflationSchedule.prr(3, preserved=2, gap=1.02, t_max=15.01).latent_cov()
        assert abs(cov[2] - 2.24e-7) / 2.24e-7 < 2e-3
        assert abs(cov[2] - 2.15e-7) / 2.15e-7 < 0.05

    def test_softened_gap_value(self):
        sched = InflationSchedule.prr(2, preserved=1, gap=0.3, t_max=11.01, top_rate=1.15)
        assert np.allclose(sched.rates, [1.15, 0.85])
        assert abs(sched.latent_cov()[1] - np.exp(-0.3 * 11.01)) < 1e-15


class TestPrDynamics:
    def test_prp_constant(self):
        sigma0 = np.array([3.0, 1.5, 0.25])
        base = pr_trajectory(sigma0, np.ones(3), 2.0, 0.0)
        for t in np.linspace(0.0, 7.01, 64):
            assert abs(pr_trajectory(sigma0, np.ones(3), 2.0, float(t)) - base) <= 1e-12

    def test_prr_truncated_limit(self):
        rates = build_rates(3, preserved=2, gap=1.02)
        assert abs(pr_trajectory(np.ones(3), rates, 1.0, 30.0) - 2.0) <= 1e-8

    def test_t_zero_is_plain_pr(self):
        sigma0 = np.array([4.0, 1.0, 1.0])
        assert abs(pr_trajectory(sigma0, np.ones(3), 1.0, 0.0) - 2.0) < 1e-14

    def test_attractor_uniform_rates_equals_pr(self):
        sigma0 = np.array([2.0, 0.5, 0.125])
        assert abs(pr_attractor(sigma0, np.ones(3), 1.0, 0.7) - pr_trajectory(sigma0, np.ones(3), 1.0, 0.7)) < 1e-12

    def test_attractor_hand_value(self):
        rates = np.array([2.0, 2.0, 0.98])
        assert abs(pr_attractor(np.ones(3), rates, 1.0, 0.0) - 3.0) < 1e-14

    def test_attractor_limit(self):
        rates = np.array([2.0, 2.0, 0.98])
        assert abs(pr_attractor(np.ones(3), rates, 1.0, 40.0) - 2.0) < 1e-8

    def test_pr_driven_toward_attractor(self):
        # Sign relation of the PR flow: along a fine grid the finite
        # difference of PR opposes the sign of (PR - attractor).
        rates = np.array([2.0, 2.0, 0.98])
        sigma0 = np.array([1.7, 1.0, 0.6])
        grid = np.linspace(0.0, 20.0, 800)
        for t0, t1 in zip(grid[:-1], grid[1:]):
            pr0 = pr_trajectory(sigma0, rates, 1.0, float(t0))
            pr1 = pr_trajectory(sigma0, rates, 1.0, float(t1))
            gap = pr0 - pr_attractor(sigma0, rates, 1.0, float(t0))
            assert gap * (pr1 - pr0) <= 1e-12

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError):
            pr_trajectory(np.array([1.0, 0.0]), np.ones(2), 1.0, 1.0)


class TestSerialization:
    def test_json_roundtrip_run_length_encoded(self):
        sched = InflationSchedule.prr(3072, preserved=2, gap=1.02, t_max=15.01)
        blob = sched.to_json()
        assert blob["g"] == [[2.0, 2], [0.98, 3070]]
        back = InflationSchedule.from_json(blob)
        assert back.kind == sched.kind and back.d == sched.d
        assert np.array_equal(back.rates, sched.rates)
        assert back.t_max == sched.t_max and back.rho == sched.rho


class TestSampleLatent:
    def test_shapes_and_compressed_scale(self):
        sched = InflationSchedule.prr(3, preserved=2, gap=1.02, t_max=15.01)
        z = sample_latent(sched, 4000, RngStream(0))
        assert z.shape == (4000, 3)
        assert abs(z[:, 0].var() - 1.0) < 0.1
        assert z[:, 2].var() < 1e-5

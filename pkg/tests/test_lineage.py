"""Wavefront diffusions, speed measures vs closed forms, SDE occupation."""

import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from popwave import lineage
from popwave.lineage import (
    DiffusionSpec1D,
    detailed_balance_defect,
    discretize_generator,
    drifted_pme_stationary,
    fkpp_profile,
    identifiability_demo,
    lineage_coefficients,
    mean_exit_time,
    simulate_lineage_sde,
    speed_measure_density,
    stationary_report,
    wasserstein_to_density,
    wave_case,
    wavefront_spec,
)


class TestLineageCoefficients:
    def test_flat_density_is_brownian(self):
        a, drift = lineage_coefficients(r=1.0, gamma=1.0, sigma2=0.8, b=0.0,
                                        phi=2.0, grad_log_gamma_phi=0.0)
        assert a == pytest.approx(0.8) and drift == 0.0

    def test_fkpp_tip_drift_vanishes(self):
        # w ~ e^{-x}: grad log w = -1, drift = 2*(-1) + 2 = 0 in the wave frame
        spec = wavefront_spec(wave_case("fkpp"))
        assert abs(float(spec.drift(np.array([25.0]))[0])) < 0.12

    def test_fkpp_bulk_drift_two(self):
        spec = wavefront_spec(wave_case("fkpp"))
        assert float(spec.drift(np.array([-30.0]))[0]) == pytest.approx(2.0, abs=1e-4)

    def test_vanishing_density_rejected(self):
        with pytest.raises(ValueError, match="density vanishes"):
            lineage_coefficients(1.0, 1.0, 1.0, 0.0, 0.0, 0.0)


class TestWavefrontSpecs:
    def test_allen_cahn_drift_at_origin(self):
        # 2 w'/w at 0 is -1, so drift = s - 1
        spec = wavefront_spec(wave_case("allen_cahn", s=0.5))
        assert float(spec.drift(np.array([0.0]))[0]) == pytest.approx(-0.5)

    def test_pme_degenerate_at_front(self):
        spec = wavefront_spec(wave_case("pme"))
        assert float(spec.a(np.array([-1e-8]))[0]) == pytest.approx(0.0, abs=1e-7)

    def test_pme_drift_far_behind_front(self):
        spec = wavefront_spec(wave_case("pme"))
        assert float(spec.drift(np.array([-40.0]))[0]) == pytest.approx(1.0, abs=1e-8)

    def test_profiles_decrease_to_targets(self):
        for kind in ("fkpp", "allen_cahn"):
            case = wave_case(kind)
            case.validate_profile(-20.0, 20.0 if kind != "fkpp" else 30.0)

    def test_fkpp_profile_solves_wave_ode(self):
        xs, ws, vs = fkpp_profile()
        # w'' + 2 w' + w(1 - w) = 0 along the shooting solution
        sel = slice(100, -100, 50)
        wpp = np.gradient(vs, xs)
        resid = wpp + 2.0 * vs + ws * (1.0 - ws)
        assert np.max(np.abs(resid[sel])) < 1e-3


class TestSpeedMeasure:
    def test_uniform_for_driftless_unit_diffusion(self):
        spec = DiffusionSpec1D(a=lambda x: np.ones_like(x),
                               drift=lambda x: np.zeros_like(x))
        grid = np.linspace(-3, 3, 1001)
        sm = speed_measure_density(spec, grid)
        assert np.max(np.abs(sm.normalized - sm.normalized[0])) < 1e-12

    def test_allen_cahn_closed_form(self):
        spec = wavefront_spec(wave_case("allen_cahn", s=0.5))
        grid = np.linspace(-20, 20, 52001)
        sm = speed_measure_density(spec, grid)
        exact = np.exp(0.5 * grid) / (1 + np.exp(grid)) ** 2
        exact /= trapezoid(exact, grid)
        assert np.max(np.abs(sm.normalized - exact) / exact) < 1e-6

    def test_pme_closed_form(self):
        spec = wavefront_spec(wave_case("pme"))
        grid = np.linspace(-20, -0.5, 78001)
        sm = speed_measure_density(spec, grid, anchor=-1.0)
        exact = np.exp(grid) * (1 - np.exp(0.5 * grid))
        exact /= trapezoid(exact, grid)
        assert np.max(np.abs(sm.normalized - exact) / exact) < 1e-6

    def test_anchor_independence_after_normalization(self):
        spec = wavefront_spec(wave_case("allen_cahn", s=0.5))
        grid = np.linspace(-15, 15, 30001)
        a = speed_measure_density(spec, grid, anchor=-5.0).normalized
        b = speed_measure_density(spec, grid, anchor=5.0).normalized
        np.testing.assert_allclose(a, b, rtol=1e-9)

    def test_fkpp_has_no_stationary_distribution(self):
        spec = wavefront_spec(wave_case("fkpp"))
        rep = stationary_report(spec, -20.0, 20.0)
        assert not rep.has_stationary
        assert "no stationary distribution" in rep.message

    def test_allen_cahn_is_stationary(self):
        spec = wavefront_spec(wave_case("allen_cahn", s=0.5))
        assert stationary_report(spec, -20.0, 20.0).has_stationary


class TestDriftedPME:
    def test_vanishes_at_front(self):
        res = drifted_pme_stationary(np.linspace(-10, -1e-6, 10001))
        assert res.normalized[-1] < 1e-4

    def test_mode_location(self):
        grid = np.linspace(-8, -1e-4, 400001)
        res = drifted_pme_stationary(grid)
        xi_star = grid[int(np.argmax(res.normalized))]
        assert xi_star == pytest.approx(2.0 * math.log(0.5), abs=1e-3)

    def test_matches_speed_measure(self):
        spec = wavefront_spec(wave_case("pme_drifted"))
        grid = np.linspace(-20, -0.5, 78001)
        sm = speed_measure_density(spec, grid, anchor=-1.0)
        exact = drifted_pme_stationary(grid).normalized
        assert np.max(np.abs(sm.normalized - exact) / exact) < 1e-6

    def test_detailed_balance(self):
        spec = wavefront_spec(wave_case("pme_drifted"))
        grid = np.linspace(-12.0, -0.05, 1500)
        assert detailed_balance_defect(spec, grid) < 1e-8

    def test_rate_matrix_consistency(self):
        # exponential-fitted rates reproduce a f'' + drift f' on smooth f
        spec = wavefront_spec(wave_case("pme_drifted"))
        grid = np.linspace(-8.0, -1.0, 4001)
        Q = discretize_generator(spec, grid)
        f = np.sin(grid)
        want = (np.asarray(spec.a(grid)) * -np.sin(grid)
                + np.asarray(spec.drift(grid)) * np.cos(grid))
        got = Q @ f
        interior = slice(10, -10)
        assert np.max(np.abs(got[interior] - want[interior])) < 5e-3


class TestSDE:
    def test_brownian_msd(self):
        spec = DiffusionSpec1D(a=lambda x: 0.7 * np.ones_like(x),
                               drift=lambda x: np.zeros_like(x))
        rng = np.random.default_rng(1)
        T = 2.0
        _, recs = simulate_lineage_sde(spec, 0.0, T, 1e-3, rng, n_paths=10_000,
                                       record_every=T)
        msd = float(np.mean(recs[:, -1] ** 2))
        assert msd / T == pytest.approx(2 * 0.7, rel=0.05)

    def test_allen_cahn_occupation_matches_speed_measure(self):
        spec = wavefront_spec(wave_case("allen_cahn", s=0.5))
        rng = np.random.default_rng(2)
        _, recs = simulate_lineage_sde(spec, 0.0, 500.0, 0.005, rng,
                                       n_paths=1000, record_every=0.5,
                                       burn_in=250.0)
        grid = np.linspace(-25, 15, 20001)
        sm = speed_measure_density(spec, grid)
        w1 = wasserstein_to_density(recs.ravel(), grid, sm.normalized)
        assert w1 < 0.05

    def test_pme_occupation_and_position(self):
        spec = wavefront_spec(wave_case("pme"))
        rng = np.random.default_rng(3)
        _, recs = simulate_lineage_sde(spec, -2.0, 500.0, 0.005, rng,
                                       n_paths=1000, record_every=0.5,
                                       burn_in=250.0)
        samples = recs.ravel()
        grid = np.linspace(-25, -1e-4, 20001)
        sm = speed_measure_density(spec, grid, anchor=-1.0)
        assert wasserstein_to_density(samples, grid, sm.normalized) < 0.05
        assert np.max(samples) < 0.0          # paths never cross the front
        assert np.mean(samples) < -1.0        # typically well behind it

    def test_occupation_converges_with_horizon(self):
        # started in the tip with no burn-in discarded, the occupation
        # measure relaxes toward the stationary law as the horizon grows
        spec = wavefront_spec(wave_case("allen_cahn", s=0.5))
        grid = np.linspace(-25, 15, 20001)
        sm = speed_measure_density(spec, grid)
        w1s = []
        for T in (50.0, 100.0, 200.0, 400.0):
            rng = np.random.default_rng(int(T))
            _, recs = simulate_lineage_sde(spec, 8.0, T, 0.01, rng,
                                           n_paths=300, record_every=0.25,
                                           burn_in=0.0)
            w1s.append(wasserstein_to_density(recs.ravel(), grid, sm.normalized))
        assert all(a > b for a, b in zip(w1s, w1s[1:])), w1s
        assert w1s[-1] < 0.15

    def test_guard_band_precheck(self):
        spec = wavefront_spec(wave_case("pme"))
        rng = np.random.default_rng(4)
        with pytest.raises(ValueError, match="guard"):
            simulate_lineage_sde(spec, -1e-4, 1.0, 0.1, rng)

    def test_seeded_paths_reproducible(self):
        spec = wavefront_spec(wave_case("allen_cahn", s=0.5))
        _, a = simulate_lineage_sde(spec, 0.0, 1.0, 1e-3,
                                    np.random.default_rng(5), n_paths=8)
        _, b = simulate_lineage_sde(spec, 0.0, 1.0, 1e-3,
                                    np.random.default_rng(5), n_paths=8)
        assert a.tobytes() == b.tobytes()


class TestIdentifiability:
    def test_identity_scaling_is_noop(self):
        rep = identifiability_demo(lambda x: np.ones_like(x), lam_const=1.0,
                                   n_paths=2000, dt=5e-4)
        assert rep.residual_identity_ok
        assert rep.exit_ratio == pytest.approx(1.0, rel=0.05)

    def test_lambda_two_halves_exit_time(self):
        rng = np.random.default_rng(6)
        rep = identifiability_demo(lambda x: 2.0 * np.ones_like(x),
                                   lam_const=2.0, rng=rng, n_paths=6000,
                                   dt=1e-4)
        assert rep.residual_identity_ok
        assert rep.residual_max_error <= 1e-12 * max(1.0, rep.base_residual_max)
        assert rep.exit_ratio == pytest.approx(2.0, rel=0.05)
        # analytic oracle: exit of a-f'' from (-1, 1) starting at 0 is 1/(2a)
        assert rep.exit_time_base == pytest.approx(0.5, rel=0.05)
        assert rep.exit_time_scaled == pytest.approx(0.25, rel=0.05)

    def test_spatially_varying_lambda_residual(self):
        rep = identifiability_demo(lambda x: 1.0 + 0.5 * np.sin(x),
                                   lam_const=1.5, n_paths=1000, dt=5e-4)
        assert rep.residual_identity_ok


def test_exit_time_analytic_oracle():
    spec = DiffusionSpec1D(a=lambda x: np.ones_like(x),
                           drift=lambda x: np.zeros_like(x))
    rng = np.random.default_rng(7)
    t = mean_exit_time(spec, -1.0, 1.0, 0.0, 1e-4, rng, n_paths=4000)
    assert t == pytest.approx(0.5, rel=0.05)

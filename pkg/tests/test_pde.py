"""Solver oracles: heat kernel, equilibria, waves, convolutions, mass balance."""

import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from popwave import pde
from popwave.kernels import GaussianKernel, IndicatorKernel1D
from popwave.pde import (
    GridConvolution,
    PDEProblem,
    ScalarField1D,
    analytic_wave,
    front_position,
    measure_wave_speed,
    solve_nonlocal_pme,
    solve_nonlocal_rd,
    solve_pme_logistic,
    solve_rd,
)


def grid_on(lo, hi, h):
    return np.arange(lo, hi + 0.5 * h, h)


class TestSolveRD:
    def test_heat_kernel_oracle(self):
        # F = 0, b = 0: d phi/dt = sigma^2 phi'' maps a narrow Gaussian of
        # variance v0 to one of variance v0 + 2 sigma^2 t
        sigma2 = 0.7
        h = 0.02
        x = grid_on(-15, 15, h)
        v0 = 0.05
        vals = np.exp(-x * x / (2 * v0)) / math.sqrt(2 * math.pi * v0)
        prob = PDEProblem(kind="reaction_diffusion",
                          F=lambda m: np.zeros_like(m), sigma2=sigma2)
        T = 1.5
        traj = solve_rd(prob, ScalarField1D(x, vals, 0.0), T,
                        dt=0.8 * 0.9 * h * h / (2 * sigma2))
        v_T = v0 + 2 * sigma2 * T
        exact = np.exp(-x * x / (2 * v_T)) / math.sqrt(2 * math.pi * v_T)
        assert np.max(np.abs(traj.final().values - exact)) < 1e-3

    def test_equilibrium_is_fixed_point(self):
        h = 0.05
        x = grid_on(0, 20, h)
        prob = PDEProblem(kind="reaction_diffusion", F=lambda m: 1.0 - m)
        dt = 0.8 * 0.9 * h * h / 2
        traj = solve_rd(prob, ScalarField1D(x, np.ones_like(x), 0.0), 50 * dt, dt)
        assert np.max(np.abs(traj.final().values - 1.0)) < 50 * 1e-12

    def test_cfl_violation_raises(self):
        x = grid_on(0, 10, 0.1)
        prob = PDEProblem(kind="reaction_diffusion", F=lambda m: 1.0 - m)
        with pytest.raises(ValueError, match="CFL"):
            solve_rd(prob, ScalarField1D(x, np.ones_like(x), 0.0), 1.0, dt=0.01)

    def test_blowup_detected(self):
        x = grid_on(0, 10, 0.1)
        prob = PDEProblem(kind="reaction_diffusion", F=lambda m: 30.0 + 0 * m)
        with pytest.raises(ValueError, match="blow-up"):
            solve_rd(prob, ScalarField1D(x, np.ones_like(x), 0.0), 5.0,
                     dt=0.9 * 0.9 * 0.01 / 2)

    def test_fkpp_minimal_speed(self):
        h = 0.1
        x = grid_on(0, 200, h)
        vals = np.where(x < 10.0, 1.0, 0.0)
        prob = PDEProblem(kind="reaction_diffusion", F=lambda m: 1.0 - m)
        traj = solve_rd(prob, ScalarField1D(x, vals, 0.0), T=40,
                        dt=0.8 * 0.9 * h * h / 2, snapshot_every=1.0)
        speed = measure_wave_speed(traj).speed
        assert 1.8 <= speed <= 2.2  # minimal wavespeed 2, within 10%

    def test_comparison_principle(self):
        # ordered initial data stay ordered under the logistic reaction
        rng = np.random.default_rng(31)
        h = 0.1
        x = grid_on(0, 10, h)
        prob = PDEProblem(kind="reaction_diffusion", F=lambda m: 1.0 - m)
        dt = 0.8 * 0.9 * h * h / 2
        for _ in range(100):
            base = rng.uniform(0.0, 1.5, size=x.size)
            upper = base + rng.uniform(0.0, 0.5, size=x.size)
            lo_T = solve_rd(prob, ScalarField1D(x, base, 0.0), 20 * dt, dt).final()
            hi_T = solve_rd(prob, ScalarField1D(x, upper, 0.0), 20 * dt, dt).final()
            assert np.all(hi_T.values - lo_T.values >= -1e-12)


class TestNonlocalRD:
    def test_constant_is_fixed_point(self):
        h = 0.05
        x = grid_on(0, 20, h)
        prob = PDEProblem(kind="nonlocal_rd", F=lambda m: 1.0 - m,
                          kernel=GaussianKernel(1, 0.25))
        dt = 0.8 * 0.9 * h * h / 2
        traj = solve_nonlocal_rd(prob, ScalarField1D(x, np.ones_like(x), 0.0),
                                 30 * dt, dt)
        assert np.max(np.abs(traj.final().values - 1.0)) < 30 * 1e-12

    def test_epsilon_zero_delegates_to_local(self):
        h = 0.05
        x = grid_on(0, 10, h)
        vals = 0.5 + 0.3 * np.sin(2 * np.pi * x / 10)
        prob_local = PDEProblem(kind="reaction_diffusion", F=lambda m: 1.0 - m)
        prob_nl = PDEProblem(kind="nonlocal_rd", F=lambda m: 1.0 - m, kernel=None)
        dt = 0.8 * 0.9 * h * h / 2
        a = solve_rd(prob_local, ScalarField1D(x, vals, 0.0), 20 * dt, dt).final()
        b = solve_nonlocal_rd(prob_nl, ScalarField1D(x, vals, 0.0), 20 * dt, dt).final()
        np.testing.assert_array_equal(a.values, b.values)

    def test_epsilon_sweep_monotone(self):
        h = 0.05
        x = grid_on(0, 40, h)
        vals = 0.2 + 0.6 * np.exp(-((x - 20.0) ** 2) / 8.0)
        dt = 0.8 * 0.9 * h * h / 2
        local = solve_rd(PDEProblem(kind="reaction_diffusion", F=lambda m: 1.0 - m),
                         ScalarField1D(x, vals, 0.0), 3.0, dt).final()
        errs = []
        for eps in (0.8, 0.4, 0.2, 0.1):
            prob = PDEProblem(kind="nonlocal_rd", F=lambda m: 1.0 - m,
                              kernel=GaussianKernel(1, eps * eps))
            out = solve_nonlocal_rd(prob, ScalarField1D(x, vals, 0.0), 3.0, dt).final()
            errs.append(float(np.max(np.abs(out.values - local.values))))
        assert all(a > b for a, b in zip(errs, errs[1:])), errs

    def test_cosine_mode_is_eigenfunction(self):
        # reflect padding keeps cos(2 pi k x / L) an exact eigenvector of the
        # discrete convolution, eigenvalue = the kernel transform
        L, h = 20.0, 0.02
        x = grid_on(0, L, h)
        kern = IndicatorKernel1D(1.0)
        conv = GridConvolution(kern, h)
        for k in (3, 8, 15):
            u = k / L
            mode = np.cos(2 * np.pi * u * x)
            resp = conv(mode)
            lam = kern.fourier(u)
            assert np.max(np.abs(resp - lam * mode)) < 5e-4


class TestPME:
    def test_equilibrium_fixed_point(self):
        h = 0.05
        x = grid_on(0, 20, h)
        dt = 0.8 * 0.9 * h * h / 4
        traj = solve_pme_logistic(ScalarField1D(x, np.ones_like(x), 0.0),
                                  30 * dt, dt)
        assert np.max(np.abs(traj.final().values - 1.0)) < 30 * 1e-12

    def test_front_advances_at_unit_speed(self):
        h = 0.05
        x = grid_on(0, 120, h)
        init = analytic_wave("pme", x, x0=20.0)
        dt = 0.8 * 0.9 * h * h / 4
        traj = solve_pme_logistic(ScalarField1D(x, init.values, 0.0), T=40,
                                  dt=dt, snapshot_every=1.0)
        speed = measure_wave_speed(traj).speed
        assert speed == pytest.approx(1.0, rel=0.05)

    def test_profile_matches_sharp_wave(self):
        h = 0.05
        x = grid_on(0, 120, h)
        init = analytic_wave("pme", x, x0=20.0)
        dt = 0.8 * 0.9 * h * h / 4
        traj = solve_pme_logistic(ScalarField1D(x, init.values, 0.0), T=40,
                                  dt=dt, snapshot_every=1.0)
        fld = traj.final()
        edge = front_position(fld, 0.5) + 2 * math.log(2.0)
        xi = fld.x - edge
        exact = np.maximum(0.0, 1.0 - np.exp(0.5 * np.minimum(xi, 0.0)))
        window = (fld.x > 30) & (fld.x < edge + 15)
        assert np.max(np.abs(fld.values[window] - exact[window])) <= 0.03

    def test_mass_balance_identity(self):
        # d/dt int psi = int psi - int (zeta * psi)^2 for rho = zeta * zeta
        h = 0.05
        x = grid_on(0, 60, h)
        eps2 = 0.64
        rho = GaussianKernel(1, eps2)
        zeta = GaussianKernel(1, eps2 / 2.0)
        vals = np.maximum(0.0, 1.0 - ((x - 30.0) / 8.0) ** 2)
        dt = 1e-3
        traj = solve_nonlocal_pme(ScalarField1D(x, vals, 0.0), rho, T=0.5,
                                  dt=dt, snapshot_every=0.05)
        conv = GridConvolution(zeta, h)
        masses = np.array([f.total_mass() for f in traj.fields])
        times = np.array(traj.times)
        mids = []
        for f in traj.fields:
            zpsi = conv(f.values)
            mids.append(f.total_mass() - trapezoid(zpsi * zpsi, x))
        mids = np.asarray(mids)
        lhs = np.diff(masses) / np.diff(times)
        rhs = 0.5 * (mids[1:] + mids[:-1])
        assert np.max(np.abs(lhs - rhs)) < 0.01 * np.max(np.abs(rhs))

    def test_nonlocal_pme_constant_fixed_point(self):
        h = 0.05
        x = grid_on(0, 20, h)
        dt = 0.8 * 0.9 * h * h / 4
        traj = solve_nonlocal_pme(ScalarField1D(x, np.ones_like(x), 0.0),
                                  GaussianKernel(1, 0.25), 30 * dt, dt)
        assert np.max(np.abs(traj.final().values - 1.0)) < 30 * 1e-12

    def test_weak_norm_sweep_monotone(self):
        h = 0.05
        x = grid_on(0, 40, h)
        vals = np.maximum(0.0, 1.0 - ((x - 20.0) / 5.0) ** 2)
        dt = 0.8 * 0.9 * h * h / 8
        local = solve_pme_logistic(ScalarField1D(x, vals, 0.0), 3.0, dt).final()
        tests = [np.exp(-((x - c) ** 2) / 8.0) for c in (16.0, 20.0, 24.0)]
        errs = []
        for eps in (0.8, 0.4, 0.2, 0.1):
            out = solve_nonlocal_pme(ScalarField1D(x, vals, 0.0),
                                     GaussianKernel(1, eps * eps), 3.0, dt).final()
            diff = out.values - local.values
            errs.append(sum(abs(float(trapezoid(diff * f, x))) for f in tests))
        assert all(a > b for a, b in zip(errs, errs[1:])), errs


class TestWaveMeasurement:
    def test_translating_profile_recovers_speed(self):
        x = grid_on(0, 100, 0.1)
        fields, times = [], []
        for k in range(21):
            t = k * 1.0
            fields.append(analytic_wave("allen_cahn", x, x0=20.0, t=t, speed=0.3))
            times.append(t)
        traj = pde.PDETrajectory(times=times, fields=fields)
        assert measure_wave_speed(traj).speed == pytest.approx(0.3, abs=1e-3)

    def test_stationary_profile_zero_speed(self):
        x = grid_on(0, 100, 0.1)
        fields = [analytic_wave("allen_cahn", x, x0=50.0, t=0.0) for _ in range(12)]
        traj = pde.PDETrajectory(times=list(np.arange(12.0)), fields=fields)
        assert abs(measure_wave_speed(traj).speed) < 1e-6

    def test_no_front_detected(self):
        x = grid_on(0, 10, 0.1)
        fields = [ScalarField1D(x, np.full_like(x, 0.1), float(t))
                  for t in range(12)]
        traj = pde.PDETrajectory(times=list(np.arange(12.0)), fields=fields)
        with pytest.raises(ValueError, match="no front detected"):
            measure_wave_speed(traj)


class TestAnalyticWaves:
    def test_pme_zero_at_front(self):
        x = np.array([0.0, 5.0, 10.0])
        f = analytic_wave("pme", x, x0=5.0, t=0.0)
        assert f.values[1] == 0.0 and f.values[2] == 0.0

    def test_allen_cahn_half_at_center(self):
        x = np.linspace(-5, 5, 11)
        f = analytic_wave("allen_cahn", x, x0=0.0)
        assert f.values[5] == pytest.approx(0.5)

    def test_pme_half_level_location(self):
        # 1 - e^{xi/2} = 1/2 at xi = -2 ln 2
        xi_half = -2 * math.log(2.0)
        x = np.linspace(xi_half - 1.0, xi_half + 1.0, 5)
        f = analytic_wave("pme", x, x0=0.0, t=0.0)
        assert f.values[2] == pytest.approx(0.5, rel=1e-12)


def test_allen_cahn_wave_speed_and_profile():
    h = 0.1
    x = grid_on(0, 120, h)
    vals = 1.0 / (1.0 + np.exp(x - 30.0))
    s = 0.5
    prob = PDEProblem(kind="reaction_diffusion",
                      F=lambda m: (1.0 - m) * (2.0 * m - 1.0 + s))
    traj = solve_rd(prob, ScalarField1D(x, vals, 0.0), T=40,
                    dt=0.8 * 0.9 * h * h / 2, snapshot_every=1.0)
    speed = measure_wave_speed(traj).speed
    assert speed == pytest.approx(s, rel=0.05)
    fld = traj.final()
    fp = front_position(fld, 0.5)
    exact = 1.0 / (1.0 + np.exp(fld.x - fp))
    window = (fld.x > 10) & (fld.x < 110)
    assert np.max(np.abs(fld.values[window] - exact[window])) <= 0.02

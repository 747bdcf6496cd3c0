"""Shared fixtures: preset models and cached expensive simulation batteries."""

import numpy as np
import pytest

from popwave import ibm, lookdown, pde, presets
from popwave.ibm import density_profile


def make_logistic(N=15, theta=5.0, domain=(0.0, 10.0), dispersal_sigma2=1.0,
                  kernel_sigma2=1.0):
    return presets.make_model("logistic", N=N, theta=theta, domain=domain,
                              dispersal_sigma2=dispersal_sigma2,
                              kernel_sigma2=kernel_sigma2)


def run_logistic_pair(seed, N=15, theta=5.0, T=5.0, dt=0.0025, domain=(0.0, 10.0)):
    """One plain-IBM run and one lookdown run of the logistic preset.

    Returns (ibm_final_mass, lookdown_final_mass, final_levelled_population).
    """
    model = make_logistic(N=N, theta=theta, domain=domain)
    rng = np.random.default_rng([seed, 0])
    init = presets.initial_population("logistic", model, N, rng)
    traj = ibm.run_ibm(model, init, horizon=T, snapshot_every=T, rng=rng, dt=dt)
    rng2 = np.random.default_rng([seed, 1])
    init2 = presets.initial_population("logistic", model, N, rng2)
    lp = lookdown.LevelledPopulation.from_population(init2, theta, rng2,
                                                     log_events=False)
    lt = lookdown.run_lookdown(model, lp, horizon=T, snapshot_every=T, rng=rng2,
                               dt=dt)
    return traj.final().total_mass, lt.final.count / N, lt.final


@pytest.fixture(scope="session")
def logistic_battery():
    """300 replicate pairs of the logistic preset at T = 5 (criterion 8)."""
    R = 300
    ibm_mass = np.empty(R)
    ld_mass = np.empty(R)
    finals = []
    for i in range(R):
        a, b, fin = run_logistic_pair(seed=1000 + i)
        ibm_mass[i] = a
        ld_mass[i] = b
        if i < 20:
            finals.append(fin)
    return {"ibm_mass": ibm_mass, "lookdown_mass": ld_mass,
            "lookdown_finals": finals}


def measured_mode_growth(eq, u, L=20.0, h=0.02, T=4.0, amp=1e-3):
    """Growth rate of a cosine perturbation of the equilibrium in the
    nonlocal RD solver (reflect-padded convolutions keep integer-period
    cosine modes exact eigenfunctions)."""
    import math

    x = np.arange(0.0, L + 0.5 * h, h)
    vals = eq.phi0 + amp * np.cos(2 * np.pi * u * x)
    Fp0, phi0 = eq.Fp0, eq.phi0
    problem = pde.PDEProblem(kind="nonlocal_rd",
                             F=lambda m: Fp0 * (m - phi0),
                             sigma2=eq.sigma2, kernel=eq.rho_F)
    dt = min(0.05, 0.8 * 0.9 * h * h / (2 * eq.sigma2))
    traj = pde.solve_nonlocal_rd(problem, pde.ScalarField1D(x, vals, 0.0), T, dt)
    mode = np.cos(2 * np.pi * u * x)
    weights = np.ones_like(x)
    weights[0] = weights[-1] = 0.5
    project = lambda v: float(np.sum((v - np.mean(v)) * mode * weights)
                              / np.sum(mode * mode * weights))
    aT = project(traj.final().values)
    return math.log(abs(aT) / amp) / T


@pytest.fixture(scope="session")
def variance_scaling_battery():
    """Critical-branching replicates at two theta values (criterion 7).

    gamma = r = 1, F = 0: every atom births and dies at rate theta, so the
    total mass is a critical branching martingale with
    Var<1, eta_t> = 2 (theta/N) <1, eta_0> t.  theta*dt is matched across the
    two theta values so the tau-leap bias cancels in the slope ratio.
    """
    from popwave.ibm import DemographyModel, Domain, PointPopulation, run_ibm
    from popwave.kernels import DispersalLaw

    out = {}
    N, n0, T, R = 100, 200, 2.0, 600
    for theta in (2.0, 8.0):
        dom = Domain(np.array([0.0]), np.array([10.0]))
        model = DemographyModel(
            gamma=lambda x, m: np.ones(len(x)),
            r=lambda x, m: np.ones(len(x)),
            F=lambda x, m: np.zeros(len(np.atleast_1d(m))),
            rho_gamma=None, rho_r=None, rho_F=None,
            dispersal=DispersalLaw.isotropic(1.0, theta=theta),
            theta=theta, domain=dom, gamma_cap=1.5, mu_cap=1.5,
            uses_density=(False, False, False), r_constant=True)
        dt = 0.02 / theta
        finals = np.empty(R)
        for i in range(R):
            rng = np.random.default_rng([int(theta * 10), i])
            init = PointPopulation.uniform(n0, dom, N=N, rng=rng)
            traj = run_ibm(model, init, horizon=T, snapshot_every=T, rng=rng,
                           dt=dt)
            finals[i] = traj.final().total_mass
        out[theta] = {
            "var": float(finals.var(ddof=1)),
            "predicted": 2.0 * (theta / N) * (n0 / N) * T,
        }
    return out


def run_wave_lookdown(preset, N, theta, domain, T, seed,
                      dispersal_sigma2=2.0, kernel_sigma2=0.25, s=0.5,
                      block_frac=0.3, snapshot_every=0.5, gamma_cap=None,
                      mu_cap=None, level=0.5):
    """Lookdown run of an invading wave, with front positions over time.

    The dispersal variance 2 sigma^2 induces PDE diffusivity sigma^2 = 1, so
    the deterministic fronts and lineage laws of the unit-coefficient case
    studies apply.  Returns (final LevelledPopulation, front_times,
    front_positions).
    """
    model = presets.make_model(preset, N=N, theta=theta, domain=domain,
                               dispersal_sigma2=dispersal_sigma2,
                               kernel_sigma2=kernel_sigma2, s=s)
    if gamma_cap is not None:
        model.gamma_cap = gamma_cap
    if mu_cap is not None:
        model.mu_cap = mu_cap
    rng = np.random.default_rng([seed, 0])
    length = domain[1] - domain[0]
    count = int(round(N * length * block_frac))
    pts = rng.uniform(domain[0], domain[0] + block_frac * length,
                      size=(count, 1))
    init = ibm.PointPopulation(pts, N=N)
    lp = lookdown.LevelledPopulation.from_population(init, theta, rng)
    dt = 0.1 / (theta * (model.gamma_cap + model.mu_cap))
    n_steps = max(1, int(round(T / dt)))
    dt = T / n_steps
    stride = max(1, int(round(snapshot_every / dt)))
    grid = np.arange(domain[0], domain[1] + 0.05, 0.1)
    front_times, front_positions = [], []
    pop = lp
    for k in range(1, n_steps + 1):
        pop = lookdown.lookdown_step(pop, model, dt, rng)
        if k % stride == 0 or k == n_steps:
            prof = density_profile(lookdown.project(pop), grid, model.rho_F)
            try:
                front_times.append(pop.time)
                front_positions.append(pde.front_position(prof, level))
            except ValueError:
                front_times.pop()
    return pop, np.asarray(front_times), np.asarray(front_positions)

"""Forward-time individual-based simulator of the scaled birth/death process.

Individuals carry mass 1/N and live in a finite box with reflecting dispersal
(the underlying model lives on all of R^d; the box is an artifact choice, and
wave experiments are sized so fronts stay away from the walls).  Time is in
rescaled units: an individual gives birth at rate theta*gamma and dies at rate
theta*mu, with mu = max(0, r*gamma - F/theta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .kernels import (
    DispersalLaw,
    Kernel,
    density_at,
    sample_dispersal_many,
)


class ExtinctionError(RuntimeError):
    """Terminal signal: the population is empty.  Reported, never silent."""


@dataclass
class Domain:
    """Axis-aligned box with reflecting dispersal."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if np.any(self.hi <= self.lo):
            raise ValueError("domain box must have positive extent")

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def lengths(self) -> np.ndarray:
        return self.hi - self.lo

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)


@dataclass
class PointPopulation:
    """Atoms of mass 1/N at ``positions`` ((n, d) array); the empirical measure."""

    positions: np.ndarray
    N: int
    time: float = 0.0

    def __post_init__(self):
        arr = np.asarray(self.positions, dtype=float)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)  # (n,) means n atoms in one dimension
        if arr.size == 0:
            arr = arr.reshape(0, arr.shape[1] if arr.shape[1] else 1)
        self.positions = arr
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("population positions must be finite")
        if self.N < 1:
            raise ValueError("N must be a positive integer")

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def total_mass(self) -> float:
        return self.count / self.N

    @classmethod
    def uniform(cls, count: int, domain: Domain, N: int,
                rng: np.random.Generator, time: float = 0.0) -> "PointPopulation":
        pts = rng.uniform(domain.lo, domain.hi, size=(count, domain.dim))
        return cls(positions=pts, N=N, time=time)


@dataclass
class DemographyModel:
    """Rate functions, smoothing kernels, dispersal, and scale parameters.

    ``gamma``, ``r`` and ``F`` are vectorized callables of (positions, local
    density).  ``uses_density`` flags which of the three actually reads the
    density; convolutions are skipped for the others.  ``gamma`` is clipped at
    ``gamma_cap`` inside every rate evaluation (the PME parameterization
    gamma(x,m)=m is unbounded and needs the cut-off).
    """

    gamma: Callable[[np.ndarray, np.ndarray], np.ndarray]
    r: Callable[[np.ndarray, np.ndarray], np.ndarray]
    F: Callable[[np.ndarray, np.ndarray], np.ndarray]
    rho_gamma: Optional[Kernel]
    rho_r: Optional[Kernel]
    rho_F: Optional[Kernel]
    dispersal: DispersalLaw
    theta: float
    domain: Domain
    gamma_cap: float = 20.0
    mu_cap: float = 5.0
    uses_density: tuple = (True, True, True)
    r_constant: bool = False  # r independent of both position and density
    name: str = "custom"

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")

    def local_density(self, pop: PointPopulation, kernel: Optional[Kernel],
                      queries: np.ndarray) -> np.ndarray:
        if kernel is None:
            return np.zeros(np.atleast_2d(queries).shape[0])
        return density_at(kernel, pop.positions, pop.N, queries)

    def rates_at(self, pop: PointPopulation, queries: Optional[np.ndarray] = None):
        """(gamma, r, F, mu) arrays at ``queries`` (default: all atoms), vs ``pop``."""
        pts = pop.positions if queries is None else np.atleast_2d(queries)
        n = pts.shape[0]
        zeros = np.zeros(n)
        m_gamma = self.local_density(pop, self.rho_gamma, pts) if self.uses_density[0] else zeros
        m_r = self.local_density(pop, self.rho_r, pts) if self.uses_density[1] else zeros
        m_F = self.local_density(pop, self.rho_F, pts) if self.uses_density[2] else zeros
        gam = np.minimum(np.asarray(self.gamma(pts, m_gamma), dtype=float), self.gamma_cap)
        rr = np.asarray(self.r(pts, m_r), dtype=float)
        ff = np.asarray(self.F(pts, m_F), dtype=float)
        mu = np.maximum(0.0, rr * gam - ff / self.theta)
        if not (np.all(np.isfinite(gam)) and np.all(np.isfinite(rr))
                and np.all(np.isfinite(ff)) and np.all(np.isfinite(mu))):
            raise ValueError("demography produced non-finite rate")
        return gam, rr, ff, mu

    def establishment_at(self, pop: PointPopulation, points: np.ndarray) -> np.ndarray:
        """Establishment probability r at landing points, vs the snapshot ``pop``."""
        pts = np.atleast_2d(points)
        if self.uses_density[1]:
            m = self.local_density(pop, self.rho_r, pts)
        else:
            m = np.zeros(pts.shape[0])
        rr = np.asarray(self.r(pts, m), dtype=float)
        if not np.all(np.isfinite(rr)):
            raise ValueError("demography produced non-finite rate")
        return rr


def death_rate(model: DemographyModel, x, pop: PointPopulation) -> float:
    """mu_theta(x) = max(0, r*gamma - F/theta), densities measured against ``pop``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _, _, _, mu = model.rates_at(pop, x.reshape(1, -1))
    return float(mu[0])


def _check_step_guard(model: DemographyModel, dt: float):
    if model.theta * (model.gamma_cap + model.mu_cap) * dt > 0.1 + 1e-12:
        raise ValueError("dt too large for rates")


def reflect_into(domain: Domain, parents: np.ndarray, law: DispersalLaw,
                 rng: np.random.Generator, first: np.ndarray,
                 max_tries: int = 100) -> np.ndarray:
    """Resample out-of-box landings (fresh displacement each try), then clamp."""
    pts = first.copy()
    for _ in range(max_tries):
        outside = ~domain.contains(pts)
        if not np.any(outside):
            return pts
        pts[outside] = sample_dispersal_many(law, parents[outside], rng)
    return np.clip(pts, domain.lo, domain.hi)


def step_discrete(model: DemographyModel, pop: PointPopulation, dt: float,
                  rng: np.random.Generator) -> PointPopulation:
    """One synchronous time step of length ``dt`` (rescaled units).

    Each individual reproduces with probability 1 - exp(-theta*gamma*dt) and
    dies with probability 1 - exp(-theta*mu*dt); the offspring disperses and
    then establishes with probability r at its landing point.  All rates are
    evaluated against the pre-step snapshot.
    """
    _check_step_guard(model, dt)
    if pop.count == 0:
        return PointPopulation(pop.positions.copy(), pop.N, pop.time + dt)
    gam, _, _, mu = model.rates_at(pop)
    p_birth = -np.expm1(-model.theta * gam * dt)
    p_death = -np.expm1(-model.theta * mu * dt)
    u_birth = rng.random(pop.count)
    u_death = rng.random(pop.count)
    parents = pop.positions[u_birth < p_birth]
    survivors = pop.positions[u_death >= p_death]
    if parents.shape[0] > 0:
        landed = sample_dispersal_many(model.dispersal, parents, rng)
        landed = reflect_into(model.domain, parents, model.dispersal, rng, landed)
        r_land = model.establishment_at(pop, landed)
        established = landed[rng.random(parents.shape[0]) < r_land]
        new_positions = np.vstack([survivors, established])
    else:
        new_positions = survivors
    return PointPopulation(new_positions, pop.N, pop.time + dt)


def step_exact(model: DemographyModel, pop: PointPopulation,
               rng: np.random.Generator):
    """One proposal of the Gillespie-with-thinning stepper.

    Samples the next proposal time from the bounding rate
    theta * count * (gamma_cap + mu_cap), picks a uniform individual, and
    accepts a birth or death by thinning against the true local rates.
    Returns (population, elapsed rescaled time); the population is unchanged
    when the proposal is rejected.
    """
    if pop.count == 0:
        raise ExtinctionError("population extinct")
    total = model.theta * pop.count * (model.gamma_cap + model.mu_cap)
    elapsed = rng.exponential(1.0 / total)
    i = int(rng.integers(pop.count))
    x = pop.positions[i : i + 1]
    gam, _, _, mu = model.rates_at(pop, x)
    is_birth = rng.random() < model.gamma_cap / (model.gamma_cap + model.mu_cap)
    new_positions = pop.positions
    if is_birth:
        if rng.random() < gam[0] / model.gamma_cap:
            landed = sample_dispersal_many(model.dispersal, x, rng)
            landed = reflect_into(model.domain, x, model.dispersal, rng, landed)
            if rng.random() < model.establishment_at(pop, landed)[0]:
                new_positions = np.vstack([pop.positions, landed])
    else:
        if mu[0] > model.mu_cap * (1.0 + 1e-9):
            raise ValueError("death rate exceeds mu_cap; raise the cap")
        if rng.random() < mu[0] / model.mu_cap:
            new_positions = np.delete(pop.positions, i, axis=0)
    return PointPopulation(new_positions, pop.N, pop.time + elapsed), elapsed


@dataclass
class IBMTrajectory:
    times: list
    snapshots: list
    extinct: bool = False

    def final(self) -> PointPopulation:
        return self.snapshots[-1]


def run_ibm(model: DemographyModel, initial: PointPopulation, horizon: float,
            snapshot_every: float, rng: np.random.Generator,
            stepper: str = "discrete", dt: Optional[float] = None) -> IBMTrajectory:
    """Run to ``horizon``, recording snapshots at multiples of ``snapshot_every``.

    Deterministic under a fixed seed and stepper.  Extinction terminates the
    run and is reported on the trajectory, not raised.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    traj = IBMTrajectory(times=[initial.time], snapshots=[initial])
    if horizon == 0:
        return traj
    if stepper == "discrete":
        if dt is None:
            dt = 0.1 / (model.theta * (model.gamma_cap + model.mu_cap))
        n_steps = max(1, int(round(horizon / dt)))
        dt = horizon / n_steps
        record_stride = max(1, int(round(snapshot_every / dt)))
        pop = initial
        for k in range(1, n_steps + 1):
            pop = step_discrete(model, pop, dt, rng)
            if pop.count == 0:
                traj.times.append(pop.time)
                traj.snapshots.append(pop)
                traj.extinct = True
                return traj
            if k % record_stride == 0 or k == n_steps:
                traj.times.append(pop.time)
                traj.snapshots.append(pop)
        return traj
    if stepper == "exact":
        pop = initial
        t_end = initial.time + horizon
        next_snap = initial.time + snapshot_every
        while pop.time < t_end:
            if pop.count == 0:
                traj.extinct = True
                return traj
            new_pop, _ = step_exact(model, pop, rng)
            while next_snap <= min(new_pop.time, t_end) + 1e-12:
                traj.times.append(next_snap)
                traj.snapshots.append(PointPopulation(pop.positions.copy(), pop.N, next_snap))
                next_snap += snapshot_every
            pop = new_pop
        if traj.times[-1] < t_end - 1e-12:
            traj.times.append(t_end)
            traj.snapshots.append(PointPopulation(pop.positions.copy(), pop.N, t_end))
        return traj
    raise ValueError(f"unknown stepper: {stepper!r}")


def density_profile(pop: PointPopulation, grid: np.ndarray, kernel: Kernel):
    """Smoothed density (kernel * eta) on grid nodes; 1-D returns a ScalarField1D."""
    from .pde import ScalarField1D

    grid = np.asarray(grid, dtype=float)
    if pop.dim == 1:
        values = density_at(kernel, pop.positions, pop.N, grid)
        return ScalarField1D(x=grid, values=values, time=pop.time)
    # 2-D fallback: mass histogram per cell area
    if pop.dim == 2:
        hx, hy = grid, grid
        H, xe, ye = np.histogram2d(pop.positions[:, 0], pop.positions[:, 1], bins=[hx, hy])
        area = np.outer(np.diff(xe), np.diff(ye))
        return H / (pop.N * area)
    raise ValueError("density_profile supports d = 1 or 2")

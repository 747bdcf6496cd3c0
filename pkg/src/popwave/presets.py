"""Named demography and experiment parameterizations.

Presets bundle the rate functions, kernels, dispersal, and scale parameters
for the worked examples: logistic growth (Fisher-KPP), the bistable
Allen-Cahn case, density-dependent fecundity (porous-medium), and the
clumping configuration with gamma(m) = 3/(1+m), mu = 0.3, r = 1, Gaussian
competition of standard deviation 3, and dispersal sigma = 0.2.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .ibm import DemographyModel, Domain, PointPopulation
from .kernels import DispersalLaw, GaussianKernel, IndicatorKernel1D

PRESET_NAMES = ("logistic", "fkpp", "allen_cahn", "pme", "clumping-fig3")


def _ones(x, m):
    return np.ones(np.atleast_2d(x).shape[0])


def make_model(preset: str, N: int, theta: float,
               domain: tuple = (0.0, 10.0),
               dispersal_sigma2: float = 1.0,
               kernel_sigma2: float = 1.0,
               s: float = 0.5) -> DemographyModel:
    """Build the DemographyModel for a named preset (1-D)."""
    dom = Domain(np.array([domain[0]]), np.array([domain[1]]))
    law = DispersalLaw.isotropic(dispersal_sigma2, theta=theta, dim=1)
    if preset in ("logistic", "fkpp"):
        return DemographyModel(
            gamma=_ones, r=_ones,
            F=lambda x, m: 1.0 - m,
            rho_gamma=None, rho_r=None, rho_F=GaussianKernel(1, kernel_sigma2),
            dispersal=law, theta=theta, domain=dom,
            gamma_cap=2.0, mu_cap=3.0,
            uses_density=(False, False, True), r_constant=True, name=preset)
    if preset == "allen_cahn":
        return DemographyModel(
            gamma=_ones, r=_ones,
            F=lambda x, m: (1.0 - m) * (2.0 * m - 1.0 + s),
            rho_gamma=None, rho_r=None, rho_F=GaussianKernel(1, kernel_sigma2),
            dispersal=law, theta=theta, domain=dom,
            gamma_cap=2.0, mu_cap=4.0,
            uses_density=(False, False, True), r_constant=True, name=preset)
    if preset == "pme":
        # gamma(x, m) = m is unbounded; the cap (20x equilibrium density)
        # implements the cut-off the construction needs
        return DemographyModel(
            gamma=lambda x, m: m, r=_ones,
            F=lambda x, m: 1.0 - m,
            rho_gamma=GaussianKernel(1, kernel_sigma2), rho_r=None,
            rho_F=GaussianKernel(1, kernel_sigma2),
            dispersal=law, theta=theta, domain=dom,
            gamma_cap=20.0, mu_cap=25.0,
            uses_density=(True, False, True), r_constant=True, name=preset)
    if preset == "clumping-fig3":
        gamma_fn = lambda x, m: 3.0 / (1.0 + m)
        return DemographyModel(
            gamma=gamma_fn, r=_ones,
            F=lambda x, m: 3.0 / (1.0 + m) - 0.3,
            rho_gamma=GaussianKernel(1, 9.0), rho_r=None,
            rho_F=GaussianKernel(1, 9.0),
            dispersal=DispersalLaw.isotropic(0.04, theta=theta, dim=1),
            theta=theta, domain=dom,
            gamma_cap=3.0, mu_cap=4.0,
            uses_density=(True, False, True), r_constant=True, name=preset)
    raise ValueError(f"unknown preset {preset!r}; valid presets: {', '.join(PRESET_NAMES)}")


def equilibrium_density(preset: str, s: float = 0.5) -> float:
    """Density phi0 with F(phi0) = 0 for the preset's reaction."""
    if preset in ("logistic", "fkpp", "pme", "allen_cahn"):
        return 1.0
    if preset == "clumping-fig3":
        return 9.0
    raise ValueError(f"unknown preset {preset!r}")


def initial_population(preset: str, model: DemographyModel, N: int,
                       rng: np.random.Generator,
                       kind: str = "equilibrium") -> PointPopulation:
    """Starting configurations: equilibrium scatter or an occupied left block."""
    dom = model.domain
    length = float(dom.lengths[0])
    phi0 = equilibrium_density(preset)
    if kind == "equilibrium":
        count = max(1, int(round(phi0 * N * length)))
        return PointPopulation.uniform(count, dom, N=N, rng=rng)
    if kind == "block":
        frac = 0.25
        count = max(1, int(round(phi0 * N * length * frac)))
        lo = dom.lo.copy()
        hi = dom.hi.copy()
        hi[0] = lo[0] + frac * length
        pts = rng.uniform(lo, hi, size=(count, 1))
        return PointPopulation(pts, N=N)
    raise ValueError(f"unknown initial kind {kind!r}")

"""Linearized Fourier stability of the homogeneous equilibrium ("clumping").

Around a constant solution phi0 with F(phi0) = 0, a perturbation mode of
frequency u (cycles per unit length, transform convention
f^(u) = int e^{2 pi i u x} f(x) dx) grows at rate

    lambda(u) = -4 pi^2 u^2 sigma^2 (phi0 r0 g0' rho_g^(u) + r0 g0)
                + phi0 F0' rho_F^(u).

With a Gaussian competition kernel and constant fecundity the bracket is
negative for every u (the constant solution is stable); a kernel whose
transform changes sign (the indicator) opens unstable bands at frequencies
scaling with the interaction distance when dispersal is short-ranged.
1-D only: the 2-D analysis replaces the sine by a Bessel function and has no
quantitative anchors here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from .kernels import Kernel, kernel_fourier


@dataclass
class HomogeneousEquilibrium:
    """Constant state phi0 with the local coefficients of the linearization.

    ``rp0`` (r'(phi0)) is carried for completeness but does not enter the
    growth rate: the linearization keeps only the gamma' and F' terms.
    """

    phi0: float
    r0: float
    gamma0: float
    Fp0: float
    gammap0: float
    rp0: float
    sigma2: float
    rho_gamma: Optional[Kernel]
    rho_F: Kernel

    def __post_init__(self):
        if self.Fp0 >= 0:
            raise ValueError("linear stability analysis requires F'(phi0) < 0")


def find_equilibrium(F: Callable[[float], float], bracket: Tuple[float, float],
                     tol: float = 1e-12, max_iter: int = 200) -> float:
    """Root of F on the bracket by bisection to 1e-12."""
    lo, hi = float(bracket[0]), float(bracket[1])
    f_lo, f_hi = F(lo), F(hi)
    if f_lo == 0.0:
        return lo
    if f_hi == 0.0:
        return hi
    if f_lo * f_hi > 0:
        raise ValueError("F does not change sign on the bracket")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = F(mid)
        if f_mid == 0.0 or (hi - lo) < tol:
            return mid
        if f_lo * f_mid < 0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi)


def central_derivative(f: Callable[[float], float], x: float,
                       scale: float = 1.0) -> float:
    """Central finite difference with step 1e-6 * max(1, scale)."""
    h = 1e-6 * max(1.0, abs(scale))
    return (f(x + h) - f(x - h)) / (2.0 * h)


def equilibrium_from_model(F: Callable[[float], float],
                           gamma: Callable[[float], float],
                           r: Callable[[float], float],
                           bracket: Tuple[float, float],
                           sigma2: float,
                           rho_gamma: Optional[Kernel],
                           rho_F: Kernel,
                           Fp: Optional[Callable[[float], float]] = None,
                           gammap: Optional[Callable[[float], float]] = None,
                           rp: Optional[Callable[[float], float]] = None) -> HomogeneousEquilibrium:
    """Locate phi0 and assemble the linearization coefficients.

    Derivatives default to central finite differences when closed forms are
    not supplied.
    """
    phi0 = find_equilibrium(F, bracket)
    if abs(F(phi0)) > 1e-10:
        raise ValueError("equilibrium residual exceeds 1e-10")
    Fp0 = Fp(phi0) if Fp is not None else central_derivative(F, phi0, phi0)
    gp0 = gammap(phi0) if gammap is not None else central_derivative(gamma, phi0, phi0)
    rp0 = rp(phi0) if rp is not None else central_derivative(r, phi0, phi0)
    return HomogeneousEquilibrium(
        phi0=phi0, r0=r(phi0), gamma0=gamma(phi0), Fp0=Fp0, gammap0=gp0, rp0=rp0,
        sigma2=sigma2, rho_gamma=rho_gamma, rho_F=rho_F)


def growth_rate(eq: HomogeneousEquilibrium, u) -> np.ndarray:
    """Perturbation growth rate lambda(u); lambda(0) = phi0 * F'(phi0) exactly."""
    u = np.asarray(u, dtype=float)
    u2 = 4.0 * math.pi**2 * u * u  # |Laplacian| symbol at frequency u
    rho_F_hat = kernel_fourier(eq.rho_F, u)
    gamma_term = 0.0
    if eq.gammap0 != 0.0:
        if eq.rho_gamma is None:
            raise ValueError("gamma'(phi0) != 0 needs a fecundity kernel transform")
        gamma_term = eq.phi0 * eq.r0 * eq.gammap0 * kernel_fourier(eq.rho_gamma, u)
    lam = -u2 * eq.sigma2 * (gamma_term + eq.r0 * eq.gamma0) + eq.phi0 * eq.Fp0 * rho_F_hat
    return lam if lam.ndim else float(lam)


@dataclass
class BandReport:
    stable: bool
    bands: List[Tuple[float, float]]
    u_scan: np.ndarray = field(repr=False, default=None)
    lambda_scan: np.ndarray = field(repr=False, default=None)


def _bisect_root(f: Callable[[float], float], lo: float, hi: float,
                 tol: float = 1e-6) -> float:
    if lo > hi:
        lo, hi = hi, lo
    f_lo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if (hi - lo) < tol:
            return mid
        f_mid = f(mid)
        if f_lo * f_mid <= 0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    return 0.5 * (lo + hi)


def unstable_band(eq: HomogeneousEquilibrium, u_max: float,
                  grid: Optional[np.ndarray] = None) -> BandReport:
    """Intervals of positive lambda(u) on (0, u_max], endpoints refined to 1e-6.

    The default scan resolves 1/(20 * interaction length) so indicator-kernel
    sign bands are never stepped over.
    """
    if grid is None:
        eps = getattr(eq.rho_F, "halfwidth", None)
        if eps is None:
            eps = eq.rho_F.sigma
        du = min(1.0 / (20.0 * eps), u_max / 400.0)
        grid = np.arange(du, u_max + du, du)
    lam = growth_rate(eq, grid)
    pos = lam > 0
    bands = []
    f = lambda u: float(growth_rate(eq, u))
    i = 0
    n = grid.size
    while i < n:
        if pos[i]:
            j = i
            while j + 1 < n and pos[j + 1]:
                j += 1
            lo = _bisect_root(f, grid[i - 1], grid[i]) if i > 0 else 0.0
            hi = _bisect_root(f, grid[j + 1], grid[j]) if j + 1 < n else grid[j]
            bands.append((float(min(lo, hi)), float(max(lo, hi))))
            i = j + 1
        else:
            i += 1
    return BandReport(stable=not bands, bands=bands, u_scan=grid, lambda_scan=lam)


def _golden_max(f: Callable[[float], float], lo: float, hi: float,
                tol: float = 1e-8) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def clump_wavelength(eq: HomogeneousEquilibrium, u_max: float,
                     report: Optional[BandReport] = None) -> Optional[float]:
    """1 / argmax lambda(u) over the dominant unstable band, or None if stable."""
    if report is None:
        report = unstable_band(eq, u_max)
    if report.stable:
        return None
    best_band, best_val = None, -math.inf
    for lo, hi in report.bands:
        mask = (report.u_scan >= lo) & (report.u_scan <= hi)
        if not np.any(mask):
            continue
        peak = float(np.max(report.lambda_scan[mask]))
        if peak > best_val:
            best_val, best_band = peak, (lo, hi)
    if best_band is None:
        best_band = report.bands[0]
    u_star = _golden_max(lambda u: float(growth_rate(eq, u)), best_band[0], best_band[1])
    return 1.0 / u_star

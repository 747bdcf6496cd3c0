"""1-D explicit finite-difference solvers for the limiting local and nonlocal PDEs.

All solvers use Neumann (zero-flux) boundaries, centered second differences,
and upwinded first-order drift.  Nonlocal reaction/diffusion arguments are
discrete convolutions by direct truncated sum with trapezoid weights
(renormalized to unit mass so constant fields are exact fixed points).
Explicit time stepping everywhere: CFL is cheap at desk scales and the
degenerate PME diffusion resists naive implicit solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from scipy.integrate import trapezoid

from .kernels import GaussianKernel, IndicatorKernel1D, Kernel


@dataclass
class ScalarField1D:
    """Uniform-grid sample of a nonnegative density phi(t, .)."""

    x: np.ndarray
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.x.ndim != 1 or self.x.size < 3:
            raise ValueError("grid must be a 1-D array with at least 3 nodes")
        h = np.diff(self.x)
        if not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
            raise ValueError("grid must be uniform")
        if self.values.shape != self.x.shape:
            raise ValueError("values must match the grid")

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    def total_mass(self) -> float:
        return float(trapezoid(self.values, self.x))

    def copy(self) -> "ScalarField1D":
        return ScalarField1D(self.x, self.values.copy(), self.time)


@dataclass
class PDEProblem:
    """Reaction F(m), diffusion sigma^2, drift b (B* = sigma^2 Lap - b grad), kernel."""

    kind: str
    F: Callable[[np.ndarray], np.ndarray]
    sigma2: float = 1.0
    drift: float = 0.0
    kernel: Optional[Kernel] = None

    KINDS = ("reaction_diffusion", "nonlocal_rd", "pme_logistic", "nonlocal_pme")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown PDE kind {self.kind!r}; expected one of {self.KINDS}")
        # kernel=None on a nonlocal kind means epsilon = 0: solvers delegate
        # to the local scheme


@dataclass
class PDETrajectory:
    times: List[float]
    fields: List[ScalarField1D]
    clipped_mass: float = 0.0

    def final(self) -> ScalarField1D:
        return self.fields[-1]


def laplacian_neumann(v: np.ndarray, h: float) -> np.ndarray:
    """Centered second difference with mirrored ghost nodes (zero-flux walls)."""
    out = np.empty_like(v)
    out[1:-1] = v[2:] - 2.0 * v[1:-1] + v[:-2]
    out[0] = 2.0 * (v[1] - v[0])
    out[-1] = 2.0 * (v[-2] - v[-1])
    return out / (h * h)


def upwind_gradient(v: np.ndarray, h: float, b: float) -> np.ndarray:
    """First difference upwinded for the advection term -b * dv/dx."""
    out = np.empty_like(v)
    if b >= 0:
        out[1:] = v[1:] - v[:-1]
        out[0] = 0.0  # zero-gradient ghost at the inflow wall
    else:
        out[:-1] = v[1:] - v[:-1]
        out[-1] = 0.0
    return out / h


class GridConvolution:
    """Truncated direct convolution of a kernel against grid values.

    Weights are kernel values times h (trapezoid, with half weights at the
    truncation endpoints), renormalized to sum to one so that the convolution
    of a constant field is exactly that constant.  Values are reflected at the
    boundaries, consistent with the zero-flux walls.
    """

    def __init__(self, kernel: Kernel, h: float):
        radius = kernel.truncation_radius
        half = max(1, int(math.ceil(radius / h - 1e-12)))
        offsets = np.arange(-half, half + 1) * h
        w = np.asarray(kernel(offsets), dtype=float) * h
        w[0] *= 0.5
        w[-1] *= 0.5
        total = w.sum()
        if total <= 0:
            raise ValueError("kernel truncation produced zero mass on this grid")
        self.weights = w / total
        self.half = half

    def __call__(self, v: np.ndarray) -> np.ndarray:
        k = self.half
        if k > v.size - 1:
            raise ValueError("kernel truncation radius exceeds the domain")
        padded = np.concatenate([v[k:0:-1], v, v[-2 : -2 - k : -1]])
        return np.convolve(padded, self.weights, mode="valid")


def _snapshot_stride(T: float, dt: float, snapshot_every: Optional[float]) -> int:
    if snapshot_every is None:
        snapshot_every = T / 50.0
    return max(1, int(round(snapshot_every / dt)))


class _ClipAccount:
    """Clip negative values to zero, tracking the clipped mass (must stay tiny)."""

    def __init__(self, h: float):
        self.h = h
        self.clipped = 0.0

    def __call__(self, v: np.ndarray) -> np.ndarray:
        neg = v < 0.0
        if np.any(neg):
            self.clipped += float(-v[neg].sum()) * self.h
            v = np.where(neg, 0.0, v)
        return v

    def enforce(self, total_mass: float):
        if self.clipped > 1e-8 * max(total_mass, 1e-300):
            raise ValueError("negativity clipping exceeded 1e-8 of total mass")


def _check_blowup(v: np.ndarray):
    if not np.all(np.isfinite(v)) or np.max(v) > 1e6:
        raise ValueError("solution blow-up")


def solve_rd(problem: PDEProblem, initial: ScalarField1D, T: float, dt: float,
             snapshot_every: Optional[float] = None) -> PDETrajectory:
    """Explicit solver for d phi/dt = sigma^2 phi'' - b phi' + phi F(phi)."""
    h = initial.h
    if dt > 0.9 * h * h / (2.0 * problem.sigma2) + 1e-15:
        raise ValueError("CFL violation: dt exceeds 0.9*h^2/(2*sigma^2)")
    if abs(problem.drift) * dt > h:
        raise ValueError("CFL violation: advection exceeds one cell per step")
    return _march_rd(problem, initial, T, dt, snapshot_every, conv=None)


def solve_nonlocal_rd(problem: PDEProblem, initial: ScalarField1D, T: float, dt: float,
                      snapshot_every: Optional[float] = None) -> PDETrajectory:
    """Same as solve_rd but the reaction argument is the convolution kernel*phi."""
    if problem.kernel is None:
        return solve_rd(problem, initial, T, dt, snapshot_every)
    h = initial.h
    if dt > 0.9 * h * h / (2.0 * problem.sigma2) + 1e-15:
        raise ValueError("CFL violation: dt exceeds 0.9*h^2/(2*sigma^2)")
    conv = GridConvolution(problem.kernel, h)
    return _march_rd(problem, initial, T, dt, snapshot_every, conv=conv)


def _march_rd(problem, initial, T, dt, snapshot_every, conv) -> PDETrajectory:
    h = initial.h
    n_steps = max(1, int(round(T / dt)))
    dt = T / n_steps
    stride = _snapshot_stride(T, dt, snapshot_every)
    v = initial.values.copy()
    clip = _ClipAccount(h)
    traj = PDETrajectory(times=[initial.time], fields=[initial.copy()])
    t = initial.time
    for k in range(1, n_steps + 1):
        m = conv(v) if conv is not None else v
        rhs = problem.sigma2 * laplacian_neumann(v, h) + v * problem.F(m)
        if problem.drift != 0.0:
            rhs -= problem.drift * upwind_gradient(v, h, problem.drift)
        v = clip(v + dt * rhs)
        _check_blowup(v)
        t = initial.time + k * dt
        if k % stride == 0 or k == n_steps:
            traj.times.append(t)
            traj.fields.append(ScalarField1D(initial.x, v.copy(), t))
    clip.enforce(traj.fields[-1].total_mass())
    traj.clipped_mass = clip.clipped
    return traj


def solve_pme_logistic(initial: ScalarField1D, T: float, dt: float,
                       snapshot_every: Optional[float] = None,
                       drift: float = 0.0) -> PDETrajectory:
    """Explicit solver for d psi/dt = (psi^2)'' - b psi' + psi (1 - psi).

    The porous-medium diffusion is discretized conservatively as the centered
    second difference of psi^2, which preserves the sharp front.  The step is
    shortened adaptively to keep 0.9*h^2/(4 max psi); hitting the dt floor
    raises.
    """
    h = initial.h
    n_out = max(1, int(round(T / dt)))
    dt = T / n_out
    stride = _snapshot_stride(T, dt, snapshot_every)
    v = initial.values.copy()
    clip = _ClipAccount(h)
    traj = PDETrajectory(times=[initial.time], fields=[initial.copy()])
    floor = dt * 1e-6
    for k in range(1, n_out + 1):
        remaining = dt
        while remaining > 1e-15:
            vmax = float(np.max(v))
            cap = 0.9 * h * h / (4.0 * max(vmax, 1e-12))
            if abs(drift) > 0:
                cap = min(cap, 0.5 * h / abs(drift))
            sub = min(remaining, cap)
            if sub < floor:
                raise ValueError("adaptive dt floor reached")
            rhs = laplacian_neumann(v * v, h) + v * (1.0 - v)
            if drift != 0.0:
                rhs -= drift * upwind_gradient(v, h, drift)
            v = clip(v + sub * rhs)
            _check_blowup(v)
            remaining -= sub
        if k % stride == 0 or k == n_out:
            t = initial.time + k * dt
            traj.times.append(t)
            traj.fields.append(ScalarField1D(initial.x, v.copy(), t))
    clip.enforce(traj.fields[-1].total_mass())
    traj.clipped_mass = clip.clipped
    return traj


def solve_nonlocal_pme(initial: ScalarField1D, rho_eps: Kernel, T: float, dt: float,
                       snapshot_every: Optional[float] = None) -> PDETrajectory:
    """Explicit solver for d psi/dt = Lap(psi * (rho*psi)) + psi (1 - rho*psi)."""
    h = initial.h
    conv = GridConvolution(rho_eps, h)
    n_out = max(1, int(round(T / dt)))
    dt = T / n_out
    stride = _snapshot_stride(T, dt, snapshot_every)
    v = initial.values.copy()
    clip = _ClipAccount(h)
    traj = PDETrajectory(times=[initial.time], fields=[initial.copy()])
    floor = dt * 1e-6
    for k in range(1, n_out + 1):
        remaining = dt
        while remaining > 1e-15:
            g = conv(v)
            cap = 0.9 * h * h / (4.0 * max(float(np.max(g)), float(np.max(v)), 1e-12))
            sub = min(remaining, cap)
            if sub < floor:
                raise ValueError("adaptive dt floor reached")
            rhs = laplacian_neumann(v * g, h) + v * (1.0 - g)
            v = clip(v + sub * rhs)
            _check_blowup(v)
            remaining -= sub
        if k % stride == 0 or k == n_out:
            t = initial.time + k * dt
            traj.times.append(t)
            traj.fields.append(ScalarField1D(initial.x, v.copy(), t))
    clip.enforce(traj.fields[-1].total_mass())
    traj.clipped_mass = clip.clipped
    return traj


# ---------------------------------------------------------------------------
# Wave measurement and closed-form wave profiles
# ---------------------------------------------------------------------------


@dataclass
class WaveSpeedResult:
    speed: float
    times: np.ndarray
    positions: np.ndarray


def front_position(field: ScalarField1D, level: float = 0.5) -> float:
    """Rightmost down-crossing of ``level``, linearly interpolated."""
    v = field.values
    above = v[:-1] >= level
    below = v[1:] < level
    idx = np.nonzero(above & below)[0]
    if idx.size == 0:
        raise ValueError("no front detected")
    i = int(idx[-1])
    x0, x1 = field.x[i], field.x[i + 1]
    frac = (v[i] - level) / (v[i] - v[i + 1])
    return float(x0 + frac * (x1 - x0))


def measure_wave_speed(traj: PDETrajectory, level: float = 0.5) -> WaveSpeedResult:
    """Least-squares front speed over the last half of the snapshots."""
    times, positions = [], []
    for t, f in zip(traj.times, traj.fields):
        try:
            positions.append(front_position(f, level))
            times.append(t)
        except ValueError:
            continue
    if len(times) < 10:
        raise ValueError("no front detected")
    times = np.asarray(times)
    positions = np.asarray(positions)
    half = len(times) // 2
    t, p = times[half:], positions[half:]
    slope = np.polyfit(t, p, 1)[0] if t[-1] > t[0] else 0.0
    return WaveSpeedResult(speed=float(slope), times=times, positions=positions)


def analytic_wave(kind: str, grid: np.ndarray, x0: float = 0.0, t: float = 0.0,
                  s: float = 0.5, speed: Optional[float] = None) -> ScalarField1D:
    """Closed-form travelling waves: 'pme' (sharp front) and 'allen_cahn'."""
    grid = np.asarray(grid, dtype=float)
    if kind == "pme":
        c = 1.0 if speed is None else speed
        xi = grid - x0 - c * t
        vals = np.maximum(0.0, 1.0 - np.exp(0.5 * xi))
    elif kind == "allen_cahn":
        c = s if speed is None else speed
        xi = grid - x0 - c * t
        vals = 1.0 / (1.0 + np.exp(xi))
    else:
        raise ValueError(f"unknown analytic wave kind {kind!r}")
    return ScalarField1D(x=grid, values=vals, time=t)

"""Lookdown (levelled) representation of the population process.

Each line of descent carries a level in [0, N].  A line at level u and
position x produces an offspring at rate 2*theta*(1 - u/N)*gamma; the
offspring establishes with probability r at its landing point, receives a new
level uniform on [u, N], and a fair coin decides whether the parent individual
or the offspring keeps the old (lower) level.  The line of descent follows the
level, so with kappa = 0 the parent individual takes the new level and the
line steps to the offspring's position.  Between births, levels obey
du/dt = c_theta u^2 - b_theta u and lines whose level crosses N die.

Levels of the individuals in any region are exchangeable and conditionally
uniform on [0, N]; projecting levels away recovers the plain population
process in distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .ibm import DemographyModel, PointPopulation, _check_step_guard, reflect_into
from .kernels import sample_dispersal_many

Label = Tuple[int, ...]

# 3-point Gauss-Hermite rule for N(0,1): exact through degree-5 polynomials.
_GH_NODES = np.array([-math.sqrt(3.0), 0.0, math.sqrt(3.0)])
_GH_WEIGHTS = np.array([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0])


@dataclass
class BirthRecord:
    t: float
    parent_label: Label
    child_label: Label
    kappa: int
    x_parent: np.ndarray
    x_child: np.ndarray
    new_level: float


@dataclass
class DeathRecord:
    t: float
    label: Label
    x: np.ndarray


@dataclass
class EventLog:
    """Append-only birth/death records supporting backward lineage tracing."""

    start_time: float = 0.0
    births: List[BirthRecord] = field(default_factory=list)
    deaths: List[DeathRecord] = field(default_factory=list)
    _index: Optional[tuple] = field(default=None, repr=False)

    def add_birth(self, rec: BirthRecord):
        self.births.append(rec)
        self._index = None

    def add_death(self, rec: DeathRecord):
        self.deaths.append(rec)

    def birth_index(self):
        """(by_parent, by_child) lookup tables, rebuilt only after appends."""
        if self._index is None:
            by_parent: dict = {}
            by_child: dict = {}
            for rec in self.births:
                by_parent.setdefault(rec.parent_label, []).append(rec)
                by_child[rec.child_label] = rec
            for recs in by_parent.values():
                recs.sort(key=lambda r: r.t)
            self._index = (by_parent, by_child)
        return self._index


@dataclass
class LevelledPopulation:
    """Lookdown state: positions, levels in [0, N], Ulam-Harris labels."""

    positions: np.ndarray
    levels: np.ndarray
    labels: List[Label]
    parent_labels: List[Optional[Label]]
    birth_times: np.ndarray
    N: int
    theta: float
    time: float = 0.0
    log: Optional[EventLog] = None
    _child_counts: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.positions.ndim == 1:
            self.positions = self.positions.reshape(-1, 1)
        self.levels = np.asarray(self.levels, dtype=float)
        self.birth_times = np.asarray(self.birth_times, dtype=float)
        if len(self.labels) != self.positions.shape[0]:
            raise ValueError("labels must match positions")
        if np.any(self.levels < 0) or np.any(self.levels > self.N):
            raise ValueError("levels must lie in [0, N]")

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def from_population(cls, pop: PointPopulation, theta: float,
                        rng: np.random.Generator, log_events: bool = True) -> "LevelledPopulation":
        """Assign i.i.d. Uniform[0, N] levels and labels (i,) to an initial population."""
        n = pop.count
        levels = rng.uniform(0.0, pop.N, size=n)
        labels = [(i + 1,) for i in range(n)]
        return cls(
            positions=pop.positions.copy(),
            levels=levels,
            labels=labels,
            parent_labels=[None] * n,
            birth_times=np.full(n, pop.time),
            N=pop.N,
            theta=theta,
            time=pop.time,
            log=EventLog(start_time=pop.time) if log_events else None,
        )

    def next_child_label(self, parent: Label) -> Label:
        k = self._child_counts.get(parent, 0) + 1
        self._child_counts[parent] = k
        return parent + (k,)


def project(pop: LevelledPopulation) -> PointPopulation:
    """Drop levels; atoms of mass 1/N at the same positions."""
    return PointPopulation(pop.positions.copy(), pop.N, pop.time)


def expected_establishment(model: DemographyModel, pop, xs: np.ndarray) -> np.ndarray:
    """E[r(Y, eta)] under Y ~ q_theta(x, .), by 3-point-per-axis sigma quadrature.

    Deterministic, exact for quadratics in the displacement, with error
    O(theta^-2) matching the scale of the level-ODE coefficients.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    n, d = xs.shape
    law = model.dispersal
    if model.r_constant:
        return np.asarray(model.r(xs, np.zeros(n)), dtype=float)
    nodes = [_GH_NODES] * d
    out = np.zeros(n)
    grids = np.meshgrid(*nodes, indexing="ij")
    zs = np.stack([g.ravel() for g in grids], axis=-1)  # (3^d, d)
    wgrids = np.meshgrid(*([_GH_WEIGHTS] * d), indexing="ij")
    ws = np.prod(np.stack([w.ravel() for w in wgrids], axis=-1), axis=-1)
    sqrt_theta = math.sqrt(law.theta)
    for z, w in zip(zs, ws):
        if law._const_chol is not None and law._const_mean is not None:
            ys = xs + law._const_mean / law.theta + (law._const_chol @ z) / sqrt_theta
        else:
            ys = np.empty_like(xs)
            for i in range(n):
                ys[i] = xs[i] + law.mean_at(xs[i]) / law.theta \
                    + (law.chol_at(xs[i]) @ z) / sqrt_theta
        out += w * model.establishment_at(pop, ys)
    return out


def level_coefficients(model: DemographyModel, x, pop) -> Tuple[float, float]:
    """(b_theta, c_theta) at position x against the snapshot ``pop``.

    b_theta = theta*gamma*(E[r(Y)] - r(x)) + F(x) is the local net growth;
    c_theta = (theta/N)*gamma*E[r(Y)] is the rate of successful offspring
    production.  The clamp mu >= 0 is ignored here, as the level dynamics
    assume; use validate_config to check whether the clamp would bind.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    gam, rr, ff, _ = model.rates_at(pop, x)
    er = expected_establishment(model, pop, x)
    b = model.theta * gam[0] * (er[0] - rr[0]) + ff[0]
    c = (model.theta / pop.N) * gam[0] * er[0]
    return float(b), float(c)


def evolve_level(u0, b, c, dt):
    """Closed-form solution of du/dt = c u^2 - b u over a step of length dt.

    Returns inf where the level blows up within the step (declared dead by the
    caller when the value exceeds N).  Vectorized over matching-shape inputs.
    """
    scalar = np.ndim(u0) == 0
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    b = np.broadcast_to(np.asarray(b, dtype=float), u0.shape).copy()
    c = np.broadcast_to(np.asarray(c, dtype=float), u0.shape).copy()
    if np.any(u0 < 0):
        raise ValueError("levels must be nonnegative")
    out = np.empty_like(u0)
    zero = u0 == 0.0
    linear = (c == 0.0) & ~zero
    bzero = (b == 0.0) & (c != 0.0) & ~zero
    general = ~linear & ~bzero & ~zero
    out[zero] = 0.0
    if np.any(linear):
        out[linear] = u0[linear] * np.exp(-b[linear] * dt)
    if np.any(bzero):
        denom = 1.0 - c[bzero] * u0[bzero] * dt
        out[bzero] = np.where(denom > 0.0, u0[bzero] / np.where(denom > 0, denom, 1.0), np.inf)
    if np.any(general):
        a = c[general] / b[general]
        e = np.exp(b[general] * dt)
        denom = a + (1.0 / u0[general] - a) * e
        # 1/u follows a linear ODE; u stays positive iff the denominator does
        out[general] = np.where(denom > 0.0, 1.0 / np.where(denom > 0, denom, 1.0), np.inf)
    if scalar:
        return float(out[0])
    return out


def lookdown_step(pop: LevelledPopulation, model: DemographyModel, dt: float,
                  rng: np.random.Generator) -> LevelledPopulation:
    """One synchronous lookdown step of length dt.

    Births fire with probability 1 - exp(-2*theta*(1-u/N)*gamma*dt), all
    rates and coefficients frozen at the pre-step snapshot; existing levels
    then evolve by the closed form and lines crossing N are removed.
    """
    _check_step_guard(model, dt)
    n = pop.count
    if n == 0:
        return LevelledPopulation(
            positions=pop.positions.copy(), levels=pop.levels.copy(),
            labels=list(pop.labels), parent_labels=list(pop.parent_labels),
            birth_times=pop.birth_times.copy(), N=pop.N, theta=pop.theta,
            time=pop.time + dt, log=pop.log, _child_counts=pop._child_counts)
    snapshot = project(pop)
    gam, rr, ff, _ = model.rates_at(snapshot)
    er = expected_establishment(model, snapshot, pop.positions)
    b_coef = model.theta * gam * (er - rr) + ff
    c_coef = (model.theta / pop.N) * gam * er

    rate = 2.0 * model.theta * (1.0 - pop.levels / pop.N) * gam
    p_birth = -np.expm1(-rate * dt)
    birth_idx = np.nonzero(rng.random(n) < p_birth)[0]

    new_positions = pop.positions.copy()
    new_levels = evolve_level(pop.levels, b_coef, c_coef, dt)
    labels = list(pop.labels)
    parents = list(pop.parent_labels)
    births = pop.birth_times.copy()
    t_event = pop.time  # births stamped at the step start (coefficients frozen there)

    add_pos, add_lvl, add_lab, add_par, add_birth = [], [], [], [], []
    if birth_idx.size > 0:
        parents_x = pop.positions[birth_idx]
        landed = sample_dispersal_many(model.dispersal, parents_x, rng)
        landed = reflect_into(model.domain, parents_x, model.dispersal, rng, landed)
        r_land = model.establishment_at(snapshot, landed)
        keep = rng.random(birth_idx.size) < r_land
        u_new = pop.levels[birth_idx] + (pop.N - pop.levels[birth_idx]) * rng.random(birth_idx.size)
        kappas = rng.integers(0, 2, size=birth_idx.size)
        for j, i in enumerate(birth_idx):
            if not keep[j]:
                continue
            parent_label = pop.labels[i]
            child_label = pop.next_child_label(parent_label)
            x_parent = pop.positions[i].copy()
            x_child = landed[j].copy()
            if kappas[j] == 0:
                # parent individual takes the new level; the line of descent
                # (old level, old label) continues at the offspring's position
                new_positions[i] = x_child
                add_pos.append(x_parent)
            else:
                add_pos.append(x_child)
            add_lvl.append(float(u_new[j]))
            add_lab.append(child_label)
            add_par.append(parent_label)
            add_birth.append(t_event)
            if pop.log is not None:
                pop.log.add_birth(BirthRecord(
                    t=t_event, parent_label=parent_label, child_label=child_label,
                    kappa=int(kappas[j]), x_parent=x_parent, x_child=x_child,
                    new_level=float(u_new[j])))

    if add_pos:
        new_positions = np.vstack([new_positions, np.asarray(add_pos)])
        new_levels = np.concatenate([new_levels, np.asarray(add_lvl)])
        labels.extend(add_lab)
        parents.extend(add_par)
        births = np.concatenate([births, np.asarray(add_birth)])

    alive = new_levels <= pop.N
    if pop.log is not None and not np.all(alive):
        for i in np.nonzero(~alive)[0]:
            pop.log.add_death(DeathRecord(t=pop.time + dt, label=labels[i],
                                          x=new_positions[i].copy()))
    out = LevelledPopulation(
        positions=new_positions[alive],
        levels=new_levels[alive],
        labels=[lab for lab, a in zip(labels, alive) if a],
        parent_labels=[par for par, a in zip(parents, alive) if a],
        birth_times=births[alive],
        N=pop.N,
        theta=pop.theta,
        time=pop.time + dt,
        log=pop.log,
        _child_counts=pop._child_counts,
    )
    return out


@dataclass
class LookdownTrajectory:
    times: list
    mass: list
    levels_snapshots: list
    final: LevelledPopulation


def run_lookdown(model: DemographyModel, initial: LevelledPopulation, horizon: float,
                 snapshot_every: float, rng: np.random.Generator,
                 dt: Optional[float] = None) -> LookdownTrajectory:
    """March the lookdown process, recording total projected mass and levels."""
    if dt is None:
        dt = 0.1 / (model.theta * (model.gamma_cap + model.mu_cap))
    n_steps = max(1, int(round(horizon / dt)))
    dt = horizon / n_steps
    stride = max(1, int(round(snapshot_every / dt)))
    pop = initial
    traj = LookdownTrajectory(times=[pop.time], mass=[pop.count / pop.N],
                              levels_snapshots=[pop.levels.copy()], final=pop)
    for k in range(1, n_steps + 1):
        pop = lookdown_step(pop, model, dt, rng)
        if k % stride == 0 or k == n_steps:
            traj.times.append(pop.time)
            traj.mass.append(pop.count / pop.N)
            traj.levels_snapshots.append(pop.levels.copy())
        if pop.count == 0:
            break
    traj.final = pop
    return traj


# ---------------------------------------------------------------------------
# Lineage tracing over the event log
# ---------------------------------------------------------------------------


@dataclass
class LineagePath:
    """Piecewise-constant backward path; cadlag with jumps at ancestral births."""

    t_now: float
    back_to: float
    jump_times: np.ndarray  # forward times, decreasing as traced
    segments: np.ndarray    # positions, segments[k] holds on (jump_times[k+1], jump_times[k]]
    earliest_label: Label = None  # ancestor line carrying the path at back_to

    def position_at(self, t: float) -> np.ndarray:
        if t > self.t_now + 1e-12 or t < self.back_to - 1e-12:
            raise ValueError("time outside the traced window")
        # segments[k] holds from jump_times[k+1] (inclusive, cadlag) up to
        # jump_times[k]; find the first recorded jump at or before t
        idx = int(np.searchsorted(-self.jump_times[1:], -t, side="left"))
        idx = min(idx, len(self.segments) - 1)
        return self.segments[idx]

    def backward_samples(self, s_values: np.ndarray) -> np.ndarray:
        return np.array([self.position_at(self.t_now - s) for s in s_values])


def trace_lineage(log: EventLog, label: Label, x_now: np.ndarray, t_now: float,
                  back_to: float) -> LineagePath:
    """Trace the line of descent of ``label`` backward from ``t_now`` to ``back_to``.

    Follows parent links through the birth records, honouring the swap flags:
    kappa = 0 means the line moved to the offspring's position at that birth,
    so stepping backward restores the parent individual's position.
    """
    if back_to < log.start_time - 1e-12:
        raise ValueError("lineage record gap")
    by_parent, by_child = log.birth_index()

    cur = tuple(label)
    pos = np.atleast_1d(np.asarray(x_now, dtype=float)).copy()
    t_cursor = t_now
    jump_times = [t_now]
    segments = [pos.copy()]

    while True:
        own = by_child.get(cur)
        candidates = []
        for rec in by_parent.get(cur, []):
            if rec.t <= t_cursor and rec.t >= back_to:
                lower = own.t if own is not None else -math.inf
                if rec.t >= lower:
                    candidates.append(("parent", rec))
        if own is not None and back_to <= own.t <= t_cursor:
            candidates.append(("child", own))
        if not candidates:
            break
        kind, rec = max(candidates, key=lambda kr: (kr[1].t, kr[0] == "parent"))
        if kind == "parent":
            # stepping backward over one of the line's own birth events
            if rec.kappa == 0 and not np.allclose(rec.x_parent, pos):
                jump_times.append(rec.t)
                segments.append(np.atleast_1d(rec.x_parent).copy())
            pos = np.atleast_1d(rec.x_parent).copy()
            t_cursor = rec.t - 1e-15
        else:
            # crossing the line's own creation: continue as the parent line
            if not np.allclose(rec.x_parent, pos):
                jump_times.append(rec.t)
                segments.append(np.atleast_1d(rec.x_parent).copy())
            pos = np.atleast_1d(rec.x_parent).copy()
            cur = rec.parent_label
            t_cursor = rec.t - 1e-15
    return LineagePath(
        t_now=t_now, back_to=back_to,
        jump_times=np.asarray(jump_times), segments=np.asarray(segments),
        earliest_label=cur)


def levels_uniformity_stat(pop: LevelledPopulation) -> Tuple[float, float]:
    """Two-sided KS statistic and p-value of the levels against Uniform[0, N]."""
    if pop.count < 20:
        raise ValueError("too few individuals for a levels uniformity check")
    res = stats.kstest(pop.levels, stats.uniform(loc=0.0, scale=pop.N).cdf)
    return float(res.statistic), float(res.pvalue)

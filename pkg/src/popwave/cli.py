"""Experiment configuration, orchestration, and artifact emission.

Every run writes a ``manifest.json`` echoing the fully resolved configuration
and the toolkit version; rerunning from a manifest reproduces the run
byte-for-byte.  Numeric series go to CSV, plots to self-contained SVG.
Exit codes: 0 ok, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from . import __version__
from . import ibm as ibm_mod
from . import lineage as lineage_mod
from . import lookdown as lookdown_mod
from . import pde as pde_mod
from . import presets as presets_mod
from . import stability as stability_mod
from .kernels import (
    DispersalLaw,
    GaussianKernel,
    IndicatorKernel1D,
    validate_kernel_widths,
)
from .plotting import line_plot_svg

EXPERIMENTS = ("ibm", "lookdown", "pde", "lineage", "stability",
               "convergence-sweep", "identifiability")

SCALING_ADVISORY_THRESHOLD = 0.5


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2)."""


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------

_COMMON_KEYS = {"experiment", "seed", "out", "threads"}

_SCHEMA = {
    "ibm": {"preset", "N", "theta", "T", "dt", "snapshot_every", "domain",
            "stepper", "initial", "dispersal_sigma2", "kernel_sigma2", "s",
            "grid_n"},
    "lookdown": {"preset", "N", "theta", "T", "dt", "snapshot_every", "domain",
                 "initial", "dispersal_sigma2", "kernel_sigma2", "s",
                 "n_lineages", "trace_back", "grid_n"},
    "pde": {"kind", "preset", "domain", "h", "dt", "T", "s", "sigma2",
            "epsilon", "drift", "level", "snapshot_every", "front_start"},
    "lineage": {"case", "s", "grid_lo", "grid_hi", "grid_n", "T", "dt",
                "n_paths", "xi0", "burn_in"},
    "stability": {"preset", "u_max", "coefficients", "rho_gamma", "rho_F"},
    "convergence-sweep": {"which", "epsilons", "domain", "h", "dt", "T"},
    "identifiability": {"lam"},
}

_DEFAULTS = {
    "ibm": {"preset": "logistic", "N": 50, "theta": 10.0, "T": 5.0, "dt": None,
            "snapshot_every": None, "domain": [0.0, 10.0], "stepper": "discrete",
            "initial": "equilibrium", "dispersal_sigma2": 1.0,
            "kernel_sigma2": 1.0, "s": 0.5, "grid_n": 201},
    "lookdown": {"preset": "logistic", "N": 50, "theta": 10.0, "T": 5.0,
                 "dt": None, "snapshot_every": None, "domain": [0.0, 10.0],
                 "initial": "equilibrium", "dispersal_sigma2": 1.0,
                 "kernel_sigma2": 1.0, "s": 0.5, "n_lineages": 20,
                 "trace_back": None, "grid_n": 201},
    "pde": {"kind": "reaction_diffusion", "preset": "fkpp",
            "domain": [0.0, 200.0], "h": 0.1, "dt": None, "T": 40.0, "s": 0.5,
            "sigma2": 1.0, "epsilon": 0.0, "drift": 0.0, "level": 0.5,
            "snapshot_every": None, "front_start": 10.0},
    "lineage": {"case": "allen_cahn", "s": 0.5, "grid_lo": None,
                "grid_hi": None, "grid_n": 20001, "T": 200.0, "dt": 0.01,
                "n_paths": 400, "xi0": None, "burn_in": None},
    "stability": {"preset": "clumping-fig3", "u_max": 2.0,
                  "coefficients": None, "rho_gamma": None, "rho_F": None},
    "convergence-sweep": {"which": "both", "epsilons": [0.8, 0.4, 0.2, 0.1],
                          "domain": [0.0, 40.0], "h": 0.05, "dt": None,
                          "T": 3.0},
    "identifiability": {"lam": 2.0},
}


def kernel_from_config(spec: dict):
    """Kernel from {"type": "gaussian"|"indicator1d", "variance"|"halfwidth": x}."""
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError("kernel spec must be an object with a 'type' key")
    kind = spec["type"]
    if kind == "gaussian":
        extra = set(spec) - {"type", "variance"}
        if extra or "variance" not in spec:
            raise ConfigError("gaussian kernel spec takes exactly {'type','variance'}")
        return GaussianKernel(1, float(spec["variance"]))
    if kind == "indicator1d":
        extra = set(spec) - {"type", "halfwidth"}
        if extra or "halfwidth" not in spec:
            raise ConfigError("indicator1d kernel spec takes exactly {'type','halfwidth'}")
        return IndicatorKernel1D(float(spec["halfwidth"]))
    raise ConfigError(f"unknown kernel type {kind!r}")


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    out: Optional[str]
    threads: int
    params: dict

    @classmethod
    def resolve(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        raw = dict(raw)
        if "config" in raw and "version" in raw:  # a manifest round-trips
            raw = dict(raw["config"])
        if "experiment" not in raw:
            raise ConfigError("config must name an 'experiment'")
        experiment = raw["experiment"]
        if experiment not in EXPERIMENTS:
            raise ConfigError(
                f"unknown experiment {experiment!r}; valid experiments: "
                + ", ".join(EXPERIMENTS))
        allowed = _COMMON_KEYS | _SCHEMA[experiment]
        unknown = set(raw) - allowed
        if unknown:
            raise ConfigError(
                f"unknown config keys for {experiment}: {', '.join(sorted(unknown))}")
        seed = raw.get("seed", 0)
        if not isinstance(seed, int):
            raise ConfigError("seed must be an integer")
        threads = raw.get("threads", 1)
        if not isinstance(threads, int) or threads < 1:
            raise ConfigError("threads must be a positive integer")
        params = dict(_DEFAULTS[experiment])
        for key in _SCHEMA[experiment]:
            if key in raw:
                params[key] = raw[key]
        if "preset" in params and params["preset"] is not None \
                and experiment in ("ibm", "lookdown"):
            if params["preset"] not in presets_mod.PRESET_NAMES:
                raise ConfigError(
                    f"unknown preset {params['preset']!r}; valid presets: "
                    + ", ".join(presets_mod.PRESET_NAMES))
        return cls(experiment=experiment, seed=seed, out=raw.get("out"),
                   threads=threads, params=params)

    def resolved_dict(self) -> dict:
        out = {"experiment": self.experiment, "seed": self.seed,
               "threads": self.threads}
        if self.out is not None:
            out["out"] = self.out
        out.update(self.params)
        return out


# ---------------------------------------------------------------------------
# Artifact helpers
# ---------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float) or isinstance(v, np.floating):
        return f"{float(v):.12g}"
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def write_manifest(out_dir: Path, config: ExperimentConfig) -> Path:
    manifest = {"version": __version__, "config": config.resolved_dict()}
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def emit_plot(csv_path: Path, style: str = "auto") -> str:
    """Render a recognized CSV schema to a self-contained SVG string."""
    csv_path = Path(csv_path)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("no rows") from None
        rows = [row for row in reader if row]
    if not rows:
        raise ValueError("no rows")
    cols = {}
    for i, colname in enumerate(header):
        try:
            cols[colname] = np.array([float(r[i]) for r in rows])
        except ValueError:
            cols[colname] = np.array([r[i] for r in rows])
    name = csv_path.stem
    if header[:3] in (["t", "x", "value"], ["t", "grid_x", "value"]):
        xkey = header[1]
        series = []
        for t in np.unique(cols["t"]):
            sel = cols["t"] == t
            series.append((cols[xkey][sel], cols["value"][sel], f"t={t:g}"))
        if len(series) > 8:  # keep the legend readable
            series = [s if k % max(1, len(series) // 8) == 0 else (s[0], s[1], "")
                      for k, s in enumerate(series)]
        return line_plot_svg(series, title=name, xlabel="x", ylabel="value")
    if header[:2] == ["u", "lambda"]:
        return line_plot_svg([(cols["u"], cols["lambda"], "lambda(u)")],
                             title=name, xlabel="u", ylabel="lambda",
                             hlines=[0.0])
    if header[0] in ("xi", "grid_x") and len(header) >= 2:
        series = [(cols[header[0]], cols[c], c) for c in header[1:]]
        return line_plot_svg(series, title=name, xlabel=header[0], ylabel="density")
    if header[:2] == ["epsilon", "error"]:
        if "which" in header:
            series = []
            whichcol = cols["which"]
            for w in sorted(set(whichcol)):
                sel = whichcol == w
                series.append((cols["epsilon"][sel], cols["error"][sel], str(w)))
        else:
            series = [(cols["epsilon"], cols["error"], "error")]
        return line_plot_svg(series, title=name, xlabel="epsilon", ylabel="error")
    raise ValueError(f"unrecognized CSV schema: {header}")


def _write_plot(svg: str, path: Path) -> Path:
    path.write_text(svg)
    return path


# ---------------------------------------------------------------------------
# validate_config
# ---------------------------------------------------------------------------


def validate_config(config: ExperimentConfig) -> dict:
    """Hard errors and advisories for a simulation configuration.

    Errors: non-positive-definite dispersal covariance, establishment outside
    [0, 1].  Advisories: the Gaussian kernel-width inequality and the scaling
    ratios 1/(theta eps^2), theta/(N eps^d) when they are not small.
    """
    report = {"errors": [], "advisories": [], "values": {}}
    p = config.params
    if config.experiment not in ("ibm", "lookdown"):
        return report
    model = presets_mod.make_model(
        p["preset"], N=int(p["N"]), theta=float(p["theta"]),
        domain=tuple(p["domain"]), dispersal_sigma2=float(p["dispersal_sigma2"]),
        kernel_sigma2=float(p["kernel_sigma2"]), s=float(p["s"]))
    xs = np.linspace(model.domain.lo[0], model.domain.hi[0], 21).reshape(-1, 1)
    try:
        lam = model.dispersal.max_cov_eigenvalue(xs)
        report["values"]["max_cov_eigenvalue"] = lam
        if lam <= 0:
            report["errors"].append("dispersal covariance is not positive definite")
    except ValueError:
        report["errors"].append("dispersal covariance is not positive definite")
        lam = None
    ms = np.linspace(0.0, 4.0 * presets_mod.equilibrium_density(p["preset"]), 41)
    for m in ms:
        rr = np.asarray(model.r(xs, np.full(xs.shape[0], m)), dtype=float)
        if np.any((rr < 0) | (rr > 1)):
            report["errors"].append("establishment probability r outside [0, 1]")
            break
    # kernel-width inequality needs Gaussian rho_r and rho_gamma
    if (lam is not None and isinstance(model.rho_r, GaussianKernel)
            and isinstance(model.rho_gamma, GaussianKernel)):
        chk = validate_kernel_widths(model.rho_r.variance, model.rho_gamma.variance,
                                     lam, model.theta)
        report["values"]["kernel_width_lhs"] = chk.lhs
        if not chk.ok:
            report["advisories"].append(chk.message)
    eps = None
    for kern in (model.rho_F, model.rho_gamma, model.rho_r):
        if kern is not None:
            eps = getattr(kern, "sigma", None) or getattr(kern, "halfwidth", None)
            break
    if eps is not None:
        theta, N = model.theta, int(p["N"])
        ratio1 = 1.0 / (theta * eps**2)
        ratio2 = theta / (N * eps)  # d = 1
        report["values"]["one_over_theta_eps2"] = ratio1
        report["values"]["theta_over_N_epsd"] = ratio2
        if ratio1 > SCALING_ADVISORY_THRESHOLD:
            report["advisories"].append(
                f"1/(theta*eps^2) = {ratio1:.3g} is not small; interactions stay "
                "nonlocal at this scale")
        if ratio2 > SCALING_ADVISORY_THRESHOLD:
            report["advisories"].append(
                f"theta/(N*eps^d) = {ratio2:.3g} is O(1); outside the "
                "simultaneous-scaling regime (expect stochastic effects)")
    # does the mu >= 0 clamp bind anywhere on the sampled range?
    for m in ms:
        mvec = np.full(xs.shape[0], m)
        gam = np.minimum(np.asarray(model.gamma(xs, mvec), dtype=float), model.gamma_cap)
        rr = np.asarray(model.r(xs, mvec), dtype=float)
        ff = np.asarray(model.F(xs, mvec), dtype=float)
        if np.any(rr * gam - ff / model.theta < -1e-12):
            report["advisories"].append(
                "death-rate clamp mu >= 0 binds on the sampled density range; "
                "level-ODE coefficients ignore the clamp")
            break
    return report


# ---------------------------------------------------------------------------
# Experiment runners
# ---------------------------------------------------------------------------


def _run_ibm(config: ExperimentConfig, out_dir: Path) -> List[Path]:
    p = config.params
    rng = np.random.default_rng([config.seed, 0])
    model = presets_mod.make_model(
        p["preset"], N=int(p["N"]), theta=float(p["theta"]),
        domain=tuple(p["domain"]), dispersal_sigma2=float(p["dispersal_sigma2"]),
        kernel_sigma2=float(p["kernel_sigma2"]), s=float(p["s"]))
    init = presets_mod.initial_population(p["preset"], model, int(p["N"]), rng,
                                          kind=p["initial"])
    T = float(p["T"])
    snap = p["snapshot_every"] or T / 10.0
    traj = ibm_mod.run_ibm(model, init, T, snap, rng, stepper=p["stepper"],
                           dt=p["dt"])
    rows = []
    for t, pop in zip(traj.times, traj.snapshots):
        for i, x in enumerate(pop.positions):
            rows.append((t, i) + tuple(x))
    dim = init.positions.shape[1]
    paths = [write_csv(out_dir / "snapshots.csv",
                       ["t", "atom_index"] + [f"x{i+1}" for i in range(dim)], rows)]
    grid = np.linspace(model.domain.lo[0], model.domain.hi[0], int(p["grid_n"]))
    kernel = model.rho_F or model.rho_gamma or GaussianKernel(1, 1.0)
    density_rows = []
    for t, pop in zip(traj.times, traj.snapshots):
        prof = ibm_mod.density_profile(pop, grid, kernel)
        density_rows.extend((t, x, v) for x, v in zip(prof.x, prof.values))
    paths.append(write_csv(out_dir / "density.csv", ["t", "grid_x", "value"],
                           density_rows))
    paths.append(_write_plot(emit_plot(out_dir / "density.csv"),
                             out_dir / "density.svg"))
    return paths


def _run_lookdown(config: ExperimentConfig, out_dir: Path) -> List[Path]:
    p = config.params
    rng = np.random.default_rng([config.seed, 0])
    model = presets_mod.make_model(
        p["preset"], N=int(p["N"]), theta=float(p["theta"]),
        domain=tuple(p["domain"]), dispersal_sigma2=float(p["dispersal_sigma2"]),
        kernel_sigma2=float(p["kernel_sigma2"]), s=float(p["s"]))
    init_pop = presets_mod.initial_population(p["preset"], model, int(p["N"]), rng,
                                              kind=p["initial"])
    lp = lookdown_mod.LevelledPopulation.from_population(init_pop, model.theta, rng)
    T = float(p["T"])
    snap = p["snapshot_every"] or T / 10.0
    traj = lookdown_mod.run_lookdown(model, lp, T, snap, rng, dt=p["dt"])
    final = traj.final
    label_str = lambda lab: ".".join(str(i) for i in lab)
    event_rows = []
    for rec in final.log.births:
        event_rows.append((rec.t, "birth", label_str(rec.parent_label),
                           label_str(rec.child_label), rec.kappa,
                           rec.x_parent[0], rec.x_child[0], rec.new_level))
    for rec in final.log.deaths:
        event_rows.append((rec.t, "death", label_str(rec.label), "", "",
                           rec.x[0], "", ""))
    event_rows.sort(key=lambda r: (r[0], r[1]))
    paths = [write_csv(out_dir / "events.csv",
                       ["t", "event", "parent_label", "child_label", "kappa",
                        "x_parent", "x_child", "new_level"], event_rows)]
    ks_stat, ks_p = (float("nan"), float("nan"))
    if final.count >= 20:
        ks_stat, ks_p = lookdown_mod.levels_uniformity_stat(final)
    with open(out_dir / "levels.json", "w") as fh:
        json.dump({"count": final.count, "ks_statistic": ks_stat,
                   "ks_pvalue": ks_p}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(out_dir / "levels.json")
    back = p["trace_back"] or T / 2.0
    n_lin = min(int(p["n_lineages"]), final.count)
    order = np.argsort(final.levels)[:n_lin]
    lineage_rows = []
    s_values = np.linspace(0.0, back, 101)
    for lid, i in enumerate(order):
        path = lookdown_mod.trace_lineage(final.log, final.labels[i],
                                          final.positions[i], final.time,
                                          back_to=final.time - back)
        for s in s_values:
            lineage_rows.append((lid, s, path.position_at(final.time - s)[0]))
    paths.append(write_csv(out_dir / "lineages.csv", ["lineage_id", "s", "x"],
                           lineage_rows))
    mass_rows = list(zip(traj.times, traj.mass))
    paths.append(write_csv(out_dir / "mass.csv", ["t", "mass"], mass_rows))
    return paths


def _pde_problem(p: dict):
    preset = p["preset"]
    s = float(p["s"])
    if preset in ("fkpp", "logistic"):
        F = lambda m: 1.0 - m
    elif preset == "allen_cahn":
        F = lambda m: (1.0 - m) * (2.0 * m - 1.0 + s)
    else:
        raise ConfigError(f"unknown PDE reaction preset {preset!r}")
    kernel = None
    if float(p["epsilon"]) > 0:
        kernel = GaussianKernel(1, float(p["epsilon"]) ** 2)
    return pde_mod.PDEProblem(kind=p["kind"], F=F, sigma2=float(p["sigma2"]),
                              drift=float(p["drift"]), kernel=kernel)


def _run_pde(config: ExperimentConfig, out_dir: Path) -> List[Path]:
    p = config.params
    lo, hi = (float(v) for v in p["domain"])
    h = float(p["h"])
    grid = np.arange(lo, hi + 0.5 * h, h)
    T = float(p["T"])
    front = float(p["front_start"])
    kind = p["kind"]
    if kind in ("pme_logistic", "nonlocal_pme"):
        init = pde_mod.analytic_wave("pme", grid, x0=front)
        dt = p["dt"] or 0.8 * 0.9 * h * h / 4.0
        if kind == "pme_logistic":
            traj = pde_mod.solve_pme_logistic(
                pde_mod.ScalarField1D(grid, init.values, 0.0), T, dt,
                snapshot_every=p["snapshot_every"], drift=float(p["drift"]))
        else:
            kern = GaussianKernel(1, float(p["epsilon"]) ** 2)
            traj = pde_mod.solve_nonlocal_pme(
                pde_mod.ScalarField1D(grid, init.values, 0.0), kern, T, dt,
                snapshot_every=p["snapshot_every"])
    elif kind in ("reaction_diffusion", "nonlocal_rd"):
        problem = _pde_problem(p)
        vals = np.where(grid < front, 1.0, 0.0)
        init = pde_mod.ScalarField1D(grid, vals, 0.0)
        dt = p["dt"] or 0.8 * 0.9 * h * h / (2.0 * float(p["sigma2"]))
        solver = pde_mod.solve_nonlocal_rd if kind == "nonlocal_rd" else pde_mod.solve_rd
        traj = solver(problem, init, T, dt, snapshot_every=p["snapshot_every"])
    else:
        raise ConfigError(f"unknown PDE kind {kind!r}")
    rows = []
    for t, fld in zip(traj.times, traj.fields):
        rows.extend((t, x, v) for x, v in zip(fld.x, fld.values))
    paths = [write_csv(out_dir / "trajectory.csv", ["t", "x", "value"], rows)]
    paths.append(_write_plot(emit_plot(out_dir / "trajectory.csv"),
                             out_dir / "trajectory.svg"))
    speed_info = {"speed": None}
    try:
        res = pde_mod.measure_wave_speed(traj, level=float(p["level"]))
        speed_info = {"speed": res.speed,
                      "front_positions": res.positions.tolist(),
                      "front_times": res.times.tolist()}
    except ValueError as exc:
        speed_info = {"speed": None, "note": str(exc)}
    with open(out_dir / "speed.json", "w") as fh:
        json.dump(speed_info, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(out_dir / "speed.json")
    return paths


def _run_lineage(config: ExperimentConfig, out_dir: Path) -> List[Path]:
    p = config.params
    case = lineage_mod.wave_case(p["case"], s=float(p["s"]))
    spec = lineage_mod.wavefront_spec(case)
    if p["case"] in ("pme", "pme_drifted"):
        lo = p["grid_lo"] if p["grid_lo"] is not None else -25.0
        hi = p["grid_hi"] if p["grid_hi"] is not None else -1e-3
        xi0 = p["xi0"] if p["xi0"] is not None else -2.0
        anchor = -1.0
    else:
        lo = p["grid_lo"] if p["grid_lo"] is not None else -25.0
        hi = p["grid_hi"] if p["grid_hi"] is not None else 15.0
        xi0 = p["xi0"] if p["xi0"] is not None else 0.0
        anchor = 0.5 * (lo + hi)
    grid = np.linspace(float(lo), float(hi), int(p["grid_n"]))
    rows = []
    report = lineage_mod.stationary_report(spec, float(lo), float(hi))
    if report.has_stationary:
        sm = lineage_mod.speed_measure_density(spec, grid, anchor=anchor)
        rows = list(zip(grid, sm.normalized))
        paths = [write_csv(out_dir / "stationary.csv", ["xi", "density"], rows)]
    else:
        paths = [write_csv(out_dir / "stationary.csv", ["xi", "density"], [])]
    with open(out_dir / "stationary.json", "w") as fh:
        json.dump({"has_stationary": report.has_stationary,
                   "message": report.message}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(out_dir / "stationary.json")
    rng = np.random.default_rng([config.seed, 1])
    T = float(p["T"])
    burn = p["burn_in"] if p["burn_in"] is not None else 0.5 * T
    times, recs = lineage_mod.simulate_lineage_sde(
        spec, float(xi0), T, float(p["dt"]), rng, n_paths=int(p["n_paths"]),
        record_every=max(float(p["dt"]), T / 500.0), burn_in=float(burn))
    samples = recs.ravel()
    edges = np.linspace(float(lo), float(hi), 121)
    hist, _ = np.histogram(samples, bins=edges, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    paths.append(write_csv(out_dir / "occupation.csv", ["xi", "density"],
                           list(zip(centers, hist))))
    series = [(centers, hist, "occupation")]
    if report.has_stationary:
        sm_c = lineage_mod.speed_measure_density(spec, grid, anchor=anchor)
        series.append((grid, sm_c.normalized, "speed measure"))
    paths.append(_write_plot(
        line_plot_svg(series, title=f"lineage: {p['case']}", xlabel="xi",
                      ylabel="density"), out_dir / "overlay.svg"))
    return paths


def _stability_equilibrium(p: dict):
    if p["coefficients"] is not None:
        c = dict(p["coefficients"])
        extra = set(c) - {"phi0", "r0", "gamma0", "Fp0", "gammap0", "rp0", "sigma2"}
        if extra:
            raise ConfigError(f"unknown coefficient keys: {', '.join(sorted(extra))}")
        rho_gamma = kernel_from_config(p["rho_gamma"]) if p["rho_gamma"] else None
        if not p["rho_F"]:
            raise ConfigError("stability coefficients need a rho_F kernel spec")
        rho_F = kernel_from_config(p["rho_F"])
        return stability_mod.HomogeneousEquilibrium(
            phi0=float(c["phi0"]), r0=float(c.get("r0", 1.0)),
            gamma0=float(c["gamma0"]), Fp0=float(c["Fp0"]),
            gammap0=float(c.get("gammap0", 0.0)), rp0=float(c.get("rp0", 0.0)),
            sigma2=float(c["sigma2"]), rho_gamma=rho_gamma, rho_F=rho_F)
    if p["preset"] == "clumping-fig3":
        return stability_mod.equilibrium_from_model(
            F=lambda m: 3.0 / (1.0 + m) - 0.3,
            gamma=lambda m: 3.0 / (1.0 + m),
            r=lambda m: 1.0, bracket=(0.5, 30.0), sigma2=0.04,
            rho_gamma=GaussianKernel(1, 9.0), rho_F=GaussianKernel(1, 9.0),
            Fp=lambda m: -3.0 / (1.0 + m) ** 2,
            gammap=lambda m: -3.0 / (1.0 + m) ** 2, rp=lambda m: 0.0)
    raise ConfigError(f"unknown stability preset {p['preset']!r}")


def _run_stability(config: ExperimentConfig, out_dir: Path) -> List[Path]:
    p = config.params
    eq = _stability_equilibrium(p)
    u_max = float(p["u_max"])
    report = stability_mod.unstable_band(eq, u_max)
    rows = list(zip(report.u_scan, report.lambda_scan))
    paths = [write_csv(out_dir / "lambda.csv", ["u", "lambda"], rows)]
    paths.append(_write_plot(emit_plot(out_dir / "lambda.csv"),
                             out_dir / "lambda.svg"))
    wavelength = stability_mod.clump_wavelength(eq, u_max, report)
    with open(out_dir / "bands.json", "w") as fh:
        json.dump({"stable": report.stable,
                   "bands": [[lo, hi] for lo, hi in report.bands],
                   "wavelength": wavelength}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(out_dir / "bands.json")
    return paths


def _run_sweep(config: ExperimentConfig, out_dir: Path) -> List[Path]:
    p = config.params
    lo, hi = (float(v) for v in p["domain"])
    h = float(p["h"])
    grid = np.arange(lo, hi + 0.5 * h, h)
    T = float(p["T"])
    eps_list = [float(e) for e in p["epsilons"]]
    rows = []
    if p["which"] in ("rd", "both"):
        dt = p["dt"] or 0.8 * 0.9 * h * h / 2.0
        mid = 0.5 * (lo + hi)
        vals = 0.2 + 0.6 * np.exp(-((grid - mid) ** 2) / 8.0)
        init = pde_mod.ScalarField1D(grid, vals, 0.0)
        problem = pde_mod.PDEProblem(kind="reaction_diffusion",
                                     F=lambda m: 1.0 - m, sigma2=1.0)
        local = pde_mod.solve_rd(problem, init, T, dt).final()
        for eps in eps_list:
            nl = pde_mod.PDEProblem(kind="nonlocal_rd", F=lambda m: 1.0 - m,
                                    sigma2=1.0, kernel=GaussianKernel(1, eps * eps))
            approx = pde_mod.solve_nonlocal_rd(nl, init, T, dt).final()
            rows.append((eps, float(np.max(np.abs(approx.values - local.values))), "rd"))
    if p["which"] in ("pme", "both"):
        dt = p["dt"] or 0.8 * 0.9 * h * h / 8.0
        mid = 0.5 * (lo + hi)
        vals = np.maximum(0.0, 1.0 - ((grid - mid) / 5.0) ** 2)
        init = pde_mod.ScalarField1D(grid, vals, 0.0)
        local = pde_mod.solve_pme_logistic(init, T, dt).final()
        test_fns = [np.exp(-((grid - mid + 4.0) ** 2) / 8.0),
                    np.exp(-((grid - mid) ** 2) / 8.0),
                    np.exp(-((grid - mid - 4.0) ** 2) / 8.0)]
        for eps in eps_list:
            kern = GaussianKernel(1, eps * eps)
            approx = pde_mod.solve_nonlocal_pme(init, kern, T, dt).final()
            diff = approx.values - local.values
            err = sum(abs(float(trapezoid(diff * f, grid))) for f in test_fns)
            rows.append((eps, err, "pme"))
    paths = [write_csv(out_dir / "errors.csv", ["epsilon", "error", "which"], rows)]
    paths.append(_write_plot(emit_plot(out_dir / "errors.csv"),
                             out_dir / "errors.svg"))
    return paths


def _run_identifiability(config: ExperimentConfig, out_dir: Path) -> List[Path]:
    lam_value = float(config.params["lam"])
    rng = np.random.default_rng([config.seed, 2])
    report = lineage_mod.identifiability_demo(
        lambda x: np.full_like(np.asarray(x, dtype=float), lam_value),
        lam_const=lam_value, rng=rng)
    payload = {
        "lam": lam_value,
        "residual_max_error": report.residual_max_error,
        "residual_identity_ok": report.residual_identity_ok,
        "exit_time_base": report.exit_time_base,
        "exit_time_scaled": report.exit_time_scaled,
        "exit_ratio": report.exit_ratio,
        "exit_ok": report.exit_ok,
    }
    path = out_dir / "report.json"
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [path]


_RUNNERS = {
    "ibm": _run_ibm,
    "lookdown": _run_lookdown,
    "pde": _run_pde,
    "lineage": _run_lineage,
    "stability": _run_stability,
    "convergence-sweep": _run_sweep,
    "identifiability": _run_identifiability,
}


def run_experiment(config: ExperimentConfig, out_dir=None) -> List[Path]:
    """Run one experiment, writing the manifest and artifacts into ``out_dir``."""
    out_dir = Path(out_dir if out_dir is not None else (config.out or "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir, config)
    paths = _RUNNERS[config.experiment](config, out_dir)
    return [out_dir / "manifest.json"] + list(paths)


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------

_SUBCOMMANDS = {
    "simulate-ibm": "ibm",
    "simulate-lookdown": "lookdown",
    "solve-pde": "pde",
    "lineage": "lineage",
    "stability": "stability",
    "sweep": "convergence-sweep",
    "identifiability": "identifiability",
    "validate": None,
}


def _load_config(path: Optional[str], experiment: Optional[str],
                 seed: Optional[int], out: Optional[str],
                 threads: Optional[int]) -> ExperimentConfig:
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = json.load(fh)
    if experiment is not None:
        if "config" in raw and "version" in raw:
            raw = dict(raw["config"])
        raw.setdefault("experiment", experiment)
        if raw["experiment"] != experiment:
            raise ConfigError(
                f"config is for experiment {raw['experiment']!r}, not {experiment!r}")
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = out
    if threads is not None:
        raw["threads"] = threads
    return ExperimentConfig.resolve(raw)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="popwave",
        description="Spatial population dynamics toolkit: simulations, PDE "
                    "solvers, lineage diffusions, and stability analysis.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=str, default=None, help="JSON config path")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", type=str, default=None, help="output directory")
        sp.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)
    experiment = _SUBCOMMANDS[args.command]
    try:
        if args.command == "validate":
            cfg = _load_config(args.config, None, args.seed, args.out, args.threads)
            report = validate_config(cfg)
            print(json.dumps(report, indent=2, sort_keys=True, default=float))
            return 0
        cfg = _load_config(args.config, experiment, args.seed, args.out,
                           args.threads)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        paths = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure, surfaced with module context
        print(f"runtime error in {cfg.experiment}: {exc}", file=sys.stderr)
        return 3
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Temperature sweep: diffusion estimates, the thinned-network lower bound, and the exponent fit.

For each inverse temperature the pipeline
  1. picks the window ``E_c = c' beta^(-d/(alpha+1+d))`` and the distance
     ``r_c = c E_c^(-(1+alpha)/d)``,
  2. estimates ``D`` on full-rate environments (corrector solve or KMC),
  3. estimates the network constant of the ``E_c``-thinned medium and turns it
     into ``delta_c exp(-r_c - 4 beta E_c) D_N``,
and finally fits ``ln D = a - c2 beta^gamma`` with ``gamma = (alpha+1)/(alpha+1+d)``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .atomic import atomic_write_text
from .hopping_walk import RateModel, corrector_diffusion_estimate, diffusion_estimate
from .point_process import BoxGeometry, EnergyLaw, environment_sampler, randomize, sample_perturbed_lattice, sample_ppp
from .resistor_network import network_diffusion_estimate
from .rng import child_seed


def mott_exponent(alpha: float, d: int) -> float:
    return (alpha + 1.0) / (alpha + 1.0 + d)


@dataclass(frozen=True)
class ScaleEntry:
    beta: float
    E_c: float
    r_c: float
    delta_c: float
    clamped: bool = False


@dataclass(frozen=True)
class MottSchedule:
    beta_grid: tuple
    alpha: float
    d: int
    c: float
    c_prime: float
    entries: tuple

    def __len__(self):
        return len(self.entries)


def make_schedule(beta_grid: Sequence[float], alpha: float = 0.0, d: int = 2, c: float = 1.0, c_prime: float = 1.0) -> MottSchedule:
    betas = [float(b) for b in beta_grid]
    if not betas:
        raise ValueError("beta_grid is empty")
    if any(not (b > 0 and math.isfinite(b)) for b in betas):
        raise ValueError(f"every beta must be finite and > 0, got {betas}")
    if c <= 0 or c_prime <= 0:
        raise ValueError(f"scale constants must be > 0, got c={c}, c_prime={c_prime}")
    if int(d) != d or d < 2:
        raise ValueError(f"d must be an integer >= 2, got {d}")
    law = EnergyLaw(alpha)
    entries = []
    for b in betas:
        E_c = c_prime * b ** (-d / (alpha + 1.0 + d))
        clamped = E_c > 1.0
        if clamped:
            warnings.warn(f"E_c = {E_c:.4g} > 1 at beta = {b}; clamped to 1", stacklevel=2)
            E_c = 1.0
        r_c = c * E_c ** (-(1.0 + alpha) / d)
        entries.append(ScaleEntry(b, E_c, r_c, float(law.window_mass(E_c)), clamped))
    return MottSchedule(tuple(betas), float(alpha), int(d), float(c), float(c_prime), tuple(entries))


def lower_bound_chain(delta_c: float, r_c: float, beta: float, E_c: float, network_D: float) -> float:
    """``delta_c exp(-r_c - 4 beta E_c) D_N``: comparison with the cut-off walk on the thinned medium."""
    return float(delta_c * math.exp(-r_c - 4.0 * beta * E_c) * network_D)


# --------------------------------------------------------------------------
# configuration of the sweep


@dataclass(frozen=True)
class EnvConfig:
    process: str = "ppp"
    rho: float = 1.0
    box: float = 48.0
    palm_mode: str | None = None


@dataclass(frozen=True)
class Budgets:
    method: str = "corrector"  # or "kmc"
    n_env: int = 16
    margin: float = 10.0
    r_max_min: float = 8.0
    r_max_scale: float = 4.0
    # kmc only
    horizon: float = 1000.0
    n_traj: int = 100
    jump_budget: int = 10**7
    # network bound
    network_N: tuple = (8, 16)
    network_samples: int = 8
    tol: float = 1e-10


def r_max_for(beta: float, alpha: float, d: int, rho: float, budgets: Budgets) -> float:
    """Hop-range cutoff growing like the optimal hop length ``beta^gamma``."""
    return max(budgets.r_max_min, budgets.r_max_scale * beta ** mott_exponent(alpha, d) * rho ** (-1.0 / d))


@dataclass
class MottRecord:
    beta: float
    E_c: float
    r_c: float
    delta_c: float
    D: float
    SE: float
    converged: bool
    bound: float
    bound_SE: float
    network_D: float
    network_SE: float
    network_stabilized: bool
    r_max: float
    method: str
    seed: int
    walk_seed: int
    network_seed: int


@dataclass
class FitResult:
    slope: float
    intercept: float
    r2: float
    n_points: int
    regressor: str

    @property
    def c2(self) -> float:
        return -self.slope


@dataclass
class MottResult:
    schedule: MottSchedule
    records: list
    fit: FitResult | None
    fit_linear: FitResult | None
    fit_prefactor: FitResult | None
    excluded: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def summary(self) -> dict:
        def f(x):
            return None if x is None else asdict(x) | {"c2": x.c2}

        return {
            "alpha": self.schedule.alpha,
            "d": self.schedule.d,
            "c": self.schedule.c,
            "c_prime": self.schedule.c_prime,
            "exponent": mott_exponent(self.schedule.alpha, self.schedule.d),
            "fit": f(self.fit),
            "fit_linear_beta": f(self.fit_linear),
            "fit_with_prefactor": f(self.fit_prefactor),
            "excluded_betas": list(self.excluded),
            "n_records": len(self.records),
            "config": self.config,
        }


# --------------------------------------------------------------------------
# fitting


def weighted_fit(x, y, w, offset=None, regressor: str = "x") -> FitResult:
    """Weighted least squares ``y - offset = a + b x``; R^2 is the weighted coefficient of determination."""
    x, y, w = (np.asarray(v, dtype=float) for v in (x, y, w))
    if offset is not None:
        y = y - np.asarray(offset, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least two points to fit")
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weights must be finite and > 0")
    sw = np.sqrt(w)
    A = np.column_stack([np.ones_like(x), x]) * sw[:, None]
    (a, b), *_ = np.linalg.lstsq(A, y * sw, rcond=None)
    yhat = a + b * x
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = np.sum(w * (y - ybar) ** 2)
    ss_res = np.sum(w * (y - yhat) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return FitResult(float(b), float(a), float(r2), len(x), regressor)


def fit_records(records: Sequence[MottRecord], alpha: float, d: int):
    """Three fits of ``ln D`` on converged, positive records: against ``beta^gamma``, against ``beta``,
    and against ``beta^gamma`` with the power prefactor ``beta^(-d gamma)`` as a fixed offset."""
    use = [r for r in records if r.converged and r.D > 0 and r.SE > 0 and math.isfinite(r.SE)]
    if len(use) < 2:
        return None, None, None
    beta = np.array([r.beta for r in use])
    y = np.log([r.D for r in use])
    w = (np.array([r.D for r in use]) / np.array([r.SE for r in use])) ** 2  # 1 / var(ln D) by the delta method
    g = mott_exponent(alpha, d)
    main = weighted_fit(beta**g, y, w, regressor=f"beta^{g:.6g}")
    linear = weighted_fit(beta, y, w, regressor="beta")
    pref = weighted_fit(beta**g, y, w, offset=-d * g * np.log(beta), regressor=f"beta^{g:.6g} with prefactor")
    return main, linear, pref


# --------------------------------------------------------------------------
# one temperature


def _law(alpha):
    return EnergyLaw(alpha)


def _points_sampler(env_config: EnvConfig, d: int, alpha: float, L: float):
    geom = BoxGeometry(d, L, periodic=False)
    law = _law(alpha)

    def sample(s):
        if env_config.process == "ppp":
            pts = sample_ppp(env_config.rho, geom, s)
        else:
            pts = sample_perturbed_lattice(geom, s)
        return randomize(pts, law, s)

    return sample


def run_beta(entry: ScaleEntry, alpha: float, d: int, env_config: EnvConfig, budgets: Budgets, seed: int) -> MottRecord:
    # walk and network seeds do not depend on beta: every temperature sees the same media
    walk_seed = child_seed(seed, "walk")
    network_seed = child_seed(seed, "network")
    r_max = r_max_for(entry.beta, alpha, d, env_config.rho, budgets)
    model = RateModel(beta=entry.beta, r_max=r_max)
    geom = BoxGeometry(d, env_config.box, periodic=True)
    sampler = environment_sampler(env_config.process, geom, _law(alpha), env_config.rho, env_config.palm_mode)
    if budgets.method == "corrector":
        est = corrector_diffusion_estimate(sampler, model, budgets.n_env, walk_seed, margin=budgets.margin)
    elif budgets.method == "kmc":
        est = diffusion_estimate(sampler, model, budgets.horizon, budgets.n_env, budgets.n_traj, walk_seed,
                                 jump_budget=budgets.jump_budget)
    else:
        raise ValueError(f"unknown method {budgets.method!r}; use 'corrector' or 'kmc'")

    Ns = sorted(int(n) for n in budgets.network_N)
    Ns = [n for n in Ns if n > entry.r_c]
    if Ns:
        pts_sampler = _points_sampler(env_config, d, alpha, 2.0 * Ns[-1])
        net = network_diffusion_estimate(pts_sampler, entry.E_c, entry.r_c, Ns, budgets.network_samples, network_seed, budgets.tol)
        nD, nSE, stab = float(net.D[-1]), float(net.standard_error[-1]), bool(net.stabilized)
    else:
        nD, nSE, stab = 0.0, 0.0, False
    factor = lower_bound_chain(entry.delta_c, entry.r_c, entry.beta, entry.E_c, 1.0)
    return MottRecord(
        beta=entry.beta, E_c=entry.E_c, r_c=entry.r_c, delta_c=entry.delta_c,
        D=est.mean, SE=est.mean_se, converged=bool(est.converged),
        bound=factor * nD, bound_SE=factor * nSE, network_D=nD, network_SE=nSE, network_stabilized=stab,
        r_max=r_max, method=budgets.method, seed=int(seed), walk_seed=walk_seed, network_seed=network_seed,
    )


def _job(args):
    return run_beta(*args)


def default_workers() -> int:
    v = os.environ.get("VRH_WORKERS")
    if v is None:
        return 1
    n = int(v)
    if n < 1:
        raise ValueError(f"VRH_WORKERS must be >= 1, got {v}")
    return n


def run_mott(schedule: MottSchedule, env_config: EnvConfig = EnvConfig(), budgets: Budgets = Budgets(), seed: int = 0,
             workers: int | None = None) -> MottResult:
    if schedule.d < 2:
        raise ValueError("the model needs d >= 2")
    r_top = max(r_max_for(e.beta, schedule.alpha, schedule.d, env_config.rho, budgets) for e in schedule.entries)
    factor = 6.0 if budgets.method == "kmc" else 2.0
    if env_config.box < factor * r_top:
        raise ValueError(f"box {env_config.box} is below {factor:g} * r_max = {factor * r_top:.4g} at the largest beta")
    workers = default_workers() if workers is None else workers
    jobs = [(e, schedule.alpha, schedule.d, env_config, budgets, seed) for e in schedule.entries]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            records = list(pool.map(_job, jobs))
    else:
        records = [_job(j) for j in jobs]
    excluded = [r.beta for r in records if not r.converged]
    for b in excluded:
        warnings.warn(f"estimate at beta = {b} did not converge; excluded from the fit", stacklevel=2)
    fit, lin, pref = fit_records(records, schedule.alpha, schedule.d)
    cfg = {"env": asdict(env_config), "budgets": asdict(budgets) | {"network_N": list(budgets.network_N)}, "seed": int(seed)}
    return MottResult(schedule, records, fit, lin, pref, excluded, cfg)


# --------------------------------------------------------------------------
# checks used by the acceptance suite and the CLI


def monotone_violations(records: Sequence[MottRecord], k: float = 2.0) -> list:
    """Adjacent pairs (in increasing beta) where D rises by more than ``k`` combined SE."""
    rs = sorted(records, key=lambda r: r.beta)
    out = []
    for a, b in zip(rs, rs[1:]):
        if b.D - a.D > k * math.hypot(a.SE, b.SE):
            out.append((a.beta, b.beta))
    return out


def bound_violations(records: Sequence[MottRecord], k: float = 3.0) -> list:
    return [r.beta for r in records if r.bound > r.D + k * math.hypot(r.SE, r.bound_SE)]


# --------------------------------------------------------------------------
# output

CSV_FIELDS = [f for f in MottRecord.__dataclass_fields__]
_TYPES = {name: f.type for name, f in MottRecord.__dataclass_fields__.items()}


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(name, s):
    t = _TYPES[name]
    if t == "bool":
        return s == "true"
    if t == "int":
        return int(s)
    if t == "str":
        return s
    return float(s)


def records_csv(records: Sequence[MottRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in records:
        w.writerow([_fmt(getattr(r, k)) for k in CSV_FIELDS])
    return buf.getvalue()


def parse_records_csv(text: str) -> list:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != CSV_FIELDS:
        raise ValueError("not a Mott record table (header mismatch)")
    return [MottRecord(**{k: _parse(k, v) for k, v in zip(CSV_FIELDS, row)}) for row in rows[1:]]


def report(result: MottResult, outdir, formats: Sequence[str] = ("csv", "json", "png"), stem: str = "mott") -> list:
    """Write the record table, a JSON summary, and a plot into ``outdir``; returns the written paths."""
    os.makedirs(outdir, exist_ok=True)
    paths = []
    if "csv" in formats:
        p = os.path.join(outdir, f"{stem}.csv")
        atomic_write_text(p, records_csv(result.records))
        paths.append(p)
    if "json" in formats:
        p = os.path.join(outdir, f"{stem}.json")
        atomic_write_text(p, json.dumps(result.summary(), sort_keys=True, indent=2) + "\n")
        paths.append(p)
    if "png" in formats and result.records:
        from .plotting import plot_mott

        p = os.path.join(outdir, f"{stem}.png")
        plot_mott(result, p)
        paths.append(p)
    return paths

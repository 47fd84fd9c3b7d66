"""Continuous-time hopping walk on a marked point set.

Jump rates between distinct points ``x`` and ``y``::

    c(x, y) = exp(-|x - y| - beta * (|E_x - E_y| + |E_x| + |E_y|))

The walk waits an exponential time with parameter ``lambda_x = sum_y c(x, y)``
and then jumps to ``y`` with probability ``c(x, y) / lambda_x``. Sums over
``y`` are truncated at ``r_max``; every truncated sum carries a bound on the
neglected mass.

Two estimators of the diffusion coefficient are provided:

* :func:`diffusion_estimate` -- kinetic Monte Carlo, mean of ``(X_t . a)^2 / t``.
* :func:`corrector_diffusion_estimate` -- the ``t -> infinity`` limit of the same
  walk on the periodized environment, obtained by minimizing the Dirichlet form
  ``(1/n) sum_{x,y} c(x,y) (a.(y-x) + chi(y) - chi(x))^2`` over correctors
  ``chi``. It needs no time horizon and stays usable at low temperature, where
  KMC spends almost all of its jumps oscillating inside fast clusters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from numba import njit
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu
from scipy.special import gamma as gamma_fn
from scipy.special import gammaincc

from .point_process import GEOM_EPS, Environment
from .rng import child_seed, stream

DEFAULT_JUMP_BUDGET = 10**7


@dataclass(frozen=True)
class RateModel:
    """Rate law and truncation.

    ``kind="mott"`` uses the exponential rates above. ``kind="cutoff"`` uses the
    indicator rates ``1{|x-y| <= r_c} 1{|E_x| <= E_c} 1{|E_y| <= E_c}``; their
    range is ``r_c`` so ``r_max`` is ignored.
    """

    beta: float = 1.0
    r_max: float = 10.0
    tail_tolerance: float = 1e-3
    kind: str = "mott"
    r_c: float | None = None
    E_c: float = 1.0

    def __post_init__(self):
        if self.kind not in ("mott", "cutoff"):
            raise ValueError(f"unknown rate kind {self.kind!r}; use 'mott' or 'cutoff'")
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be finite and >= 0, got {self.beta}")
        if self.kind == "cutoff":
            if self.r_c is None or self.r_c <= 0:
                raise ValueError("cutoff rates need r_c > 0")
            object.__setattr__(self, "r_max", float(self.r_c))
        if self.r_max <= 0:
            raise ValueError(f"r_max must be > 0, got {self.r_max}")

    @property
    def range(self) -> float:
        return self.r_max


def lattice_model(r_c: float = 1.0) -> RateModel:
    """Unit rates to all points within ``r_c`` (energies ignored)."""
    return RateModel(beta=0.0, kind="cutoff", r_c=r_c, E_c=1.0)


def _rate_from_distance(dist, Ex, Ey, model: RateModel):
    dist = np.asarray(dist, dtype=float)
    Ex = np.asarray(Ex, dtype=float)
    Ey = np.asarray(Ey, dtype=float)
    if model.kind == "cutoff":
        ok = (dist <= model.r_c * (1 + GEOM_EPS)) & (np.abs(Ex) <= model.E_c) & (np.abs(Ey) <= model.E_c)
        out = ok.astype(float)
    else:
        # grouping keeps the exponent bitwise symmetric under swapping x and y
        out = np.exp(-dist - model.beta * (np.abs(Ex - Ey) + (np.abs(Ex) + np.abs(Ey))))
    return np.where(dist > 0, out, 0.0)


def rate(x, E_x, y, E_y, model: RateModel):
    """Jump rate between ``x`` and ``y``; 0 when ``x == y``. Vectorized over leading axes."""
    dist = np.linalg.norm(np.asarray(y, dtype=float) - np.asarray(x, dtype=float), axis=-1)
    return _rate_from_distance(dist, E_x, E_y, model)


def _sphere_area(d: int) -> float:
    return 2 * math.pi ** (d / 2) / gamma_fn(d / 2)


def _ball_volume(d: int, r: float) -> float:
    return _sphere_area(d) * r**d / d


def exponential_tail(d: int, R: float) -> float:
    """``int_{|z| > R} exp(-|z|) dz`` in ``d`` dimensions."""
    return _sphere_area(d) * gamma_fn(d) * gammaincc(d, R)


def suggest_r_max(rho: float, d: int, tol: float, lam_ref: float = 1.0) -> float:
    """Smallest radius (to 0.5) whose density-weighted exponential tail is below ``tol * lam_ref``."""
    R = 1.0
    while rho * exponential_tail(d, R) > tol * lam_ref:
        R += 0.5
    return R


@dataclass(frozen=True)
class RateEvaluation:
    value: float
    tail_bound: float
    radius: float
    isolated: bool

    @property
    def relative_tail(self) -> float:
        if self.tail_bound == 0:
            return 0.0
        return self.tail_bound / self.value if self.value > 0 else math.inf


def _tail_bound(model: RateModel, d: int, n_local: int, R: float, E_x: float, covers_box: bool) -> float:
    if model.kind == "cutoff" or covers_box:
        return 0.0
    density = max(n_local, 1) / _ball_volume(d, R)
    # |E_x - E_y| + |E_y| >= |E_x| bounds the energy factor of any far neighbour
    return density * exponential_tail(d, R) * math.exp(-2 * model.beta * abs(E_x))


def _max_distance(geom) -> float:
    half = geom.L / 2 if geom.periodic else geom.L
    return half * math.sqrt(geom.d)


def total_rate(env: Environment, x_index: int, model: RateModel) -> RateEvaluation:
    """Total jump rate out of ``x_index`` with a certified truncation.

    The radius starts at ``r_max`` and grows until the neglected-mass bound is
    at most ``tail_tolerance * lambda`` or the ball covers the whole box.
    A point with no neighbour gets ``value=0`` and ``isolated=True``.
    """
    g = env.geometry
    x = env.points[x_index]
    R = model.r_max
    rmax_box = _max_distance(g)
    while True:
        covers = R >= rmax_box
        idx = env.neighbor_index.query(x, R)
        idx = idx[idx != x_index]
        dist = g.distance(x, env.points[idx])
        lam = float(np.sum(_rate_from_distance(dist, env.energies[x_index], env.energies[idx], model)))
        tail = _tail_bound(model, g.d, len(idx) + 1, R, env.energies[x_index], covers)
        if tail <= model.tail_tolerance * lam or covers or lam == 0.0:
            return RateEvaluation(lam, tail, R, lam == 0.0)
        R = min(R * 1.5, rmax_box)


@dataclass
class RateTable:
    """Truncated rates of every point, stored row-wise (CSR) with cumulative sums."""

    env: Environment
    model: RateModel
    indptr: np.ndarray
    neighbors: np.ndarray
    rates: np.ndarray
    cumulative: np.ndarray
    displacements: np.ndarray
    total: np.ndarray
    tail_bound: np.ndarray

    @property
    def n(self) -> int:
        return len(self.total)

    def row(self, i: int) -> slice:
        return slice(self.indptr[i], self.indptr[i + 1])

    @property
    def relative_tail(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(self.tail_bound == 0, 0.0, self.tail_bound / self.total)
        return rel

    @property
    def certificate_violations(self) -> int:
        return int(np.count_nonzero(self.relative_tail > self.model.tail_tolerance))

    def transition_probabilities(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        s = self.row(i)
        if self.total[i] == 0:
            return self.neighbors[s], np.zeros(s.stop - s.start)
        return self.neighbors[s], self.rates[s] / self.total[i]


def check_box(env: Environment, model: RateModel) -> None:
    g = env.geometry
    if g.periodic and g.L < 6 * model.r_max * (1 - 1e-12):
        raise ValueError(f"periodic box side {g.L} is smaller than 6 * r_max = {6 * model.r_max}")


def build_rate_table(env: Environment, model: RateModel) -> RateTable:
    """Neighbour lists within ``r_max``, rates, totals and tail certificates."""
    check_box(env, model)
    g = env.geometry
    n = len(env)
    pairs = env.neighbor_index.pairs(model.r_max)
    i, j = pairs[:, 0], pairs[:, 1]
    disp = g.displacement(env.points[i], env.points[j])
    dist = np.linalg.norm(disp, axis=1)
    r = _rate_from_distance(dist, env.energies[i], env.energies[j], model)
    keep = r > 0
    i, j, disp, r = i[keep], j[keep], disp[keep], r[keep]
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    allr = np.concatenate([r, r])
    alld = np.concatenate([disp, -disp])
    order = np.lexsort((cols, rows))
    rows, cols, allr, alld = rows[order], cols[order], allr[order], alld[order]
    counts = np.bincount(rows, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    cum = np.empty_like(allr)
    total = np.zeros(n)
    for k in range(n):
        s = slice(indptr[k], indptr[k + 1])
        if s.stop > s.start:
            np.cumsum(allr[s], out=cum[s])
            total[k] = cum[s.stop - 1]
    # points within r_max (any rate) give the local density for the tail bound
    n_local = np.bincount(pairs.ravel(), minlength=n) + 1
    covers = model.r_max >= _max_distance(g)
    tail = np.array([_tail_bound(model, g.d, int(n_local[k]), model.r_max, env.energies[k], covers) for k in range(n)])
    return RateTable(env, model, indptr, cols.astype(np.int64), allr, cum, alld, total, tail)


def _as_table(env, model) -> RateTable:
    return env if isinstance(env, RateTable) else build_rate_table(env, model)


def embedded_jump(env, x_index: int, model: RateModel, seed: int) -> tuple[int, float]:
    """One step of the walk from ``x_index``: (target index, exponential waiting time)."""
    table = _as_table(env, model)
    lam = table.total[x_index]
    if lam <= 0:
        raise ValueError(f"point {x_index} is isolated (total rate 0); no jump possible")
    rng = stream(seed, "jump", x_index)
    wait = rng.exponential(1.0) / lam
    s = table.row(x_index)
    k = int(np.searchsorted(table.cumulative[s], rng.random() * lam, side="right"))
    k = min(k, s.stop - s.start - 1)
    return int(table.neighbors[s.start + k]), float(wait)


def detailed_balance_defect(table: RateTable) -> float:
    """Largest relative violation of ``lambda_x p(y|x) = lambda_y p(x|y)`` over all bonds."""
    worst = 0.0
    lookup = {}
    for x in range(table.n):
        nb, pr = table.transition_probabilities(x)
        for y, p in zip(nb, pr):
            lookup[(x, int(y))] = table.total[x] * p
    for (x, y), fx in lookup.items():
        fy = lookup[(y, x)]
        worst = max(worst, abs(fx - fy) / max(abs(fx), abs(fy), 1e-300))
    return worst


# --------------------------------------------------------------------------
# kinetic Monte Carlo


@njit(cache=True)
def _kmc_kernel(indptr, nbr, cum, disp, start, horizon, qtimes, budget, rng, cap):
    d = disp.shape[1]
    nq = qtimes.shape[0]
    X = np.zeros(d)
    out = np.full((nq, d), np.nan)
    ev_t = np.empty(cap)
    ev_k = np.empty(cap, np.int64)
    x = start
    t = 0.0
    n = 0
    q = 0
    truncated = False
    while True:
        lo = indptr[x]
        hi = indptr[x + 1]
        lam = cum[hi - 1] if hi > lo else 0.0
        if lam <= 0.0:
            tnext = np.inf
        else:
            tnext = t + rng.exponential(1.0) / lam
        while q < nq and qtimes[q] < tnext:
            for a in range(d):
                out[q, a] = X[a]
            q += 1
        if tnext > horizon:
            break
        if n >= budget:
            truncated = True
            break
        u = rng.random() * lam
        a = lo
        b = hi - 1
        while a < b:
            m = (a + b) // 2
            if cum[m] > u:
                b = m
            else:
                a = m + 1
        for c in range(d):
            X[c] += disp[a, c]
        x = nbr[a]
        t = tnext
        if n < cap:
            ev_t[n] = t
            ev_k[n] = a
        n += 1
    m = min(n, cap)
    return out, n, truncated, x, ev_t[:m], ev_k[:m]


@dataclass
class Trajectory:
    """One realization of the walk started at the origin.

    ``jump_times``/``displacements`` hold the first ``min(n_jumps, record_cap)``
    jumps; ``positions[k]`` is ``X_t`` at ``query_times[k]`` (NaN after a
    budget truncation).
    """

    jump_times: np.ndarray
    displacements: np.ndarray
    query_times: np.ndarray
    positions: np.ndarray
    n_jumps: int
    truncated: bool
    jump_budget: int
    horizon: float
    seed: int

    @property
    def final(self) -> np.ndarray:
        return self.positions[-1]

    def position_at(self, t: float) -> np.ndarray:
        """``X_t`` recomputed from the recorded jumps (needs a complete record)."""
        if len(self.jump_times) < self.n_jumps:
            raise ValueError("jump record was capped; position_at needs all jumps")
        k = int(np.searchsorted(self.jump_times, t, side="right"))
        return self.displacements[:k].sum(axis=0)


def simulate_walk(
    env,
    model: RateModel,
    horizon: float,
    jump_budget: int = DEFAULT_JUMP_BUDGET,
    seed: int = 0,
    query_times=None,
    record_cap: int = 100_000,
) -> Trajectory:
    """Kinetic Monte Carlo path from the origin up to ``horizon`` or ``jump_budget`` jumps.

    ``env`` is an :class:`Environment` or a prebuilt :class:`RateTable`.
    Running out of budget before ``horizon`` marks the trajectory truncated.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    table = _as_table(env, model)
    qt = np.asarray([horizon] if query_times is None else query_times, dtype=float)
    if np.any(np.diff(qt) <= 0) or np.any(qt > horizon) or np.any(qt < 0):
        raise ValueError("query_times must be increasing and lie in [0, horizon]")
    rng = stream(seed, "walk")
    start = table.env.origin_index
    out, n, truncated, _, ev_t, ev_k = _kmc_kernel(
        table.indptr, table.neighbors, table.cumulative, table.displacements,
        start, float(horizon), qt, int(jump_budget), rng, int(record_cap),
    )
    return Trajectory(ev_t, table.displacements[ev_k], qt, out, int(n), bool(truncated), int(jump_budget), float(horizon), seed)


# --------------------------------------------------------------------------
# estimators


@dataclass
class DiffusionEstimate:
    """Per-axis estimate of ``(a . D a)`` for the coordinate axes ``a``."""

    value: np.ndarray
    standard_error: np.ndarray
    n_environments: int
    n_trajectories: int
    horizon: float
    converged: bool
    method: str = "kmc"
    n_truncated: int = 0
    times: np.ndarray | None = None
    values_t: np.ndarray | None = None
    stderr_t: np.ndarray | None = None
    per_env: np.ndarray | None = None
    records: list = field(default_factory=list, repr=False)

    @property
    def mean(self) -> float:
        """Axis-averaged value (the diffusion constant of an isotropic medium)."""
        return float(np.mean(self.value))

    @property
    def mean_se(self) -> float:
        return float(np.sqrt(np.sum(self.standard_error**2)) / len(self.standard_error))

    def summary(self) -> dict:
        return {
            "type": "aggregate",
            "method": self.method,
            "D": [float(v) for v in self.value],
            "SE": [float(v) for v in self.standard_error],
            "D_mean": self.mean,
            "SE_mean": self.mean_se,
            "n_environments": self.n_environments,
            "n_trajectories": self.n_trajectories,
            "horizon": self.horizon,
            "converged": bool(self.converged),
            "n_truncated": self.n_truncated,
        }


def bootstrap_se(per_env: np.ndarray, seed: int, n_boot: int = 1000) -> np.ndarray:
    """Environment-level bootstrap standard error of the column means."""
    per_env = np.asarray(per_env, dtype=float)
    n = len(per_env)
    if n < 2:
        return np.full(per_env.shape[1:], np.inf)
    rng = stream(seed, "bootstrap")
    idx = rng.integers(0, n, size=(n_boot, n))
    means = per_env[idx].mean(axis=1)
    return means.std(axis=0, ddof=1)


def plateau_reached(values: np.ndarray, stderr: np.ndarray, k: int = 3) -> bool:
    """True when the last ``k`` dyadic estimates agree within 2 combined SE on every axis."""
    if len(values) < k:
        return False
    v, s = values[-k:], stderr[-k:]
    for a in range(k):
        for b in range(a + 1, k):
            if np.any(np.abs(v[a] - v[b]) >= 2 * np.sqrt(s[a] ** 2 + s[b] ** 2)):
                return False
    return True


def diffusion_estimate(
    env_sampler: Callable[[int], Environment],
    model: RateModel,
    t: float,
    n_env: int,
    n_traj: int,
    seed: int = 0,
    n_dyadic: int = 6,
    jump_budget: int = DEFAULT_JUMP_BUDGET,
    n_boot: int = 1000,
    keep_records: bool = True,
) -> DiffusionEstimate:
    """KMC estimate of ``(a . D a) = E[(X_t . a)^2] / t`` per coordinate axis.

    ``X`` is recorded on the dyadic grid ``t / 2^k``; the estimate is flagged
    converged when the last three grid values agree within 2 combined SE.
    Trajectories that exhaust the jump budget are excluded and counted.
    """
    if n_env < 1 or n_traj < 1:
        raise ValueError("need n_env >= 1 and n_traj >= 1")
    times = t / 2.0 ** np.arange(n_dyadic - 1, -1, -1)
    per_env_t = []
    records = []
    n_trunc = 0
    d = None
    for e in range(n_env):
        env_seed = child_seed(seed, "env", e)
        table = build_rate_table(env_sampler(env_seed), model)
        d = table.env.geometry.d
        acc = np.zeros((n_dyadic, d))
        used = 0
        for k in range(n_traj):
            tr_seed = child_seed(seed, "traj", e, k)
            tr = simulate_walk(table, model, t, jump_budget, tr_seed, times, record_cap=0)
            if keep_records:
                records.append({
                    "env": e, "seed": tr_seed, "t": t, "X_t": [float(v) for v in tr.final],
                    "n_jumps": tr.n_jumps, "truncated": tr.truncated,
                })
            if tr.truncated:
                n_trunc += 1
                continue
            acc += tr.positions**2 / times[:, None]
            used += 1
        if used:
            per_env_t.append(acc / used)
    if not per_env_t:
        nan = np.full(d, np.nan)
        return DiffusionEstimate(nan, nan, n_env, n_env * n_traj, t, False, "kmc", n_trunc, times, None, None, None, records)
    per_env_t = np.array(per_env_t)
    values_t = per_env_t.mean(axis=0)
    se_t = bootstrap_se(per_env_t.reshape(len(per_env_t), -1), seed, n_boot).reshape(values_t.shape)
    converged = plateau_reached(values_t, se_t)
    return DiffusionEstimate(
        values_t[-1], se_t[-1], n_env, n_env * n_traj, t, converged, "kmc", n_trunc,
        times, values_t, se_t, per_env_t[:, -1, :], records,
    )


@dataclass
class PsiPhiEstimate:
    phi: np.ndarray
    phi_se: np.ndarray
    psi: np.ndarray
    psi_se: np.ndarray
    n_environments: int


def local_moments(env: Environment, model: RateModel) -> tuple[np.ndarray, np.ndarray]:
    """Mean forward velocity ``sum_x c(0,x) x`` and square displacement ``sum_x c(0,x) x x^T``."""
    g = env.geometry
    o = env.origin_index
    idx = env.neighbor_index.query(env.points[o], model.r_max)
    idx = idx[idx != o]
    x = g.displacement(env.points[o], env.points[idx])
    c = _rate_from_distance(np.linalg.norm(x, axis=1), env.energies[o], env.energies[idx], model)
    return c @ x, (x * c[:, None]).T @ x


def psi_phi_estimate(env_sampler: Callable[[int], Environment], model: RateModel, n_env: int, seed: int = 0) -> PsiPhiEstimate:
    if n_env < 2:
        raise ValueError("need at least 2 environments")
    phis, psis = [], []
    for e in range(n_env):
        phi, psi = local_moments(env_sampler(child_seed(seed, "env", e)), model)
        phis.append(phi)
        psis.append(psi)
    phis, psis = np.array(phis), np.array(psis)
    root = math.sqrt(n_env)
    return PsiPhiEstimate(phis.mean(0), phis.std(0, ddof=1) / root, psis.mean(0), psis.std(0, ddof=1) / root, n_env)


def variational_upper_bound(psi_estimate: PsiPhiEstimate) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis ``E[psi^(aa)]``: the corrector-free value of the variational formula, an upper bound on D."""
    return np.diag(psi_estimate.psi).copy(), np.diag(psi_estimate.psi_se).copy()


# --------------------------------------------------------------------------
# periodic corrector


@njit(cache=True)
def _find(parent, offset, i):
    # returns root and offset of i relative to root; compresses the path
    root = i
    while parent[root] != root:
        root = parent[root]
    d = offset.shape[1]
    # second pass: accumulate offsets from i up to root
    acc = np.zeros(d)
    path = []
    k = i
    while parent[k] != k:
        path.append(k)
        k = parent[k]
    for idx in range(len(path) - 1, -1, -1):
        node = path[idx]
        for a in range(d):
            acc[a] += offset[node, a]
        for a in range(d):
            offset[node, a] = acc[a]
        parent[node] = root
    res = np.zeros(d)
    if len(path) > 0:
        for a in range(d):
            res[a] = offset[i, a]
    return root, res


@njit(cache=True)
def _first_wrapping_bond(n, bi, bj, bdisp, half_box):
    """Index of the first bond (in the given order) that closes a winding loop, or -1."""
    parent = np.arange(n)
    d = bdisp.shape[1]
    offset = np.zeros((n, d))
    for k in range(bi.shape[0]):
        ri, oi = _find(parent, offset, bi[k])
        rj, oj = _find(parent, offset, bj[k])
        if ri == rj:
            for a in range(d):
                if abs(oi[a] + bdisp[k, a] - oj[a]) > half_box:
                    return k
        else:
            parent[rj] = ri
            for a in range(d):
                offset[rj, a] = oi[a] + bdisp[k, a] - oj[a]
    return -1


def _bonds_below_cost(env: Environment, model: RateModel, max_cost: float):
    """Unordered bonds with ``-log(rate) <= max_cost`` and distance <= r_max."""
    g = env.geometry
    radius = min(model.r_max, max_cost) if model.kind == "mott" else model.r_max
    if model.kind == "mott" and model.beta > 0:
        sites = np.flatnonzero(np.abs(env.energies) <= max_cost / (2 * model.beta))
    else:
        sites = np.arange(len(env))
    if len(sites) < 2:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, g.d)), np.zeros(0)
    from .point_process import NeighborIndex

    sub = NeighborIndex(env.points[sites], g)
    pr = sub.pairs(radius)
    i, j = sites[pr[:, 0]], sites[pr[:, 1]]
    disp = g.displacement(env.points[i], env.points[j])
    r = _rate_from_distance(np.linalg.norm(disp, axis=1), env.energies[i], env.energies[j], model)
    with np.errstate(divide="ignore"):
        keep = (r > 0) & (-np.log(r) <= max_cost)
    return i[keep], j[keep], disp[keep], r[keep]


def critical_rate(env: Environment, model: RateModel, start_cost: float = 4.0) -> float:
    """Largest rate ``c*`` such that bonds with rate >= c* contain a loop winding around the torus.

    Returns 0 when no winding loop exists within ``r_max``.
    """
    g = env.geometry
    if not g.periodic:
        raise ValueError("critical_rate needs a periodic box")
    cap = model.r_max + 4 * model.beta + 1.0 if model.kind == "mott" else 1.0
    cost = min(start_cost, cap)
    while True:
        i, j, disp, r = _bonds_below_cost(env, model, cost)
        if len(r):
            order = np.argsort(-r, kind="stable")
            k = _first_wrapping_bond(len(env), i[order], j[order], disp[order], g.L / 2)
            if k >= 0:
                return float(r[order][k])
        if cost >= cap:
            return 0.0
        cost = min(cost * 1.4, cap)


@dataclass
class CorrectorSolution:
    value: np.ndarray
    n_points: int
    n_bonds: int
    rate_floor: float
    residual: float


def corrector_diffusion(env: Environment, model: RateModel, rate_floor: float | str = "auto", margin: float = 10.0) -> CorrectorSolution:
    """Diffusion coefficient per axis of the walk on the periodized environment.

    Minimizes ``Q(chi) = (1/n) sum_{x != y} c(x,y) (a.d(x,y) + chi(y) - chi(x))^2`` where
    ``d`` is the minimal-image displacement. The minimizer solves the graph
    Laplacian equation ``L chi = phi`` with ``phi(x) = sum_y c(x,y) a.d(x,y)``.

    Bonds with rate below ``rate_floor`` are dropped; since ``Q`` is monotone in
    the rates this can only lower the result. ``"auto"`` sets the floor to
    ``exp(-margin)`` times the rate at which the bond network first winds
    around the torus. The normalization ``n`` always counts every point.
    """
    g = env.geometry
    if not g.periodic:
        raise ValueError("corrector_diffusion needs a periodic box")
    if g.L < 2 * model.r_max:
        raise ValueError(f"box side {g.L} must be at least 2 * r_max = {2 * model.r_max}")
    n = len(env)
    if rate_floor == "auto":
        cstar = critical_rate(env, model)
        floor = cstar * math.exp(-margin) if cstar > 0 else 0.0
    else:
        floor = float(rate_floor)
    max_cost = -math.log(floor) if floor > 0 else math.inf
    i, j, disp, r = _bonds_below_cost(env, model, max_cost)
    value = np.zeros(g.d)
    if len(r) == 0:
        return CorrectorSolution(value, n, 0, floor, 0.0)
    C = sp.coo_matrix((np.concatenate([r, r]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n)).tocsr()
    deg = np.asarray(C.sum(axis=1)).ravel()
    lap = (sp.diags(deg) - C).tocsc()
    ncomp, labels = connected_components(C, directed=False)
    active = deg > 0
    # pin the first vertex of every component that carries bonds
    pinned = np.zeros(n, dtype=bool)
    seen = set()
    for v in np.flatnonzero(active):
        if labels[v] not in seen:
            seen.add(labels[v])
            pinned[v] = True
    free = np.flatnonzero(active & ~pinned)
    residual = 0.0
    if len(free):
        # symmetric Jacobi scaling keeps the factorization accurate across rate scales
        s = 1.0 / np.sqrt(deg[free])
        A = lap[free][:, free]
        A = sp.diags(s) @ A @ sp.diags(s)
        lu = splu(A.tocsc())
    for a in range(g.d):
        u = disp[:, a]
        phi = np.bincount(i, r * u, minlength=n) - np.bincount(j, r * u, minlength=n)
        chi = np.zeros(n)
        if len(free):
            y = lu.solve(s * phi[free])
            chi[free] = s * y
            res = lap[free] @ chi - phi[free]
            scale = max(np.linalg.norm(phi[free]), 1e-300)
            residual = max(residual, float(np.linalg.norm(res) / scale))
        w = u + chi[j] - chi[i]
        value[a] = 2.0 * np.sum(r * w * w) / n
    return CorrectorSolution(value, n, len(r), floor, residual)


def corrector_diffusion_estimate(
    env_sampler: Callable[[int], Environment],
    model: RateModel,
    n_env: int,
    seed: int = 0,
    rate_floor: float | str = "auto",
    margin: float = 10.0,
    n_boot: int = 1000,
) -> DiffusionEstimate:
    """Average of :func:`corrector_diffusion` over ``n_env`` sampled environments."""
    per_env = []
    records = []
    for e in range(n_env):
        env_seed = child_seed(seed, "env", e)
        sol = corrector_diffusion(env_sampler(env_seed), model, rate_floor, margin)
        per_env.append(sol.value)
        records.append({
            "env": e, "seed": env_seed, "D": [float(v) for v in sol.value], "n_points": sol.n_points,
            "n_bonds": sol.n_bonds, "rate_floor": sol.rate_floor, "residual": sol.residual,
        })
    per_env = np.array(per_env)
    se = bootstrap_se(per_env, seed, n_boot)
    return DiffusionEstimate(per_env.mean(0), se, n_env, 0, math.inf, True, "corrector", 0, None, None, None, per_env, records)

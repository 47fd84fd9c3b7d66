"""Coarse-grained site percolation of a point set.

Site ``j`` (``j`` in ``[-N, N]^d``) is open when the closed cube of side
``r1`` centred at ``r2 * j`` contains a point. An LR-crossing is a
self-avoiding nearest-neighbour path of open sites that starts in the column
``j1 = -N``, ends in the column ``j1 = N``, stays strictly between them in
between, and keeps every coordinate beyond the second fixed. The number of
vertex-disjoint LR-crossings of a 2-d slice equals its maximum flow with unit
vertex capacities (Menger), which is what :func:`count_disjoint_lr_crossings`
computes.
"""
from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from numba import njit
from scipy.stats import beta as beta_dist

from .point_process import EnergyLaw, MarkedPointSet, thin_by_energy
from .rng import child_seed, stream


@dataclass(frozen=True)
class SiteField:
    N: int
    sites: np.ndarray
    r1: float = 1.0
    r2: float = 1.0

    def __post_init__(self):
        s = np.ascontiguousarray(self.sites, dtype=np.uint8)
        if s.ndim < 2 or any(n != 2 * self.N + 1 for n in s.shape):
            raise ValueError(f"site array must have shape (2N+1,)*d with d >= 2, got {s.shape} for N={self.N}")
        if np.any(s > 1):
            raise ValueError("site values must be 0 or 1")
        s.setflags(write=False)
        object.__setattr__(self, "sites", s)

    @property
    def d(self) -> int:
        return self.sites.ndim

    def __getitem__(self, j) -> int:
        return int(self.sites[tuple(np.asarray(j) + self.N)])

    def with_site(self, j, value: int) -> "SiteField":
        s = self.sites.copy()
        s[tuple(np.asarray(j) + self.N)] = value
        return SiteField(self.N, s, self.r1, self.r2)


def coarse_grain(pts: MarkedPointSet, r1: float, r2: float, N: int) -> SiteField:
    """Occupancy of the cubes ``C_{r1} + r2 j`` for ``j`` in ``[-N, N]^d``."""
    if not (r2 >= r1 > 0):
        raise ValueError(f"need r2 >= r1 > 0, got r1={r1}, r2={r2}")
    g = pts.geometry
    reach = r2 * N + r1 / 2
    if reach > g.L / 2 + 1e-12:
        raise ValueError(f"window reaches {reach} but the box half-side is {g.L / 2}")
    sites = np.zeros((2 * N + 1,) * g.d, dtype=np.uint8)
    if len(pts):
        j = np.rint(pts.points / r2).astype(np.int64)
        inside = np.all(np.abs(pts.points - r2 * j) <= r1 / 2, axis=1) & np.all(np.abs(j) <= N, axis=1)
        sites[tuple((j[inside] + N).T)] = 1
    return SiteField(N, sites, r1, r2)


def independent_field(p: float, N: int, d: int, seed: int) -> SiteField:
    """Bernoulli(p) site field."""
    rng = stream(seed, "bernoulli")
    return SiteField(N, (rng.random((2 * N + 1,) * d) < p).astype(np.uint8))


# --------------------------------------------------------------------------
# max flow


@njit(cache=True)
def _slice_flow(open2d):
    """Max number of vertex-disjoint LR paths in a 2-d 0/1 grid, plus one disjoint family.

    Node ``2v`` is the entry of site ``v`` and ``2v+1`` its exit; the single
    edge between them has capacity 1. Entry-column sites are fed only by the
    source and exit-column sites drain only into the sink, so every path
    touches the end columns exactly once. Augmenting paths are found by BFS
    with a fixed neighbour order, which makes the result deterministic.
    """
    n1, n2 = open2d.shape
    M = n1 * n2
    S = 2 * M
    T = 2 * M + 1
    n_nodes = 2 * M + 2
    max_e = 2 * (M + 2 * n2 + 4 * M)
    head = np.full(n_nodes, -1, np.int64)
    nxt = np.empty(max_e, np.int64)
    to = np.empty(max_e, np.int64)
    cap = np.empty(max_e, np.int64)
    forward = np.zeros(max_e, np.bool_)
    ne = 0

    def add(u, v, ne):
        to[ne] = v
        cap[ne] = 1
        forward[ne] = True
        nxt[ne] = head[u]
        head[u] = ne
        to[ne + 1] = u
        cap[ne + 1] = 0
        nxt[ne + 1] = head[v]
        head[v] = ne + 1
        return ne + 2

    # edges are pushed in reverse so that head lists iterate in increasing order
    for a in range(n1 - 1, -1, -1):
        for b in range(n2 - 1, -1, -1):
            if open2d[a, b] == 0:
                continue
            v = a * n2 + b
            if a < n1 - 1:
                for da, db in ((-1, 0), (0, -1), (0, 1), (1, 0)):
                    pa = a + da
                    pb = b + db
                    if pa < 0 or pa >= n1 or pb < 0 or pb >= n2:
                        continue
                    if open2d[pa, pb] == 0 or pa == 0:
                        continue
                    ne = add(2 * v + 1, 2 * (pa * n2 + pb), ne)
            else:
                ne = add(2 * v + 1, T, ne)
            ne = add(2 * v, 2 * v + 1, ne)
            if a == 0:
                ne = add(S, 2 * v, ne)
    flow = 0
    prev_e = np.empty(n_nodes, np.int64)
    queue = np.empty(n_nodes, np.int64)
    while True:
        prev_e[:] = -1
        qh = 0
        qt = 0
        queue[qt] = S
        qt += 1
        prev_e[S] = -2
        while qh < qt and prev_e[T] == -1:
            u = queue[qh]
            qh += 1
            e = head[u]
            while e != -1:
                w = to[e]
                if cap[e] > 0 and prev_e[w] == -1:
                    prev_e[w] = e
                    queue[qt] = w
                    qt += 1
                e = nxt[e]
        if prev_e[T] == -1:
            break
        w = T
        while w != S:
            e = prev_e[w]
            cap[e] -= 1
            cap[e ^ 1] += 1
            w = to[e ^ 1]
        flow += 1
    # extract paths: follow saturated forward edges from the source
    paths = np.full((max(flow, 1), M), -1, np.int64)
    lengths = np.zeros(max(flow, 1), np.int64)
    k = 0
    e = head[S]
    while e != -1:
        if forward[e] and cap[e] == 0:
            node = to[e]
            m = 0
            while node != T:
                v = node // 2
                paths[k, m] = v
                m += 1
                out = 2 * v + 1
                f = head[out]
                while f != -1:
                    if forward[f] and cap[f] == 0:
                        break
                    f = nxt[f]
                node = to[f]
            lengths[k] = m
            k += 1
        e = nxt[e]
    return flow, paths, lengths


@dataclass
class CrossingReport:
    """Disjoint LR-crossings of a field; ``lengths`` count edges (sites - 1)."""

    N: int
    d: int
    n_disjoint_crossings: int
    paths: list = field(repr=False)
    lengths: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    threshold: float | None = None

    @property
    def harmonic_sum(self) -> float:
        return float(np.sum(1.0 / self.lengths)) if len(self.lengths) else 0.0

    @property
    def total_length(self) -> int:
        return int(np.sum(self.lengths))

    @property
    def is_good(self) -> bool | None:
        if self.threshold is None:
            return None
        return self.n_disjoint_crossings >= self.threshold

    def record(self) -> dict:
        return {
            "N": self.N,
            "d": self.d,
            "n_disjoint_crossings": self.n_disjoint_crossings,
            "lengths": [int(v) for v in self.lengths],
            "harmonic_sum": self.harmonic_sum,
            "threshold": self.threshold,
            "is_good": self.is_good,
        }


def count_disjoint_lr_crossings(fld: SiteField, b: float | None = None) -> CrossingReport:
    """Maximum number of vertex-disjoint LR-crossings summed over all 2-d slices.

    ``b`` sets the good/bad threshold ``b N^(d-1)``. Paths are returned as
    arrays of site coordinates (``j``, not array indices).
    """
    N, d = fld.N, fld.d
    n = 2 * N + 1
    total = 0
    paths = []
    lengths = []
    for rest in itertools.product(range(n), repeat=d - 2):
        sl = np.ascontiguousarray(fld.sites[(slice(None), slice(None)) + rest])
        flow, P, Ls = _slice_flow(sl)
        total += int(flow)
        for k in range(flow):
            v = P[k, : Ls[k]]
            coords = np.empty((len(v), d), dtype=np.int64)
            coords[:, 0] = v // n
            coords[:, 1] = v % n
            coords[:, 2:] = rest
            paths.append(coords - N)
            lengths.append(len(v) - 1)
    thr = None if b is None else b * N ** (d - 1)
    return CrossingReport(N, d, total, paths, np.asarray(lengths, dtype=np.int64), thr)


def validate_crossings(report: CrossingReport, fld: SiteField) -> None:
    """Raise ``AssertionError`` unless the extracted family is a valid disjoint LR family."""
    N = fld.N
    seen = set()
    for path in report.paths:
        assert path[0, 0] == -N and path[-1, 0] == N, "path must span the first coordinate"
        assert np.all(np.abs(path[1:-1, 0]) < N), "interior sites must lie strictly inside"
        assert np.all(path[:, 2:] == path[0, 2:]), "path must stay in one 2-d slice"
        assert np.all(np.abs(np.diff(path, axis=0)).sum(axis=1) == 1), "steps must be nearest-neighbour"
        for site in map(tuple, path):
            assert fld[site] == 1, "path uses a closed site"
            assert site not in seen, "paths are not vertex-disjoint"
            seen.add(site)
    assert report.total_length <= (2 * N + 1) ** fld.d


def harmonic_path_bound(report: CrossingReport) -> tuple[float, float]:
    """``(sum 1/L, |C|^2 / sum L)``; the first is never below the second (Jensen)."""
    if report.n_disjoint_crossings == 0:
        raise ValueError("empty crossing family")
    return report.harmonic_sum, report.n_disjoint_crossings**2 / report.total_length


def jensen_holds(report: CrossingReport) -> bool:
    """Exact rational check of ``sum 1/L >= |C|^2 / sum L``."""
    if report.n_disjoint_crossings == 0:
        return True
    harmonic = sum(Fraction(1, int(L)) for L in report.lengths)
    return harmonic * report.total_length >= report.n_disjoint_crossings**2


def jensen_floor_theory(b: float, N: int, d: int) -> float:
    """Lower bound ``b^2 N^(d-2) / 4^d`` valid for good configurations."""
    return b * b * N ** (d - 2) / 4**d


# --------------------------------------------------------------------------
# domination criteria and scales


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    a = 1 - level
    lo = 0.0 if k == 0 else float(beta_dist.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta_dist.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


@dataclass
class DominationReport:
    r: float
    cond2_lhs: float
    cond2_rhs: float
    cond2_pass: bool
    cond3_estimate: float | None
    cond3_ci: tuple[float, float] | None
    cond3_bound: float
    cond3_pass: bool | None
    n_samples: int
    note: str = ""

    @property
    def passed(self) -> bool:
        return self.cond2_pass and bool(self.cond3_pass)


def cond2_holds(r: float, rho_prime: float, p: float, E_c: float, law: EnergyLaw, d: int) -> tuple[bool, float, float]:
    lhs = r**d * float(law.window_mass(E_c))
    rhs = -math.log(p / 2) / rho_prime
    return lhs >= rhs, lhs, rhs


def check_domination(
    r: float,
    rho_prime: float,
    p: float,
    E_c: float,
    law: EnergyLaw,
    pts_sampler: Callable[[int], MarkedPointSet] | None,
    n_samples: int,
    seed: int = 0,
    d: int | None = None,
) -> DominationReport:
    """Arithmetic check of the window-mass condition and Monte Carlo check of the density floor.

    The density-floor condition is tested through its unconditional
    marginal ``P(xi(C_r) < rho' r^d) <= 1 - 3p/2`` (a surrogate for the
    conditional statement), estimated from cubes ``C_r`` centred at the origin
    of independent samples; it passes when the upper 95% Clopper-Pearson bound
    is within the limit. For ``p > 2/3`` the limit is negative and the
    condition cannot hold.
    """
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if rho_prime <= 0:
        raise ValueError("rho_prime must be > 0")
    if d is None:
        if pts_sampler is None:
            raise ValueError("dimension needed when no sampler is given")
        d = pts_sampler(child_seed(seed, "probe")).geometry.d
    ok2, lhs, rhs = cond2_holds(r, rho_prime, p, E_c, law, d)
    bound = 1 - 1.5 * p
    if pts_sampler is None:
        return DominationReport(r, lhs, rhs, ok2, None, None, bound, None, 0, "density floor not evaluated")
    if n_samples < 2:
        raise ValueError("need at least 2 samples for a confidence interval")
    low = 0
    for s in range(n_samples):
        pts = pts_sampler(child_seed(seed, "cond3", s))
        if pts.geometry.L < r:
            raise ValueError("sample box smaller than the test cube")
        low += pts.count_in_cube(np.zeros(pts.geometry.d), r) < rho_prime * r**d
    est = low / n_samples
    ci = clopper_pearson(low, n_samples)
    note = "unconditional surrogate of the conditional density floor"
    if bound < 0:
        note += "; unsatisfiable for p > 2/3"
    return DominationReport(r, lhs, rhs, ok2, est, ci, bound, ci[1] <= bound, n_samples, note)


@dataclass(frozen=True)
class PercolationScales:
    r_p: float
    r1: float
    r2: float
    r_c: float
    d: int
    domination: DominationReport | None = None

    def as_dict(self) -> dict:
        return {"r_p": self.r_p, "r1": self.r1, "r2": self.r2, "r_c": self.r_c, "d": self.d}


def scales_from_rp(r_p: float, d: int) -> PercolationScales:
    return PercolationScales(r_p, r_p, 2 * r_p, math.sqrt(d + 8) * r_p, d)


def choose_percolation_scales(
    p: float,
    rho_prime: float,
    E_c: float,
    law: EnergyLaw,
    d: int = 2,
    r_cap: int = 10_000,
    pc_estimate: float | None = None,
    require_density_floor: bool = False,
    pts_sampler: Callable[[int], MarkedPointSet] | None = None,
    n_samples: int = 200,
    seed: int = 0,
) -> PercolationScales:
    """Smallest integer ``r`` passing the domination checks, and the derived scales.

    By default only the window-mass condition gates the choice, and the
    density floor is evaluated and attached when a sampler is given. With
    ``require_density_floor=True`` both must pass.
    ``pc_estimate`` (or a fresh :func:`estimate_pc2`) must lie below ``p``.
    """
    if pc_estimate is None:
        pc_estimate = estimate_pc2(seed=seed).estimate
    if p <= pc_estimate:
        raise ValueError(f"p={p} is not above the estimated critical probability {pc_estimate:.4f}")
    for r in range(1, r_cap + 1):
        ok, _, _ = cond2_holds(r, rho_prime, p, E_c, law, d)
        if not ok:
            continue
        rep = None
        if pts_sampler is not None or require_density_floor:
            rep = check_domination(r, rho_prime, p, E_c, law, pts_sampler, n_samples, seed, d)
            if require_density_floor and not rep.passed:
                if rep.cond3_bound < 0:
                    raise ValueError("density-floor condition is unsatisfiable for p > 2/3")
                continue
        s = scales_from_rp(float(r), d)
        return PercolationScales(s.r_p, s.r1, s.r2, s.r_c, d, rep)
    raise ValueError(f"no r <= {r_cap} satisfies the domination conditions")


# --------------------------------------------------------------------------
# critical probability of the independent square-lattice field


@njit(cache=True)
def _uf_find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit(cache=True)
def _crossing_threshold(u):
    """Smallest p at which the field ``u < p`` has an LR path (adding sites in increasing u)."""
    n1, n2 = u.shape
    M = n1 * n2
    L = M
    R = M + 1
    parent = np.arange(M + 2)
    opened = np.zeros(M, np.bool_)
    order = np.argsort(u.ravel())
    for k in range(M):
        v = order[k]
        a = v // n2
        b = v % n2
        opened[v] = True
        if a == 0:
            ra, rb = _uf_find(parent, v), _uf_find(parent, L)
            parent[ra] = rb
        if a == n1 - 1:
            ra, rb = _uf_find(parent, v), _uf_find(parent, R)
            parent[ra] = rb
        for da, db in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            pa = a + da
            pb = b + db
            if 0 <= pa < n1 and 0 <= pb < n2 and opened[pa * n2 + pb]:
                ra, rb = _uf_find(parent, v), _uf_find(parent, pa * n2 + pb)
                parent[ra] = rb
        if _uf_find(parent, L) == _uf_find(parent, R):
            return u.ravel()[v]
    return 1.0


@dataclass(frozen=True)
class CriticalEstimate:
    estimate: float
    ci_low: float
    ci_high: float
    N: int
    n_samples: int


def estimate_pc2(N: int = 24, n_samples: int = 400, seed: int = 0, level: float = 0.95) -> CriticalEstimate:
    """Median LR-crossing threshold of independent square-lattice fields on ``[-N, N]^2``.

    With one uniform variable per site, the field at every ``p`` is the set
    ``u < p``, so each sample has a single threshold above which it crosses.
    The crossing probability at ``p`` is the fraction of thresholds below
    ``p``; its 1/2 point (the median) is the estimate, and the CI comes from
    binomial order statistics. This is bisection on the crossing probability
    done exactly on a coupled family of fields.
    """
    th = np.sort([_crossing_threshold(stream(seed, "pc2", s).random((2 * N + 1, 2 * N + 1))) for s in range(n_samples)])
    from scipy.stats import binom

    lo_k = int(binom.ppf((1 - level) / 2, n_samples, 0.5))
    hi_k = int(binom.ppf(1 - (1 - level) / 2, n_samples, 0.5))
    return CriticalEstimate(float(np.median(th)), float(th[max(lo_k - 1, 0)]), float(th[min(hi_k, n_samples - 1)]), N, n_samples)


# --------------------------------------------------------------------------
# experiments


@dataclass
class ScalingRow:
    N: int
    threshold: float
    n_samples: int
    n_bad: int
    bad_frequency: float
    ci: tuple[float, float]
    mean_crossings: float

    def as_dict(self) -> dict:
        return {
            "N": self.N, "threshold": self.threshold, "n_samples": self.n_samples, "n_bad": self.n_bad,
            "bad_frequency": self.bad_frequency, "ci_low": self.ci[0], "ci_high": self.ci[1],
            "mean_crossings": self.mean_crossings,
        }


def _counts_and_dim(field_sampler, N, n_samples, seed, tag):
    counts, d = [], None
    for s in range(n_samples):
        fld = field_sampler(N, child_seed(seed, tag, N, s))
        d = fld.d
        counts.append(count_disjoint_lr_crossings(fld).n_disjoint_crossings)
    return np.array(counts), d


def crossing_counts(
    field_sampler: Callable[[int, int], SiteField], N: int, n_samples: int, seed: int = 0, tag: str = "fields"
) -> np.ndarray:
    return np.array([count_disjoint_lr_crossings(field_sampler(N, child_seed(seed, tag, N, s))).n_disjoint_crossings
                     for s in range(n_samples)])


def empirical_b(counts: np.ndarray, N: int, d: int, level: float = 0.95) -> float:
    """Largest ``b`` with at least ``level`` of the samples having ``>= b N^(d-1)`` crossings."""
    counts = np.sort(np.asarray(counts))
    k = int(math.floor((1 - level) * len(counts)))
    return float(counts[k]) / N ** (d - 1)


def thinned_field_sampler(pts_sampler: Callable[[int], MarkedPointSet], E_c: float, r1: float, r2: float):
    def sample(N: int, seed: int) -> SiteField:
        return coarse_grain(thin_by_energy(pts_sampler(seed), E_c), r1, r2, N)

    return sample


def crossing_scaling_experiment(
    pts_sampler: Callable[[int], MarkedPointSet] | None,
    E_c: float,
    r1: float,
    r2: float,
    N_grid: Sequence[int],
    b: float,
    n_samples: int,
    seed: int = 0,
    field_sampler: Callable[[int, int], SiteField] | None = None,
) -> list[ScalingRow]:
    """Bad-configuration frequency (fewer than ``b N^(d-1)`` crossings) for each ``N``.

    Fields come from ``field_sampler(N, seed)`` when given, otherwise from
    coarse-graining ``pts_sampler`` samples thinned at ``E_c``.
    """
    if field_sampler is None:
        field_sampler = thinned_field_sampler(pts_sampler, E_c, r1, r2)
    rows = []
    for N in N_grid:
        counts, d = _counts_and_dim(field_sampler, int(N), n_samples, seed, "fields")
        thr = b * N ** (d - 1)
        bad = int(np.sum(counts < thr))
        rows.append(ScalingRow(int(N), thr, n_samples, bad, bad / n_samples, clopper_pearson(bad, n_samples), float(counts.mean())))
    return rows


@dataclass
class SupercriticalityResult:
    scales: PercolationScales
    b: float
    calibration_N: int
    rows: list

    @property
    def frequencies(self) -> list:
        return [r.bad_frequency for r in self.rows]

    @property
    def monotone(self) -> bool:
        f = self.frequencies
        return all(a >= b for a, b in zip(f, f[1:])) and f[0] > f[-1]


def ppp_points_sampler(rho: float, law: EnergyLaw, d: int, L: float):
    """Marked Poisson samples in the non-periodic box ``[-L/2, L/2]^d``."""
    from .point_process import BoxGeometry, randomize, sample_ppp

    geom = BoxGeometry(d, L, periodic=False)
    return lambda s: randomize(sample_ppp(rho, geom, s), law, s)


def supercriticality_experiment(
    p: float,
    rho_prime: float,
    E_c: float,
    law: EnergyLaw,
    N_grid: Sequence[int],
    n_samples: int,
    seed: int = 0,
    rho: float = 1.0,
    d: int = 2,
    b: float | None = None,
    calibration_samples: int = 200,
    pc_estimate: float | None = None,
    pts_sampler: Callable[[int], MarkedPointSet] | None = None,
) -> SupercriticalityResult:
    """Bad-configuration frequencies of coarse-grained thinned fields at the scales chosen for ``p``.

    Without an explicit ``b`` it is calibrated as the empirical 95% level at
    the smallest ``N`` on samples independent of the ones that are scored.
    """
    scales = choose_percolation_scales(p, rho_prime, E_c, law, d=d, pc_estimate=pc_estimate, seed=seed)
    N_grid = sorted(int(n) for n in N_grid)
    if pts_sampler is None:
        pts_sampler = ppp_points_sampler(rho, law, d, 2.0 * (scales.r2 * N_grid[-1] + scales.r1))
    fs = thinned_field_sampler(pts_sampler, E_c, scales.r1, scales.r2)
    if b is None:
        counts, _ = _counts_and_dim(fs, N_grid[0], calibration_samples, seed, "calibration")
        b = empirical_b(counts, N_grid[0], d)
    rows = crossing_scaling_experiment(None, E_c, scales.r1, scales.r2, N_grid, b, n_samples, seed, field_sampler=fs)
    return SupercriticalityResult(scales, float(b), N_grid[0], rows)


# --------------------------------------------------------------------------
# I/O: header "N r1 r2 d", then run lengths of the flattened bitmap starting with a run of zeros


def encode_rle(fld: SiteField) -> str:
    flat = fld.sites.ravel()
    runs = []
    cur, n = 0, 0
    for v in flat:
        if v == cur:
            n += 1
        else:
            runs.append(n)
            cur, n = v, 1
    runs.append(n)
    return f"{fld.N} {fld.r1:.17g} {fld.r2:.17g} {fld.d}\n" + " ".join(map(str, runs)) + "\n"


def decode_rle(text: str) -> SiteField:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty site-field text")
    head = lines[0].split()
    N, r1, r2, d = int(head[0]), float(head[1]), float(head[2]), int(head[3])
    runs = [int(v) for v in lines[1].split()] if len(lines) > 1 else []
    flat = np.repeat(np.arange(len(runs)) % 2, runs).astype(np.uint8)
    if len(flat) != (2 * N + 1) ** d:
        raise ValueError("run lengths do not match the header size")
    return SiteField(N, flat.reshape((2 * N + 1,) * d), r1, r2)


def write_field(target, fld: SiteField) -> None:
    text = encode_rle(fld)
    if isinstance(target, (str, os.PathLike)):
        from .atomic import atomic_write_text

        atomic_write_text(target, text)
    else:
        target.write(text)


def read_field(source) -> SiteField:
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            return decode_rle(fh.read())
    return decode_rle(source.read())


def dumps_reports(reports) -> str:
    return "".join(json.dumps(r.record(), sort_keys=True) + "\n" for r in reports)

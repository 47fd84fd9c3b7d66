"""Marked point processes in a finite box.

Positions live in the cube ``[-L/2, L/2]^d``. With ``periodic=True`` the cube
is a torus and every distance is the minimal-image distance. Energy marks live
in ``[-1, 1]``.
"""
from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .rng import stream

__all__ = [
    "BoxGeometry",
    "MarkedPointSet",
    "EnergyLaw",
    "Environment",
    "NeighborIndex",
    "MomentEstimate",
    "ExchangeResult",
    "sample_ppp",
    "sample_perturbed_lattice",
    "randomize",
    "thin_by_energy",
    "palm_condition",
    "moment_estimate",
    "ergodic_density_check",
    "exchange_sides",
    "exchange_formula_test",
    "environment_sampler",
    "write_point_set",
    "read_point_set",
]

# relative slack used when comparing floating distances with a cut-off
GEOM_EPS = 1e-9


@dataclass(frozen=True)
class BoxGeometry:
    d: int
    L: float
    periodic: bool = True

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"dimension d must be an integer >= 2 (the model excludes d=1), got {self.d}")
        if not math.isfinite(self.L) or self.L <= 0:
            raise ValueError(f"side length L must be finite and > 0, got {self.L}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "periodic", bool(self.periodic))

    @property
    def volume(self) -> float:
        return self.L**self.d

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Map positions back into the box (torus only)."""
        if not self.periodic:
            return np.asarray(x, dtype=float)
        x = np.asarray(x, dtype=float)
        return x - self.L * np.round(x / self.L)

    def displacement(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Vector from ``a`` to ``b``, minimal image on the torus."""
        diff = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
        if self.periodic:
            diff = diff - self.L * np.round(diff / self.L)
        return diff

    def distance(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.displacement(a, b), axis=-1)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MarkedPointSet:
    """Finite realization of a marked point process.

    ``points`` has shape ``(n, d)``; ``energies`` has shape ``(n,)``.
    """

    geometry: BoxGeometry
    points: np.ndarray
    energies: np.ndarray | None = None

    def __post_init__(self):
        g = self.geometry
        pts = _frozen(np.asarray(self.points, dtype=float).reshape(-1, g.d))
        if self.energies is None:
            en = np.zeros(len(pts))
        else:
            en = np.asarray(self.energies, dtype=float).reshape(-1)
        if len(en) != len(pts):
            raise ValueError(f"{len(pts)} points but {len(en)} energies")
        if not np.all(np.isfinite(pts)):
            raise ValueError("non-finite point coordinates")
        half = g.L / 2
        if np.any(np.abs(pts) > half * (1 + 1e-12)):
            raise ValueError("points outside the box [-L/2, L/2]^d")
        if np.any(np.abs(en) > 1.0):
            raise ValueError("energy marks must lie in [-1, 1]")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "energies", _frozen(en))

    def __len__(self) -> int:
        return len(self.points)

    def is_simple(self) -> bool:
        """True when no two points share a position (exact comparison)."""
        if len(self) < 2:
            return True
        order = np.lexsort(self.points.T[::-1])
        p = self.points[order]
        return not np.any(np.all(p[1:] == p[:-1], axis=1))

    def subset(self, mask: np.ndarray) -> "MarkedPointSet":
        return MarkedPointSet(self.geometry, self.points[mask], self.energies[mask])

    def count_in_cube(self, center, side: float) -> int:
        """Number of points in the half-open cube ``center + [-side/2, side/2)^d``."""
        rel = self.geometry.displacement(np.asarray(center, dtype=float), self.points)
        inside = np.all((rel >= -side / 2) & (rel < side / 2), axis=1)
        return int(np.count_nonzero(inside))


@dataclass(frozen=True)
class EnergyLaw:
    """Law of the energy marks.

    ``family="power"``: symmetric law with window mass ``nu([-E, E]) = E**(1+alpha)``.
    ``family="point-mass"``: every mark is 0.
    """

    alpha: float = 0.0
    family: str = "power"

    def __post_init__(self):
        if self.family not in ("power", "point-mass"):
            raise ValueError(f"unknown energy family {self.family!r}; use 'power' or 'point-mass'")
        if not math.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")

    def window_mass(self, E):
        E = np.clip(np.asarray(E, dtype=float), 0.0, 1.0)
        if self.family == "point-mass":
            return np.ones_like(E)
        return E ** (1.0 + self.alpha)

    def density(self, E):
        """Density on [-1, 1] of the power family."""
        if self.family != "power":
            raise ValueError("the point-mass law has no density")
        E = np.abs(np.asarray(E, dtype=float))
        return np.where(E <= 1.0, 0.5 * (1.0 + self.alpha) * E**self.alpha, 0.0)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.family == "point-mass":
            return np.zeros(n)
        u = rng.random(n)
        sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        return sign * u ** (1.0 / (1.0 + self.alpha))


class NeighborIndex:
    """Radius queries over a point set, torus-aware.

    Backed by a k-d tree; on a periodic box the tree uses the torus metric, so a
    query with radius ``r`` returns exactly the points within minimal-image
    distance ``r``.
    """

    def __init__(self, points: np.ndarray, geometry: BoxGeometry):
        self.geometry = geometry
        self.points = points
        if len(points) == 0:
            self._tree = None
        elif geometry.periodic:
            shifted = np.mod(points + geometry.L / 2, geometry.L)
            shifted[shifted >= geometry.L] = 0.0
            self._tree = cKDTree(shifted, boxsize=geometry.L)
        else:
            self._tree = cKDTree(points)

    def _to_tree(self, x):
        g = self.geometry
        x = np.asarray(x, dtype=float)
        if g.periodic:
            y = np.mod(x + g.L / 2, g.L)
            return np.where(y >= g.L, 0.0, y)
        return x

    def query(self, center, r: float) -> np.ndarray:
        """Sorted indices of all points within distance ``r`` of ``center``."""
        if self._tree is None:
            return np.zeros(0, dtype=np.int64)
        idx = self._tree.query_ball_point(self._to_tree(center), r * (1 + GEOM_EPS))
        idx = np.array(sorted(idx), dtype=np.int64)
        if len(idx):
            dist = self.geometry.distance(center, self.points[idx])
            idx = idx[dist <= r * (1 + GEOM_EPS)]
        return idx

    def pairs(self, r: float) -> np.ndarray:
        """All unordered pairs ``(i, j)``, ``i < j``, within distance ``r``; shape (m, 2)."""
        if self._tree is None or len(self.points) < 2:
            return np.zeros((0, 2), dtype=np.int64)
        pr = self._tree.query_pairs(r * (1 + GEOM_EPS), output_type="ndarray").astype(np.int64)
        if len(pr) == 0:
            return pr.reshape(0, 2)
        pr.sort(axis=1)
        order = np.lexsort((pr[:, 1], pr[:, 0]))
        return pr[order]


@dataclass(frozen=True)
class Environment:
    """Palm-conditioned point set: a point sits exactly at the origin."""

    base: MarkedPointSet
    origin_index: int
    neighbor_index: NeighborIndex = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if not 0 <= self.origin_index < len(self.base):
            raise ValueError("origin_index out of range")
        if np.any(self.base.points[self.origin_index] != 0.0):
            raise ValueError("the origin point of an environment must sit exactly at 0")
        if self.neighbor_index is None:
            object.__setattr__(self, "neighbor_index", NeighborIndex(self.base.points, self.base.geometry))

    @property
    def geometry(self) -> BoxGeometry:
        return self.base.geometry

    @property
    def points(self) -> np.ndarray:
        return self.base.points

    @property
    def energies(self) -> np.ndarray:
        return self.base.energies

    def __len__(self) -> int:
        return len(self.base)


# --------------------------------------------------------------------------
# generators


def _check_finite(**kw):
    for k, v in kw.items():
        if not math.isfinite(v):
            raise ValueError(f"{k} must be finite, got {v}")


def sample_ppp(rho: float, geom: BoxGeometry, seed: int) -> MarkedPointSet:
    """Homogeneous Poisson process of intensity ``rho`` in the box; marks are 0."""
    _check_finite(rho=rho, L=geom.L)
    if rho < 0:
        raise ValueError(f"intensity must be >= 0, got {rho}")
    rng = stream(seed, "ppp")
    n = int(rng.poisson(rho * geom.volume))
    pts = (rng.random((n, geom.d)) - 0.5) * geom.L
    return MarkedPointSet(geom, pts, np.zeros(n))


def sample_perturbed_lattice(geom: BoxGeometry, seed: int) -> MarkedPointSet:
    """Unit lattice shifted by a single uniform vector ``y`` in ``C_1``.

    The box is tiled by ``L**d`` unit cells; the point of each cell is its
    centre plus ``y``.
    """
    L = geom.L
    if abs(L - round(L)) > 1e-12:
        raise ValueError(f"the perturbed lattice needs an integer side length, got {L}")
    n_side = int(round(L))
    rng = stream(seed, "lattice")
    y = rng.random(geom.d) - 0.5
    centres = -L / 2 + 0.5 + np.arange(n_side)
    grid = np.stack(np.meshgrid(*([centres] * geom.d), indexing="ij"), axis=-1).reshape(-1, geom.d)
    return MarkedPointSet(geom, grid + y, np.zeros(len(grid)))


def randomize(pts: MarkedPointSet, law: EnergyLaw, seed: int) -> MarkedPointSet:
    """Attach i.i.d. marks with law ``law`` (overwrites existing marks)."""
    rng = stream(seed, "marks")
    return MarkedPointSet(pts.geometry, pts.points, law.sample(len(pts), rng))


def thin_by_energy(pts: MarkedPointSet, E_c: float) -> MarkedPointSet:
    """Keep exactly the points with ``|E| <= E_c``."""
    if not (0.0 < E_c <= 1.0):
        raise ValueError(f"E_c must lie in (0, 1], got {E_c}")
    return pts.subset(np.abs(pts.energies) <= E_c)


def palm_condition(pts: MarkedPointSet, law: EnergyLaw, mode: str = "exact-ppp", seed: int = 0) -> Environment:
    """Condition a point set to have a point at the origin.

    ``exact-ppp`` adds a freshly marked point at 0, which is the exact Palm
    version of a Poisson sample. ``recenter`` translates the point closest to a
    uniformly drawn location onto the origin; points leaving a hard box are
    dropped.
    """
    g = pts.geometry
    rng = stream(seed, "palm", mode)
    if mode == "exact-ppp":
        keep = np.any(pts.points != 0.0, axis=1)
        e0 = law.sample(1, rng)
        points = np.vstack([np.zeros((1, g.d)), pts.points[keep]])
        energies = np.concatenate([e0, pts.energies[keep]])
        return Environment(MarkedPointSet(g, points, energies), 0)
    if mode == "recenter":
        if len(pts) == 0:
            raise ValueError("cannot recenter an empty point set")
        u = (rng.random(g.d) - 0.5) * g.L
        k = int(np.argmin(g.distance(u, pts.points)))
        shifted = g.displacement(pts.points[k], pts.points)
        shifted[k] = 0.0
        energies = pts.energies
        if not g.periodic:
            inside = np.all(np.abs(shifted) <= g.L / 2, axis=1)
            k = int(np.count_nonzero(inside[:k]))
            shifted, energies = shifted[inside], energies[inside]
        return Environment(MarkedPointSet(g, shifted, energies), k)
    raise ValueError(f"unknown Palm mode {mode!r}; use 'exact-ppp' or 'recenter'")


def environment_sampler(
    process: str,
    geom: BoxGeometry,
    law: EnergyLaw,
    rho: float = 1.0,
    mode: str | None = None,
) -> Callable[[int], Environment]:
    """Build ``seed -> Environment`` for a Poisson or perturbed-lattice process."""
    if process not in ("ppp", "lattice"):
        raise ValueError(f"unknown process {process!r}; use 'ppp' or 'lattice'")
    mode = mode or ("exact-ppp" if process == "ppp" else "recenter")

    def sample(seed: int) -> Environment:
        if process == "ppp":
            pts = sample_ppp(rho, geom, seed)
        else:
            pts = sample_perturbed_lattice(geom, seed)
        return palm_condition(randomize(pts, law, seed), law, mode, seed)

    return sample


# --------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    stderr: float
    ci_low: float
    ci_high: float
    n_samples: int


def _unit_cell_counts(pts: MarkedPointSet) -> np.ndarray:
    """Counts of points in the unit cells tiling the box from its lower corner."""
    g = pts.geometry
    n_side = int(math.floor(g.L + 1e-12))
    if n_side < 1:
        raise ValueError("box smaller than a unit cell")
    rel = pts.points + g.L / 2
    idx = np.floor(rel).astype(np.int64)
    ok = np.all((idx >= 0) & (idx < n_side), axis=1)
    flat = np.ravel_multi_index(idx[ok].T, (n_side,) * g.d)
    return np.bincount(flat, minlength=n_side**g.d)


def moment_estimate(samples: Sequence[MarkedPointSet], kappa: int) -> MomentEstimate:
    """Estimate ``E[xi(C_1)^kappa]`` from unit-cell counts of independent samples.

    The standard error is taken across samples, so correlations between cells
    of one sample are accounted for.
    """
    if kappa < 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    if len(samples) < 2:
        raise ValueError("need at least 2 samples for a confidence interval")
    per_sample = np.array([np.mean(_unit_cell_counts(s).astype(float) ** kappa) for s in samples])
    m = float(per_sample.mean())
    se = float(per_sample.std(ddof=1) / math.sqrt(len(per_sample)))
    return MomentEstimate(m, se, m - 1.96 * se, m + 1.96 * se, len(per_sample))


def ergodic_density_check(pts: MarkedPointSet, N_grid: Sequence[float], rho: float) -> list[tuple[float, float]]:
    """Ratios ``xi(C_N) / (rho N^d)`` for centred half-open cubes of side ``N``."""
    out = []
    for N in N_grid:
        if N > pts.geometry.L:
            raise ValueError(f"window of side {N} exceeds the box side {pts.geometry.L}")
        out.append((N, pts.count_in_cube(np.zeros(pts.geometry.d), N) / (rho * N**pts.geometry.d)))
    return out


KERNELS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "one": lambda e: np.ones_like(e),
    "energy": lambda e: e,
    "abs-energy": np.abs,
    "energy-squared": lambda e: e * e,
}


def exchange_sides(env: Environment, kernel: str) -> tuple[float, float]:
    """Both integrands of the Palm exchange identity for one environment.

    With ``k(xi, xi') = exp(-|Delta(xi, xi')|) g(E_0(xi))`` the left side is
    ``sum_x exp(-|x|) g(E_0)`` and the right side ``sum_x exp(-|x|) g(E_x)``.
    """
    g = KERNELS[kernel]
    o = env.origin_index
    w = np.exp(-env.geometry.distance(env.points[o], env.points))
    lhs = float(np.sum(w) * g(np.array([env.energies[o]]))[0])
    rhs = float(np.sum(w * g(env.energies)))
    return lhs, rhs


@dataclass(frozen=True)
class ExchangeResult:
    lhs: float
    rhs: float
    lhs_se: float
    rhs_se: float
    z: float
    n_samples: int


def exchange_formula_test(
    env_sampler: Callable[[int], Environment],
    kernel: str,
    n_samples: int,
    seed: int = 0,
    paired: bool = False,
) -> ExchangeResult:
    """Monte Carlo check of the Palm exchange identity.

    Unpaired (default): the two sides are estimated on independent environment
    draws. Paired: both sides use the same draws.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples for a confidence interval")
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}; choose from {sorted(KERNELS)}")
    from .rng import child_seed

    lhs = np.empty(n_samples)
    rhs = np.empty(n_samples)
    for i in range(n_samples):
        a = exchange_sides(env_sampler(child_seed(seed, "exchange", "lhs", i)), kernel)
        if paired:
            lhs[i], rhs[i] = a
        else:
            lhs[i] = a[0]
            rhs[i] = exchange_sides(env_sampler(child_seed(seed, "exchange", "rhs", i)), kernel)[1]
    sl = lhs.std(ddof=1) / math.sqrt(n_samples)
    sr = rhs.std(ddof=1) / math.sqrt(n_samples)
    diff = lhs.mean() - rhs.mean()
    if paired:
        s = (lhs - rhs).std(ddof=1) / math.sqrt(n_samples)
    else:
        s = math.hypot(sl, sr)
    z = 0.0 if s == 0 and diff == 0 else diff / s
    return ExchangeResult(float(lhs.mean()), float(rhs.mean()), float(sl), float(sr), float(z), n_samples)


# --------------------------------------------------------------------------
# text format: header "d L periodic n", then one "x1 ... xd E" line per point


def write_point_set(target, pts: MarkedPointSet) -> None:
    g = pts.geometry
    lines = [f"{g.d} {g.L:.17g} {int(g.periodic)} {len(pts)}"]
    for x, e in zip(pts.points, pts.energies):
        lines.append(" ".join(f"{v:.17g}" for v in x) + f" {e:.17g}")
    text = "\n".join(lines) + "\n"
    if isinstance(target, (str, os.PathLike)):
        from .atomic import atomic_write_text

        atomic_write_text(target, text)
    else:
        target.write(text)


def read_point_set(source) -> MarkedPointSet:
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            text = fh.read()
    elif isinstance(source, io.IOBase) or hasattr(source, "read"):
        text = source.read()
    else:
        raise TypeError("source must be a path or a text stream")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty point-set file")
    head = lines[0].split()
    if len(head) != 4:
        raise ValueError(f"bad header {lines[0]!r}; expected 'd L periodic n'")
    d, L, per, n = int(head[0]), float(head[1]), bool(int(head[2])), int(head[3])
    if len(lines) - 1 != n:
        raise ValueError(f"header announces {n} points, file has {len(lines) - 1}")
    data = np.array([[float(v) for v in ln.split()] for ln in lines[1:]], dtype=float).reshape(n, d + 1)
    return MarkedPointSet(BoxGeometry(d, L, per), data[:, :d], data[:, d])

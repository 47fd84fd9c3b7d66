"""Resistor network of a point set in the open cube (-N, N)^d.

Points closer than ``r_c`` are joined by unit conductances. Two boundary
faces at ``x1 = -N`` and ``x1 = +N`` carry the integer lattice points
``Gamma^-``/``Gamma^+`` (``|Gamma| = (2N-1)^(d-1)``); every point in the slab
within ``r_c`` of a face is linked to every lattice point of that face with
conductance ``1/|Gamma|``. With potential 0 on ``Gamma^-`` and 1 on
``Gamma^+`` the effective conductance is the current through the network,
and ``D_N = 8 N^2 G_N / |V|`` with ``|V| = n_points + 2 |Gamma|``.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .point_process import BoxGeometry, MarkedPointSet, NeighborIndex, thin_by_energy
from .rng import child_seed

DEFAULT_TOL = 1e-10


@dataclass
class ResistorGraph:
    """Undirected weighted graph with Dirichlet boundary sets.

    Vertices ``0..n_points-1`` are points of the medium; the rest are
    boundary vertices. ``left`` is held at potential 0, ``right`` at 1.
    """

    positions: np.ndarray
    edges_i: np.ndarray
    edges_j: np.ndarray
    conductances: np.ndarray
    left: np.ndarray
    right: np.ndarray
    N: float
    r_c: float
    n_points: int
    gamma_size: int

    def __post_init__(self):
        i, j, c = merge_edges(self.edges_i, self.edges_j, self.conductances, self.n_vertices)
        self.edges_i, self.edges_j, self.conductances = i, j, c
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        if np.intersect1d(self.left, self.right).size:
            raise ValueError("a vertex cannot belong to both boundaries")

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    @property
    def n_edges(self) -> int:
        return len(self.conductances)

    @property
    def vbar_size(self) -> int:
        """``|V|``: medium points plus both boundary faces of the explicit construction."""
        return self.n_points + 2 * self.gamma_size

    def laplacian(self) -> sp.csr_matrix:
        n = self.n_vertices
        i, j, c = self.edges_i, self.edges_j, self.conductances
        A = sp.coo_matrix((np.concatenate([c, c]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n)).tocsr()
        return (sp.diags(np.asarray(A.sum(axis=1)).ravel()) - A).tocsr()

    def without_edge(self, k: int) -> "ResistorGraph":
        keep = np.arange(self.n_edges) != k
        return ResistorGraph(self.positions, self.edges_i[keep], self.edges_j[keep], self.conductances[keep],
                             self.left, self.right, self.N, self.r_c, self.n_points, self.gamma_size)


def merge_edges(i, j, c, n):
    """Drop self-loops and merge parallel edges by adding their conductances."""
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    c = np.asarray(c, dtype=float)
    if len(c) and (np.any(c < 0) or not np.all(np.isfinite(c))):
        raise ValueError("conductances must be finite and >= 0")
    if len(c) and (min(i.min(), j.min()) < 0 or max(i.max(), j.max()) >= n):
        raise ValueError("edge endpoint out of range")
    keep = (i != j) & (c > 0)
    a, b = np.minimum(i[keep], j[keep]), np.maximum(i[keep], j[keep])
    M = sp.coo_matrix((c[keep], (a, b)), shape=(n, n)).tocsr()
    M.sum_duplicates()
    M = M.tocoo()
    order = np.lexsort((M.col, M.row))
    return M.row[order].astype(np.int64), M.col[order].astype(np.int64), M.data[order]


def _open_cube_points(pts: MarkedPointSet, N: float) -> np.ndarray:
    return pts.points[np.all(np.abs(pts.points) < N, axis=1)]


def boundary_lattice(N: int, d: int, side: int) -> np.ndarray:
    """Integer points with ``x1 = side*N`` and ``|x_j| < N`` for j >= 2."""
    Ni = int(N)
    line = np.arange(-Ni + 1, Ni)
    rest = np.stack(np.meshgrid(*([line] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)
    return np.hstack([np.full((len(rest), 1), side * Ni, dtype=float), rest.astype(float)])


def _medium_edges(x: np.ndarray, d: int, N: float, r_c: float):
    if len(x) < 2:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    idx = NeighborIndex(x, BoxGeometry(d, 2 * N, periodic=False))
    pr = idx.pairs(r_c)
    return pr[:, 0], pr[:, 1]


def _slabs(x: np.ndarray, N: float, r_c: float) -> tuple[np.ndarray, np.ndarray]:
    left = np.flatnonzero(x[:, 0] <= -N + r_c) if len(x) else np.zeros(0, np.int64)
    right = np.flatnonzero(x[:, 0] >= N - r_c) if len(x) else np.zeros(0, np.int64)
    return left, right


def _check_scales(N, r_c):
    if not N > r_c:
        raise ValueError(f"need N > r_c, got N={N}, r_c={r_c}")
    if abs(N - round(N)) > 1e-12 or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")


def build_periodized_graph(pts: MarkedPointSet, N: int, r_c: float) -> ResistorGraph:
    """Explicit construction: both boundary faces as lattice vertices with ``1/|Gamma|`` links."""
    _check_scales(N, r_c)
    d = pts.geometry.d
    x = _open_cube_points(pts, N)
    q = len(x)
    gm, gp = boundary_lattice(N, d, -1), boundary_lattice(N, d, +1)
    m = len(gm)
    ei, ej = _medium_edges(x, d, N, r_c)
    bl, br = _slabs(x, N, r_c)
    left = q + np.arange(m)
    right = q + m + np.arange(m)
    li = np.repeat(bl, m)
    lj = np.tile(left, len(bl))
    ri = np.repeat(br, m)
    rj = np.tile(right, len(br))
    i = np.concatenate([ei, li, ri])
    j = np.concatenate([ej, lj, rj])
    c = np.concatenate([np.ones(len(ei)), np.full(len(li) + len(ri), 1.0 / m)])
    return ResistorGraph(np.vstack([x, gm, gp]), i, j, c, left, right, float(N), float(r_c), q, m)


def build_shorted_graph(pts: MarkedPointSet, N: int, r_c: float) -> ResistorGraph:
    """Each boundary face shorted to a single vertex, linked to its slab points with unit conductance."""
    _check_scales(N, r_c)
    d = pts.geometry.d
    x = _open_cube_points(pts, N)
    q = len(x)
    ei, ej = _medium_edges(x, d, N, r_c)
    bl, br = _slabs(x, N, r_c)
    i = np.concatenate([ei, bl, br])
    j = np.concatenate([ej, np.full(len(bl), q), np.full(len(br), q + 1)])
    c = np.ones(len(i))
    ends = np.zeros((2, d))
    ends[0, 0], ends[1, 0] = -N, N
    return ResistorGraph(np.vstack([x, ends]), i, j, c, [q], [q + 1], float(N), float(r_c), q, (2 * int(N) - 1) ** (d - 1))


def identified_graph(graph: ResistorGraph):
    """Vertex count and edge list after identifying ``Gamma^-`` with ``Gamma^+`` face point by face point.

    Only meaningful for the explicit construction, where ``left[k]`` and
    ``right[k]`` share transverse coordinates.
    """
    if len(graph.left) != graph.gamma_size:
        raise ValueError("identification needs the explicit boundary construction")
    pi = np.arange(graph.n_vertices)
    pi[graph.right] = graph.left
    i, j = pi[graph.edges_i], pi[graph.edges_j]
    keep_vertices = np.setdiff1d(np.arange(graph.n_vertices), graph.right)
    return len(keep_vertices), i, j, graph.conductances


@dataclass
class PotentialSolution:
    """Potential plus diagnostics.

    ``G_left``/``G_right`` are the currents through the two boundaries; they
    agree up to the sum of Kirchhoff residuals.
    """

    V: np.ndarray
    residual_norm: float
    solver_iterations: int
    G_left: float
    G_right: float
    connected: bool

    @property
    def current_mismatch(self) -> float:
        return abs(self.G_left - self.G_right)


class SolverError(RuntimeError):
    pass


def pcg(A: sp.csr_matrix, b: np.ndarray, tol: float, max_iter: int, x0: np.ndarray | None = None) -> tuple[np.ndarray, float, int]:
    """Jacobi-preconditioned conjugate gradient; returns (x, relative residual, iterations)."""
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise SolverError("matrix has a non-positive diagonal entry")
    Minv = 1.0 / diag
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x if x0 is not None else b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), 0.0, 0
    if np.linalg.norm(r) / bnorm <= tol:
        return x, float(np.linalg.norm(r) / bnorm), 0
    z = Minv * r
    p = z.copy()
    rz = r @ z
    for k in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rel = np.linalg.norm(r) / bnorm
        if rel <= tol:
            # recompute the true residual to guard against drift in the recurrence
            r = b - A @ x
            rel = np.linalg.norm(r) / bnorm
            if rel <= tol:
                return x, rel, k
        z = Minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"conjugate gradient did not reach tol={tol} within {max_iter} iterations (residual {rel:.3g})")


def _boundary_current(graph: ResistorGraph, V: np.ndarray, side: np.ndarray, value: float) -> float:
    i, j, c = graph.edges_i, graph.edges_j, graph.conductances
    on = np.zeros(graph.n_vertices, dtype=bool)
    on[side] = True
    a = on[i] & ~on[j]
    b = on[j] & ~on[i]
    return float(np.sum(c[a] * np.abs(V[j[a]] - value)) + np.sum(c[b] * np.abs(V[i[b]] - value)))


def conductance(graph: ResistorGraph, tol: float = DEFAULT_TOL, max_iter: int | None = None) -> tuple[float, PotentialSolution]:
    """Effective conductance between ``left`` (V=0) and ``right`` (V=1).

    Vertices that cannot reach both boundaries carry no current; they are
    assigned the potential of the boundary they touch (0 if floating) and
    excluded from the solve. ``G`` is the current leaving through the left
    boundary; ``G_right`` the current entering from the right.

    The returned value is the Dirichlet energy ``sum c (V(x) - V(y))^2``. At
    the exact potential it equals both boundary currents, but its error is
    quadratic in the solver error instead of linear, which matters for
    badly conditioned conductance ranges. The solve is tightened below
    ``tol`` when needed so that ``|G_left - G_right| <= 10 tol |V|``.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    n = graph.n_vertices
    V = np.zeros(n)
    V[graph.right] = 1.0
    if len(graph.left) == 0 or len(graph.right) == 0 or graph.n_edges == 0:
        return 0.0, PotentialSolution(V, 0.0, 0, 0.0, 0.0, False)
    # connectivity with each boundary face collapsed to one node
    i, j = graph.edges_i, graph.edges_j
    tie_l = np.full(len(graph.left) - 1, graph.left[0])
    tie_r = np.full(len(graph.right) - 1, graph.right[0])
    ci = np.concatenate([i, tie_l, tie_r])
    cj = np.concatenate([j, graph.left[1:], graph.right[1:]])
    adj = sp.coo_matrix((np.ones(len(ci)), (ci, cj)), shape=(n, n))
    _, labels = connected_components(adj, directed=False)
    lab_l, lab_r = labels[graph.left[0]], labels[graph.right[0]]
    V[(labels == lab_r)] = 1.0
    connected = lab_l == lab_r
    if not connected:
        V[graph.left] = 0.0
        return 0.0, PotentialSolution(V, 0.0, 0, 0.0, 0.0, False)
    boundary = np.zeros(n, dtype=bool)
    boundary[graph.left] = True
    boundary[graph.right] = True
    interior = np.flatnonzero((labels == lab_l) & ~boundary)
    V[labels == lab_l] = 0.0
    V[graph.right] = 1.0
    L = graph.laplacian()
    rel, its = 0.0, 0
    if len(interior):
        A = L[interior][:, interior]
        b = -(L[interior][:, graph.right] @ np.ones(len(graph.right)))
        A = A.tocsr()
        cap = max_iter if max_iter is not None else 50 * n
        x, rel, its = pcg(A, b, tol, cap)
        V[interior] = x
    Gl = _boundary_current(graph, V, graph.left, 0.0)
    Gr = _boundary_current(graph, V, graph.right, 1.0)
    # the face currents differ by the summed residual, which scales with the
    # conductances; tighten until they balance to 10 tol |V|
    t = tol
    while len(interior) and abs(Gl - Gr) > 10 * tol * max(graph.vbar_size, 1) and t > 1e-15:
        t /= 10
        x, rel, more = pcg(A, b, t, cap, x0=x)
        its += more
        V[interior] = x
        Gl = _boundary_current(graph, V, graph.left, 0.0)
        Gr = _boundary_current(graph, V, graph.right, 1.0)
    dv = V[graph.edges_i] - V[graph.edges_j]
    G = float(np.sum(graph.conductances * dv * dv))
    return G, PotentialSolution(V, rel, its, Gl, Gr, True)


def dense_conductance(graph: ResistorGraph) -> float:
    """Reference value by a dense direct solve (small graphs only)."""
    n = graph.n_vertices
    L = graph.laplacian().toarray()
    fixed = np.zeros(n, dtype=bool)
    fixed[graph.left] = True
    fixed[graph.right] = True
    V = np.zeros(n)
    V[graph.right] = 1.0
    free = np.flatnonzero(~fixed)
    if len(free):
        A = L[np.ix_(free, free)]
        b = -L[np.ix_(free, graph.right)].sum(axis=1)
        # floating components make A singular; least squares picks a valid potential
        V[free] = np.linalg.lstsq(A, b, rcond=None)[0]
    # current out of V=1 side equals sum over right-boundary rows of L V
    return float(np.sum(L[graph.right] @ V))


def diffusion_from_conductance(G: float, graph: ResistorGraph) -> float:
    if graph.vbar_size <= 0:
        raise ValueError("empty vertex set")
    return 8.0 * graph.N**2 * G / graph.vbar_size


def conductance_record(graph: ResistorGraph, G: float, sol: PotentialSolution) -> dict:
    return {
        "N": graph.N,
        "r_c": graph.r_c,
        "V_bar": graph.vbar_size,
        "G_N": G,
        "D_N": diffusion_from_conductance(G, graph),
        "residual": sol.residual_norm,
        "iterations": sol.solver_iterations,
    }


@dataclass
class NetworkEstimate:
    N: np.ndarray
    D: np.ndarray
    standard_error: np.ndarray
    n_samples: int
    stabilized: bool
    records: list

    def summary(self) -> dict:
        return {
            "type": "aggregate",
            "N": [float(v) for v in self.N],
            "D_N": [float(v) for v in self.D],
            "SE": [float(v) for v in self.standard_error],
            "n_samples": self.n_samples,
            # heuristic: last two grid points agree within 2 combined SE
            "stabilized_heuristic": bool(self.stabilized),
        }


def network_diffusion_estimate(
    pts_sampler: Callable[[int], MarkedPointSet],
    E_c: float,
    r_c: float,
    N: int | Sequence[int],
    n_samples: int,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
) -> NetworkEstimate:
    """Mean of ``8 N^2 G_N / |V|`` over sampled media thinned at ``E_c``, for each ``N`` in a grid.

    The sampler receives an integer seed and must return a point set covering
    ``(-N, N)^d`` for the largest ``N``.
    """
    grid = np.atleast_1d(np.asarray(N, dtype=float))
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    vals = np.zeros((len(grid), n_samples))
    records = []
    for s in range(n_samples):
        sample_seed = child_seed(seed, "medium", s)
        pts = thin_by_energy(pts_sampler(sample_seed), E_c)
        for k, n_half in enumerate(grid):
            g = build_shorted_graph(pts, int(n_half), r_c)
            G, sol = conductance(g, tol)
            vals[k, s] = diffusion_from_conductance(G, g)
            rec = conductance_record(g, G, sol)
            rec["seed"] = sample_seed
            records.append(rec)
    mean = vals.mean(axis=1)
    se = vals.std(axis=1, ddof=1) / math.sqrt(n_samples) if n_samples > 1 else np.full(len(grid), np.inf)
    stable = False
    if len(grid) >= 2 and n_samples > 1:
        stable = bool(abs(mean[-1] - mean[-2]) < 2 * math.hypot(se[-1], se[-2]))
    return NetworkEstimate(grid, mean, se, n_samples, stable, records)


# --------------------------------------------------------------------------
# edge-list text format


def write_graph(target, graph: ResistorGraph) -> None:
    """Header lines ``# N r_c n_vertices n_points gamma_size``, ``# left ...``, ``# right ...``; then ``i j c``."""
    lines = [
        f"# {graph.N:.17g} {graph.r_c:.17g} {graph.n_vertices} {graph.n_points} {graph.gamma_size}",
        "# left " + " ".join(str(int(v)) for v in graph.left),
        "# right " + " ".join(str(int(v)) for v in graph.right),
    ]
    lines += [f"{a} {b} {c:.17g}" for a, b, c in zip(graph.edges_i, graph.edges_j, graph.conductances)]
    text = "\n".join(lines) + "\n"
    if isinstance(target, (str, os.PathLike)):
        from .atomic import atomic_write_text

        atomic_write_text(target, text)
    else:
        target.write(text)


def read_graph(source) -> ResistorGraph:
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            text = fh.read()
    else:
        text = source.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 3 or not lines[0].startswith("#"):
        raise ValueError("edge-list file needs three header lines")
    head = lines[0][1:].split()
    N, r_c, n, q, m = float(head[0]), float(head[1]), int(head[2]), int(head[3]), int(head[4])
    left = [int(v) for v in lines[1].split()[2:]]
    right = [int(v) for v in lines[2].split()[2:]]
    body = np.array([ln.split() for ln in lines[3:]], dtype=float).reshape(-1, 3)
    return ResistorGraph(np.zeros((n, 1)), body[:, 0].astype(np.int64), body[:, 1].astype(np.int64), body[:, 2],
                         left, right, N, r_c, q, m)


def dumps_records(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)

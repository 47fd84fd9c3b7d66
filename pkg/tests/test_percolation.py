import io
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrh.percolation import (
    SiteField,
    check_domination,
    choose_percolation_scales,
    coarse_grain,
    count_disjoint_lr_crossings,
    crossing_scaling_experiment,
    decode_rle,
    empirical_b,
    encode_rle,
    estimate_pc2,
    harmonic_path_bound,
    independent_field,
    jensen_holds,
    read_field,
    scales_from_rp,
    validate_crossings,
    write_field,
)
from vrh.point_process import BoxGeometry, EnergyLaw, MarkedPointSet, randomize, sample_perturbed_lattice, sample_ppp
from vrh.rng import stream



@pytest.fixture(scope="module")
def pc_ref():
    return estimate_pc2(N=16, n_samples=200, seed=3).estimate


# ---------------------------------------------------------------- exhaustive oracle


def _lr_paths(grid):
    """All chordless LR-crossings of a small 2-d grid, as frozensets of sites.

    A crossing with a chord can be shortened to a crossing on a subset of its
    sites, so a maximum disjoint family can always be made of chordless ones.
    """
    n1, n2 = grid.shape
    out = set()

    def nbrs(a, b):
        for da, db in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            pa, pb = a + da, b + db
            if 0 <= pa < n1 and 0 <= pb < n2 and grid[pa, pb]:
                yield pa, pb

    def extend(path, members):
        a, b = path[-1]
        for nxt in nbrs(a, b):
            if nxt in members or nxt[0] == 0:
                continue
            # chordless: nxt touches no earlier site except the current end
            if any(abs(nxt[0] - q[0]) + abs(nxt[1] - q[1]) == 1 for q in path[:-1]):
                continue
            if nxt[0] == n1 - 1:
                out.add(frozenset(path + [nxt]))
                continue
            path.append(nxt)
            members.add(nxt)
            extend(path, members)
            members.remove(nxt)
            path.pop()

    for b in range(n2):
        if grid[0, b]:
            extend([(0, b)], {(0, b)})
    return list(out)


def brute_force_max_disjoint(grid):
    paths = _lr_paths(grid)
    starts = sorted({min(p) for p in paths})

    def best(k, used):
        if k == len(starts):
            return 0
        s = starts[k]
        top = best(k + 1, used)
        if s in used:
            return top
        for p in paths:
            if min(p) == s and not (p & used):
                top = max(top, 1 + best(k + 1, used | p))
        return top

    return best(0, frozenset())


def test_brute_force_oracle_sanity():
    assert brute_force_max_disjoint(np.ones((5, 5), bool)) == 5
    g = np.zeros((5, 5), bool)
    g[:, 2] = True
    assert brute_force_max_disjoint(g) == 1


def test_max_flow_matches_exhaustive_enumeration():
    rng = stream(5, "fields5x5")
    for k in range(500):
        p = rng.uniform(0.4, 0.95)
        grid = rng.random((5, 5)) < p
        rep = count_disjoint_lr_crossings(SiteField(2, grid.astype(np.uint8)))
        assert rep.n_disjoint_crossings == brute_force_max_disjoint(grid), grid.astype(int)


def test_max_flow_matches_networkx_connectivity():
    rng = stream(6, "bigger")
    for _ in range(20):
        N = int(rng.integers(3, 9))
        grid = rng.random((2 * N + 1, 2 * N + 1)) < rng.uniform(0.5, 0.9)
        G = nx.DiGraph()
        n = 2 * N + 1
        for a in range(n):
            for b in range(n):
                if grid[a, b]:
                    G.add_edge(("in", a, b), ("out", a, b), capacity=1)
                    if a == 0:
                        G.add_edge("s", ("in", a, b), capacity=1)
                    if a == n - 1:
                        G.add_edge(("out", a, b), "t", capacity=1)
                        continue
                    for da, db in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                        pa, pb = a + da, b + db
                        if 0 < pa < n and 0 <= pb < n and grid[pa, pb]:
                            G.add_edge(("out", a, b), ("in", pa, pb), capacity=1)
        ref = nx.maximum_flow_value(G, "s", "t") if "s" in G and "t" in G else 0
        assert count_disjoint_lr_crossings(SiteField(N, grid.astype(np.uint8))).n_disjoint_crossings == ref


@pytest.mark.parametrize("N", [1, 2, 5, 10])
def test_all_open_field(N):
    fld = SiteField(N, np.ones((2 * N + 1, 2 * N + 1), np.uint8))
    rep = count_disjoint_lr_crossings(fld)
    assert rep.n_disjoint_crossings == 2 * N + 1
    assert np.all(rep.lengths == 2 * N)
    validate_crossings(rep, fld)
    s, floor = harmonic_path_bound(rep)
    assert s == pytest.approx((2 * N + 1) / (2 * N))
    assert jensen_holds(rep)


def test_single_open_row():
    s = np.zeros((9, 9), np.uint8)
    s[:, 3] = 1
    assert count_disjoint_lr_crossings(SiteField(4, s)).n_disjoint_crossings == 1


def test_three_dimensional_slices():
    N = 3
    fld = SiteField(N, np.ones((7, 7, 7), np.uint8))
    rep = count_disjoint_lr_crossings(fld, b=1.0)
    assert rep.n_disjoint_crossings == 49
    validate_crossings(rep, fld)
    assert rep.is_good


def test_empty_family_errors():
    rep = count_disjoint_lr_crossings(SiteField(2, np.zeros((5, 5), np.uint8)))
    with pytest.raises(ValueError):
        harmonic_path_bound(rep)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000), p=st.floats(0.3, 0.95), N=st.integers(1, 8))
def test_report_invariants(seed, p, N):
    fld = independent_field(p, N, 2, seed)
    rep = count_disjoint_lr_crossings(fld)
    validate_crossings(rep, fld)
    assert jensen_holds(rep)
    assert rep.total_length <= (2 * N + 1) ** 2
    # opening any closed site never lowers the count
    closed = np.argwhere(fld.sites == 0)
    if len(closed):
        j = closed[seed % len(closed)] - N
        assert count_disjoint_lr_crossings(fld.with_site(j, 1)).n_disjoint_crossings >= rep.n_disjoint_crossings


def test_jensen_on_thinned_ppp_n20():
    geom = BoxGeometry(2, 2 * (8 * 20 + 4), periodic=False)
    pts = randomize(sample_ppp(1.0, geom, 3), EnergyLaw(0), 3)
    from vrh.point_process import thin_by_energy

    fld = coarse_grain(thin_by_energy(pts, 0.1), 4.0, 8.0, 20)
    rep = count_disjoint_lr_crossings(fld)
    s, floor = harmonic_path_bound(rep)
    assert floor > 0
    assert s == pytest.approx(sum(1 / L for L in rep.lengths))
    assert floor == pytest.approx(rep.n_disjoint_crossings**2 / sum(rep.lengths))
    assert jensen_holds(rep)


# ---------------------------------------------------------------- coarse graining


def test_coarse_grain_single_point():
    pts = MarkedPointSet(BoxGeometry(2, 20.0, periodic=False), np.zeros((1, 2)), np.zeros(1))
    fld = coarse_grain(pts, 1.0, 2.0, 3)
    assert fld[(0, 0)] == 1 and fld.sites.sum() == 1


def test_coarse_grain_full_lattice():
    pts = sample_perturbed_lattice(BoxGeometry(2, 30.0), 0)
    fld = coarse_grain(pts, 1.0, 2.0, 6)
    assert np.all(fld.sites == 1)


def test_coarse_grain_overflow():
    pts = sample_ppp(1.0, BoxGeometry(2, 10.0), 0)
    with pytest.raises(ValueError):
        coarse_grain(pts, 1.0, 2.0, 3)
    with pytest.raises(ValueError):
        coarse_grain(pts, 2.0, 1.0, 1)


def test_site_marginal_matches_void_probability():
    from vrh.point_process import thin_by_energy

    geom = BoxGeometry(2, 2 * (3 * 8 + 1), periodic=False)
    r1, E_c = 2.0, 0.3
    opened = []
    for s in range(60):
        pts = thin_by_energy(randomize(sample_ppp(1.0, geom, s), EnergyLaw(0), s), E_c)
        opened.append(coarse_grain(pts, r1, 3.0, 8).sites.mean())
    p = 1 - math.exp(-E_c * 1.0 * r1**2)
    n = 60 * 17 * 17
    assert abs(np.mean(opened) - p) <= 3 * math.sqrt(p * (1 - p) / n)


# ---------------------------------------------------------------- domination and scales


def test_window_mass_condition_example():
    law = EnergyLaw(0)
    assert check_domination(4, 1.0, 0.8, 0.1, law, None, 0, d=2).cond2_pass
    assert not check_domination(3, 1.0, 0.8, 0.1, law, None, 0, d=2).cond2_pass


def test_density_floor_on_lattice_and_ppp():
    lat = lambda s: sample_perturbed_lattice(BoxGeometry(2, 30.0), s)
    rep = check_domination(12, 0.5, 0.6, 1.0, EnergyLaw(0), lat, 100, d=2)
    assert rep.cond3_estimate == 0.0 and rep.cond3_pass
    ppp = lambda s: sample_ppp(1.0, BoxGeometry(2, 30.0), s)
    rep = check_domination(10, 0.5, 0.6, 1.0, EnergyLaw(0), ppp, 200, d=2)
    assert rep.cond3_estimate == 0.0
    with pytest.raises(ValueError):
        check_domination(10, 0.5, 0.6, 1.0, EnergyLaw(0), ppp, 1, d=2)


def test_density_floor_unsatisfiable_above_two_thirds():
    lat = lambda s: sample_perturbed_lattice(BoxGeometry(2, 30.0), s)
    rep = check_domination(12, 0.5, 0.8, 1.0, EnergyLaw(0), lat, 20, d=2)
    assert rep.cond3_bound < 0 and not rep.cond3_pass


def test_scale_example(pc_ref):
    sc = choose_percolation_scales(0.8, 1.0, 0.1, EnergyLaw(0), d=2, pc_estimate=pc_ref)
    assert sc.r_p == 4 and sc.r1 == 4 and sc.r2 == 8
    assert sc.r_c == pytest.approx(math.sqrt(10) * 4)
    with pytest.raises(ValueError):
        choose_percolation_scales(0.5, 1.0, 0.1, EnergyLaw(0), d=2, pc_estimate=pc_ref)
    with pytest.raises(ValueError):
        choose_percolation_scales(0.8, 1.0, 0.1, EnergyLaw(0), d=2, pc_estimate=pc_ref, require_density_floor=True,
                                  pts_sampler=lambda s: sample_ppp(1.0, BoxGeometry(2, 40.0), s), n_samples=10)


@settings(max_examples=200, deadline=None)
@given(r=st.floats(0.1, 10), d=st.integers(2, 4), u=st.lists(st.floats(0, 1), min_size=8, max_size=8),
       axis=st.integers(0, 3))
def test_adjacent_cube_points_within_r_c(r, d, u, axis):
    sc = scales_from_rp(r, d)
    axis = axis % d
    x = (np.array(u[:d]) - 0.5) * sc.r1
    y = (np.array(u[4:4 + d]) - 0.5) * sc.r1
    y[axis] += sc.r2
    assert np.linalg.norm(x - y) <= sc.r_c


def test_pc2_estimate_brackets_known_region():
    est = estimate_pc2(N=16, n_samples=200, seed=1)
    assert est.ci_low <= est.estimate <= est.ci_high
    assert 0.55 < est.estimate < 0.64


# ---------------------------------------------------------------- experiments


def test_independent_field_scaling():
    fs = lambda N, s: independent_field(0.9, N, 2, s)
    rows = crossing_scaling_experiment(None, 1.0, 1, 1, [10, 14], 0.5, 100, field_sampler=fs)
    assert all(r.bad_frequency < 0.05 for r in rows)
    sub = crossing_scaling_experiment(None, 1.0, 1, 1, [5, 10], 0.5, 50, field_sampler=lambda N, s: independent_field(0.1, N, 2, s))
    assert all(r.bad_frequency == 1.0 for r in sub)
    one = crossing_scaling_experiment(None, 1.0, 1, 1, [1], 0.5, 20, field_sampler=fs)
    assert one[0].N == 1 and 0 <= one[0].bad_frequency <= 1


def test_empirical_b():
    counts = np.arange(100)
    assert empirical_b(counts, 10, 2) == pytest.approx(0.5)
    assert np.mean(counts >= empirical_b(counts, 10, 2) * 10) >= 0.95


def test_rle_round_trip(tmp_path):
    fld = SiteField(4, independent_field(0.6, 4, 3, 2).sites, 1.5, 3.0)
    back = decode_rle(encode_rle(fld))
    assert np.array_equal(back.sites, fld.sites) and back.r1 == 1.5 and back.r2 == 3.0
    path = tmp_path / "f.rle"
    write_field(path, fld)
    assert np.array_equal(read_field(path).sites, fld.sites)
    buf = io.StringIO()
    write_field(buf, fld)
    assert buf.getvalue().startswith("4 1.5 3 3\n")

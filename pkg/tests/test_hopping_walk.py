import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import dblquad, quad

from vrh.hopping_walk import (
    RateModel,
    build_rate_table,
    corrector_diffusion,
    critical_rate,
    detailed_balance_defect,
    diffusion_estimate,
    embedded_jump,
    exponential_tail,
    lattice_model,
    local_moments,
    plateau_reached,
    psi_phi_estimate,
    rate,
    simulate_walk,
    suggest_r_max,
    total_rate,
    variational_upper_bound,
)
from vrh.rng import child_seed
from vrh.point_process import BoxGeometry, EnergyLaw, Environment, MarkedPointSet, environment_sampler


def make_env(points, energies=None, L=20.0, periodic=True):
    points = np.asarray(points, dtype=float)
    e = np.zeros(len(points)) if energies is None else np.asarray(energies, dtype=float)
    return Environment(MarkedPointSet(BoxGeometry(points.shape[1], L, periodic), points, e), 0)


# ---------------------------------------------------------------- rates


def test_rate_examples():
    m = RateModel(beta=3.0)
    assert rate([0, 0], 0.0, [1, 0], 0.0, m) == pytest.approx(math.exp(-1))
    assert rate([0, 0], 0.3, [2, 0], -0.8, RateModel(beta=0.0)) == pytest.approx(math.exp(-2))
    assert rate([0, 0], 0.5, [2, 0], -0.5, RateModel(beta=1.0)) == pytest.approx(math.exp(-4))
    assert rate([1, 1], 0.2, [1, 1], 0.2, m) == 0.0


def test_rate_model_validation():
    with pytest.raises(ValueError):
        RateModel(beta=-1)
    with pytest.raises(ValueError):
        RateModel(kind="other")
    with pytest.raises(ValueError):
        RateModel(kind="cutoff")
    assert RateModel(kind="cutoff", r_c=2.5, E_c=0.3).r_max == 2.5


coords = st.floats(-10, 10, allow_nan=False)
marks = st.floats(-1, 1, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(x=st.tuples(coords, coords), y=st.tuples(coords, coords), ex=marks, ey=marks, b=st.floats(0, 50))
def test_rate_symmetry(x, y, ex, ey, b):
    m = RateModel(beta=b)
    assert rate(x, ex, y, ey, m) == rate(y, ey, x, ex, m)


@settings(max_examples=300, deadline=None)
@given(x=st.tuples(coords, coords), y=st.tuples(coords, coords), ex=marks, ey=marks,
       b1=st.floats(0, 50), db=st.floats(0, 50))
def test_rate_monotone_in_beta(x, y, ex, ey, b1, db):
    assert rate(x, ex, y, ey, RateModel(beta=b1 + db)) <= rate(x, ex, y, ey, RateModel(beta=b1))


@settings(max_examples=300, deadline=None)
@given(r=st.floats(0.01, 5), u=st.floats(0, 1), v=st.floats(0, 1), theta=st.floats(0, 6.3),
       E_c=st.floats(0.01, 1), r_c=st.floats(0.5, 10), b=st.floats(0, 100))
def test_cutoff_comparison(r, u, v, theta, E_c, r_c, b):
    d = r * r_c / 5
    y = (d * math.cos(theta), d * math.sin(theta))
    ex, ey = (2 * u - 1) * E_c, (2 * v - 1) * E_c
    c = rate((0.0, 0.0), ex, y, ey, RateModel(beta=b))
    chat = rate((0.0, 0.0), ex, y, ey, RateModel(kind="cutoff", r_c=r_c, E_c=E_c))
    assert chat == 1.0
    assert c >= math.exp(-r_c - 4 * b * E_c) * chat


# ---------------------------------------------------------------- totals


def test_total_rate_two_points_and_isolated():
    m = RateModel(beta=1.0, r_max=3.0, tail_tolerance=1e9)
    ev = total_rate(make_env([[0, 0], [1, 0]]), 0, m)
    assert ev.value == pytest.approx(math.exp(-1))
    single = total_rate(make_env([[0, 0]]), 0, m)
    assert single.value == 0 and single.isolated


def test_exponential_tail_matches_quadrature():
    for R in (1.0, 4.0, 9.0):
        oracle, _ = quad(lambda r: 2 * math.pi * r * math.exp(-r), R, math.inf)
        assert exponential_tail(2, R) == pytest.approx(oracle, rel=1e-10)
    oracle3, _ = quad(lambda r: 4 * math.pi * r * r * math.exp(-r), 2.0, math.inf)
    assert exponential_tail(3, 2.0) == pytest.approx(oracle3, rel=1e-10)


def test_total_rate_ppp_mean_matches_radial_quadrature():
    R = 4.0
    m = RateModel(beta=0.0, r_max=R, tail_tolerance=1.0)
    sampler = environment_sampler("ppp", BoxGeometry(2, 30.0), EnergyLaw(0))
    vals = []
    for s in range(400):
        ev = total_rate(sampler(s), 0, m)
        assert ev.radius == R
        vals.append(ev.value)
    oracle, _ = quad(lambda r: 2 * math.pi * r * math.exp(-r), 0, R)
    vals = np.array(vals)
    assert abs(vals.mean() - oracle) <= 3 * vals.std(ddof=1) / math.sqrt(len(vals))


def test_total_rate_certificate_holds():
    m = RateModel(beta=1.0, r_max=3.0, tail_tolerance=1e-4)
    env = environment_sampler("ppp", BoxGeometry(2, 60.0), EnergyLaw(0))(3)
    for i in range(0, len(env), 97):
        ev = total_rate(env, i, m)
        assert ev.tail_bound <= m.tail_tolerance * ev.value


def test_suggest_r_max():
    R = suggest_r_max(1.0, 2, 1e-3)
    assert exponential_tail(2, R) <= 1e-3 < exponential_tail(2, R - 0.5)


def test_rate_table_matches_total_rate():
    m = RateModel(beta=2.0, r_max=4.0, tail_tolerance=1.0)
    env = environment_sampler("ppp", BoxGeometry(2, 24.0), EnergyLaw(0))(1)
    tab = build_rate_table(env, m)
    for i in range(0, len(env), 37):
        assert tab.total[i] == pytest.approx(total_rate(env, i, m).value, rel=1e-12)
    assert detailed_balance_defect(tab) <= 1e-15


def test_periodic_box_must_be_large():
    env = make_env([[0, 0], [1, 0]], L=10.0)
    with pytest.raises(ValueError):
        build_rate_table(env, RateModel(r_max=2.0))


# ---------------------------------------------------------------- jumps


def test_embedded_jump_two_points():
    env = make_env([[0, 0], [1.5, 0.5]])
    m = RateModel(beta=1.0, r_max=3.0)
    for s in range(20):
        y, w = embedded_jump(env, 0, m, s)
        assert y == 1 and w > 0
    with pytest.raises(ValueError):
        embedded_jump(make_env([[0, 0]]), 0, m, 0)


def test_embedded_jump_frequencies_and_waiting_time():
    env = make_env([[0, 0], [1, 0], [-2, 0]])
    m = RateModel(beta=0.0, r_max=3.0)
    tab = build_rate_table(env, m)
    n = 20_000
    draws = [embedded_jump(tab, 0, m, s) for s in range(n)]
    targets = np.array([d[0] for d in draws])
    waits = np.array([d[1] for d in draws])
    p1 = math.exp(-1) / (math.exp(-1) + math.exp(-2))
    f1 = np.mean(targets == 1)
    assert abs(f1 - p1) <= 3 * math.sqrt(p1 * (1 - p1) / n)
    lam = math.exp(-1) + math.exp(-2)
    assert abs(waits.mean() - 1 / lam) <= 3 * (1 / lam) / math.sqrt(n)


# ---------------------------------------------------------------- trajectories


def test_trajectory_invariants():
    env = environment_sampler("ppp", BoxGeometry(2, 30.0), EnergyLaw(0))(2)
    m = RateModel(beta=1.0, r_max=5.0)
    q = np.array([1.0, 5.0, 17.0, 50.0])
    tr = simulate_walk(env, m, 50.0, seed=4, query_times=q)
    assert tr.n_jumps == len(tr.jump_times) > 0
    assert np.all(np.diff(tr.jump_times) > 0)
    assert tr.jump_times[-1] <= 50.0
    for t, x in zip(q, tr.positions):
        np.testing.assert_allclose(tr.position_at(t), x, atol=1e-9)


def test_isolated_origin_never_moves():
    tr = simulate_walk(make_env([[0, 0]]), RateModel(r_max=2.0), 100.0, seed=1)
    assert tr.n_jumps == 0 and np.all(tr.final == 0)


def test_zero_horizon_gives_empty_trajectory():
    tr = simulate_walk(make_env([[0, 0], [1, 0]]), RateModel(r_max=2.0), 0.0, seed=1)
    assert tr.n_jumps == 0 and len(tr.jump_times) == 0


def test_budget_exhaustion_is_reported():
    tr = simulate_walk(make_env([[0, 0], [0.1, 0]]), RateModel(r_max=2.0), 1e6, jump_budget=50, seed=0)
    assert tr.truncated and tr.n_jumps == 50
    assert np.all(np.isnan(tr.final))


def test_deterministic_given_seed():
    env = environment_sampler("ppp", BoxGeometry(2, 30.0), EnergyLaw(0))(2)
    m = RateModel(beta=1.0, r_max=5.0)
    a = simulate_walk(env, m, 20.0, seed=9)
    b = simulate_walk(env, m, 20.0, seed=9)
    assert np.array_equal(a.jump_times, b.jump_times) and np.array_equal(a.final, b.final)


@pytest.mark.parametrize("r_dist,t", [(1.0, 0.5), (1.0, 4.0), (0.5, 2.0)])
def test_two_point_second_moment(r_dist, t):
    y = np.array([r_dist * 0.8, r_dist * 0.6])
    env = make_env([[0, 0], y])
    m = RateModel(beta=0.0, r_max=2.0)
    tab = build_rate_table(env, m)
    r = math.exp(-r_dist)
    xs = np.array([simulate_walk(tab, m, t, seed=s, record_cap=0).final[0] for s in range(10_000)])
    oracle = y[0] ** 2 * (1 - math.exp(-2 * r * t)) / 2
    sq = xs**2
    assert abs(sq.mean() - oracle) <= 3 * sq.std(ddof=1) / math.sqrt(len(sq))


def test_small_time_jump_probability():
    env = make_env([[0, 0], [1, 0]])
    m = RateModel(beta=0.0, r_max=2.0)
    tab = build_rate_table(env, m)
    lam = math.exp(-1)
    n = 50_000
    for h in (0.2, 0.02):
        one = np.mean([simulate_walk(tab, m, h, seed=child_seed(11, "h", s), record_cap=0).n_jumps == 1 for s in range(n)])
        # both states have rate lam, so the jump count is Poisson(lam h)
        p = lam * h * math.exp(-lam * h)
        assert abs(one - p) <= 3 * math.sqrt(p * (1 - p) / n)
    assert abs(one / 0.02 - lam) / lam < 0.1


# ---------------------------------------------------------------- estimators


def test_lattice_diffusion_is_two():
    sampler = environment_sampler("lattice", BoxGeometry(2, 12.0), EnergyLaw(0))
    est = diffusion_estimate(sampler, lattice_model(), 40.0, 10, 1000, seed=1)
    assert np.all(np.abs(est.value - 2) <= 0.1)
    assert np.all(est.standard_error >= 0)
    assert est.n_trajectories == 10_000


def test_isolated_environments_give_zero():
    geom = BoxGeometry(2, 30.0)
    sampler = lambda s: Environment(MarkedPointSet(geom, np.zeros((1, 2)), np.zeros(1)), 0)
    est = diffusion_estimate(sampler, RateModel(r_max=4.0), 10.0, 3, 5)
    assert np.all(est.value == 0)


def test_diffusion_records_are_json():
    sampler = environment_sampler("lattice", BoxGeometry(2, 8.0), EnergyLaw(0))
    est = diffusion_estimate(sampler, lattice_model(), 4.0, 2, 3, seed=1)
    assert len(est.records) == 6
    for rec in est.records + [est.summary()]:
        json.loads(json.dumps(rec))
    assert {"seed", "t", "X_t", "n_jumps", "truncated"} <= set(est.records[0])


def test_plateau_detector():
    se = np.full((6, 2), 0.1)
    flat = np.full((6, 2), 2.0)
    assert plateau_reached(flat, se)
    decaying = 2.0 / np.arange(1, 7)[:, None] * np.ones((6, 2))
    assert not plateau_reached(decaying, se / 10)


def test_lattice_psi_and_bound():
    sampler = environment_sampler("lattice", BoxGeometry(2, 10.0), EnergyLaw(0))
    est = psi_phi_estimate(sampler, lattice_model(), 5)
    np.testing.assert_allclose(np.diag(est.psi), 2.0)
    np.testing.assert_allclose(est.phi, 0.0, atol=1e-12)
    bound, se = variational_upper_bound(est)
    np.testing.assert_allclose(bound, 2.0)
    with pytest.raises(ValueError):
        psi_phi_estimate(sampler, lattice_model(), 1)


def test_mirror_symmetric_environment_has_no_drift():
    half = np.array([[1.0, 0.3], [0.4, -2.0], [2.5, 1.5]])
    pts = np.vstack([[0, 0], half, -half])
    e = np.array([0.2, 0.5, -0.3, 0.9, 0.5, -0.3, 0.9])
    phi, psi = local_moments(make_env(pts, e), RateModel(beta=1.3, r_max=5.0))
    np.testing.assert_allclose(phi, 0.0, atol=1e-15)
    assert psi[0, 0] > 0


def test_psi_matches_separable_quadrature():
    beta, R = 1.0, 8.0
    m = RateModel(beta=beta, r_max=R)
    sampler = environment_sampler("ppp", BoxGeometry(2, 50.0), EnergyLaw(0))
    est = psi_phi_estimate(sampler, m, 400, seed=2)
    energy, _ = dblquad(lambda a, b: 0.25 * math.exp(-beta * (abs(a - b) + abs(a) + abs(b))), -1, 1, -1, 1)
    radial, _ = quad(lambda r: math.pi * r**3 * math.exp(-r), 0, R)
    oracle = energy * radial
    assert abs(est.psi[0, 0] - oracle) <= 3 * est.psi_se[0, 0]
    assert abs(est.psi[1, 1] - oracle) <= 3 * est.psi_se[1, 1]


def test_bound_vanishes_at_low_temperature():
    geom = BoxGeometry(2, 20.0)
    pts = np.array([[0, 0], [1, 0], [0, 1.2]])
    env = Environment(MarkedPointSet(geom, pts, np.array([0.5, -0.4, 0.6])), 0)
    vals = [local_moments(env, RateModel(beta=b, r_max=3.0))[1][0, 0] for b in (1, 10, 100)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-40


# ---------------------------------------------------------------- corrector


def test_corrector_lattice_is_exact():
    env = environment_sampler("lattice", BoxGeometry(2, 10.0), EnergyLaw(0))(0)
    sol = corrector_diffusion(env, lattice_model())
    np.testing.assert_allclose(sol.value, 2.0, rtol=1e-12)


def test_corrector_ring_harmonic_mean():
    rng = np.random.default_rng(5)
    gaps = rng.uniform(0.8, 1.5, size=12)
    L = gaps.sum()
    x = np.concatenate([[0.0], np.cumsum(gaps)[:-1]])
    x = np.where(x > L / 2, x - L, x)
    pts = np.stack([x, np.zeros(12)], axis=1)
    env = Environment(MarkedPointSet(BoxGeometry(2, L), pts, np.zeros(12)), 0)
    sol = corrector_diffusion(env, RateModel(beta=0.0, r_max=1.55), rate_floor=0.0)
    oracle = 2.0 * L**2 / (12 * np.sum(np.exp(gaps)))
    assert sol.value[0] == pytest.approx(oracle, rel=1e-10)
    assert sol.value[1] == 0.0


def test_corrector_below_psi_and_monotone_in_floor():
    env = environment_sampler("ppp", BoxGeometry(2, 30.0), EnergyLaw(0))(4)
    m = RateModel(beta=2.0, r_max=5.0)
    full = corrector_diffusion(env, m, rate_floor=0.0).value
    pruned = corrector_diffusion(env, m, rate_floor=1e-4).value
    assert np.all(pruned <= full * (1 + 1e-9))
    tab = build_rate_table(env, m)
    # average psi over all points of the box upper-bounds the corrector value
    psi_avg = np.array([np.sum(tab.rates * tab.displacements[:, a] ** 2) / tab.n for a in range(2)])
    assert np.all(full <= psi_avg * 1.01 + 1e-12)


def test_critical_rate_lattice():
    env = environment_sampler("lattice", BoxGeometry(2, 8.0), EnergyLaw(0))(0)
    assert critical_rate(env, lattice_model()) == 1.0
    two = make_env([[0, 0], [1, 0]])
    assert critical_rate(two, RateModel(r_max=3.0)) == 0.0


def test_corrector_agrees_with_kmc():
    geom = BoxGeometry(2, 36.0)
    sampler = environment_sampler("ppp", geom, EnergyLaw(0))
    m = RateModel(beta=1.0, r_max=6.0)
    from vrh.hopping_walk import corrector_diffusion_estimate

    corr = corrector_diffusion_estimate(sampler, m, 8, seed=3)
    kmc = diffusion_estimate(sampler, m, 200.0, 8, 100, seed=3)
    se = math.hypot(corr.mean_se, kmc.mean_se)
    assert abs(corr.mean - kmc.mean) <= 3 * se

"""Quick arithmetic and small-case checks across all modules, run by ``vrh selftest``."""
from __future__ import annotations

import math

import numpy as np


def _point_process():
    from .point_process import BoxGeometry, EnergyLaw, MarkedPointSet, thin_by_energy

    law = EnergyLaw(1.0)
    assert law.window_mass(0.5) == 0.25
    pts = MarkedPointSet(BoxGeometry(2, 4.0), np.zeros((3, 2)), np.array([-0.5, 0.05, 0.2]))
    assert len(thin_by_energy(pts, 0.1)) == 1
    try:
        BoxGeometry(1, 4.0)
    except ValueError:
        pass
    else:
        raise AssertionError("d=1 accepted")


def _hopping_walk():
    from .hopping_walk import RateModel, rate

    m = RateModel(beta=2.0, r_max=5.0)
    x, y = np.zeros(2), np.array([1.0, 0.0])
    assert math.isclose(rate(x, 0.0, y, 0.0, m), math.exp(-1.0))
    assert rate(x, 0.3, y, -0.1, m) == rate(y, -0.1, x, 0.3, m)
    assert math.isclose(rate(x, 0.25, y, 0.25, m), math.exp(-1.0 - 2.0 * 0.5))


def _resistor_network():
    from .point_process import BoxGeometry, MarkedPointSet
    from .resistor_network import ResistorGraph, build_periodized_graph, conductance, diffusion_from_conductance

    g = ResistorGraph(np.zeros((3, 1)), [0, 2], [2, 1], [1.0, 1.0], [0], [1], 2.0, 1.0, 1, 1)
    assert math.isclose(conductance(g)[0], 0.5, rel_tol=1e-12)
    line = np.arange(-3, 4, dtype=float)
    pts = np.stack(np.meshgrid(line, line, indexing="ij"), -1).reshape(-1, 2)
    lat = build_periodized_graph(MarkedPointSet(BoxGeometry(2, 8.0, periodic=False), pts, np.zeros(len(pts))), 4, 1.0)
    G, _ = conductance(lat)
    assert math.isclose(G, 7 / 8, rel_tol=1e-8)
    assert math.isclose(diffusion_from_conductance(G, lat), 16 / 9, rel_tol=1e-8)
    empty = MarkedPointSet(BoxGeometry(2, 8.0, periodic=False), np.zeros((0, 2)), np.zeros(0))
    assert conductance(build_periodized_graph(empty, 4, 1.0))[0] == 0


def _percolation():
    from .percolation import SiteField, cond2_holds, count_disjoint_lr_crossings
    from .point_process import EnergyLaw

    assert count_disjoint_lr_crossings(SiteField(2, np.ones((5, 5), np.uint8))).n_disjoint_crossings == 5
    row = np.zeros((5, 5), np.uint8)
    row[:, 1] = 1
    assert count_disjoint_lr_crossings(SiteField(2, row)).n_disjoint_crossings == 1
    law = EnergyLaw(0)
    assert cond2_holds(4, 1.0, 0.8, 0.1, law, 2)[0] and not cond2_holds(3, 1.0, 0.8, 0.1, law, 2)[0]


def _mott_experiment():
    from .mott_experiment import lower_bound_chain, make_schedule, records_csv

    e = make_schedule([27.0]).entries[0]
    assert math.isclose(e.E_c, 1 / 9) and math.isclose(e.r_c, 3.0) and math.isclose(e.delta_c, 1 / 9)
    assert lower_bound_chain(1 / 9, 3, 27, 1 / 9, 0.0) == 0.0
    assert math.isclose(lower_bound_chain(1 / 9, 3, 27, 1 / 9, 1.0), math.exp(-15) / 9)
    assert records_csv([]).count("\n") == 1


def _cli_io():
    from .config import ConfigError, parse_config

    for sub, items, word in (("mott", [], "beta_grid"), ("walk", ["d=1"], "d >= 2"), ("walk", ["beta=1", "beta=2"], "duplicate")):
        try:
            parse_config(sub, items)
        except ConfigError as err:
            assert word in str(err), str(err)
        else:
            raise AssertionError(f"{items} accepted")


CHECKS = [
    ("point_process", _point_process),
    ("hopping_walk", _hopping_walk),
    ("resistor_network", _resistor_network),
    ("percolation", _percolation),
    ("mott_experiment", _mott_experiment),
    ("cli_io", _cli_io),
]


def run_selftest(echo=print) -> list:
    results = []
    for name, fn in CHECKS:
        try:
            fn()
            ok, msg = True, ""
        except Exception as err:  # report every failure, keep going
            ok, msg = False, f"{type(err).__name__}: {err}"
        results.append((name, ok, msg))
        echo(f"{'PASS' if ok else 'FAIL'} {name} {msg}".rstrip())
    return results

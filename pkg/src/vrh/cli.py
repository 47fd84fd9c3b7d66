"""Command-line front end.

    vrh <subcommand> [--config FILE] [--strict] [key=value ...]

Every subcommand writes its results (delimited text plus PNG figures) into the
``out`` directory and prints one JSON summary line on stdout. Worker count for
the temperature sweep comes from ``VRH_WORKERS``.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

from .config import SCHEMA, SUBCOMMANDS, ConfigError, RunConfig, parse_config

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_STRICT = 0, 1, 2, 3


def _law(cfg):
    from .point_process import EnergyLaw

    return EnergyLaw(cfg["alpha"])


def _out(cfg, name):
    return os.path.join(cfg["out"], name)


def _clean(obj):
    """Strict JSON: non-finite floats become null."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _write_json(path, obj):
    from .atomic import atomic_write_text

    atomic_write_text(path, json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n")


def _write_config(cfg):
    _write_json(_out(cfg, "config.json"), cfg.as_dict())


def run_gen_env(cfg: RunConfig) -> tuple[dict, bool]:
    from .plotting import plot_points
    from .point_process import BoxGeometry, palm_condition, randomize, sample_perturbed_lattice, sample_ppp, write_point_set
    from .rng import child_seed

    geom = BoxGeometry(cfg["d"], cfg["box"], periodic=cfg["periodic"])
    s = child_seed(cfg["seed"], "gen-env")
    pts = sample_ppp(cfg["rho"], geom, s) if cfg["process"] == "ppp" else sample_perturbed_lattice(geom, s)
    pts = randomize(pts, _law(cfg), s)
    if cfg["palm_mode"]:
        pts = palm_condition(pts, _law(cfg), cfg["palm_mode"], s).base
    write_point_set(_out(cfg, "points.txt"), pts)
    plot_points(pts, _out(cfg, "points.png"))
    return {"n_points": len(pts), "files": ["points.txt", "points.png"]}, True


def run_walk(cfg: RunConfig) -> tuple[dict, bool]:
    from .atomic import atomic_write_text, dumps_jsonl
    from .hopping_walk import RateModel, corrector_diffusion_estimate, diffusion_estimate
    from .plotting import plot_msd
    from .point_process import BoxGeometry, environment_sampler

    geom = BoxGeometry(cfg["d"], cfg["box"], periodic=True)
    sampler = environment_sampler(cfg["process"], geom, _law(cfg), cfg["rho"], cfg["palm_mode"] or None)
    model = RateModel(beta=cfg["beta"], r_max=cfg["r_max"])
    if cfg["method"] == "kmc":
        est = diffusion_estimate(sampler, model, cfg["horizon"], cfg["n_env"], cfg["n_traj"], cfg["seed"], jump_budget=cfg["jump_budget"])
    else:
        est = corrector_diffusion_estimate(sampler, model, cfg["n_env"], cfg["seed"], margin=cfg["margin"])
    summary = est.summary()
    atomic_write_text(_out(cfg, "walk_records.jsonl"), dumps_jsonl(est.records))
    _write_json(_out(cfg, "walk_summary.json"), summary)
    plot_msd(est, _out(cfg, "walk.png"))
    ok = est.converged and est.n_truncated == 0
    return {"D": summary["D"], "SE": summary["SE"], "converged": summary["converged"], "n_truncated": est.n_truncated,
            "files": ["walk_records.jsonl", "walk_summary.json", "walk.png"]}, ok


def run_network(cfg: RunConfig) -> tuple[dict, bool]:
    from .atomic import atomic_write_text
    from .percolation import ppp_points_sampler
    from .plotting import plot_network
    from .point_process import BoxGeometry, randomize, sample_perturbed_lattice, thin_by_energy
    from .resistor_network import build_shorted_graph, dumps_records, network_diffusion_estimate, write_graph

    Ns = sorted(cfg["N"])
    L = 2.0 * Ns[-1]
    law = _law(cfg)
    if cfg["process"] == "ppp":
        sampler = ppp_points_sampler(cfg["rho"], law, cfg["d"], L)
    else:
        geom = BoxGeometry(cfg["d"], L, periodic=False)
        sampler = lambda s: randomize(sample_perturbed_lattice(geom, s), law, s)  # noqa: E731
    est = network_diffusion_estimate(sampler, cfg["E_c"], cfg["r_c"], Ns, cfg["n_samples"], cfg["seed"], cfg["tol"])
    atomic_write_text(_out(cfg, "network_records.jsonl"), dumps_records(est.records))
    rows = ["N,D_N,SE"] + [f"{int(n)},{d!r},{s!r}" for n, d, s in zip(est.N, est.D.tolist(), est.standard_error.tolist())]
    atomic_write_text(_out(cfg, "network.csv"), "\n".join(rows) + "\n")
    _write_json(_out(cfg, "network_summary.json"), est.summary())
    first = est.records[len(Ns) - 1]["seed"]
    write_graph(_out(cfg, "graph.txt"), build_shorted_graph(thin_by_energy(sampler(first), cfg["E_c"]), Ns[-1], cfg["r_c"]))
    plot_network(est, _out(cfg, "network.png"))
    return {"D_N": est.summary()["D_N"], "stabilized_heuristic": est.stabilized,
            "files": ["network_records.jsonl", "network.csv", "network_summary.json", "graph.txt", "network.png"]}, True


def run_percolation(cfg: RunConfig) -> tuple[dict, bool]:
    from .atomic import atomic_write_text
    from .percolation import (
        count_disjoint_lr_crossings,
        dumps_reports,
        ppp_points_sampler,
        supercriticality_experiment,
        thinned_field_sampler,
        write_field,
    )
    from .plotting import plot_field, plot_scaling
    from .rng import child_seed

    if cfg["process"] != "ppp":
        raise ConfigError("process: percolation runs on ppp media only")
    b = None if cfg["b"] == -1.0 else cfg["b"]
    law = _law(cfg)
    res = supercriticality_experiment(cfg["p"], cfg["rho_prime"], cfg["E_c"], law, cfg["N_grid"], cfg["n_samples"], cfg["seed"],
                                      rho=cfg["rho"], d=cfg["d"], b=b, calibration_samples=cfg["calibration_samples"],
                                      pc_estimate=None if cfg["pc_estimate"] == -1.0 else cfg["pc_estimate"])
    rows = res.rows
    header = ["N", "threshold", "n_samples", "n_bad", "bad_frequency", "ci_low", "ci_high", "mean_crossings"]
    lines = [",".join(header)] + [",".join(repr(r.as_dict()[k]) for k in header) for r in rows]
    atomic_write_text(_out(cfg, "scaling.csv"), "\n".join(lines) + "\n")
    # one example field at the largest N, with its crossings
    sc = res.scales
    N = rows[-1].N
    pts_sampler = ppp_points_sampler(cfg["rho"], law, cfg["d"], 2.0 * (sc.r2 * N + sc.r1))
    fld = thinned_field_sampler(pts_sampler, cfg["E_c"], sc.r1, sc.r2)(N, child_seed(cfg["seed"], "example"))
    rep = count_disjoint_lr_crossings(fld, res.b)
    write_field(_out(cfg, "field.rle"), fld)
    atomic_write_text(_out(cfg, "crossings.jsonl"), dumps_reports([rep]))
    summary = {"scales": sc.as_dict(), "b": res.b, "calibration_N": res.calibration_N, "monotone": res.monotone,
               "rows": [r.as_dict() for r in rows]}
    _write_json(_out(cfg, "percolation_summary.json"), summary)
    plot_scaling(rows, _out(cfg, "scaling.png"))
    plot_field(fld, _out(cfg, "field.png"), rep)
    return {"b": res.b, "bad_frequency": res.frequencies, "monotone": res.monotone,
            "files": ["scaling.csv", "field.rle", "crossings.jsonl", "percolation_summary.json", "scaling.png", "field.png"]}, True


def run_mott_cmd(cfg: RunConfig) -> tuple[dict, bool]:
    from .mott_experiment import Budgets, EnvConfig, make_schedule, report, run_mott

    sched = make_schedule(cfg["beta_grid"], cfg["alpha"], cfg["d"], cfg["c"], cfg["c_prime"])
    env = EnvConfig(cfg["process"], cfg["rho"], cfg["box"], cfg["palm_mode"] or None)
    budgets = Budgets(method=cfg["method"], n_env=cfg["n_env"], margin=cfg["margin"], r_max_min=cfg["r_max_min"],
                      r_max_scale=cfg["r_max_scale"], horizon=cfg["horizon"], n_traj=cfg["n_traj"],
                      jump_budget=cfg["jump_budget"], network_N=tuple(cfg["network_N"]),
                      network_samples=cfg["network_samples"], tol=cfg["tol"])
    res = run_mott(sched, env, budgets, cfg["seed"])
    files = [os.path.basename(p) for p in report(res, cfg["out"])]
    fit = res.fit
    return {"c2": None if fit is None else fit.c2, "r2": None if fit is None else fit.r2,
            "excluded_betas": res.excluded, "files": files}, not res.excluded


RUNNERS = {
    "gen-env": run_gen_env,
    "walk": run_walk,
    "network": run_network,
    "percolation": run_percolation,
    "mott": run_mott_cmd,
}


def run(cfg: RunConfig) -> int:
    if cfg.subcommand == "selftest":
        from .selftest import run_selftest

        results = run_selftest(echo=lambda s: print(s, file=sys.stderr))
        ok = all(r[1] for r in results)
        print(json.dumps({"subcommand": "selftest", "status": "ok" if ok else "fail",
                          "passed": sum(r[1] for r in results), "total": len(results)}, sort_keys=True))
        return EXIT_OK if ok else EXIT_ERROR
    os.makedirs(cfg["out"], exist_ok=True)
    _write_config(cfg)
    info, ok = RUNNERS[cfg.subcommand](cfg)
    status = "ok" if ok else "flagged"
    print(json.dumps(_clean({"subcommand": cfg.subcommand, "status": status, "out": cfg["out"], **info}), sort_keys=True))
    if cfg.strict and not ok:
        return EXIT_STRICT
    return EXIT_OK


def _keys_help() -> str:
    lines = ["configuration keys (key=value on the command line or in --config):"]
    for k, s in SCHEMA.items():
        default = "required" if s.required else f"default {s.default}"
        lines.append(f"  {k:<20} {s.kind:<6} {default}; {', '.join(s.commands)}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vrh", description="Variable-range hopping simulations.", epilog=_keys_help(),
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("settings", nargs="*", metavar="key=value")
    ap.add_argument("--config", help="key = value file; command-line settings override it")
    ap.add_argument("--strict", action="store_true", help="exit with status 3 if any estimate is flagged")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_intermixed_args(argv)
    try:
        text = None
        if args.config:
            with open(args.config) as fh:
                text = fh.read()
        cfg = parse_config(args.subcommand, args.settings, text, args.strict)
        return run(cfg)
    except ConfigError as err:
        print(f"vrh: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as err:
        print(f"vrh: error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

"""Figures for the CLI reports. Always rendered off-screen to PNG files."""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .atomic import atomic_write_bytes  # noqa: E402


def _save(fig, path):
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110, metadata={"Software": None})
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def plot_mott(result, path):
    rs = sorted(result.records, key=lambda r: r.beta)
    beta = np.array([r.beta for r in rs])
    D = np.array([r.D for r in rs])
    se = np.array([r.SE for r in rs])
    g = (result.schedule.alpha + 1) / (result.schedule.alpha + 1 + result.schedule.d)
    fig, (a0, a1) = plt.subplots(1, 2, figsize=(10, 4))
    x = beta**g
    a0.errorbar(x, np.log(D), yerr=se / D, fmt="o", label="ln D")
    if result.fit is not None:
        xx = np.linspace(x.min(), x.max(), 50)
        a0.plot(xx, result.fit.intercept + result.fit.slope * xx, "-", label=f"fit, R2={result.fit.r2:.4f}")
    a0.set_xlabel(f"beta^{g:.3g}")
    a0.set_ylabel("ln D")
    a0.legend()
    bound = np.array([r.bound for r in rs])
    a1.errorbar(beta, D, yerr=se, fmt="o", label="D estimate")
    pos = bound > 0
    if pos.any():
        a1.plot(beta[pos], bound[pos], "s", label="network lower bound")
    a1.set_xscale("log")
    a1.set_yscale("log")
    a1.set_xlabel("beta")
    a1.legend()
    fig.tight_layout()
    _save(fig, path)


def plot_msd(estimate, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    if estimate.values_t is not None:
        t = np.asarray(estimate.times)
        v = np.asarray(estimate.values_t)
        s = np.asarray(estimate.stderr_t)
        for a in range(v.shape[1]):
            ax.errorbar(t, v[:, a], yerr=s[:, a], fmt="o-", label=f"axis {a + 1}")
        ax.set_xscale("log")
        ax.set_xlabel("t")
        ax.legend()
    elif np.all(np.isfinite(estimate.value)):
        ax.errorbar(np.arange(len(estimate.value)) + 1, estimate.value, yerr=estimate.standard_error, fmt="o")
        ax.set_xlabel("axis")
    else:
        ax.text(0.5, 0.5, "no completed trajectories", ha="center", transform=ax.transAxes)
    ax.set_ylabel("D estimate")
    fig.tight_layout()
    _save(fig, path)


def plot_network(estimate, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.errorbar(estimate.N, estimate.D, yerr=estimate.standard_error, fmt="o-")
    ax.set_xlabel("N")
    ax.set_ylabel("D_N")
    fig.tight_layout()
    _save(fig, path)


def plot_scaling(rows, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    N = [r.N for r in rows]
    f = [r.bad_frequency for r in rows]
    lo = [r.bad_frequency - r.ci[0] for r in rows]
    hi = [r.ci[1] - r.bad_frequency for r in rows]
    ax.errorbar(N, f, yerr=[lo, hi], fmt="o-")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("N")
    ax.set_ylabel("bad-configuration frequency")
    fig.tight_layout()
    _save(fig, path)


def plot_field(fld, path, report=None):
    fig, ax = plt.subplots(figsize=(5, 5))
    s = fld.sites if fld.d == 2 else fld.sites[(Ellipsis,) + (fld.N,) * (fld.d - 2)]
    ax.imshow(s.T, origin="lower", cmap="Greys", extent=(-fld.N - 0.5, fld.N + 0.5, -fld.N - 0.5, fld.N + 0.5))
    if report is not None:
        for p in report.paths:
            p = np.asarray(p)
            if fld.d == 2 or np.all(p[:, 2:] == 0):
                ax.plot(p[:, 0], p[:, 1], "-", lw=1.5)
    ax.set_xlabel("j1")
    ax.set_ylabel("j2")
    fig.tight_layout()
    _save(fig, path)


def plot_points(pts, path):
    fig, ax = plt.subplots(figsize=(5, 5))
    sc = ax.scatter(pts.points[:, 0], pts.points[:, 1], c=pts.energies, s=4, cmap="coolwarm", vmin=-1, vmax=1)
    fig.colorbar(sc, ax=ax, label="energy")
    ax.set_aspect("equal")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    fig.tight_layout()
    _save(fig, path)

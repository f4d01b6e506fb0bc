"""Static figures for run reports (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def twin_distances(report, path) -> Path:
    """Distances of a twin run and the triangle bound."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    t = report.times
    ax.plot(t, report.w2_f_geps, "o-", ms=3, label="W2(f, g_eps)")
    ax.plot(t, report.w1_filtered, "s-", ms=3, label="W1(f~, g~_eps)")
    ax.plot(t, report.w1_geps_g, "^-", ms=3, label="W1(g~_eps, g)")
    ax.plot(t, report.w1_ftilde_g, "k-", lw=1.5, label="W1(f~, g)")
    ax.plot(t, report.triangle_rhs, "k:", lw=1, label="triangle bound")
    ax.set_xlabel("t")
    ax.set_ylabel("distance")
    ax.set_title(f"eps = {report.epsilon:g}, phi = {report.phi_target:g}")
    ax.legend(fontsize=8)
    return _save(fig, path)


def twin_envelopes(report, path) -> Path:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9.0, 3.8))
    t = report.times
    a1.semilogy(t, report.w2_f_geps, "o-", ms=3, label="measured W2")
    a1.semilogy(t, report.env_w2, "r--", label="envelope")
    a1.set_xlabel("t")
    a1.legend(fontsize=8)
    a2.plot(t, report.support, "o-", ms=3, label="measured V")
    if not np.all(np.isnan(report.env_support)):
        a2.plot(t, report.env_support, "r--", label="envelope")
        a2.set_yscale("log")
    a2.set_xlabel("t")
    a2.legend(fontsize=8)
    return _save(fig, path)


def density_modes(times, kinetic, fluid=None, path=None) -> Path:
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    ax.plot(times, kinetic, label="particles")
    if fluid is not None:
        ax.plot(times, fluid, "--", label="fluid")
    ax.set_xlabel("t")
    ax.set_ylabel("cos(2 pi x1) mode")
    ax.legend(fontsize=8)
    return _save(fig, path)


def diagnostics(series, path) -> Path:
    """Energies and support radius of a kinetic run."""
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9.0, 3.8))
    t = series.times
    a1.plot(t, series.kinetic_energy, label="kinetic")
    a1.plot(t, series.field_energy, label="field")
    a1.plot(t, series.total_energy, "k", label="total")
    a1.set_xlabel("t")
    a1.legend(fontsize=8)
    a2.plot(t, series.support_radius, label="V(t)")
    a2.plot(t, series.density_sup, label="|rho|_inf")
    a2.set_xlabel("t")
    a2.legend(fontsize=8)
    return _save(fig, path)


def sweep(rows, path) -> Path:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9.0, 3.8))
    eps = np.array([r.epsilon for r in rows])
    a1.loglog(eps, [r.sup_w1_ftilde_g for r in rows], "o-", label="sup W1(f~, g)")
    a1.loglog(eps, [r.sup_w2 for r in rows], "s-", label="sup W2(f, g_eps)")
    a1.set_xlabel("eps")
    a1.legend(fontsize=8)
    a2.loglog(eps, [r.frequency for r in rows], "o-", label="measured")
    a2.loglog(eps, 1 / eps, "k--", label="1/eps")
    a2.set_xlabel("eps")
    a2.set_ylabel("angular frequency")
    a2.legend(fontsize=8)
    return _save(fig, path)


def envelope_check(rows, path) -> Path:
    t = np.array([r["t"] for r in rows])
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9.0, 3.8))
    a1.semilogy(t, [r["measured_w2"] for r in rows], "o-", ms=3, label="measured W2")
    a1.semilogy(t, [r["env_w2"] for r in rows], "r--", label="envelope")
    a1.legend(fontsize=8)
    a1.set_xlabel("t")
    a2.plot(t, [r["measured_V"] for r in rows], "o-", ms=3, label="measured V")
    a2.plot(t, [r["env_V"] for r in rows], "r--", label="envelope")
    a2.set_yscale("log")
    a2.legend(fontsize=8)
    a2.set_xlabel("t")
    return _save(fig, path)

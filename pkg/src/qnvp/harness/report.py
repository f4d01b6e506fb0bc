"""CSV, summary and figure output for runs, twins, sweeps and envelope checks."""

from __future__ import annotations

import csv
import hashlib
import math
from pathlib import Path

import numpy as np

from ..bounds import a_of_t, cumulative_integral, stability_envelope, support_envelope_2d
from .config import ExperimentConfig

TWIN_COLUMNS = (
    "t", "w2_f_geps", "w1_f_geps", "w1_ftilde_geps", "w1_geps_g", "w1_ftilde_g", "triangle_rhs", "triangle_ok",
    "A", "intA", "env_w2", "env_w2_ok", "V", "env_V", "env_V_ok",
)
SWEEP_COLUMNS = (
    "epsilon", "phi", "phi_measured", "sup_w2", "sup_w1_filtered", "sup_w1_ftilde_g",
    "env_margin", "frequency", "passed",
)
ENVELOPE_COLUMNS = ("t", "A", "intA", "env_w2", "env_V", "measured_w2", "measured_V", "ok")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def _write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _header(cfg: ExperimentConfig, title: str, prov: dict | None = None) -> list[str]:
    lines = [title, "=" * len(title), ""]
    if prov:
        lines += [f"{k}: {v}" for k, v in prov.items()] + [""]
    lines += ["resolved configuration (entries marked 'default' were not set):", ""]
    lines += ["    " + ln for ln in cfg.to_text(annotate=True).splitlines()]
    return lines


def report_hash(directory) -> str:
    """SHA-256 over the CSV files of a report directory, in name order."""
    h = hashlib.sha256()
    for p in sorted(Path(directory).glob("*.csv")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# twin


def twin_rows(report):
    for i, t in enumerate(report.times):
        yield (
            t, report.w2_f_geps[i], report.w1_unfiltered[i], report.w1_filtered[i], report.w1_geps_g[i], report.w1_ftilde_g[i],
            report.triangle_rhs[i], bool(report.triangle_ok[i]), report.a_values[i], report.a_integral[i],
            report.env_w2[i], bool(report.env_w2_ok[i]), report.support[i], report.env_support[i],
            bool(report.env_support_ok[i]),
        )


def twin_summary(report, cfg: ExperimentConfig) -> str:
    lines = _header(cfg, "Twin run", report.provenance)
    lines += [
        "",
        f"epsilon                 {report.epsilon:g}",
        f"target W2(f0, g0)       {report.phi_target:.6g}",
        f"measured W2(f0, g0)     {report.phi_measured:.6g}",
        f"perturbation amplitude  {report.amplitude:.6g}",
        f"|div d+(0)|_2           {report.corrector_divergence:.3e}",
        f"c0, c_alpha             {report.constants['c0']:.6g}, {report.constants['c_alpha']:.6g}",
        f"sup W2(f, g_eps)        {report.sup('w2_f_geps'):.6g}",
        f"sup W1(f~, g~_eps)      {report.sup('w1_filtered'):.6g}",
        f"sup W1(g~_eps, g)       {report.sup('w1_geps_g'):.6g}",
        f"sup W1(f~, g)           {report.sup('w1_ftilde_g'):.6g}",
        f"density-mode frequency  {report.frequency:.6g} (1/eps = {1 / report.epsilon:.6g})",
        "",
        "checks:",
    ]
    for name, ok in report.checks.items():
        if name == "envelope_w2" and not report.envelope_applicable:
            lines.append(f"    {name:<18} n/a (zero initial distance; floor sup W2 = {report.sup('w2_f_geps'):.3e})")
        else:
            lines.append(f"    {name:<18} {'pass' if ok else 'FAIL'}")
    lines += ["", f"overall: {'PASS' if report.passed else 'FAIL'}", ""]
    return "\n".join(lines)


def write_twin_report(report, cfg: ExperimentConfig, directory, figures: bool | None = None) -> dict:
    """``twin.csv``, ``modes.csv``, ``summary.txt``, ``config.cfg`` and figures."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = {
        "twin": _write_csv(d / "twin.csv", TWIN_COLUMNS, twin_rows(report)),
        "modes": _write_csv(
            d / "modes.csv", ("t", "A", "mode_kinetic", "mode_fluid"),
            zip(report.step_times, report.step_a, report.mode_kinetic, report.mode_fluid),
        ),
    }
    (d / "config.cfg").write_text(cfg.to_text())
    (d / "summary.txt").write_text(twin_summary(report, cfg))
    out["summary"] = d / "summary.txt"
    out["config"] = d / "config.cfg"
    if cfg.get("output", "figures") if figures is None else figures:
        from .. import plotting

        out["fig_distances"] = plotting.twin_distances(report, d / "distances.png")
        out["fig_envelopes"] = plotting.twin_envelopes(report, d / "envelopes.png")
        out["fig_modes"] = plotting.density_modes(report.step_times, report.mode_kinetic, report.mode_fluid,
                                                  d / "modes.png")
    return out


# --------------------------------------------------------------------------
# sweep


def write_sweep_report(rows, reports, cfg: ExperimentConfig, directory, figures: bool | None = None) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    table = [
        (r.epsilon, r.phi, r.phi_measured, r.sup_w2, r.sup_w1_filtered, r.sup_w1_ftilde_g,
         r.env_margin, r.frequency, r.passed)
        for r in rows
    ]
    out = {"sweep": _write_csv(d / "sweep.csv", SWEEP_COLUMNS, table)}
    for r in reports:
        sub = d / f"eps_{r.epsilon:.6g}"
        sub.mkdir(exist_ok=True)
        _write_csv(sub / "twin.csv", TWIN_COLUMNS, twin_rows(r))
    lines = _header(cfg, "Epsilon sweep", reports[0].provenance if reports else None)
    lines += ["", f"phi schedule: {cfg.get('sweep', 'schedule')}", ""]
    lines.append(f"{'eps':>8} {'phi':>10} {'sup W1(f~,g)':>14} {'sup W2':>12} {'omega':>10} {'omega*eps':>10}  ok")
    for r in rows:
        lines.append(
            f"{r.epsilon:8.4g} {r.phi:10.4g} {r.sup_w1_ftilde_g:14.6g} {r.sup_w2:12.6g} "
            f"{r.frequency:10.5g} {r.frequency * r.epsilon:10.5g}  {'pass' if r.passed else 'FAIL'}"
        )
    if len(rows) >= 2:
        lines += ["", "frequency ratios (consecutive):"]
        for a, b in zip(rows, rows[1:]):
            lines.append(f"    omega({b.epsilon:g}) / omega({a.epsilon:g}) = {b.frequency / a.frequency:.5g}"
                         f"   (eps ratio {a.epsilon / b.epsilon:.5g})")
    lines += ["", f"overall: {'PASS' if all(r.passed for r in rows) else 'FAIL'}", ""]
    (d / "summary.txt").write_text("\n".join(lines))
    (d / "config.cfg").write_text(cfg.to_text())
    out["summary"] = d / "summary.txt"
    if cfg.get("output", "figures") if figures is None else figures:
        from .. import plotting

        out["fig_sweep"] = plotting.sweep(rows, d / "sweep.png")
    return out


# --------------------------------------------------------------------------
# single kinetic run


def write_run_report(kreport, cfg: ExperimentConfig, directory, figures: bool | None = None) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    series = kreport.diagnostics
    out = {"diagnostics": series.to_csv(d / "diagnostics.csv")}
    _write_csv(d / "modes.csv", ("t", "mode"), zip(kreport.mode_times, kreport.mode_signal))
    lines = _header(cfg, "Kinetic run", kreport.provenance)
    mass = np.asarray(series.mass)
    lines += [
        "",
        f"dt                      {kreport.dt:.6g}",
        f"records                 {len(series)}",
        f"mass drift (relative)   {float(np.max(np.abs(mass - mass[0])) / mass[0]):.3e}",
        f"energy drift (relative) {series.energy_drift():.3e}",
        f"density-mode frequency  {kreport.frequency:.6g} (1/eps = {1 / cfg.epsilon:.6g})",
        "",
        "checks:",
    ]
    lines += [f"    {name:<18} {'pass' if ok else 'FAIL'}" for name, ok in kreport.checks.items()]
    lines += ["", f"overall: {'PASS' if kreport.passed else 'FAIL'}", ""]
    (d / "summary.txt").write_text("\n".join(lines))
    (d / "config.cfg").write_text(cfg.to_text())
    out["summary"] = d / "summary.txt"
    if cfg.get("output", "figures") if figures is None else figures:
        from .. import plotting

        out["fig_diagnostics"] = plotting.diagnostics(series, d / "diagnostics.png")
    return out


# --------------------------------------------------------------------------
# envelope check from a diagnostics file


def read_diagnostics(path) -> dict:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        cols = {k: [] for k in reader.fieldnames}
        for row in reader:
            for k, v in row.items():
                cols[k].append(float(v) if v not in ("", None) else math.nan)
    return {k: np.array(v) for k, v in cols.items()}


def envelope_rows(diag: dict, cfg: ExperimentConfig) -> list[dict]:
    """Stability and support envelopes against a diagnostics series.

    Only ``|rho|_inf`` is available in a diagnostics file, so ``A`` uses it
    for both density norms and bounds ``|rho - 1|_inf`` by
    ``max(|rho|_inf - 1, 1)`` (densities are non-negative).
    """
    for col in ("t", "vmax", "rho_inf", "w2_ref"):
        if col not in diag:
            raise ValueError(f"diagnostics file lacks column {col!r}")
    p = cfg.params
    eps = p.epsilon
    t = diag["t"]
    rho = diag["rho_inf"]
    a = np.array([a_of_t(r, r, max(r - 1.0, 1.0), eps) for r in rho])
    ai = cumulative_integral(t, a)
    w2 = diag["w2_ref"]
    dim = cfg.get("grid", "dim")
    if np.isnan(w2[0]):
        env_w2 = np.full(len(t), math.nan)
    else:
        env_w2 = stability_envelope(float(w2[0]), t, a, p.c0, dim).envelope_w2
    v = diag["vmax"]
    if dim == 2:
        env_v = np.asarray(support_envelope_2d(float(v[0]), t / eps, eps, p.alpha, p.c_alpha), dtype=float)
    else:
        env_v = np.full(len(t), math.nan)
    # at zero initial distance the envelope vanishes and the measurement is
    # the discretisation floor, so the stability check does not apply
    applies = not math.isnan(w2[0]) and w2[0] > 0
    rows = []
    for i in range(len(t)):
        ok_w = not applies or math.isnan(w2[i]) or w2[i] <= env_w2[i] * (1 + 1e-12)
        ok_v = math.isnan(env_v[i]) or v[i] <= env_v[i] * (1 + 1e-12)
        rows.append({
            "t": t[i], "A": a[i], "intA": ai[i], "env_w2": env_w2[i], "env_V": env_v[i],
            "measured_w2": w2[i], "measured_V": v[i], "ok": bool(ok_w and ok_v),
        })
    return rows


def write_envelope_report(rows, cfg: ExperimentConfig, directory, figures: bool | None = None) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = {"envelope": _write_csv(d / "envelope.csv", ENVELOPE_COLUMNS, ([r[c] for c in ENVELOPE_COLUMNS] for r in rows))}
    if cfg.get("output", "figures") if figures is None else figures:
        from .. import plotting

        out["fig_envelope"] = plotting.envelope_check(rows, d / "envelope.png")
    return out


def envelope_summary(rows) -> str:
    bad = [r for r in rows if not r["ok"]]
    lines = [f"samples: {len(rows)}, violations: {len(bad)}"]
    w0 = rows[0]["measured_w2"] if rows else math.nan
    if math.isnan(w0):
        lines.append("stability envelope: n/a (no w2_ref column data)")
    elif w0 == 0:
        floor = max(r["measured_w2"] for r in rows)
        lines.append(f"stability envelope: n/a (zero initial distance; floor sup W2 = {floor:.3e})")
    for r in bad[:10]:
        lines.append(
            f"  t={r['t']:.6g}: W2 {r['measured_w2']:.6g} vs {r['env_w2']:.6g}, V {r['measured_V']:.6g} vs {r['env_V']:.6g}"
        )
    lines.append("PASS" if not bad else "FAIL")
    return "\n".join(lines)

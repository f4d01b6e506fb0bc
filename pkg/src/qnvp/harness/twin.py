"""Twin runs: a perturbed kinetic solution against its analytic fluid twin.

A twin run evolves three objects from the same analytic data on a common
time grid:

* ``f``: the perturbed data, pushed with the particle-in-cell solver;
* ``g_eps``: the epsilon-mode fluid family, sampled through Lagrangian
  markers;
* ``g``: the limit family, sampled the same way.

At every sample it records ``W2(f, g_eps)`` and ``W1(f, g_eps)``, the
filtered distances ``W1(f~, g~_eps)``, ``W1(g~_eps, g)`` and ``W1(f~, g)``,
the triangle check between them and the stability and support envelopes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import metadata

import numpy as np
from scipy import optimize

from .. import __version__
from ..bounds import (
    a_of_t,
    calibrate_c0,
    calibrate_c_alpha,
    cumulative_integral,
    stability_envelope,
    support_envelope_2d,
)
from ..core import GriddedField, ParticleEnsemble, deterministic_rng, fft
from ..correctors import advance_correctors, corrector_initial, filter_ensemble, divergence_norm
from ..multifluid import limit_step, marker_ensemble, multifluid_step, seed_markers, step as fluid_step
from ..transport import w_exact
from ..vlasov import DiagnosticsSeries, deposit, initial_state, push, run as kinetic_run, support_radius
from . import scenarios
from .config import ExperimentConfig, phi_schedule


# --------------------------------------------------------------------------
# helpers


def time_step(cfg: ExperimentConfig, ensemble: ParticleEnsemble, epsilon: float) -> tuple[float, int]:
    """``(dt, steps_per_sample)`` so that samples fall on steps.

    ``dt = auto`` takes the smaller of ``cfl * h / V`` and ``eps / 20``
    (about 125 steps per plasma period); an explicit ``dt`` is shrunk to the
    nearest divisor of the sample interval.
    """
    t_end = cfg.get("params", "final_time")
    samples = cfg.get("time", "samples")
    dt = cfg.get("time", "dt")
    if dt == "auto":
        h = 1.0 / cfg.get("grid", "cells")
        v = max(support_radius(ensemble), 1e-12)
        dt = min(cfg.get("time", "cfl") * h / v, epsilon / 20.0)
    interval = t_end / samples
    per = max(1, math.ceil(interval / dt - 1e-9))
    return interval / per, per


def density_mode(rho: np.ndarray, grid) -> float:
    """Real part of the ``cos(2 pi x1)`` coefficient (times 2) of a density."""
    idx = (0, scenarios.DENSITY_MODE) + (0,) * (grid.dim - 1)
    return float(2 * fft(rho[None], grid)[idx].real)


def measure_frequency(times, signal) -> float:
    """Angular frequency of the dominant oscillation of ``signal``.

    A sinusoid with a linear trend is fitted by variable projection; the
    search is seeded by zero crossings (or the periodogram peak when there
    are fewer than two) and refined on a bracket around the seed.

    Returns ``nan`` when the signal is constant.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(signal, dtype=float)
    if len(t) < 4:
        raise ValueError("need at least four samples")
    trend = np.polyval(np.polyfit(t, y, 1), t)
    r = y - trend
    # a constant or linear signal leaves only rounding noise
    if np.ptp(r) <= 1e-12 * float(np.max(np.abs(y), initial=0.0)):
        return math.nan
    s = np.sign(r)
    idx = np.nonzero(s[:-1] * s[1:] < 0)[0]
    if len(idx) >= 2:
        cross = t[idx] - r[idx] * (t[idx + 1] - t[idx]) / (r[idx + 1] - r[idx])
        w0 = math.pi / float(np.mean(np.diff(cross)))
    else:
        n = 16 * len(t)
        spec = np.abs(np.fft.rfft(r, n))
        freqs = 2 * math.pi * np.fft.rfftfreq(n, d=float(np.mean(np.diff(t))))
        w0 = float(freqs[1 + np.argmax(spec[1:])])

    def misfit(w):
        basis = np.stack([np.cos(w * t), np.sin(w * t), np.ones_like(t), t], axis=1)
        coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
        return float(np.sum((basis @ coef - y) ** 2))

    res = optimize.minimize_scalar(misfit, bounds=(0.7 * w0, 1.3 * w0), method="bounded",
                                   options={"xatol": 1e-10 * w0})
    return float(res.x)


def perturb(ensemble: ParticleEnsemble, cfg: ExperimentConfig, seed: int, target: float):
    """Displace a random fraction of velocities until ``W2`` hits ``target``.

    The displacement field is ``(cos(2 pi m x2 + a), sin(2 pi m x1 + b))``
    (cyclically extended in other dimensions) with random phases; its
    amplitude is solved for with Brent's method on the measured exact
    distance.

    Returns:
        ``(perturbed, amplitude, measured_w2)``.
    """
    pert = cfg.section("perturbation")
    if pert["kind"] == "none" or target == 0:
        return ensemble, 0.0, 0.0
    rng = deterministic_rng(seed, 11)
    n, d = ensemble.n, ensemble.dim
    k = max(1, int(round(pert["fraction"] * n)))
    idx = np.sort(rng.choice(n, size=k, replace=False))
    phase = 2 * np.pi * rng.random(d)
    x = ensemble.positions[idx]
    m = pert["mode"]
    field_ = np.empty((k, d))
    for a in range(d):
        b = (a + 1) % d
        trig = np.cos if a % 2 == 0 else np.sin
        field_[:, a] = trig(2 * np.pi * m * x[:, b] + phase[a])

    def make(amp):
        v = np.array(ensemble.velocities)
        v[idx] += amp * field_
        return ensemble.replace(velocities=v)

    def gap(amp):
        return w_exact(ensemble, make(amp), 2)[0] - target

    # the identity coupling gives W2 <= amp * |field|_{L2(w)}
    scale = math.sqrt(float(np.sum(ensemble.weights[idx] * np.sum(field_**2, axis=1))))
    lo = target / scale
    if gap(lo) >= 0:
        # the identity coupling is optimal (up to rounding) at the lower bound
        amp = lo
    else:
        hi = 2 * lo
        while gap(hi) < 0:
            lo, hi = hi, 2 * hi
            if hi > 1e6 * target / scale:
                raise RuntimeError("cannot reach the requested perturbation size")
        amp = optimize.brentq(gap, lo, hi, xtol=1e-14, rtol=1e-10)
    out = make(amp)
    measured = w_exact(ensemble, out, 2)[0]
    if abs(measured - target) > pert["tolerance"] * target:
        raise RuntimeError(f"perturbation W2 {measured:.4g} misses target {target:.4g}")
    return out, float(amp), float(measured)


def provenance(cfg: ExperimentConfig, seed: int) -> dict:
    out = {"config_sha256": cfg.digest(), "seed": int(seed), "qnvp": __version__, "numpy": np.__version__}
    for pkg in ("scipy", "pot"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "missing"
    return out


# --------------------------------------------------------------------------
# twin run


@dataclass
class TwinReport:
    """Sampled distances, envelopes and checks of one twin run."""

    times: np.ndarray
    w2_f_geps: np.ndarray
    w1_unfiltered: np.ndarray
    w1_filtered: np.ndarray
    w1_geps_g: np.ndarray
    w1_ftilde_g: np.ndarray
    a_values: np.ndarray
    a_integral: np.ndarray
    env_w2: np.ndarray
    support: np.ndarray
    env_support: np.ndarray
    step_times: np.ndarray
    step_a: np.ndarray
    mode_kinetic: np.ndarray
    mode_fluid: np.ndarray
    epsilon: float
    phi_target: float
    phi_measured: float
    amplitude: float
    constants: dict
    frequency: float
    corrector_divergence: float
    triangle_tol: float
    provenance: dict = field(default_factory=dict)

    @property
    def triangle_rhs(self) -> np.ndarray:
        return self.w1_filtered + self.w1_geps_g

    @property
    def triangle_ok(self) -> np.ndarray:
        return self.w1_ftilde_g <= self.triangle_rhs + self.triangle_tol

    @property
    def envelope_applicable(self) -> bool:
        """False at zero initial distance: the envelope is then identically
        zero and the measurement is the discretisation floor."""
        return bool(self.w2_f_geps[0] > 0)

    @property
    def env_w2_ok(self) -> np.ndarray:
        if not self.envelope_applicable:
            return np.ones(len(self.times), dtype=bool)
        return self.w2_f_geps <= self.env_w2 * (1 + 1e-12)

    @property
    def env_support_ok(self) -> np.ndarray:
        env = self.env_support
        return np.where(np.isnan(env), True, self.support <= env * (1 + 1e-12))

    @property
    def checks(self) -> dict:
        init = (self.phi_measured == 0.0) if self.phi_target == 0 else True
        return {
            "initial_w2": bool(init),
            "triangle": bool(np.all(self.triangle_ok)),
            "envelope_w2": bool(np.all(self.env_w2_ok)),
            "envelope_support": bool(np.all(self.env_support_ok)),
        }

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def sup(self, name: str) -> float:
        return float(np.max(getattr(self, name)))


def run_twin(cfg: ExperimentConfig, seed: int | None = None, progress=None) -> TwinReport:
    """Twin run of a fluid scenario.

    Raises:
        BlowupError: the fluid family loses positivity.
        CFLError: the particle step violates the CFL condition.
        TransportError: the ensembles exceed the exact solver's size cap.
    """
    seed = cfg.seed if seed is None else seed
    eps = cfg.epsilon
    params = cfg.params
    ppc = cfg.get("particles", "per_cell")
    fam = seed_markers(scenarios.fluid_family(cfg), ppc)
    lim = seed_markers(scenarios.limit_family(fam), ppc)
    grid = fam.grid
    g0 = marker_ensemble(fam)
    target = cfg.get("perturbation", "magnitude")
    f0, amp, measured = perturb(g0, cfg, seed, target)
    kin = initial_state(f0, grid, params)

    e0 = GriddedField(grid, fam.field())
    j0 = GriddedField(grid, fam.current())
    corr = corrector_initial(e0, j0, eps, cfg.get("correctors", "frequency"))
    div0 = divergence_norm(corr)

    dt, per = time_step(cfg, f0, eps)
    n_samples = cfg.get("time", "samples")

    def growth(kstate, family):
        rho1 = deposit(kstate.ensemble, grid).scalar
        rho2 = family.total_density()
        r1, r2 = float(np.max(np.abs(rho1))), float(np.max(np.abs(rho2)))
        return a_of_t(r2, max(r1, r2), float(np.max(np.abs(rho1 - 1.0))), eps), rho1

    rows = []
    step_t, step_a, mode_k, mode_f = [], [], [], []

    def sample(t):
        f = kin.ensemble
        ge = marker_ensemble(fam)
        gl = marker_ensemble(lim)
        w2 = w_exact(f, ge, 2)[0]
        ft = filter_ensemble(f, corr, t)
        gt = filter_ensemble(ge, corr, t)
        rows.append((t, w2, w_exact(ft, gt, 1)[0], w_exact(gt, gl, 1)[0], w_exact(ft, gl, 1)[0], support_radius(f),
                     w_exact(f, ge, 1)[0]))
        if progress:
            progress(t, rows[-1])

    def record_step(t):
        a, rho1 = growth(kin, fam)
        step_t.append(t)
        step_a.append(a)
        mode_k.append(density_mode(rho1, grid))
        mode_f.append(density_mode(fam.total_density(), grid))

    record_step(0.0)
    sample(0.0)
    for i in range(1, n_samples * per + 1):
        t = i * dt
        j_start = GriddedField(grid, lim.current())
        kin = replace(push(kin, dt), time=t)
        fam = multifluid_step(fam, dt)
        lim = limit_step(lim, dt)
        corr = advance_correctors(corr, j_start, dt, GriddedField(grid, lim.current()))
        record_step(t)
        if i % per == 0:
            sample(t)

    data = np.array(rows)
    step_t = np.array(step_t)
    step_a = np.array(step_a)
    idx = np.arange(0, len(step_t), per)
    env = stability_envelope(float(data[0, 1]), step_t, step_a, params.c0, grid.dim)
    times = data[:, 0]
    v = data[:, 5]
    if grid.dim == 2:
        env_v = np.asarray(support_envelope_2d(v[0], times / eps, eps, params.alpha, params.c_alpha), dtype=float)
    else:
        env_v = np.full(len(times), np.nan)
    mk = np.array(mode_k)
    try:
        freq = measure_frequency(step_t, mk)
    except ValueError:
        freq = math.nan
    return TwinReport(
        times=times,
        w2_f_geps=data[:, 1],
        w1_unfiltered=data[:, 6],
        w1_filtered=data[:, 2],
        w1_geps_g=data[:, 3],
        w1_ftilde_g=data[:, 4],
        a_values=step_a[idx],
        a_integral=env.a_integral[idx],
        env_w2=env.envelope_w2[idx],
        support=v,
        env_support=env_v,
        step_times=step_t,
        step_a=step_a,
        mode_kinetic=mk,
        mode_fluid=np.array(mode_f),
        epsilon=eps,
        phi_target=target,
        phi_measured=measured,
        amplitude=amp,
        constants={"c0": params.c0, "c_alpha": params.c_alpha, "alpha": params.alpha, "d": grid.dim},
        frequency=freq,
        corrector_divergence=div0,
        triangle_tol=cfg.get("checks", "triangle_tol"),
        provenance=provenance(cfg, seed),
    )


def calibrate(report: TwinReport, safety: float = 2.0) -> dict:
    """Smallest dominating ``c0`` and ``c_alpha`` of a reference run, times ``safety``.

    ``c0`` is floored at 1 before the safety factor so the result stays in
    the admissible range ``c0 > 1``.
    """
    c0 = calibrate_c0(report.times, report.a_values, report.w2_f_geps, report.constants["d"],
                      safety=safety, floor=1.0, a_integral=report.a_integral)
    # c0 = 1 itself is not admissible
    out = {"c0": max(c0, math.nextafter(1.0, 2.0))}
    if report.constants["d"] == 2:
        out["c_alpha"] = calibrate_c_alpha(report.times, report.support, report.epsilon,
                                           report.constants["alpha"], safety=safety)
    return out


def with_constants(cfg: ExperimentConfig, constants: dict) -> ExperimentConfig:
    upd = {"params__c0": float(constants["c0"])}
    if "c_alpha" in constants:
        upd["params__c_alpha"] = float(constants["c_alpha"])
    return cfg.with_values(**upd)


# --------------------------------------------------------------------------
# sweeps


@dataclass
class SweepRow:
    epsilon: float
    phi: float
    phi_measured: float
    sup_w2: float
    sup_w1_filtered: float
    sup_w1_ftilde_g: float
    env_margin: float
    frequency: float
    passed: bool


def _sweep_one(args):
    cfg, eps = args
    sub = cfg.with_values(params__epsilon=eps, perturbation__magnitude=phi_schedule(cfg, eps))
    return run_twin(sub)


def sweep_epsilon(cfg: ExperimentConfig, epsilons=None, threads: int = 1):
    """One twin run per epsilon; returns ``(rows, reports)`` ordered as given.

    ``phi`` follows ``sweep.schedule``. With ``threads > 1`` the runs are
    spread over worker processes; results do not depend on the count.
    """
    eps_list = list(cfg.get("sweep", "epsilons") if epsilons is None else epsilons)
    if not eps_list:
        raise ValueError("empty epsilon list")
    for e in eps_list:
        if not 0 < e <= 1:
            raise ValueError(f"epsilon must lie in (0, 1], got {e}")
    jobs = [(cfg, float(e)) for e in eps_list]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            reports = list(pool.map(_sweep_one, jobs))
    else:
        reports = [_sweep_one(j) for j in jobs]
    rows = [
        SweepRow(
            epsilon=r.epsilon,
            phi=r.phi_target,
            phi_measured=r.phi_measured,
            sup_w2=r.sup("w2_f_geps"),
            sup_w1_filtered=r.sup("w1_filtered"),
            sup_w1_ftilde_g=r.sup("w1_ftilde_g"),
            env_margin=float(np.min(r.env_w2 - r.w2_f_geps)),
            frequency=r.frequency,
            passed=r.passed,
        )
        for r in reports
    ]
    return rows, reports


# --------------------------------------------------------------------------
# single kinetic run


@dataclass
class KineticReport:
    diagnostics: DiagnosticsSeries
    snapshots: list
    mode_times: np.ndarray
    mode_signal: np.ndarray
    frequency: float
    dt: float
    checks: dict
    provenance: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def run_single(cfg: ExperimentConfig, seed: int | None = None, record_every: int | None = None,
               keep_snapshots: bool = False) -> KineticReport:
    """Particle-in-cell run of the configured scenario.

    Fluid scenarios carry their epsilon-family twin along and fill the
    ``w2_ref`` diagnostics column with ``W2`` to it.
    """
    seed = cfg.seed if seed is None else seed
    sc = scenarios.get(cfg.get("scenario", "name"))
    ens = scenarios.kinetic_ensemble(cfg, seed)
    grid = scenarios.grid_for(cfg)
    state = initial_state(ens, grid, cfg.params)
    dt, per = time_step(cfg, ens, cfg.epsilon)
    t_end = cfg.get("params", "final_time")
    every = per if record_every is None else record_every
    mode_t, mode_y = [], []
    ref = None
    if sc.fluid:
        holder = {"fam": seed_markers(scenarios.fluid_family(cfg), cfg.get("particles", "per_cell"))}

        def ref(s):
            fam = holder["fam"]
            while fam.time < s.time - 1e-9 * dt:
                fam = fluid_step(fam, dt)
            holder["fam"] = fam
            return w_exact(s.ensemble, marker_ensemble(fam), 2)[0]

    def on_record(s):
        mode_t.append(s.time)
        mode_y.append(density_mode(deposit(s.ensemble, grid).scalar, grid))

    series, snaps = kinetic_run(state, t_end, dt, every, reference=ref, on_record=on_record)
    mass = np.asarray(series.mass)
    checks = {
        "mass": bool(np.max(np.abs(mass - mass[0])) <= cfg.get("checks", "mass_tol") * abs(mass[0])),
        "energy": bool(series.energy_drift() <= cfg.get("checks", "energy_tol")),
    }
    try:
        freq = measure_frequency(mode_t, mode_y)
    except ValueError:
        freq = math.nan
    return KineticReport(series, snaps if keep_snapshots else [], np.array(mode_t), np.array(mode_y),
                         freq, dt, checks, provenance(cfg, seed))

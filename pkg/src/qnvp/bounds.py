"""Closed-form stability and support envelopes, and their numerical checks.

All velocity-support envelopes are expressed in the rescaled time frame in
which the torus has side ``1/eps``; callers working on the unit torus pass
``t / eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .core import GriddedField, ParticleEnsemble, evaluate_at, fft, periodic_distance
from .poisson import solve_potential


# --------------------------------------------------------------------------
# scalar building blocks


def a_of_t(rho2_inf: float, rho_max_inf: float, rho1_minus1_inf: float, epsilon: float) -> float:
    """Growth rate ``A = 1 + eps^-2 sqrt(|rho2| |rho_max|) + |rho1 - 1| / eps^2``."""
    if min(rho2_inf, rho_max_inf, rho1_minus1_inf) < 0:
        raise ValueError("density norms must be non-negative")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    return 1.0 + math.sqrt(rho2_inf) * math.sqrt(rho_max_inf) / epsilon**2 + rho1_minus1_inf / epsilon**2


def h_of_z(z: float, d: int) -> float:
    """``z log^2(16d / z)`` on ``[0, d]``, frozen at ``d log^2 16`` above."""
    if z < 0:
        raise ValueError("z must be non-negative")
    if z == 0:
        return 0.0
    if z >= d:
        return d * math.log(16.0) ** 2
    return z * math.log(16.0 * d / z) ** 2


def f_t(z, a_integral, c0: float, d: int, positive_exponent: bool = False):
    """Gronwall flow ``F_t[z] = 16d exp(log(z/16d) exp(-c0 int A))``.

    This is the exact solution of ``Q' = c0 A Q log(16d/Q)``. With
    ``positive_exponent=True`` the exponent ``exp(+c0 int A)`` is used
    instead, which does not solve that ODE (kept for comparison only).

    ``a_integral`` may be an array.
    """
    if z <= 0:
        raise ValueError("z must be positive")
    if z > 16 * d:
        raise ValueError(f"z must not exceed 16d = {16 * d}")
    ai = np.asarray(a_integral, dtype=float)
    if np.any(ai < 0):
        raise ValueError("a_integral must be non-negative")
    sign = 1.0 if positive_exponent else -1.0
    out = 16.0 * d * np.exp(math.log(z / (16.0 * d)) * np.exp(sign * c0 * ai))
    out = np.where(ai == 0, z, out)
    return float(out) if out.ndim == 0 else out


def crossing_integral(z: float, c0: float, d: int) -> float:
    """Value of ``int A`` at which ``F_t[z]`` reaches ``d`` (0 if ``z >= d``)."""
    if z >= d:
        return 0.0
    return math.log(math.log(z / (16.0 * d)) / math.log(1.0 / 16.0)) / c0


def cumulative_integral(times, values) -> np.ndarray:
    """Trapezoidal ``int_0^t`` at every sample (exact for piecewise-linear data)."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    out = np.zeros_like(t)
    if len(t) > 1:
        out[1:] = np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))
    return out


# --------------------------------------------------------------------------
# ODE oracle


def _rate(q: float, a: float, c0: float, d: int, log_regime: bool) -> float:
    if log_regime:
        return c0 * a * q * math.log(16.0 * d / q)
    return c0 * a * q


def _rk4(q, t, h, afun, c0, d, log_regime):
    k1 = _rate(q, afun(t), c0, d, log_regime)
    k2 = _rate(q + 0.5 * h * k1, afun(t + 0.5 * h), c0, d, log_regime)
    k3 = _rate(q + 0.5 * h * k2, afun(t + 0.5 * h), c0, d, log_regime)
    k4 = _rate(q + h * k3, afun(t + h), c0, d, log_regime)
    return q + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _integrate(q0, times, a_values, c0, d, substeps):
    times = [float(t) for t in times]
    avals = [float(a) for a in a_values]
    out = [q0]
    q = q0
    for i in range(len(times) - 1):
        t0, t1 = times[i], times[i + 1]
        a0, a1 = avals[i], avals[i + 1]
        span = t1 - t0

        def afun(t, t0=t0, a0=a0, a1=a1, span=span):
            return a0 + (a1 - a0) * (t - t0) / span

        h = span / substeps
        for j in range(substeps):
            t = t0 + j * h
            if q < d:
                q_new = _rk4(q, t, h, afun, c0, d, True)
                if q_new >= d:
                    # locate the switch inside the step, then finish it in the
                    # exponential regime
                    lo, hi = 0.0, 1.0
                    for _ in range(80):
                        mid = 0.5 * (lo + hi)
                        if _rk4(q, t, mid * h, afun, c0, d, True) < d:
                            lo = mid
                        else:
                            hi = mid
                    s = 0.5 * (lo + hi)
                    q_new = _rk4(float(d), t + s * h, (1 - s) * h, afun, c0, d, False)
                q = q_new
            else:
                q = _rk4(q, t, h, afun, c0, d, False)
        out.append(q)
    return np.array(out)


def gronwall_oracle(q0: float, times, a_values, c0: float, d: int, rtol: float = 1e-8, max_level: int = 14) -> np.ndarray:
    """Numerical ``Q(t)`` of the two-regime Gronwall ODE at the sample times.

    ``Q' = c0 A Q log(16d/Q)`` while ``Q < d`` and ``Q' = c0 A Q`` after,
    with ``Q`` continuous at the switch. ``A`` is linear between samples.
    RK4 substeps per interval are doubled until the samples change by less
    than ``rtol`` (relative).

    Raises:
        ValueError: ``q0 <= 0`` or mismatched series.
        RuntimeError: no convergence by ``2**max_level`` substeps.
    """
    if q0 <= 0:
        raise ValueError("q0 must be positive")
    if len(times) != len(a_values) or len(times) < 1:
        raise ValueError("times and a_values must have equal, non-zero length")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must increase strictly")
    prev = _integrate(q0, times, a_values, c0, d, 1)
    for level in range(1, max_level + 1):
        cur = _integrate(q0, times, a_values, c0, d, 2**level)
        if np.max(np.abs(cur - prev) / np.abs(cur)) < rtol:
            return cur
        prev = cur
    raise RuntimeError("Gronwall oracle did not converge under step refinement")


# --------------------------------------------------------------------------
# stability envelope


@dataclass
class BoundEnvelope:
    """Envelopes evaluated on a time grid."""

    times: np.ndarray
    a_values: np.ndarray
    a_integral: np.ndarray
    envelope_w2: np.ndarray
    q_oracle: np.ndarray | None = None
    support_envelope: np.ndarray | None = None
    constants: dict = field(default_factory=dict)


def envelope_squared(z: float, a_integral, c0: float, d: int, coarse: bool = False, horizon_integral=None, positive_exponent: bool = False):
    """Squared stability bound for initial squared distance ``z``.

    The default (tight) form follows the Gronwall flow until it reaches
    ``d`` and continues exponentially from there, which is continuous and
    equals ``z`` at time zero. ``coarse=True`` reproduces the three-branch
    statement literally: if ``F`` at the horizon exceeds ``d`` the whole
    envelope is ``d exp(c0 int A)``.
    """
    if z < 0:
        raise ValueError("initial distance must be non-negative")
    ai = np.asarray(a_integral, dtype=float)
    if np.any(ai < 0):
        raise ValueError("a_integral must be non-negative")
    if z == 0:
        out = np.zeros_like(ai)
    elif z > d:
        out = z * np.exp(c0 * ai)
    elif coarse:
        hi = float(np.max(ai)) if horizon_integral is None else float(horizon_integral)
        if f_t(z, hi, c0, d, positive_exponent) <= d:
            out = np.asarray(f_t(z, ai, c0, d, positive_exponent), dtype=float)
        else:
            out = d * np.exp(c0 * ai)
    else:
        if positive_exponent:
            raise ValueError("the positive exponent is only available with coarse=True")
        star = crossing_integral(z, c0, d)
        below = np.asarray(f_t(z, np.minimum(ai, star), c0, d), dtype=float)
        out = np.where(ai <= star, below, d * np.exp(c0 * (ai - star)))
    return float(out) if np.ndim(out) == 0 else out


def stability_envelope(
    w2_initial: float,
    times,
    a_values,
    c0: float,
    d: int,
    horizon: float | None = None,
    coarse: bool = False,
    with_oracle: bool = False,
) -> BoundEnvelope:
    """W2 stability envelope on the sample grid of ``A``."""
    if w2_initial < 0:
        raise ValueError("w2_initial must be non-negative")
    times = np.asarray(times, dtype=float)
    a_values = np.asarray(a_values, dtype=float)
    if np.any(a_values < 0):
        raise ValueError("A must be non-negative")
    ai = cumulative_integral(times, a_values)
    hint = None
    if horizon is not None:
        hint = float(np.interp(horizon, times, ai))
    env2 = envelope_squared(w2_initial**2, ai, c0, d, coarse=coarse, horizon_integral=hint)
    oracle = None
    if with_oracle and w2_initial > 0 and len(times) > 1:
        oracle = gronwall_oracle(w2_initial**2, times, a_values, c0, d)
    return BoundEnvelope(times, a_values, ai, np.sqrt(np.asarray(env2)), oracle, None, {"c0": c0, "d": d})


def calibrate_c0(
    times, a_values, w2_measured, d: int, safety: float = 2.0, floor: float = 1.0, a_integral=None
) -> float:
    """Smallest ``c0`` (at least ``floor``) whose envelope dominates, times ``safety``.

    The envelope is increasing in ``c0``, so the minimal value is found by
    bisection. ``a_integral`` (``int_0^t A`` at the measurement times)
    overrides the trapezoidal integral of ``a_values`` when the growth rate
    was sampled more finely than the distances.
    """
    w2 = np.asarray(w2_measured, dtype=float)
    ai = cumulative_integral(times, a_values) if a_integral is None else np.asarray(a_integral, dtype=float)
    z = float(w2[0]) ** 2

    def ok(c):
        env = np.sqrt(np.asarray(envelope_squared(z, ai, c, d)))
        return bool(np.all(env * (1 + 1e-12) >= w2))

    hi = max(floor, 1e-6)
    while not ok(hi):
        hi *= 2.0
        if hi > 1e12:
            raise RuntimeError("no c0 makes the envelope dominate the measurement")
    lo = 0.0
    if hi > floor:
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return max(hi, floor) * safety


# --------------------------------------------------------------------------
# velocity support


def support_envelope_2d(v0: float, t, epsilon: float, alpha: float, c_alpha: float):
    """``(c_alpha eps^-(1+alpha) t + (1+v0)^(1-alpha))^(1/(1-alpha)) - 1``.

    ``t`` is the rescaled time (``t / eps`` for unit-torus callers).
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    t = np.asarray(t, dtype=float)
    base = c_alpha * epsilon ** (-(alpha + 1)) * t + (1.0 + v0) ** (1 - alpha)
    out = base ** (1.0 / (1 - alpha)) - 1.0
    return float(out) if out.ndim == 0 else out


def calibrate_c_alpha(times, v_measured, epsilon: float, alpha: float, safety: float = 2.0) -> float:
    """Smallest ``c_alpha`` making the 2D envelope dominate, times ``safety``.

    ``times`` are unit-torus times; they are rescaled by ``1/eps`` here.
    """
    t = np.asarray(times, dtype=float) / epsilon
    v = np.asarray(v_measured, dtype=float)
    v0 = v[0]
    rate = epsilon ** (-(alpha + 1))
    need = 0.0
    for ti, vi in zip(t[1:], v[1:]):
        if ti > 0:
            need = max(need, ((1 + vi) ** (1 - alpha) - (1 + v0) ** (1 - alpha)) / (rate * ti))
    return max(need, 1e-12) * safety


@dataclass(frozen=True)
class FieldBound:
    point2: float
    intermediate: float


def field_bound_2d(
    eta_l2: float, eta_inf: float, epsilon: float, c2: float, support: float = 0.0, c: float = 1.0, big_c: float = math.e
) -> FieldBound:
    """Sup-norm bounds on the rescaled field.

    ``point2 = c2 (1 + eps^-1 log^{1/2}(eps^-1 (1 + V)))`` and the
    intermediate expression
    ``c (R (|eta|_inf + 1) + (|eta|_2 + eps^-1) log^{1/2}(big_c / (eps R)))``
    at ``R = 1 / (|eta|_inf + 1)``.
    """
    if min(eta_l2, eta_inf, support) < 0:
        raise ValueError("norms must be non-negative")
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    point2 = c2 * (1.0 + math.sqrt(math.log((1.0 + support) / epsilon)) / epsilon)
    r = 1.0 / (eta_inf + 1.0)
    inter = c * (r * (eta_inf + 1.0) + (eta_l2 + 1.0 / epsilon) * math.sqrt(math.log(big_c / (epsilon * r))))
    return FieldBound(point2, inter)


def batt_rein_exponent(beta) -> Fraction:
    """``2 beta / 3`` in exact arithmetic."""
    beta = Fraction(beta)
    if beta <= 0:
        raise ValueError("beta must be positive")
    return 2 * beta / 3


def batt_rein_chain(start=Fraction(4, 9), target=Fraction(1, 6), max_steps: int = 64) -> list[Fraction]:
    """Iterate the exponent map from ``start`` until the value drops below ``target``."""
    chain = [Fraction(start)]
    while chain[-1] >= target:
        if len(chain) > max_steps:
            raise RuntimeError("exponent chain did not reach the target")
        chain.append(batt_rein_exponent(chain[-1]))
    return chain


def support_envelope_3d(v0_coeff: float, epsilon: float, gamma: float, horizon: float, c1: float) -> float:
    """Three-dimensional support bound at rescaled horizon ``T/eps``."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if v0_coeff < 0 or epsilon <= 0 or c1 < 0:
        raise ValueError("inputs must be positive")
    base = v0_coeff * epsilon ** (-gamma)
    first = base + (
        -c1 * epsilon ** (-32.0 / 3)
        + math.sqrt(c1**2 * epsilon ** (-64.0 / 3) * horizon**4 + 4 * c1 * epsilon ** (-(32.0 / 3 + gamma)))
    )
    second = base + horizon ** (-3.5)
    return max(first, second)


@dataclass(frozen=True)
class PhiThreshold:
    """``value = exp(-exp(k eps^-s))``; ``log_log = log(-log value)``."""

    value: float
    exponent: float
    log_log: float


def phi_threshold(epsilon: float, d: int, gamma: float, beta: float = 3.0, k: float = 1.0) -> PhiThreshold:
    """Admissible initial perturbation size; underflows to 0 for small ``eps``."""
    if d == 2:
        if beta <= 2:
            raise ValueError("beta must exceed 2 in two dimensions")
        s = 2.0 * (1.0 + max(beta, gamma))
    elif d == 3:
        s = 2.0 + max(38.0, 3.0 * gamma)
    else:
        raise ValueError(f"d must be 2 or 3, got {d}")
    if not 0 < epsilon <= 1 or k <= 0:
        raise ValueError("need eps in (0, 1] and k > 0")
    log_log = math.log(k) - s * math.log(epsilon)
    inner = k * epsilon ** (-s)
    value = math.exp(-math.exp(inner)) if inner < 700 else 0.0
    return PhiThreshold(value, s, log_log)


# --------------------------------------------------------------------------
# field estimates


@dataclass(frozen=True)
class LoeperReport:
    """Outcome of :func:`loeper_field_check`.

    ``lhs``/``rhs`` are the two sides of the L2 estimate and ``ratio`` their
    quotient; ``log_lipschitz`` holds the smallest admissible constant for
    each density.
    """

    lhs: float
    rhs: float
    ratio: float
    w2: float
    log_lipschitz: tuple[float, float]

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1 + 1e-12) + 1e-15


def lattice_measure(rho: GriddedField, cells: int) -> ParticleEnsemble:
    """Coarse-grained density as point masses at coarse cell centres."""
    g = rho.grid
    d = g.dim
    factors = []
    for n in g.cells:
        if n % cells:
            raise ValueError(f"coarse cell count {cells} must divide {n}")
        factors.append(n // cells)
    vals = rho.scalar
    shape = []
    for f in factors:
        shape += [cells, f]
    block = vals.reshape(shape).mean(axis=tuple(range(1, 2 * d, 2)))
    h = 1.0 / cells
    # fine nodes sit at i*h_f; a block of f nodes is centred at (f-1)/2 * h_f
    offs = np.array([(f - 1) / 2 * (1.0 / n) for f, n in zip(factors, g.cells)])
    idx = np.stack(np.meshgrid(*[np.arange(cells)] * d, indexing="ij"), axis=-1).reshape(-1, d)
    pos = idx * h + offs
    w = block.ravel() * h**d
    return ParticleEnsemble(pos, np.zeros_like(pos), w)


def loeper_field_check(
    rho1: GriddedField,
    rho2: GriddedField,
    epsilon: float,
    sample_pairs: int = 400,
    seed: int = 0,
    transport_cells: int = 32,
) -> LoeperReport:
    """Check the L2 field-difference estimate and the log-Lipschitz bound."""
    from .transport import w_exact

    for r in (rho1, rho2):
        if abs(float(r.scalar.mean()) - 1.0) > 1e-9:
            raise ValueError("densities must have unit mean")
        if np.min(r.scalar) < -1e-12:
            raise ValueError("densities must be non-negative")
    g = rho1.grid
    s1 = solve_potential(rho1, epsilon)
    s2 = solve_potential(rho2, epsilon)
    # eps^2 grad Psi = -eps^2 E
    diff = epsilon**2 * (s1.field.values - s2.field.values)
    lhs = float(np.sqrt(np.mean(np.sum(diff**2, axis=0))))
    if np.array_equal(rho1.scalar, rho2.scalar):
        w2 = 0.0
    else:
        cells = min(transport_cells, min(g.cells))
        w2, _ = w_exact(lattice_measure(rho1, cells), lattice_measure(rho2, cells), 2, cap=None)
    rhs = math.sqrt(max(rho1.sup_norm(), rho2.sup_norm())) * w2
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)

    rng = np.random.default_rng(seed)
    d = g.dim
    x = rng.random((sample_pairs, d))
    scales = 10.0 ** rng.uniform(-3, np.log10(0.5), sample_pairs)
    dirs = rng.normal(size=(sample_pairs, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    y = (x + scales[:, None] * dirs) % 1.0
    dist = np.asarray(periodic_distance(x, y))
    keep = dist > 0
    consts = []
    for sol, rho in ((s1, rho1), (s2, rho2)):
        dev = float(np.max(np.abs(rho.scalar - 1.0)))
        if dev == 0:
            consts.append(0.0)
            continue
        coeffs = fft(epsilon**2 * sol.field.values, g)
        gx = evaluate_at(coeffs, g, x).real.T
        gy = evaluate_at(coeffs, g, y).real.T
        num = np.linalg.norm(gx - gy, axis=1)[keep]
        den = dist[keep] * np.log(4 * math.sqrt(d) / dist[keep]) * dev
        consts.append(float(np.max(num / den)))
    return LoeperReport(lhs, rhs, ratio, float(w2), (consts[0], consts[1]))

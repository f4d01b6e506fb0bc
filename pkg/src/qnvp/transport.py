"""Wasserstein distances between phase-space measures on ``T^d x R^d``.

The ground metric is ``sqrt(|x - y|_T^2 + |v - w|^2)`` with the periodic
distance in ``x``. Exact distances use a linear assignment for equal-weight
ensembles of equal size and a network simplex otherwise; a log-stabilised
Sinkhorn iteration covers larger inputs, and exhaustive enumeration serves
as a small-size oracle.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from itertools import permutations
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .core import GriddedField, ParticleEnsemble, interpolate, periodic_displacement

DEFAULT_SIZE_CAP = 4096


class TransportError(RuntimeError):
    pass


class ConvergenceError(TransportError):
    pass


def ground_distance(a, b) -> float:
    """Distance between phase points ``a = (x, v)`` and ``b = (y, w)``."""
    xa, va = (np.atleast_1d(np.asarray(c, dtype=float)) for c in a)
    xb, vb = (np.atleast_1d(np.asarray(c, dtype=float)) for c in b)
    dx = periodic_displacement(xa, xb)
    return float(np.sqrt(np.sum(dx**2) + np.sum((va - vb) ** 2)))


def squared_distance_matrix(mu: ParticleEnsemble, nu: ParticleEnsemble, rows=None) -> np.ndarray:
    """Pairwise squared ground distances, optionally for a slice of rows."""
    x, v = mu.positions, mu.velocities
    if rows is not None:
        x, v = x[rows], v[rows]
    out = np.zeros((len(x), nu.n))
    for a in range(mu.dim):
        dx = np.abs(x[:, a, None] - nu.positions[None, :, a])
        dx = np.minimum(dx, 1.0 - dx)
        out += dx * dx
        dv = v[:, a, None] - nu.velocities[None, :, a]
        out += dv * dv
    return out


def cost_matrix(mu: ParticleEnsemble, nu: ParticleEnsemble, p: int) -> np.ndarray:
    _check_p(p)
    out = np.empty((mu.n, nu.n))
    step = max(1, 2**22 // max(nu.n, 1))
    for start in range(0, mu.n, step):
        rows = slice(start, min(start + step, mu.n))
        out[rows] = squared_distance_matrix(mu, nu, rows)
    return out if p == 2 else np.sqrt(out, out=out)


def _check_p(p: int) -> None:
    if p not in (1, 2):
        raise ValueError(f"p must be 1 or 2, got {p}")


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse coupling between two ensembles.

    ``rows[i], cols[i], mass[i]`` are the triplets of the coupling matrix.
    ``cost`` is the achieved ``sum gamma_ij d_ij^p``.
    """

    source: ParticleEnsemble
    target: ParticleEnsemble
    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    cost: float
    p: int

    @property
    def distance(self) -> float:
        return max(self.cost, 0.0) ** (1.0 / self.p)

    def marginals(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.bincount(self.rows, weights=self.mass, minlength=self.source.n)
        b = np.bincount(self.cols, weights=self.mass, minlength=self.target.n)
        return a, b

    def marginal_error(self) -> float:
        a, b = self.marginals()
        return float(max(np.max(np.abs(a - self.source.weights)), np.max(np.abs(b - self.target.weights))))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("i", "j", "mass"))
            for i, j, m in zip(self.rows, self.cols, self.mass):
                w.writerow((int(i), int(j), repr(float(m))))
        return path


def _check_pair(mu: ParticleEnsemble, nu: ParticleEnsemble, cap: int | None) -> None:
    if mu.dim != nu.dim:
        raise ValueError("ensembles live in different dimensions")
    if abs(mu.mass - nu.mass) > 1e-9 * max(1.0, mu.mass):
        raise TransportError(f"mass mismatch: {mu.mass!r} vs {nu.mass!r}")
    if cap is not None and mu.n + nu.n > cap:
        raise TransportError(f"combined size {mu.n + nu.n} exceeds the cap {cap}")


def _emd(a, b, cost):
    os.environ.setdefault("POT_BACKEND_DISABLE_PYTORCH", "1")
    os.environ.setdefault("POT_BACKEND_DISABLE_JAX", "1")
    os.environ.setdefault("POT_BACKEND_DISABLE_TENSORFLOW", "1")
    os.environ.setdefault("POT_BACKEND_DISABLE_CUPY", "1")
    import ot

    gamma, log = ot.emd(a, b, cost, numItermax=10_000_000, log=True)
    if log.get("warning"):
        raise ConvergenceError(f"network simplex: {log['warning']}")
    return gamma


def w_exact(mu: ParticleEnsemble, nu: ParticleEnsemble, p: int = 2, cap: int | None = DEFAULT_SIZE_CAP):
    """Exact ``W_p`` and an optimal plan.

    Returns:
        ``(distance, plan)``.

    Raises:
        TransportError: mass mismatch above 1e-9 or size cap exceeded.
    """
    _check_p(p)
    _check_pair(mu, nu, cap)
    cost = cost_matrix(mu, nu, p)
    if mu.n == nu.n and mu.equal_weights and nu.equal_weights:
        rows, cols = linear_sum_assignment(cost)
        mass = np.full(mu.n, mu.mass / mu.n)
        total = float(np.sum(cost[rows, cols]) * (mu.mass / mu.n))
    else:
        a = np.asarray(mu.weights, dtype=float)
        b = np.asarray(nu.weights, dtype=float) * (a.sum() / nu.weights.sum())
        gamma = _emd(a, b, cost)
        rows, cols = np.nonzero(gamma > 0)
        mass = gamma[rows, cols]
        total = float(np.sum(mass * cost[rows, cols]))
    plan = TransportPlan(mu, nu, rows, cols, mass, total, p)
    return plan.distance, plan


def brute_force_w(mu: ParticleEnsemble, nu: ParticleEnsemble, p: int = 2) -> float:
    """Minimum over all ``n!`` assignments (equal weights, ``n <= 8``)."""
    _check_p(p)
    if mu.n != nu.n or not (mu.equal_weights and nu.equal_weights):
        raise ValueError("brute force needs equal counts and equal weights")
    if mu.n > 8:
        raise ValueError(f"brute force limited to n <= 8, got {mu.n}")
    cost = cost_matrix(mu, nu, p)
    idx = np.arange(mu.n)
    best = min(float(np.sum(cost[idx, list(perm)])) for perm in permutations(range(mu.n)))
    return (best * mu.mass / mu.n) ** (1.0 / p)


_TRUNCATE = 40.0
_DENSE_LIMIT = 2**20


def _logsumexp_inplace(s, axis):
    """Row or column log-sum-exp; overwrites ``s``."""
    top = s.max(axis=axis, keepdims=True)
    s -= top
    np.exp(s, out=s)
    return np.log(s.sum(axis=axis, dtype=np.float64)) + top.ravel().astype(np.float64)


class _Kernels:
    """Cost matrix and Gibbs kernels for the Sinkhorn iteration.

    Large problems keep the cost in single precision, which halves the
    memory traffic of every pass; the final cost of the plan is summed in
    double precision from freshly computed distances.
    """

    def __init__(self, mu, nu, p):
        self.mu, self.nu, self.p = mu, nu, p
        self.small = mu.n * nu.n <= _DENSE_LIMIT
        self.dtype = np.float64 if self.small else np.float32
        self.cost = np.empty((mu.n, nu.n), self.dtype)
        self.step = max(1, 2**22 // nu.n)
        x = mu.positions.astype(self.dtype)
        v = mu.velocities.astype(self.dtype)
        y = nu.positions.astype(self.dtype)
        w = nu.velocities.astype(self.dtype)
        tmp = np.empty((self.step, nu.n), self.dtype)
        for rows in self._blocks():
            out = self.cost[rows]
            t = tmp[: out.shape[0]]
            out[...] = 0
            for a in range(mu.dim):
                np.subtract.outer(x[rows, a], y[:, a], out=t)
                np.abs(t, out=t)
                np.minimum(t, 1 - t, out=t)
                t *= t
                out += t
                np.subtract.outer(v[rows, a], w[:, a], out=t)
                t *= t
                out += t
            if p == 1:
                np.sqrt(out, out=out)

    def _blocks(self):
        for start in range(0, self.mu.n, self.step):
            yield slice(start, min(start + self.step, self.mu.n))

    def exponent(self, f, g, r, out=None):
        """``(f_i + g_j - C_ij) / r`` in the working precision."""
        out = np.add.outer(f.astype(self.dtype), g.astype(self.dtype), out=out)
        out -= self.cost
        out *= self.dtype(1.0 / r)
        return out

    def refresh(self, f, g, r, loga, logb):
        """One exact log-domain sweep, so no kernel row or column can vanish."""
        s = self.exponent(np.zeros_like(f), g, r)
        f = r * (loga - _logsumexp_inplace(s, 1))
        s = self.exponent(f, np.zeros_like(g), r, out=s)
        g = r * (logb - _logsumexp_inplace(s, 0))
        return f, g

    def kernel(self, f, g, r):
        k = self.exponent(f, g, r)
        np.exp(k, out=k)
        if self.small:
            return k
        cut = self.dtype(np.exp(-_TRUNCATE))
        mask = k > cut
        if np.count_nonzero(mask) > 0.3 * k.size:
            return k
        # row-major flat indices are already in CSR order
        idx = np.flatnonzero(mask)
        m = k.shape[1]
        ptr = np.searchsorted(idx, np.arange(k.shape[0] + 1) * m)
        data = k.ravel()[idx].astype(np.float64)
        return sparse.csr_matrix((data, idx % m, ptr), shape=k.shape)

    def plan_cost(self, K, u, v):
        """``sum u_i K_ij v_j C_ij`` for a dense or sparse kernel."""
        if sparse.issparse(K):
            coo = K.tocoo()
            c = self.cost[coo.row, coo.col].astype(np.float64)
            return float(np.sum(u[coo.row] * coo.data * v[coo.col] * c))
        total = 0.0
        for rows in self._blocks():
            blk = K[rows].astype(np.float64) * self.cost[rows]
            total += float(u[rows] @ (blk @ v))
        return total


def _newton_polish(g, cost, r, a, b, tol, steps=100):
    """Damped Newton ascent on the dual in the column potential.

    With the row potential eliminated the dual is concave in ``g``; its
    gradient is ``b`` minus the column marginal, so an Armijo search on the
    dual value always makes progress where the residual alone may not.
    """
    def dual(g):
        s = (g[None, :] - cost) / r
        lse = logsumexp(s, axis=1)
        return float(b @ g - r * (a @ lse)), a[:, None] * np.exp(s - lse[:, None])

    val, plan = dual(g)
    for _ in range(steps):
        col = plan.sum(axis=0)
        res = b - col
        if np.max(np.abs(res)) < tol:
            break
        jac = (np.diag(col) - (plan / a[:, None]).T @ plan) / r
        # constants span the null space of the Hessian
        jac += np.outer(b, b) / r
        step = np.linalg.lstsq(jac, res, rcond=1e-14)[0]
        slope = float(res @ step)
        t = 1.0
        while t >= 1e-10:
            trial_val, trial = dual(g + t * step)
            if trial_val >= val + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        g = g + t * step
        val, plan = trial_val, trial
    s = (g[None, :] - cost) / r
    f = r * (np.log(a) - logsumexp(s, axis=1))
    return f, g


def _sweeps(ker, f, g, r, a, b, budget, target):
    """Scaling iterations at fixed ``r``.

    Returns the potentials with the scalings absorbed, together with the
    last kernel and scalings, which represent the same plan.
    """
    K = ker.kernel(f, g, r)
    u = np.ones(len(a))
    v = np.ones(len(b))
    err = np.inf

    def lowp(K):
        return isinstance(K, np.ndarray) and K.dtype == np.float32

    def col_error():
        ku = (K.T @ u.astype(np.float32)).astype(np.float64) if lowp(K) else K.T @ u
        return float(np.max(np.abs(v * ku - b)))

    # columns are exact only after the first v update
    fresh = False
    for _ in range(budget):
        kv = (K @ v.astype(np.float32)).astype(np.float64) if lowp(K) else K @ v
        # row marginal of the current plan, before the u update
        err = float(np.max(np.abs(u * kv - a)))
        if not fresh:
            err = max(err, col_error())
        if err < target:
            break
        if np.any(kv <= 0):
            raise ConvergenceError("kernel row vanished; increase reg")
        u = a / kv
        ku = (K.T @ u.astype(np.float32)).astype(np.float64) if lowp(K) else K.T @ u
        if np.any(ku <= 0):
            raise ConvergenceError("kernel column vanished; increase reg")
        v = b / ku
        fresh = True
        if max(np.max(np.abs(np.log(u))), np.max(np.abs(np.log(v)))) > 30:
            f = f + r * np.log(u)
            g = g + r * np.log(v)
            K = ker.kernel(f, g, r)
            u = np.ones(len(a))
            v = np.ones(len(b))
    return f + r * np.log(u), g + r * np.log(v), K, u, v, err


def w_sinkhorn(
    mu: ParticleEnsemble,
    nu: ParticleEnsemble,
    p: int = 2,
    reg: float | None = None,
    iters: int = 20_000,
    tol: float = 1e-6,
) -> float:
    """Entropic approximation of ``W_p``.

    The entropic plan at regularisation ``reg`` is computed by an
    eps-scaling Sinkhorn iteration. Every stage starts with an exact
    log-domain sweep, and scalings are periodically absorbed into the
    potentials, so the kernel neither under- nor overflows. For large inputs
    the kernel is truncated to a sparse matrix once most entries are
    negligible. Small problems whose final stage stalls are finished by
    Newton steps on the dual. The reported value is the transport cost of
    the entropic plan raised to ``1/p``, without debiasing; since that plan
    is feasible the value approaches the exact distance from above as
    ``reg`` decreases.

    Args:
        reg: absolute regularisation; default ``3e-4`` times the mean cost.
        iters: maximum number of Sinkhorn sweeps at the final ``reg``.
        tol: required sup-norm marginal error, for the plan normalised to
            unit mass.

    Raises:
        ConvergenceError: marginal error above ``tol`` after ``iters``.
    """
    _check_p(p)
    _check_pair(mu, nu, None)
    a = np.asarray(mu.weights) / mu.mass
    b = np.asarray(nu.weights) / nu.mass
    ker = _Kernels(mu, nu, p)
    scale = float(ker.cost.mean(dtype=np.float64))
    if scale == 0.0:
        return 0.0
    if reg is None:
        reg = 3e-4 * scale
    if reg <= 0:
        raise ValueError("reg must be positive")
    schedule = []
    r = scale
    while r > reg:
        schedule.append(r)
        r *= 0.25
    schedule.append(reg)

    loga, logb = np.log(a), np.log(b)
    f = np.zeros(mu.n)
    g = np.zeros(nu.n)
    for r in schedule[:-1]:
        f, g = ker.refresh(f, g, r, loga, logb)
        f, g, *_ = _sweeps(ker, f, g, r, a, b, 10, 10 * tol)
    r = schedule[-1]
    f, g = ker.refresh(f, g, r, loga, logb)
    first = min(iters, 2000) if ker.small else iters
    f, g, K, u, v, err = _sweeps(ker, f, g, r, a, b, first, tol)
    if err >= tol and ker.small:
        f, g = _newton_polish(g, ker.cost, r, a, b, tol)
        f, g, K, u, v, err = _sweeps(ker, f, g, r, a, b, max(iters - first, 1), tol)
    if err >= tol:
        raise ConvergenceError(f"Sinkhorn marginal error {err:.3g} after {iters} iterations")
    return (ker.plan_cost(K, u, v) * mu.mass) ** (1.0 / p)


def translate_velocities(mu: ParticleEnsemble, shift: GriddedField) -> ParticleEnsemble:
    """``v -> v + shift(x)`` with multilinear interpolation of ``shift``."""
    if shift.components != mu.dim or shift.grid.dim != mu.dim:
        raise ValueError("shift must be a vector field in the ensemble's dimension")
    return mu.replace(velocities=mu.velocities + interpolate(shift.values, shift.grid, mu.positions))


def interpolant_lipschitz(shift: GriddedField) -> float:
    """Lipschitz constant of the multilinear interpolant of ``shift``.

    Inside a cell the Jacobian is multilinear in the position, so its
    operator norm is maximal at a corner; the corner Jacobian uses the
    one-sided differences along the cell edges leaving that corner.
    """
    g = shift.grid
    d = g.dim
    axes = tuple(range(1, d + 1))

    def at(offset):
        # values at node i + offset, indexed by i
        return np.roll(shift.values, tuple(-o for o in offset), axis=axes)

    best = 0.0
    for corner in np.ndindex(*(2,) * d):
        jac = np.empty((d, d) + g.shape)
        for a in range(d):
            hi, lo = list(corner), list(corner)
            hi[a], lo[a] = 1, 0
            jac[:, a] = (at(hi) - at(lo)) / g.spacing[a]
        mats = np.moveaxis(jac.reshape(d, d, -1), -1, 0)
        best = max(best, float(np.max(np.linalg.norm(mats, ord=2, axis=(1, 2)))))
    return best

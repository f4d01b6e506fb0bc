"""Multi-fluid pressureless Euler-Poisson system and its incompressible limit.

A kinetic density is represented as a superposition of monokinetic fluids
``(rho_theta, v_theta)`` indexed by a finite quadrature of the measure
``mu(d theta) = c_d d theta / (1 + |theta|^{d+1})``. Space derivatives are
spectral with 2/3-rule dealiasing of the nonlinear terms; time stepping is
classical RK4.

A family can carry Lagrangian markers: points advected by each fluid's
velocity and carrying fixed mass, so that the superposition measure at
time ``t`` can be sampled without re-gridding.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from itertools import product
from pathlib import Path

import numpy as np
from scipy import integrate

from .core import GriddedField, ParticleEnsemble, SpectralField, TorusGrid, evaluate_at, fft, ifft, wrap
from .poisson import inverse_laplacian, solve_potential, spectral_divergence, spectral_gradient
from . import pss


class BlowupError(RuntimeError):
    """A density went negative: the pressureless solution is losing smoothness."""


class ConstraintError(RuntimeError):
    """The limit-system constraint ``sum_theta w rho = 1`` drifted."""


@lru_cache(maxsize=None)
def normalizing_constant(dim: int) -> float:
    """``c_d`` such that ``c_d / (1 + |theta|^{d+1})`` has unit mass on ``R^d``."""
    if dim not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {dim}")
    sphere = {1: 2.0, 2: 2 * np.pi, 3: 4 * np.pi}[dim]
    head, err1 = integrate.quad(lambda r: r ** (dim - 1) / (1 + r ** (dim + 1)), 0, 1, epsabs=0, epsrel=1e-12)
    # substitute r = 1/s on [1, inf): r^{d-1}/(1+r^{d+1}) dr = 1/(s^{d+1}+1) ds
    tail, err2 = integrate.quad(lambda s: 1.0 / (1 + s ** (dim + 1)), 0, 1, epsabs=0, epsrel=1e-12)
    total = head + tail
    if (err1 + err2) > 1e-8 * total:
        raise RuntimeError("quadrature for c_d did not converge")
    return 1.0 / (sphere * total)


def mu_density(theta: np.ndarray) -> np.ndarray:
    theta = np.atleast_2d(theta)
    d = theta.shape[1]
    r = np.linalg.norm(theta, axis=1)
    return normalizing_constant(d) / (1 + r ** (d + 1))


def discretize_mu(dim: int, n_nodes: int, cutoff: float, max_tail: float = 1e-4):
    """Tensor Gauss-Legendre quadrature of ``mu`` on ``[-cutoff, cutoff]^dim``.

    Returns ``(nodes, weights)`` with weights renormalised to sum to one.
    ``n_nodes == 1`` gives the monokinetic family ``theta = 0``.

    Raises:
        ValueError: non-positive cutoff, or discarded mass above ``max_tail``.
    """
    if cutoff <= 0:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    if n_nodes < 1:
        raise ValueError("need at least one node")
    if n_nodes == 1:
        return np.zeros((1, dim)), np.ones(1)
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    x, w = x * cutoff, w * cutoff
    nodes = np.array(list(product(x, repeat=dim)))
    wts = np.prod(np.array(list(product(w, repeat=dim))), axis=1) * mu_density(nodes)
    tail = 1.0 - wts.sum()
    if tail > max_tail:
        raise ValueError(f"quadrature discards mu-mass {tail:.3g} > {max_tail:g}; widen the cutoff")
    return nodes, wts / wts.sum()


@dataclass(frozen=True, eq=False)
class FluidFamily:
    """θ-quadrature of a multi-fluid state.

    Attributes:
        grid: spatial grid.
        theta_nodes: ``(m, d)`` fluid labels.
        theta_weights: ``(m,)`` quadrature weights.
        rho: ``(m, *shape)`` densities (real space).
        vel: ``(m, d, *shape)`` velocities (real space).
        epsilon: scaling of the Euler-Poisson system, ``None`` for the
            incompressible limit.
        time: current time.
        markers: optional ``(m, n, d)`` Lagrangian marker positions.
        marker_weights: ``(m, n)`` masses carried by the markers.
    """

    grid: TorusGrid
    theta_nodes: np.ndarray
    theta_weights: np.ndarray
    rho: np.ndarray
    vel: np.ndarray
    epsilon: float | None
    time: float = 0.0
    markers: np.ndarray | None = None
    marker_weights: np.ndarray | None = None

    def __post_init__(self):
        m = len(self.theta_weights)
        d = self.grid.dim
        if self.rho.shape != (m,) + self.grid.shape:
            raise ValueError(f"rho has shape {self.rho.shape}, expected {(m,) + self.grid.shape}")
        if self.vel.shape != (m, d) + self.grid.shape:
            raise ValueError(f"vel has shape {self.vel.shape}, expected {(m, d) + self.grid.shape}")
        if np.any(self.theta_weights < 0):
            raise ValueError("theta weights must be non-negative")
        if abs(self.theta_weights.sum() - 1.0) > 1e-6:
            raise ValueError("theta weights must sum to 1")

    @property
    def is_limit(self) -> bool:
        return self.epsilon is None

    @property
    def n_fluids(self) -> int:
        return len(self.theta_weights)

    def total_density(self) -> np.ndarray:
        return np.tensordot(self.theta_weights, self.rho, axes=1)

    def current(self) -> np.ndarray:
        """``j = sum_theta w rho v``, shape ``(d, *shape)``."""
        return np.einsum("m,m...,md...->d...", self.theta_weights, self.rho, self.vel)

    def total_mass(self) -> float:
        return float(self.total_density().mean())

    def fluid_masses(self) -> np.ndarray:
        return self.rho.reshape(self.n_fluids, -1).mean(axis=1)

    def kinetic_energy(self) -> float:
        speed2 = np.sum(self.vel**2, axis=1)
        e = np.tensordot(self.theta_weights, self.rho * speed2, axes=1).sum()
        return 0.5 * float(e) * self.grid.cell_volume

    def field_energy(self) -> float:
        if self.is_limit:
            return 0.0
        return solve_potential(GriddedField(self.grid, self.total_density()), self.epsilon).field_energy

    def energy(self) -> float:
        return self.kinetic_energy() + self.field_energy()

    def rho_spectral(self, node: int) -> SpectralField:
        return SpectralField(self.grid, fft(self.rho[node], self.grid))

    def vel_spectral(self, node: int) -> SpectralField:
        return SpectralField(self.grid, fft(self.vel[node], self.grid))

    def field(self) -> np.ndarray:
        """Electric field ``(d, *shape)`` driving the family."""
        if self.is_limit:
            return _pressure_field(self)
        return solve_potential(GriddedField(self.grid, self.total_density()), self.epsilon).field.values


def make_family(grid, nodes, weights, rho, vel, epsilon, time=0.0) -> FluidFamily:
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    weights = np.asarray(weights, dtype=float)
    return FluidFamily(grid, nodes, weights, np.asarray(rho, float), np.asarray(vel, float), epsilon, time)


# --------------------------------------------------------------------------
# right-hand sides


def _dealias_mask(grid: TorusGrid) -> np.ndarray:
    mask = np.ones(grid.shape, dtype=bool)
    for k, n in zip(grid.wavenumbers, grid.cells):
        mask &= np.abs(k) < n / 3.0
    return mask


def _dealias(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Project a product onto the 2/3-rule band (real space in and out)."""
    c = fft(values, grid)
    c[..., ~_dealias_mask(grid)] = 0.0
    return ifft(c, grid).real


def _grad(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return ifft(spectral_gradient(fft(values, grid), grid), grid).real


def _div(vec: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return ifft(spectral_divergence(fft(vec, grid), grid), grid).real


def _pressure_field(fam_or_state) -> np.ndarray:
    """Curl-free, zero-mean E with ``div E = div div (sum w rho v v)``.

    Differentiating the constraint ``div j = 0`` in time gives this closure.
    """
    grid = fam_or_state.grid
    w, rho, vel = fam_or_state.theta_weights, fam_or_state.rho, fam_or_state.vel
    d = grid.dim
    stress = np.einsum("m,m...,mi...,mj...->ij...", w, rho, vel, vel)
    stress_hat = fft(_dealias(stress, grid), grid)
    ks = grid.wavenumbers
    src = np.zeros(grid.shape, dtype=complex)
    for i in range(d):
        for j in range(d):
            src += -(2 * np.pi) ** 2 * ks[i] * ks[j] * stress_hat[i, j]
    phi = inverse_laplacian(src, grid)
    return ifft(spectral_gradient(phi, grid), grid).real


def _rhs(grid, weights, rho, vel, epsilon, markers=None):
    """Time derivatives of ``(rho, vel, markers)`` for all fluids."""
    d = grid.dim
    if epsilon is None:
        efield = _pressure_field(_Stage(grid, weights, rho, vel))
    else:
        total = np.tensordot(weights, rho, axes=1)
        efield = solve_potential(GriddedField(grid, total), epsilon).field.values
    flux = _dealias(rho[:, None] * vel, grid)
    drho = -np.stack([_div(flux[m], grid) for m in range(len(weights))])
    dvel = np.empty_like(vel)
    for m in range(len(weights)):
        gv = np.stack([_grad(vel[m, i], grid) for i in range(d)])  # gv[i, j] = d_j v_i
        adv = np.einsum("j...,ij...->i...", vel[m], gv)
        dvel[m] = -_dealias(adv, grid) + efield
    dmark = None
    if markers is not None:
        dmark = np.empty_like(markers)
        for m in range(len(weights)):
            coeffs = fft(vel[m], grid)
            dmark[m] = evaluate_at(coeffs, grid, wrap(markers[m])).real.T
    return drho, dvel, dmark


@dataclass
class _Stage:
    grid: TorusGrid
    theta_weights: np.ndarray
    rho: np.ndarray
    vel: np.ndarray


def _rk4(family: FluidFamily, dt: float):
    g, w, eps = family.grid, family.theta_weights, family.epsilon
    r0, v0, x0 = family.rho, family.vel, family.markers
    k1 = _rhs(g, w, r0, v0, eps, x0)
    k2 = _rhs(g, w, r0 + 0.5 * dt * k1[0], v0 + 0.5 * dt * k1[1], eps,
              None if x0 is None else x0 + 0.5 * dt * k1[2])
    k3 = _rhs(g, w, r0 + 0.5 * dt * k2[0], v0 + 0.5 * dt * k2[1], eps,
              None if x0 is None else x0 + 0.5 * dt * k2[2])
    k4 = _rhs(g, w, r0 + dt * k3[0], v0 + dt * k3[1], eps,
              None if x0 is None else x0 + dt * k3[2])
    rho = r0 + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
    vel = v0 + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    mark = None if x0 is None else wrap(x0 + dt / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]))
    return rho, vel, mark


def _check_cfl(family: FluidFamily, dt: float) -> None:
    vmax = float(np.max(np.sqrt(np.sum(family.vel**2, axis=1)))) if family.vel.size else 0.0
    h = min(family.grid.spacing)
    if dt * vmax > h:
        raise ValueError(f"CFL violated: dt*max|v| = {dt * vmax:.4g} > spacing {h:.4g}")


def multifluid_step(family: FluidFamily, dt: float, negativity_tol: float = 1e-8) -> FluidFamily:
    """One RK4 step of the pressureless Euler-Poisson system.

    Raises:
        BlowupError: a density dips below ``-negativity_tol``.
        ValueError: CFL violation, or a limit-mode family.
    """
    if family.is_limit:
        raise ValueError("multifluid_step needs an epsilon-mode family; use limit_step")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if np.min(family.rho) < -negativity_tol:
        raise BlowupError(f"negative density {np.min(family.rho):.3g} at t={family.time:.4g}")
    _check_cfl(family, dt)
    rho, vel, mark = _rk4(family, dt)
    if np.min(rho) < -negativity_tol:
        raise BlowupError(f"negative density {np.min(rho):.3g} at t={family.time + dt:.4g}")
    return replace(family, rho=rho, vel=vel, markers=mark, time=family.time + dt)


def constraint_error(family: FluidFamily) -> float:
    return float(np.max(np.abs(family.total_density() - 1.0)))


def project_limit(family: FluidFamily) -> FluidFamily:
    """Restore ``sum w rho = 1`` and ``div j = 0``.

    Densities are rescaled pointwise by the common factor ``1 / sum w rho``;
    every velocity is then corrected by the same gradient ``grad q`` with
    ``Lap q = div j``, which removes the divergence of the current.
    """
    g = family.grid
    total = family.total_density()
    rho = family.rho / total[None]
    j = np.einsum("m,m...,md...->d...", family.theta_weights, rho, family.vel)
    # invert div(grad .) as discretised, i.e. without the Nyquist axes
    lap = np.zeros(g.shape)
    for k, nyq in zip(g.wavenumbers, g.nyquist_masks):
        lap += np.where(nyq, 0.0, (2 * np.pi * k) ** 2)
    src = spectral_divergence(fft(j, g), g)
    q = np.zeros_like(src)
    nz = lap > 0
    q[nz] = -src[nz] / lap[nz]
    corr = ifft(spectral_gradient(q, g), g).real
    vel = family.vel - corr[None]
    return replace(family, rho=rho, vel=vel)


def limit_step(family: FluidFamily, dt: float, constraint_tol: float = 1e-6) -> FluidFamily:
    """One RK4 step of the multi-fluid incompressible Euler system.

    Raises:
        ConstraintError: the constraint is violated by more than
            ``constraint_tol`` before the step or after it (pre-projection).
    """
    if not family.is_limit:
        raise ValueError("limit_step needs a limit-mode family (epsilon=None)")
    if dt <= 0:
        raise ValueError("dt must be positive")
    err = constraint_error(family)
    if err > constraint_tol:
        raise ConstraintError(f"initial data violate sum w rho = 1 by {err:.3g}")
    _check_cfl(family, dt)
    rho, vel, mark = _rk4(family, dt)
    out = replace(family, rho=rho, vel=vel, markers=mark, time=family.time + dt)
    err = constraint_error(out)
    if err > constraint_tol:
        raise ConstraintError(f"constraint drifted by {err:.3g} during the step")
    return project_limit(out)


def step(family: FluidFamily, dt: float) -> FluidFamily:
    return limit_step(family, dt) if family.is_limit else multifluid_step(family, dt)


# --------------------------------------------------------------------------
# superposition


def sublattice(grid: TorusGrid, particles_per_cell: int) -> np.ndarray:
    """Points of a regular sub-lattice with ``particles_per_cell`` per cell.

    With one particle per cell the points are the grid nodes.
    """
    m = int(round(particles_per_cell ** (1.0 / grid.dim)))
    if m**grid.dim != particles_per_cell or m < 1:
        raise ValueError(f"particles_per_cell must be a perfect {grid.dim}-th power, got {particles_per_cell}")
    offs = (np.arange(m) + 0.5) / m - 0.5
    axes = [((np.arange(n)[:, None] + offs[None, :]) / n).ravel() for n in grid.cells]
    mesh = np.meshgrid(*axes, indexing="ij")
    return wrap(np.stack([a.ravel() for a in mesh], axis=-1))


def superpose(family: FluidFamily, particles_per_cell: int = 1) -> ParticleEnsemble:
    """Sample ``g = sum_theta w rho_theta delta_{v = v_theta}`` on a lattice.

    Each lattice point and fluid contributes a particle of weight
    ``w_theta * rho_theta(x) * cell_volume / particles_per_cell`` at velocity
    ``v_theta(x)``; values between nodes come from the trigonometric
    interpolant.
    """
    pts = sublattice(family.grid, particles_per_cell)
    scale = family.grid.cell_volume / particles_per_cell
    xs, vs, ws = [], [], []
    for m in range(family.n_fluids):
        rho = evaluate_at(fft(family.rho[m], family.grid), family.grid, pts).real[0]
        vel = evaluate_at(fft(family.vel[m], family.grid), family.grid, pts).real.T
        if np.min(rho) < -1e-12:
            raise ValueError("superposition needs non-negative densities")
        xs.append(pts)
        vs.append(vel)
        ws.append(family.theta_weights[m] * np.maximum(rho, 0.0) * scale)
    return ParticleEnsemble(np.concatenate(xs), np.concatenate(vs), np.concatenate(ws))


def seed_markers(family: FluidFamily, particles_per_cell: int = 1) -> FluidFamily:
    """Attach Lagrangian markers at the lattice used by :func:`superpose`."""
    ens = superpose(family, particles_per_cell)
    m = family.n_fluids
    n = ens.n // m
    return replace(
        family,
        markers=np.array(ens.positions).reshape(m, n, family.grid.dim),
        marker_weights=np.array(ens.weights).reshape(m, n),
    )


def marker_ensemble(family: FluidFamily) -> ParticleEnsemble:
    """The superposition measure carried by the markers at the current time."""
    if family.markers is None:
        raise ValueError("family carries no markers; call seed_markers first")
    xs, vs = [], []
    for m in range(family.n_fluids):
        x = family.markers[m]
        xs.append(x)
        vs.append(evaluate_at(fft(family.vel[m], family.grid), family.grid, x).real.T)
    return ParticleEnsemble(np.concatenate(xs), np.concatenate(vs), family.marker_weights.ravel())


# --------------------------------------------------------------------------
# snapshots


def write_family(family: FluidFamily, directory) -> Path:
    """PSS1 per-θ fields plus a text header listing nodes and weights."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "theta.txt").open("w") as fh:
        fh.write(f"# epsilon={family.epsilon} time={family.time!r}\n")
        for node, w in zip(family.theta_nodes, family.theta_weights):
            fh.write(" ".join(repr(float(c)) for c in node) + f" {float(w)!r}\n")
    for m in range(family.n_fluids):
        vals = np.concatenate([family.rho[m][None], family.vel[m]])
        pss.write(directory / f"fluid_{m:03d}.pss1", GriddedField(family.grid, vals))
    return directory


def read_family(directory, epsilon=None) -> FluidFamily:
    directory = Path(directory)
    rows = [
        [float(c) for c in line.split()]
        for line in (directory / "theta.txt").read_text().splitlines()
        if line.strip() and not line.startswith("#")
    ]
    nodes = np.array([r[:-1] for r in rows])
    weights = np.array([r[-1] for r in rows])
    fields = [pss.read(directory / f"fluid_{m:03d}.pss1") for m in range(len(rows))]
    grid = fields[0].grid
    rho = np.stack([f.values[0] for f in fields])
    vel = np.stack([f.values[1:] for f in fields])
    return FluidFamily(grid, nodes, weights, rho, vel, epsilon)

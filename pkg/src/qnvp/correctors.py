"""Plasma-oscillation correctors and the velocity filter built from them.

The corrector ``d+`` is a complex curl-free vector field stored as a
complex scalar potential ``phi`` (``d+ = grad phi + m`` with a constant
mean ``m``), so ``curl d+ = 0`` holds by construction. ``d-`` is its
complex conjugate, which makes the velocity shift

    C(t, x) = -2 Im(d+(x) exp(i w t))

real. Two conventions for the phase frequency ``w`` and the matching
field prefactor are available:

``"linear"``
    ``w = 1/eps`` and ``div d+(0) = div(eps E0 + i j0) / 2``, which is the
    exact oscillating mode of the linearised cold plasma.
``"sqrt"``
    ``w = 1/sqrt(eps)`` with prefactor ``sqrt(eps)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import GridError, GriddedField, ParticleEnsemble, TorusGrid, evaluate_at, fft, ifft
from .poisson import inverse_laplacian, spectral_divergence, spectral_gradient
from . import pss

FREQUENCY_MODES = ("linear", "sqrt")


def oscillation_frequency(epsilon: float, mode: str = "linear") -> float:
    if mode == "linear":
        return 1.0 / epsilon
    if mode == "sqrt":
        return 1.0 / np.sqrt(epsilon)
    raise ValueError(f"unknown frequency mode {mode!r}; expected one of {FREQUENCY_MODES}")


def field_prefactor(epsilon: float, mode: str = "linear") -> float:
    if mode == "linear":
        return float(epsilon)
    if mode == "sqrt":
        return float(np.sqrt(epsilon))
    raise ValueError(f"unknown frequency mode {mode!r}; expected one of {FREQUENCY_MODES}")


@dataclass(frozen=True, eq=False)
class CorrectorState:
    """Corrector ``d+`` through its scalar potential.

    Attributes:
        grid: spatial grid.
        potential_hat: complex Fourier coefficients of ``phi``.
        mean: constant part of ``d+``, shape ``(d,)``.
        epsilon: scaling parameter.
        time: current time.
        omega: phase frequency ``w``.
    """

    grid: TorusGrid
    potential_hat: np.ndarray
    mean: np.ndarray
    epsilon: float
    time: float = 0.0
    omega: float = 1.0

    def d_plus_hat(self) -> np.ndarray:
        """Fourier coefficients of ``d+``, shape ``(d, *cells)``."""
        out = spectral_gradient(self.potential_hat, self.grid)
        out[(slice(None),) + (0,) * self.grid.dim] += self.mean
        return out

    def d_plus(self) -> np.ndarray:
        return ifft(self.d_plus_hat(), self.grid)

    def divergence_hat(self) -> np.ndarray:
        return spectral_divergence(self.d_plus_hat(), self.grid)

    def shift_hat(self, t: float) -> np.ndarray:
        """Fourier coefficients of the real shift ``C(t, .)``."""
        a = self.d_plus_hat() * np.exp(1j * self.omega * t)
        # coefficients of Im(a(x)) are (a_k - conj(a_{-k})) / 2i
        conj_flip = np.conj(_flip(a, self.grid))
        return -2.0 * (a - conj_flip) / 2j

    def shift(self, t: float) -> GriddedField:
        return GriddedField(self.grid, ifft(self.shift_hat(t), self.grid).real)


def _flip(coeffs: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Coefficients at ``-k`` on the FFT index layout."""
    axes = tuple(range(coeffs.ndim - grid.dim, coeffs.ndim))
    return np.roll(np.flip(coeffs, axis=axes), 1, axis=axes)


def zero_state(grid: TorusGrid, epsilon: float, mode: str = "linear") -> CorrectorState:
    return CorrectorState(
        grid, np.zeros(grid.shape, complex), np.zeros(grid.dim, complex), epsilon, 0.0,
        oscillation_frequency(epsilon, mode),
    )


def constant_state(grid: TorusGrid, value, epsilon: float, mode: str = "linear") -> CorrectorState:
    """A spatially constant ``d+ = value``."""
    st = zero_state(grid, epsilon, mode)
    return replace(st, mean=np.asarray(value, dtype=complex).reshape(grid.dim))


def corrector_initial(E0: GriddedField, j0: GriddedField, epsilon: float, mode: str = "linear") -> CorrectorState:
    """Initial corrector from the initial field and mean current.

    ``div d+(0) = div(p E0 + i j0) / 2`` with ``p`` the prefactor of the
    chosen frequency mode; the zero-mean curl-free solution is taken.
    """
    if E0.grid != j0.grid:
        raise GridError("E0 and j0 live on different grids")
    grid = E0.grid
    if E0.components != grid.dim or j0.components != grid.dim:
        raise GridError("E0 and j0 must be vector fields")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    src = 0.5 * (field_prefactor(epsilon, mode) * fft(E0.values, grid) + 1j * fft(j0.values, grid))
    phi = inverse_laplacian(spectral_divergence(src, grid), grid)
    return CorrectorState(grid, phi, np.zeros(grid.dim, complex), float(epsilon), 0.0,
                          oscillation_frequency(epsilon, mode))


def _dealias(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    c = fft(values, grid)
    mask = np.ones(grid.shape, dtype=bool)
    for k, n in zip(grid.wavenumbers, grid.cells):
        mask &= np.abs(k) < n / 3.0
    c[..., ~mask] = 0.0
    return ifft(c, grid)


def _potential_rate(phi_hat: np.ndarray, j: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """``d phi / dt`` from ``div(d_t d + (j.grad) d) = 0``."""
    d = grid.dim
    dvec = ifft(spectral_gradient(phi_hat, grid), grid)
    grads = np.stack([ifft(spectral_gradient(fft(dvec[i], grid), grid), grid) for i in range(d)])
    adv = _dealias(np.einsum("j...,ij...->i...", j, grads), grid)
    return inverse_laplacian(-spectral_divergence(fft(adv, grid), grid), grid)


def advance_correctors(state: CorrectorState, j: GriddedField, dt: float, j_end: GriddedField | None = None) -> CorrectorState:
    """One RK4 step of the corrector transport.

    ``j`` is the mean current at the start of the step; if ``j_end`` is
    given the current is interpolated linearly across the step. The mean of
    ``d+`` is frozen.
    """
    grid = state.grid
    if j.grid != grid:
        raise GridError("current and corrector live on different grids")
    j0 = j.values
    j1 = j0 if j_end is None else j_end.values
    jm = 0.5 * (j0 + j1)
    p = state.potential_hat
    k1 = _potential_rate(p, j0, grid)
    k2 = _potential_rate(p + 0.5 * dt * k1, jm, grid)
    k3 = _potential_rate(p + 0.5 * dt * k2, jm, grid)
    k4 = _potential_rate(p + dt * k3, j1, grid)
    p = p + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return replace(state, potential_hat=p, time=state.time + dt)


def shift_at(state: CorrectorState, t: float, points: np.ndarray) -> np.ndarray:
    """``C(t, x)`` at the given points, shape ``(n, d)``."""
    return evaluate_at(state.shift_hat(t), state.grid, points).real.T


def filter_ensemble(ensemble: ParticleEnsemble, state: CorrectorState, t: float, inverse: bool = False) -> ParticleEnsemble:
    """Shift every velocity by ``+C(t, x)`` (``-C`` with ``inverse``)."""
    if not np.any(state.potential_hat) and not np.any(state.mean):
        return ensemble
    shift = shift_at(state, t, ensemble.positions)
    sign = -1.0 if inverse else 1.0
    return ensemble.replace(velocities=ensemble.velocities + sign * shift)


def is_well_prepared(state: CorrectorState, tol: float) -> bool:
    """``||div d+||_2 <= tol`` (L2 over the unit torus, via Parseval)."""
    return divergence_norm(state) <= tol


def divergence_norm(state: CorrectorState) -> float:
    return float(np.sqrt(np.sum(np.abs(state.divergence_hat()) ** 2)))


def shift_lipschitz(state: CorrectorState, t: float | None = None) -> float:
    """Sup over grid nodes of the operator 2-norm of ``D_x C``.

    With ``t=None`` the phase-free bound ``2 sup |D_x d+|`` is returned.
    """
    grid = state.grid
    d = grid.dim
    if t is None:
        src = state.d_plus_hat()
        scale = 2.0
    else:
        src = state.shift_hat(t)
        scale = 1.0
    jac = np.stack([ifft(spectral_gradient(src[i], grid), grid) for i in range(d)])
    jac = np.moveaxis(jac.reshape(d, d, -1), -1, 0)
    if t is not None:
        jac = jac.real
    return scale * float(np.max(np.linalg.norm(jac, ord=2, axis=(1, 2))))


def write_state(path, state: CorrectorState) -> Path:
    """PSS1 snapshot of ``d+`` as a complex vector field."""
    return pss.write(path, GriddedField(state.grid, _interleave(state.d_plus())))


def _interleave(values: np.ndarray) -> np.ndarray:
    out = np.empty((2 * values.shape[0],) + values.shape[1:])
    out[0::2] = values.real
    out[1::2] = values.imag
    return out

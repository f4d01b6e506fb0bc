"""Spectral solver for ``-eps^2 Lap U = rho - <rho>`` on the unit torus."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .core import GridError, GriddedField, TorusGrid, fft, ifft


@dataclass(frozen=True, eq=False)
class PoissonSolution:
    """Potential, field and field energy of one Poisson solve.

    ``field_energy`` is ``(eps^2 / 2) * int |grad U|^2``, evaluated on the
    trigonometric interpolant (Parseval), so it includes the Nyquist modes.
    """

    potential: GriddedField
    field: GriddedField
    epsilon: float
    field_energy: float
    potential_hat: np.ndarray

    @property
    def grid(self) -> TorusGrid:
        return self.potential.grid


def spectral_gradient(coeffs: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Coefficients of the gradient of a scalar with coefficients ``coeffs``.

    Nyquist modes are zeroed on the differentiated axis so that real fields
    stay real.
    """
    out = np.empty((grid.dim,) + grid.shape, dtype=complex)
    for a, (k, nyq) in enumerate(zip(grid.wavenumbers, grid.nyquist_masks)):
        out[a] = 2j * np.pi * k * coeffs
        out[a][nyq] = 0.0
    return out


def spectral_divergence(coeffs: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Coefficients of the divergence of a vector field."""
    out = np.zeros(grid.shape, dtype=complex)
    for a, (k, nyq) in enumerate(zip(grid.wavenumbers, grid.nyquist_masks)):
        term = 2j * np.pi * k * coeffs[a]
        term[nyq] = 0.0
        out += term
    return out


def inverse_laplacian(coeffs: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Zero-mean solution ``u`` of ``Lap u = f`` in spectral space."""
    k2 = grid.k_squared
    out = np.zeros_like(coeffs, dtype=complex)
    nz = k2 > 0
    out[..., nz] = -coeffs[..., nz] / k2[nz]
    return out


def solve_potential(rho: GriddedField, epsilon: float) -> PoissonSolution:
    """Solve ``-eps^2 Lap U = rho - <rho>`` and return ``U`` and ``E = -grad U``.

    The mean charge is removed by dropping the ``k = 0`` mode of the source.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not rho.is_scalar:
        raise GridError("density must be a scalar field")
    grid = rho.grid
    rho_hat = fft(rho.scalar, grid)
    k2 = grid.k_squared
    u_hat = np.zeros_like(rho_hat)
    nz = k2 > 0
    u_hat[nz] = rho_hat[nz] / (epsilon**2 * k2[nz])
    e_hat = -spectral_gradient(u_hat, grid)
    potential = GriddedField(grid, ifft(u_hat, grid).real)
    field = GriddedField(grid, ifft(e_hat, grid).real)
    energy = 0.5 * epsilon**2 * float(np.sum(k2 * np.abs(u_hat) ** 2))
    return PoissonSolution(potential, field, float(epsilon), energy, u_hat)


def residual(rho: GriddedField, sol: PoissonSolution) -> float:
    """L2 norm of ``-eps^2 Lap U - (rho - <rho>)``, computed spectrally."""
    if rho.grid != sol.grid:
        raise GridError("density and solution live on different grids")
    grid = rho.grid
    rho_hat = fft(rho.scalar, grid)
    rho_hat[(0,) * grid.dim] = 0.0
    u_hat = fft(sol.potential.scalar, grid)
    r = sol.epsilon**2 * grid.k_squared * u_hat - rho_hat
    return float(np.sqrt(np.sum(np.abs(r) ** 2)))


# --------------------------------------------------------------------------
# Real-space kernel route (2D)
#
# The periodic field kernel is split as
#     K(x) = x / (2 pi |x|^2) * exp(-|x|^2 / 4a^2)  +  K_long(x),
# where the first term is the free-space kernel with a Gaussian screen and
# K_long is smooth and periodic. Together with the unscreened remainder of
# the free kernel, K_long is the smooth correction K0 of the periodic
# kernel. K_long is carried by its truncated Fourier coefficients; the
# screened singular part is integrated in polar coordinates around each
# point, where the Jacobian cancels the 1/|x| singularity.

KERNEL_CELLS = 64


@lru_cache(maxsize=8)
def _long_range_coefficients(screen: float) -> np.ndarray:
    """Fourier coefficients of the smooth periodic part, on a 64^2 index set."""
    n = KERNEL_CELLS
    k = np.fft.fftfreq(n, 1.0 / n)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    ksq = (2 * np.pi) ** 2 * (k1**2 + k2**2)
    damp = np.exp(-ksq * screen**2)
    out = np.zeros((2, n, n), dtype=complex)
    nz = ksq > 0
    for a, ka in enumerate((k1, k2)):
        out[a][nz] = -2j * np.pi * ka[nz] * damp[nz] / ksq[nz]
        out[a][ka == -n // 2] = 0.0
    return out


def _screened_multiplier(grid: TorusGrid, screen: float, radial_nodes: int) -> np.ndarray:
    """Fourier multiplier of the screened singular kernel by polar quadrature.

    The angular integral of ``(cos t, sin t) exp(-2 pi i r k.e(t))`` is
    ``-2 pi i J1(2 pi r |k|) k/|k|``; the radial integral of the Gaussian
    weight against J1 is done with Gauss-Legendre on ``[0, 12 a]``.
    """
    r_max = 12.0 * screen
    nodes, weights = np.polynomial.legendre.leggauss(radial_nodes)
    r = 0.5 * r_max * (nodes + 1.0)
    wr = 0.5 * r_max * weights * np.exp(-(r**2) / (4 * screen**2))
    k1, k2 = grid.wavenumbers
    kmag = np.sqrt(k1**2 + k2**2)
    radial = np.zeros_like(kmag)
    flat = kmag.ravel()
    uniq, inv = np.unique(flat, return_inverse=True)
    vals = special.j1(2 * np.pi * np.outer(uniq, r)) @ wr
    radial = vals[inv].reshape(kmag.shape)
    out = np.zeros((2,) + grid.shape, dtype=complex)
    nz = kmag > 0
    for a, (ka, nyq) in enumerate(zip((k1, k2), grid.nyquist_masks)):
        out[a][nz] = (-1j) * (ka[nz] / kmag[nz]) * radial[nz]
        out[a][nyq] = 0.0
    return out


def green_field_2d(
    rho: GriddedField, epsilon: float, screen: float = 0.04, radial_nodes: int = 96
) -> GriddedField:
    """Electric field of ``rho`` as a convolution with the periodic Green kernel.

    Independent of :func:`solve_potential`: the screened free-space kernel
    ``x / (2 pi |x|^2)`` is integrated numerically and the smooth periodic
    correction comes from a fixed table of 64^2 Fourier coefficients.
    """
    if rho.grid.dim != 2:
        raise GridError("the kernel route is two-dimensional")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    grid = rho.grid
    rho_hat = fft(rho.scalar, grid)
    rho_hat[0, 0] = 0.0
    mult = _screened_multiplier(grid, screen, radial_nodes)
    table = _long_range_coefficients(screen)
    n = KERNEL_CELLS
    k1, k2 = grid.wavenumbers
    inside = (np.abs(k1) < n // 2) & (np.abs(k2) < n // 2)
    ii = (k1[inside].astype(int) % n, k2[inside].astype(int) % n)
    for a in range(2):
        mult[a][inside] += table[a][ii]
    e_hat = mult * rho_hat[None] / epsilon**2
    return GriddedField(grid, ifft(e_hat, grid).real)

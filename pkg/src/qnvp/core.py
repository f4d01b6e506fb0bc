"""Phase-space substrate: torus grids, particle ensembles, fields and transforms.

Conventions used throughout the package:

* the torus is ``[0, 1)^d`` with Fourier modes ``exp(2 pi i k.x)``;
* grid node ``i`` sits at ``x = i * h`` and is the centre of the cell
  ``[(i - 1/2) h, (i + 1/2) h)`` (taken modulo 1);
* gridded values are stored with shape ``(components, *cells)``;
* spectral coefficients are the normalised DFT, so that a band-limited
  field ``f(x) = sum_k c_k exp(2 pi i k.x)`` has coefficient ``c_k`` at
  multi-index ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import special


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class QuasineutralParams:
    """Scalar parameters of a quasineutral experiment.

    Attributes:
        epsilon: Debye length over domain size, in (0, 1].
        gamma: exponent of the admissible initial velocity support.
        alpha: exponent of the 2D support envelope, in (0, 1).
        beta: 2D density exponent, > 2.
        cap_k: threshold constant K of the admissible perturbation size.
        c0: stability-envelope constant, > 1.
        c_alpha: support-envelope constant, > 0.
        final_time: horizon T.
    """

    epsilon: float
    gamma: float = 1.0
    alpha: float = 0.5
    beta: float = 3.0
    cap_k: float = 1.0
    c0: float = 2.0
    c_alpha: float = 1.0
    final_time: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in (0, 1], got {self.epsilon}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.beta <= 2.0:
            raise ValueError(f"beta must be > 2, got {self.beta}")
        if self.cap_k <= 0:
            raise ValueError(f"cap_k must be > 0, got {self.cap_k}")
        if self.c0 <= 1.0:
            raise ValueError(f"c0 must be > 1, got {self.c0}")
        if self.c_alpha <= 0:
            raise ValueError(f"c_alpha must be > 0, got {self.c_alpha}")
        if self.final_time <= 0:
            raise ValueError(f"final_time must be > 0, got {self.final_time}")

    @property
    def velocity_cutoff(self) -> float:
        """Largest admissible initial speed ``c0 / epsilon**gamma``."""
        return self.c0 / self.epsilon**self.gamma


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class TorusGrid:
    dim: int
    cells: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise GridError(f"dimension must be 1, 2 or 3, got {self.dim}")
        if len(self.cells) != self.dim:
            raise GridError(f"need {self.dim} cell counts, got {self.cells}")
        for n in self.cells:
            if not (isinstance(n, (int, np.integer)) and _is_power_of_two(int(n)) and n >= 4):
                raise GridError(f"cells per axis must be a power of two >= 4, got {n}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(1.0 / n for n in self.cells)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @property
    def cell_volume(self) -> float:
        return 1.0 / self.n_cells

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        """Node coordinates along each axis."""
        return tuple(np.arange(n) / n for n in self.cells)

    @cached_property
    def nodes(self) -> np.ndarray:
        """All node coordinates, shape ``(n_cells, dim)`` in C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Broadcast node coordinates, one array of ``shape`` per axis."""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        """Integer wavenumbers per axis, broadcast to ``shape``."""
        ks = [np.fft.fftfreq(n, 1.0 / n) for n in self.cells]
        return tuple(np.meshgrid(*ks, indexing="ij"))

    @cached_property
    def k_squared(self) -> np.ndarray:
        """``|2 pi k|^2`` on the spectral grid."""
        return sum((2 * np.pi * k) ** 2 for k in self.wavenumbers)

    @cached_property
    def nyquist_masks(self) -> tuple[np.ndarray, ...]:
        """Per axis, True where the wavenumber is the (unpaired) Nyquist mode."""
        return tuple(k == -n // 2 for k, n in zip(self.wavenumbers, self.cells))


def make_grid(dim: int, cells: int | Sequence[int]) -> TorusGrid:
    """Build a uniform grid on ``T^dim``.

    ``cells`` may be a single count (used on every axis) or one per axis.
    """
    if isinstance(cells, (int, np.integer)):
        cells = (int(cells),) * int(dim) if dim in (1, 2, 3) else (int(cells),)
    return TorusGrid(int(dim), tuple(int(c) for c in cells))


def wrap(x: np.ndarray) -> np.ndarray:
    """Map coordinates into ``[0, 1)``; guards the ``-tiny % 1 == 1.0`` case."""
    y = np.mod(x, 1.0)
    y[y >= 1.0] = 0.0
    return y


def periodic_displacement(x, y) -> np.ndarray:
    """Minimum-image displacement ``y - x`` per axis, in ``[-1/2, 1/2)``."""
    d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    return d - np.round(d)


def periodic_distance(x, y, grid: TorusGrid | None = None) -> np.ndarray | float:
    """Geodesic distance on the flat torus ``[0, 1)^d``.

    Works on single points or on stacked arrays whose last axis is the
    coordinate axis. The grid argument is accepted for symmetry with the
    other geometric helpers and is not needed.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    a = np.abs(np.mod(x, 1.0) - np.mod(y, 1.0))
    a = np.minimum(a, 1.0 - a)
    out = np.sqrt(np.sum(a * a, axis=-1))
    return float(out) if out.ndim == 0 else out


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Weighted empirical measure on ``T^d x R^d``.

    Positions are wrapped into the unit cell on construction. Arrays are
    made read-only; derive new ensembles with :meth:`replace`.
    """

    positions: np.ndarray
    velocities: np.ndarray
    weights: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        x = np.array(self.positions, dtype=float, copy=True)
        v = np.array(self.velocities, dtype=float, copy=True)
        w = np.array(self.weights, dtype=float, copy=True)
        if x.ndim == 1:
            x = x[:, None]
        if v.ndim == 1:
            v = v[:, None]
        if x.shape != v.shape or x.ndim != 2 or w.shape != (x.shape[0],):
            raise ValueError(
                f"inconsistent shapes: positions {x.shape}, velocities {v.shape}, weights {w.shape}"
            )
        if x.shape[1] not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {x.shape[1]}")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise ValueError("ensemble contains non-finite values")
        object.__setattr__(self, "positions", _readonly(wrap(x)))
        object.__setattr__(self, "velocities", _readonly(v))
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def __len__(self) -> int:
        return self.n

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights))

    @property
    def equal_weights(self) -> bool:
        return self.n > 0 and bool(np.all(self.weights == self.weights[0]))

    def replace(self, positions=None, velocities=None, weights=None) -> ParticleEnsemble:
        return ParticleEnsemble(
            self.positions if positions is None else positions,
            self.velocities if velocities is None else velocities,
            self.weights if weights is None else weights,
            self.seed,
        )

    def momentum(self) -> np.ndarray:
        return self.weights @ self.velocities

    def second_moment(self) -> float:
        """``sum_i w_i |v_i|^2``."""
        return float(self.weights @ np.sum(self.velocities**2, axis=1))


@dataclass(frozen=True, eq=False)
class GriddedField:
    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.shape == self.grid.shape:
            vals = vals[None]
        if vals.shape[1:] != self.grid.shape:
            raise GridError(f"values of shape {vals.shape} do not fit grid {self.grid.shape}")
        object.__setattr__(self, "values", vals)

    @property
    def components(self) -> int:
        return self.values.shape[0]

    @property
    def is_scalar(self) -> bool:
        return self.components == 1

    @property
    def scalar(self) -> np.ndarray:
        """The single component of a scalar field."""
        if not self.is_scalar:
            raise GridError("field is not scalar")
        return self.values[0]

    def mean(self) -> np.ndarray:
        axes = tuple(range(1, self.values.ndim))
        return self.values.mean(axis=axes)

    def sup_norm(self) -> float:
        if self.components == 1:
            return float(np.max(np.abs(self.values)))
        return float(np.max(np.sqrt(np.sum(np.abs(self.values) ** 2, axis=0))))

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.grid.cell_volume))


@dataclass(frozen=True, eq=False)
class SpectralField:
    grid: TorusGrid
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=complex)
        if c.shape == self.grid.shape:
            c = c[None]
        if c.shape[1:] != self.grid.shape:
            raise GridError(f"coefficients of shape {c.shape} do not fit grid {self.grid.shape}")
        object.__setattr__(self, "coefficients", c)

    @property
    def components(self) -> int:
        return self.coefficients.shape[0]

    def coefficient(self, k: Sequence[int], component: int = 0) -> complex:
        """Coefficient at integer multi-index ``k`` (negative indices allowed)."""
        idx = tuple(int(ki) % n for ki, n in zip(k, self.grid.cells))
        return complex(self.coefficients[(component,) + idx])


def _spatial_axes(ndim_values: int) -> tuple[int, ...]:
    return tuple(range(1, ndim_values))


def forward_transform(f: GriddedField) -> SpectralField:
    """Normalised FFT of every component."""
    axes = _spatial_axes(f.values.ndim)
    coeffs = np.fft.fftn(f.values, axes=axes) / f.grid.n_cells
    return SpectralField(f.grid, coeffs)


def inverse_transform(fhat: SpectralField, real: bool = True) -> GriddedField:
    """Inverse of :func:`forward_transform`; keeps the real part by default."""
    axes = _spatial_axes(fhat.coefficients.ndim)
    vals = np.fft.ifftn(fhat.coefficients, axes=axes) * fhat.grid.n_cells
    return GriddedField(fhat.grid, vals.real if real else vals)


def fft(values: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Normalised FFT over the trailing ``grid.dim`` axes of a raw array."""
    axes = tuple(range(values.ndim - grid.dim, values.ndim))
    return np.fft.fftn(values, axes=axes) / grid.n_cells


def ifft(coeffs: np.ndarray, grid: TorusGrid) -> np.ndarray:
    axes = tuple(range(coeffs.ndim - grid.dim, coeffs.ndim))
    return np.fft.ifftn(coeffs, axes=axes) * grid.n_cells


def b_delta_norm(fhat: SpectralField, delta: float) -> float:
    """Analytic norm ``sum_k |c_k| delta^{|k|_1}`` (summed over components)."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    k1 = sum(np.abs(k) for k in fhat.grid.wavenumbers)
    weights = np.power(float(delta), k1)
    return float(np.sum(np.abs(fhat.coefficients) * weights))


def evaluate_at(coeffs: np.ndarray, grid: TorusGrid, points: np.ndarray) -> np.ndarray:
    """Evaluate trigonometric polynomials at arbitrary points.

    Args:
        coeffs: spectral coefficients, shape ``(components, *grid.shape)``.
        grid: the grid that indexes ``coeffs``.
        points: ``(n, dim)`` evaluation points.

    Returns:
        Complex array of shape ``(components, n)``. The Nyquist modes are
        dropped, since their value off the grid depends on an arbitrary
        choice of sign for the aliased wavenumber.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    c = np.asarray(coeffs)
    if c.ndim == grid.dim:
        c = c[None]
    c = c.copy()
    for axis, n in enumerate(grid.cells):
        sl = [slice(None)] * c.ndim
        sl[axis + 1] = n // 2
        c[tuple(sl)] = 0.0
    factors = []
    for axis, n in enumerate(grid.cells):
        k = np.fft.fftfreq(n, 1.0 / n)
        factors.append(np.exp(2j * np.pi * np.outer(points[:, axis], k)))
    if grid.dim == 1:
        return np.einsum("ci,pi->cp", c, factors[0])
    if grid.dim == 2:
        tmp = np.einsum("cij,pj->cpi", c, factors[1])
        return np.einsum("cpi,pi->cp", tmp, factors[0])
    tmp = np.einsum("cijl,pl->cpij", c, factors[2])
    tmp = np.einsum("cpij,pj->cpi", tmp, factors[1])
    return np.einsum("cpi,pi->cp", tmp, factors[0])


def interpolate(values: np.ndarray, grid: TorusGrid, points: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation of nodal values.

    Args:
        values: shape ``(components, *grid.shape)``.
        points: ``(n, dim)`` positions.

    Returns:
        ``(n, components)`` interpolated values.
    """
    values = np.asarray(values)
    if values.ndim == grid.dim:
        values = values[None]
    points = np.atleast_2d(np.asarray(points, dtype=float))
    idx, frac = _cell_coordinates(points, grid)
    ncomp = values.shape[0]
    flat = values.reshape(ncomp, -1)
    out = np.zeros((points.shape[0], ncomp), dtype=values.dtype)
    for corner, weight in _corners(idx, frac, grid):
        out += weight[:, None] * flat[:, corner].T
    return out


def _cell_coordinates(points: np.ndarray, grid: TorusGrid):
    s = np.mod(points, 1.0) * np.asarray(grid.cells, dtype=float)
    base = np.floor(s)
    frac = s - base
    idx = base.astype(np.int64)
    return idx, frac


def _corners(idx: np.ndarray, frac: np.ndarray, grid: TorusGrid):
    """Yield ``(flat corner index, multilinear weight)`` for the 2^d corners."""
    d = grid.dim
    cells = grid.cells
    strides = [int(np.prod(cells[a + 1:])) for a in range(d)]
    for bits in range(2**d):
        flat = np.zeros(idx.shape[0], dtype=np.int64)
        weight = np.ones(idx.shape[0])
        for a in range(d):
            up = (bits >> (d - 1 - a)) & 1
            flat += ((idx[:, a] + up) % cells[a]) * strides[a]
            weight = weight * (frac[:, a] if up else 1.0 - frac[:, a])
        yield flat, weight


# --------------------------------------------------------------------------
# Deterministic sampling

@dataclass(frozen=True)
class DensitySpec:
    """Analytic phase-space density used for sampling initial ensembles.

    The spatial factor is ``1 + amplitude * cos(2 pi mode . x)`` (uniform when
    ``amplitude == 0``). The velocity factor is one of

    * ``"dirac"``: all particles at ``drift``;
    * ``"maxwellian"``: isotropic Gaussian of deviation ``thermal`` about
      ``drift``, truncated at ``|v - drift| <= cutoff``;
    * ``"ball"``: uniform in the ball of radius ``cutoff`` about ``drift``.
    """

    dim: int
    velocity: str = "dirac"
    thermal: float = 1.0
    cutoff: float | None = None
    drift: tuple[float, ...] | None = None
    amplitude: float = 0.0
    mode: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.dim}")
        if self.velocity not in ("dirac", "maxwellian", "ball"):
            raise ValueError(f"unknown velocity law {self.velocity!r}")
        if self.velocity != "dirac" and (self.cutoff is None or not np.isfinite(self.cutoff)):
            raise ValueError("velocity support must be bounded: give a finite cutoff")
        if self.cutoff is not None and self.cutoff <= 0:
            raise ValueError("cutoff must be positive")
        if not 0.0 <= abs(self.amplitude) <= 1.0:
            raise ValueError("spatial amplitude must lie in [-1, 1] for a non-negative density")

    @property
    def drift_vector(self) -> np.ndarray:
        return np.zeros(self.dim) if self.drift is None else np.asarray(self.drift, dtype=float)

    @property
    def mode_vector(self) -> np.ndarray:
        if self.mode is None:
            m = np.zeros(self.dim)
            m[0] = 1
            return m
        return np.asarray(self.mode, dtype=float)

    @property
    def support_radius(self) -> float:
        r = 0.0 if self.velocity == "dirac" else float(self.cutoff)
        return float(np.linalg.norm(self.drift_vector)) + r

    def second_moment(self) -> float:
        """``E|v - drift|^2`` of the velocity law."""
        d = self.dim
        if self.velocity == "dirac":
            return 0.0
        if self.velocity == "ball":
            return d * self.cutoff**2 / (d + 2)
        s2 = self.thermal**2
        x = self.cutoff**2 / (2 * s2)
        return s2 * d * special.gammainc(d / 2 + 1, x) / special.gammainc(d / 2, x)


def deterministic_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator (Philox) keyed by ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(stream)]))


def sample_ensemble(
    density: DensitySpec, n: int, seed: int, params: QuasineutralParams | None = None
) -> ParticleEnsemble:
    """Draw ``n`` equal-weight particles (total mass 1) from ``density``.

    Raises:
        ValueError: ``n < 1`` or the velocity support exceeds the admissible
            ``c0 / epsilon**gamma`` of ``params``.
    """
    if n < 1:
        raise ValueError(f"need at least one particle, got n={n}")
    if params is not None and density.support_radius > params.velocity_cutoff:
        raise ValueError(
            f"velocity support {density.support_radius} exceeds c0/eps^gamma = {params.velocity_cutoff}"
        )
    d = density.dim
    rng_x = deterministic_rng(seed, 0)
    rng_v = deterministic_rng(seed, 1)

    if density.amplitude == 0.0:
        x = rng_x.random((n, d))
    else:
        a = abs(density.amplitude)
        k = density.mode_vector
        chunks, have = [], 0
        while have < n:
            cand = rng_x.random((2 * (n - have) + 16, d))
            u = rng_x.random(cand.shape[0])
            ok = u * (1 + a) < 1 + density.amplitude * np.cos(2 * np.pi * cand @ k)
            chunks.append(cand[ok])
            have += int(ok.sum())
        x = np.concatenate(chunks)[:n]

    if density.velocity == "dirac":
        v = np.zeros((n, d))
    elif density.velocity == "ball":
        g = rng_v.standard_normal((n, d))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        r = density.cutoff * rng_v.random(n) ** (1.0 / d)
        v = g * r[:, None]
    else:
        chunks, have = [], 0
        while have < n:
            cand = density.thermal * rng_v.standard_normal((2 * (n - have) + 16, d))
            ok = np.sum(cand**2, axis=1) <= density.cutoff**2
            chunks.append(cand[ok])
            have += int(ok.sum())
        v = np.concatenate(chunks)[:n]
    v = v + density.drift_vector
    return ParticleEnsemble(x, v, np.full(n, 1.0 / n), seed)

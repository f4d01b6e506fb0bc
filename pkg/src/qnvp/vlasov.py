"""Particle-in-cell discretisation of the scaled Vlasov-Poisson system.

Cloud-in-cell deposition, the spectral Poisson solve and multilinear
interpolation form the field loop; particles follow the characteristics
``dX/dt = V, dV/dt = E(X)`` with a kick-drift-kick leapfrog.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .core import (
    GriddedField,
    ParticleEnsemble,
    QuasineutralParams,
    TorusGrid,
    _cell_coordinates,
    _corners,
    interpolate,
    wrap,
)
from .poisson import PoissonSolution, solve_potential

DIAGNOSTIC_COLUMNS = ("t", "mass", "ekin", "efield", "etotal", "vmax", "rho_inf", "rho_l2", "w2_ref")


class CFLError(RuntimeError):
    """Raised when ``|dt| * V(t)`` exceeds the grid spacing."""

    def __init__(self, support: float, dt: float, spacing: float):
        self.support = support
        self.dt = dt
        self.spacing = spacing
        super().__init__(
            f"CFL violated: dt*V = {abs(dt) * support:.4g} > spacing {spacing:.4g} (V(t) = {support:.6g})"
        )


def deposit(ensemble: ParticleEnsemble, grid: TorusGrid) -> GriddedField:
    """Cloud-in-cell charge density; ``sum(rho) * cell_volume`` equals the mass.

    Contributions are accumulated corner by corner with ``np.bincount``,
    which sums in particle index order, so the result is reproducible.
    """
    if ensemble.dim != grid.dim:
        raise ValueError(f"ensemble dimension {ensemble.dim} does not match grid {grid.dim}")
    idx, frac = _cell_coordinates(ensemble.positions, grid)
    rho = np.zeros(grid.n_cells)
    for flat, weight in _corners(idx, frac, grid):
        rho += np.bincount(flat, weights=weight * ensemble.weights, minlength=grid.n_cells)
    rho /= grid.cell_volume
    return GriddedField(grid, rho.reshape(grid.shape))


def interpolate_field(efield: GriddedField, x: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of a gridded field at points ``x``.

    Returns ``(n, components)``; a single point gives a 1D array.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    out = interpolate(efield.values, efield.grid, np.atleast_2d(x))
    return out[0] if single else out


def support_radius(ensemble: ParticleEnsemble) -> float:
    """Largest particle speed ``max |v|``."""
    if ensemble.n == 0:
        raise ValueError("empty ensemble")
    return float(np.sqrt(np.max(np.sum(ensemble.velocities**2, axis=1))))


@dataclass(frozen=True, eq=False)
class KineticState:
    """Ensemble plus the cached field that goes with it.

    ``external_field`` (a constant vector) is added to the self-consistent
    field; ``self_field=False`` switches the latter off.
    """

    ensemble: ParticleEnsemble
    grid: TorusGrid
    params: QuasineutralParams
    time: float = 0.0
    solution: PoissonSolution | None = None
    external_field: np.ndarray | None = None
    self_field: bool = True

    @property
    def epsilon(self) -> float:
        return self.params.epsilon


def initial_state(
    ensemble: ParticleEnsemble,
    grid: TorusGrid,
    params: QuasineutralParams,
    external_field=None,
    self_field: bool = True,
) -> KineticState:
    ext = None if external_field is None else np.asarray(external_field, dtype=float)
    state = KineticState(ensemble, grid, params, 0.0, None, ext, self_field)
    return replace(state, solution=_solve(state.ensemble, grid, params.epsilon))


def _solve(ensemble: ParticleEnsemble, grid: TorusGrid, epsilon: float) -> PoissonSolution:
    return solve_potential(deposit(ensemble, grid), epsilon)


def _acceleration(state: KineticState, positions: np.ndarray) -> np.ndarray:
    acc = np.zeros_like(positions)
    if state.self_field:
        acc += interpolate_field(state.solution.field, positions)
    if state.external_field is not None:
        acc += state.external_field
    return acc


def push(state: KineticState, dt: float, frozen_field: bool = False) -> KineticState:
    """One kick-drift-kick leapfrog step.

    With ``frozen_field`` the cached field is used for both kicks, which
    makes the map exactly reversible (``push(-dt)`` undoes ``push(dt)``);
    otherwise the field is re-solved after the drift.
    """
    if dt == 0 or (dt < 0 and not frozen_field):
        raise ValueError(f"dt must be positive (negative only with a frozen field), got {dt}")
    vmax = support_radius(state.ensemble)
    h = min(state.grid.spacing)
    if abs(dt) * vmax > h:
        raise CFLError(vmax, dt, h)
    ens = state.ensemble
    v = ens.velocities + 0.5 * dt * _acceleration(state, ens.positions)
    x = wrap(ens.positions + dt * v)
    moved = ens.replace(positions=x, velocities=v)
    sol = state.solution if frozen_field else _solve(moved, state.grid, state.epsilon)
    mid = replace(state, ensemble=moved, solution=sol)
    v = v + 0.5 * dt * _acceleration(mid, x)
    return replace(mid, ensemble=moved.replace(velocities=v), time=state.time + dt)


def energy(state: KineticState) -> tuple[float, float, float]:
    """Kinetic, field and total energy."""
    kinetic = 0.5 * state.ensemble.second_moment()
    fe = state.solution.field_energy if state.self_field else 0.0
    return kinetic, fe, kinetic + fe


@dataclass
class DiagnosticsSeries:
    """Per-record diagnostics of a kinetic run."""

    times: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    kinetic_energy: list = field(default_factory=list)
    field_energy: list = field(default_factory=list)
    total_energy: list = field(default_factory=list)
    support_radius: list = field(default_factory=list)
    density_sup: list = field(default_factory=list)
    density_l2: list = field(default_factory=list)
    w2_to_reference: list = field(default_factory=list)
    momentum: list = field(default_factory=list)

    def record(self, state: KineticState, w2: float | None = None) -> None:
        if self.times and state.time <= self.times[-1]:
            raise ValueError("diagnostic times must increase strictly")
        ek, ef, et = energy(state)
        rho = deposit(state.ensemble, state.grid)
        self.times.append(float(state.time))
        self.mass.append(state.ensemble.mass)
        self.kinetic_energy.append(ek)
        self.field_energy.append(ef)
        self.total_energy.append(et)
        self.support_radius.append(support_radius(state.ensemble))
        self.density_sup.append(rho.sup_norm())
        self.density_l2.append(rho.l2_norm())
        self.w2_to_reference.append(float("nan") if w2 is None else float(w2))
        self.momentum.append(state.ensemble.momentum())

    def __len__(self) -> int:
        return len(self.times)

    def rows(self):
        for i in range(len(self.times)):
            yield (
                self.times[i], self.mass[i], self.kinetic_energy[i], self.field_energy[i],
                self.total_energy[i], self.support_radius[i], self.density_sup[i],
                self.density_l2[i], self.w2_to_reference[i],
            )

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(DIAGNOSTIC_COLUMNS)
            for row in self.rows():
                writer.writerow([_fmt(v) for v in row])
        return path

    def energy_drift(self) -> float:
        e = np.asarray(self.total_energy)
        return float(np.max(np.abs(e - e[0])) / abs(e[0])) if len(e) and e[0] != 0 else 0.0


def _fmt(v: float) -> str:
    return "nan" if v != v else repr(float(v))


def run(
    initial: KineticState,
    t_end: float,
    dt: float,
    record_every: int = 1,
    reference: Callable[[KineticState], float] | None = None,
    on_record: Callable[[KineticState], None] | None = None,
) -> tuple[DiagnosticsSeries, list[KineticState]]:
    """Fixed-step leapfrog loop.

    Args:
        t_end: final time; ``0`` records the initial state only.
        record_every: steps between diagnostics records (the final step is
            always recorded).
        reference: optional callback returning a W2 distance to a
            reference measure, stored in the ``w2_ref`` column.
        on_record: optional hook called with each recorded state.

    Returns:
        The diagnostics and the recorded states (snapshots).
    """
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    steps = int(round(t_end / dt)) if t_end > 0 else 0
    if steps and abs(steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError(f"t_end={t_end} is not a multiple of dt={dt}")
    series = DiagnosticsSeries()
    snaps = []

    def _record(s):
        series.record(s, reference(s) if reference else None)
        snaps.append(s)
        if on_record:
            on_record(s)

    state = initial
    _record(state)
    for i in range(1, steps + 1):
        state = push(state, dt)
        state = replace(state, time=i * dt)
        if i % record_every == 0 or i == steps:
            _record(state)
    return series, snaps

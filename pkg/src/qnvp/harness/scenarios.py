"""Named initial data.

Fluid scenarios are trigonometric polynomials in ``x`` (hence analytic)
and produce a :class:`~qnvp.multifluid.FluidFamily`; their kinetic
counterpart is the superposition of the family on a lattice. Kinetic-only
scenarios are sampled directly.

=============  =====================================================
name           data
=============  =====================================================
oscillating    ``rho = 1 + a eps^2 cos(2 pi x1)``,
               ``v = (b sin 2 pi x1 + s sin 2 pi x2, c sin 2 pi x1)``;
               ill-prepared, excites plasma oscillations
shear          ``rho = 1``, ``v = (s sin 2 pi x2, 0)``; well-prepared
cold           ``rho = 1 + a cos(2 pi x1)``, ``v = 0``; single mode
maxwellian     truncated Maxwellian with ``1 + a cos(2 pi x1)`` density
=============  =====================================================
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from ..core import DensitySpec, ParticleEnsemble, TorusGrid, make_grid, sample_ensemble
from ..multifluid import FluidFamily, discretize_mu, make_family, project_limit, superpose


@dataclass(frozen=True)
class Scenario:
    name: str
    fluid: bool
    profile: Callable | None = None
    description: str = ""


def _oscillating(grid: TorusGrid, cfg, epsilon: float):
    sc = cfg.section("scenario")
    x = grid.coordinates
    a = sc["amplitude"] * epsilon**2
    if abs(a) >= 1:
        raise ValueError("amplitude * eps^2 must be below 1 for a positive density")
    rho = 1.0 + a * np.cos(2 * np.pi * x[0])
    vel = np.zeros((grid.dim,) + grid.shape)
    vel[0] = sc["drift"] * np.sin(2 * np.pi * x[0])
    if grid.dim > 1:
        vel[0] += sc["shear"] * np.sin(2 * np.pi * x[1])
        vel[1] = sc["transverse"] * np.sin(2 * np.pi * x[0])
    return rho, vel


def _shear(grid: TorusGrid, cfg, epsilon: float):
    if grid.dim < 2:
        raise ValueError("the shear scenario needs at least two dimensions")
    x = grid.coordinates
    rho = np.ones(grid.shape)
    vel = np.zeros((grid.dim,) + grid.shape)
    vel[0] = cfg.get("scenario", "shear") * np.sin(2 * np.pi * x[1])
    return rho, vel


def _cold(grid: TorusGrid, cfg, epsilon: float):
    a = cfg.get("scenario", "amplitude")
    if abs(a) >= 1:
        raise ValueError("cold-mode amplitude must be below 1")
    x = grid.coordinates
    return 1.0 + a * np.cos(2 * np.pi * x[0]), np.zeros((grid.dim,) + grid.shape)


SCENARIOS = {
    "oscillating": Scenario("oscillating", True, _oscillating, "ill-prepared oscillating flow"),
    "shear": Scenario("shear", True, _shear, "well-prepared shear flow"),
    "cold": Scenario("cold", True, _cold, "cold single-mode plasma oscillation"),
    "maxwellian": Scenario("maxwellian", False, None, "truncated Maxwellian"),
}

DENSITY_MODE = 1  # wavenumber along x1 tracked for frequency measurements


def get(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; known: {', '.join(sorted(SCENARIOS))}") from None


def grid_for(cfg) -> TorusGrid:
    return make_grid(cfg.get("grid", "dim"), cfg.get("grid", "cells"))


def fluid_family(cfg, epsilon: float | None = None) -> FluidFamily:
    """The epsilon-mode family of a fluid scenario.

    With several theta nodes every fluid carries the same density and the
    velocity ``v + spread * theta``.
    """
    sc = get(cfg.get("scenario", "name"))
    if not sc.fluid:
        raise ValueError(f"scenario {sc.name!r} has no fluid representation")
    eps = cfg.epsilon if epsilon is None else epsilon
    grid = grid_for(cfg)
    rho, vel = sc.profile(grid, cfg, eps)
    th = cfg.section("theta")
    nodes, weights = discretize_mu(grid.dim, th["nodes"], th["cutoff"], th["max_tail"])
    spread = cfg.get("scenario", "spread")
    m = len(weights)
    rhos = np.broadcast_to(rho, (m,) + grid.shape).copy()
    vels = np.stack([vel + spread * node.reshape((-1,) + (1,) * grid.dim) for node in nodes])
    return make_family(grid, nodes, weights, rhos, vels, eps)


def limit_family(family: FluidFamily) -> FluidFamily:
    """Initial data of the limit system: constraint restored, current projected."""
    return project_limit(replace(family, epsilon=None, markers=None, marker_weights=None))


def kinetic_ensemble(cfg, seed: int | None = None, epsilon: float | None = None) -> ParticleEnsemble:
    """Particles for a kinetic run of the configured scenario."""
    sc = get(cfg.get("scenario", "name"))
    if sc.fluid:
        return superpose(fluid_family(cfg, epsilon), cfg.get("particles", "per_cell"))
    s = cfg.section("scenario")
    dim = cfg.get("grid", "dim")
    spec = DensitySpec(dim, "maxwellian", s["thermal"], s["vcut"], None, s["amplitude"], None)
    params = cfg.params if epsilon is None else replace(cfg.params, epsilon=epsilon)
    return sample_ensemble(spec, cfg.get("particles", "count"), cfg.seed if seed is None else seed, params)

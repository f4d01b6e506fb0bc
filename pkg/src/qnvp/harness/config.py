"""Experiment configuration: a small INI dialect with a fixed schema.

Files look like::

    # comment
    [params]
    epsilon = 0.25
    [scenario]
    name = oscillating

Every key must be known to the schema; missing required keys are reported
together. Unset keys take the defaults listed in :data:`SCHEMA`.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..core import QuasineutralParams

REQUIRED = object()

_BOOL = {"true": True, "yes": True, "on": True, "1": True, "false": False, "no": False, "off": False, "0": False}


def _float(text: str) -> float:
    return float(text)


def _int(text: str) -> int:
    return int(text)


def _bool(text: str) -> bool:
    try:
        return _BOOL[text.lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {text!r}") from None


def _str(text: str) -> str:
    return text


def _float_list(text: str) -> tuple:
    return tuple(float(t) for t in re.split(r"[,\s]+", text.strip()) if t)


def _dt(text: str):
    return "auto" if text.lower() == "auto" else float(text)


# section -> key -> (parser, default, help)
SCHEMA: dict[str, dict[str, tuple]] = {
    "params": {
        "epsilon": (_float, REQUIRED, "scaled Debye length"),
        "gamma": (_float, 1.0, "velocity-support exponent"),
        "alpha": (_float, 0.5, "2D support-growth exponent"),
        "beta": (_float, 3.0, "analyticity exponent"),
        "k": (_float, 1.0, "threshold constant"),
        "c0": (_float, 2.0, "stability-envelope constant"),
        "c_alpha": (_float, 1.0, "support-envelope constant"),
        "final_time": (_float, 1.0, "horizon T"),
    },
    "grid": {
        "dim": (_int, 2, "space dimension"),
        "cells": (_int, 32, "cells per axis"),
    },
    "particles": {
        "per_cell": (_int, 1, "lattice particles per cell (fluid scenarios)"),
        "count": (_int, 100_000, "sampled particles (kinetic scenarios)"),
    },
    "time": {
        "dt": (_dt, "auto", "time step or 'auto'"),
        "cfl": (_float, 0.5, "fraction of the CFL limit used by dt=auto"),
        "samples": (_int, 20, "sample intervals on [0, T]"),
    },
    "scenario": {
        "name": (_str, REQUIRED, "initial data"),
        "amplitude": (_float, 0.5, "density modulation (times eps^2 for oscillating)"),
        "drift": (_float, 0.3, "compressive velocity amplitude"),
        "transverse": (_float, 0.2, "transverse velocity amplitude"),
        "shear": (_float, 0.2, "divergence-free shear amplitude"),
        "thermal": (_float, 0.5, "thermal speed (maxwellian)"),
        "vcut": (_float, 2.0, "velocity cutoff (maxwellian)"),
        "spread": (_float, 0.0, "velocity offset per unit theta (multi-fluid)"),
    },
    "perturbation": {
        "kind": (_str, "velocity", "'velocity' or 'none'"),
        "magnitude": (_float, 0.0, "target W2 between perturbed and analytic data"),
        "fraction": (_float, 0.1, "fraction of displaced particles"),
        "mode": (_int, 4, "wavenumber of the displacement field"),
        "tolerance": (_float, 0.05, "relative tolerance on the achieved W2"),
    },
    "theta": {
        "nodes": (_int, 1, "Gauss nodes per axis (1 = monokinetic)"),
        "cutoff": (_float, 6.0, "quadrature box half-width"),
        "max_tail": (_float, 1e-4, "admissible discarded mu-mass"),
    },
    "correctors": {
        "frequency": (_str, "linear", "'linear' (1/eps) or 'sqrt' (1/sqrt eps)"),
    },
    "bounds": {
        "safety": (_float, 2.0, "calibration safety factor"),
    },
    "checks": {
        "energy_tol": (_float, 0.01, "relative total-energy drift"),
        "mass_tol": (_float, 1e-12, "relative mass drift"),
        "triangle_tol": (_float, 1e-9, "slack of the triangle check"),
    },
    "sweep": {
        "epsilons": (_float_list, (0.5, 0.25), "epsilon values"),
        "schedule": (_str, "square", "'square' (phi=eps^2), 'fixed' or 'power:s'"),
    },
    "output": {
        "dir": (_str, "out", "output directory"),
        "figures": (_bool, True, "render figures"),
    },
    "run": {
        "seed": (_int, 0, "base seed"),
    },
}


class ConfigError(ValueError):
    """Malformed, incomplete or unknown configuration entries."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved configuration.

    ``values`` maps ``section -> key -> value`` for every schema entry;
    ``explicit`` records which entries came from the file.
    """

    values: dict
    explicit: frozenset = field(default_factory=frozenset)
    source: str | None = None

    def __post_init__(self):
        _validate(self.values)

    def get(self, section: str, key: str):
        return self.values[section][key]

    def section(self, name: str) -> dict:
        return dict(self.values[name])

    @property
    def params(self) -> QuasineutralParams:
        p = self.values["params"]
        return QuasineutralParams(
            epsilon=p["epsilon"], gamma=p["gamma"], alpha=p["alpha"], beta=p["beta"],
            cap_k=p["k"], c0=p["c0"], c_alpha=p["c_alpha"], final_time=p["final_time"],
        )

    @property
    def epsilon(self) -> float:
        return self.values["params"]["epsilon"]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def out_dir(self) -> Path:
        return Path(self.values["output"]["dir"])

    def with_values(self, **updates) -> ExperimentConfig:
        """Copy with ``section__key=value`` overrides applied."""
        vals = {s: dict(kv) for s, kv in self.values.items()}
        explicit = set(self.explicit)
        for name, v in updates.items():
            section, _, key = name.partition("__")
            if section not in SCHEMA or key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")
            vals[section][key] = v
            explicit.add((section, key))
        return replace(self, values=vals, explicit=frozenset(explicit))

    def to_text(self, annotate: bool = False, skip=()) -> str:
        """Resolved configuration in the same INI dialect."""
        lines = []
        for section, keys in SCHEMA.items():
            if section in skip:
                continue
            lines.append(f"[{section}]")
            for key in keys:
                v = self.values[section][key]
                tail = ""
                if annotate and (section, key) not in self.explicit:
                    tail = "  # default"
                lines.append(f"{key} = {_render(v)}{tail}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        """Hash of everything that can change results (not the output location)."""
        return hashlib.sha256(self.to_text(skip=("output",)).encode()).hexdigest()


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def _validate(values: dict) -> None:
    p = values["params"]
    if not 0 < p["epsilon"] <= 1:
        raise ConfigError(f"params.epsilon must lie in (0, 1], got {p['epsilon']}")
    if p["final_time"] <= 0:
        raise ConfigError("params.final_time must be positive")
    if values["grid"]["dim"] not in (1, 2, 3):
        raise ConfigError("grid.dim must be 1, 2 or 3")
    if values["perturbation"]["magnitude"] < 0:
        raise ConfigError("perturbation.magnitude must be non-negative")
    if values["perturbation"]["kind"] not in ("velocity", "none"):
        raise ConfigError(f"unknown perturbation.kind {values['perturbation']['kind']!r}")
    if not 0 < values["perturbation"]["fraction"] <= 1:
        raise ConfigError("perturbation.fraction must lie in (0, 1]")
    if values["correctors"]["frequency"] not in ("linear", "sqrt"):
        raise ConfigError(f"unknown correctors.frequency {values['correctors']['frequency']!r}")
    if values["time"]["samples"] < 1:
        raise ConfigError("time.samples must be >= 1")
    dt = values["time"]["dt"]
    if dt != "auto" and not dt > 0:
        raise ConfigError("time.dt must be positive or 'auto'")
    sched = values["sweep"]["schedule"]
    if sched not in ("square", "fixed") and not sched.startswith("power:"):
        raise ConfigError(f"unknown sweep.schedule {sched!r}")
    for e in values["sweep"]["epsilons"]:
        if not 0 < e <= 1:
            raise ConfigError(f"sweep epsilons must lie in (0, 1], got {e}")
    from .scenarios import SCENARIOS

    if values["scenario"]["name"] not in SCENARIOS:
        raise ConfigError(f"unknown scenario {values['scenario']['name']!r}; known: {', '.join(sorted(SCENARIOS))}")
    # building the params object enforces its own invariants
    try:
        QuasineutralParams(
            epsilon=p["epsilon"], gamma=p["gamma"], alpha=p["alpha"], beta=p["beta"],
            cap_k=p["k"], c0=p["c0"], c_alpha=p["c_alpha"], final_time=p["final_time"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


_SECTION = re.compile(r"^\[\s*([A-Za-z_][\w]*)\s*\]$")
_ENTRY = re.compile(r"^([A-Za-z_][\w]*)\s*=\s*(.*)$")


def parse_text(text: str, source: str | None = None) -> ExperimentConfig:
    """Parse config text; see the module docstring for the dialect.

    Raises:
        ConfigError: syntax errors, unknown sections or keys (named), bad
            values, or missing required keys (all of them listed).
    """
    raw: dict[str, dict[str, str]] = {}
    section = None
    unknown = []
    where = source or "<text>"
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1)
            if section not in SCHEMA:
                unknown.append(f"[{section}]")
            raw.setdefault(section, {})
            continue
        m = _ENTRY.match(line)
        if not m:
            raise ConfigError(f"{where}:{lineno}: cannot parse {line!r}")
        if section is None:
            raise ConfigError(f"{where}:{lineno}: key {m.group(1)!r} outside any section")
        key, value = m.group(1), m.group(2).strip()
        if section in SCHEMA and key not in SCHEMA[section]:
            unknown.append(f"{section}.{key}")
        if key in raw[section]:
            raise ConfigError(f"{where}:{lineno}: duplicate key {section}.{key}")
        raw[section][key] = value
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")

    values, explicit, missing = {}, set(), []
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (parse, default, _) in keys.items():
            if key in raw.get(sec, {}):
                try:
                    values[sec][key] = parse(raw[sec][key])
                except ValueError as exc:
                    raise ConfigError(f"bad value for {sec}.{key}: {exc}") from None
                explicit.add((sec, key))
            elif default is REQUIRED:
                missing.append(f"{sec}.{key}")
            else:
                values[sec][key] = default
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    return ExperimentConfig(values, frozenset(explicit), source)


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_text(path.read_text(), str(path))


def default_config(scenario: str, epsilon: float, **updates) -> ExperimentConfig:
    """Config with only the required keys set, plus overrides."""
    cfg = parse_text(f"[params]\nepsilon = {epsilon!r}\n[scenario]\nname = {scenario}\n")
    return cfg.with_values(**updates) if updates else cfg


def phi_schedule(cfg: ExperimentConfig, epsilon: float) -> float:
    sched = cfg.get("sweep", "schedule")
    if sched == "fixed":
        return cfg.get("perturbation", "magnitude")
    if sched == "square":
        return epsilon**2
    s = float(sched.split(":", 1)[1])
    if not math.isfinite(s) or s <= 0:
        raise ConfigError(f"bad power in sweep.schedule {sched!r}")
    return epsilon**s

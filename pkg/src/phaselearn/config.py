"""Experiment configuration: a TOML-like sectioned key-value file.

Syntax: ``[section]`` headers with one ``key = value`` per line; values are
JSON literals (numbers, quoted strings, booleans, lists).  Comments start
with ``#``.  Example::

    [model]
    name = "pinning"
    kappa0 = 1.0

    [lattice]
    dim = 1
    extent = [8]
    boundary = "open"

Schema validation happens before any simulation runs.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError
from .lattice import Lattice

__all__ = ["ExperimentConfig", "load_config", "parse_config_text"]

_MODE_ALIASES = {
    "steady": "steady_state",
    "steady_state": "steady_state",
    "general": "general_phase",
    "general_phase": "general_phase",
    "slow": "slow_mixing",
    "slow_mixing": "slow_mixing",
}


@dataclass
class ExperimentConfig:
    """Validated, fully deterministic description of one experiment run."""

    model_name: str
    hyper: dict
    lattice: Lattice
    mode: str = "steady_state"
    epsilon: float = 0.3
    delta: float = 0.1
    delta_prime: float = 0.1
    observables: list[str] = field(default_factory=lambda: ["Z@0"])
    k0: int = 1
    omega: int = 0
    n_cap: int | None = 100_000
    n_override: int | None = None
    q_override: int | None = None
    gamma_override: float | None = None
    r_override: int | None = None
    n_test: int = 50
    sweep: list[int] = field(default_factory=list)
    constants_source: str = "measure"
    constants: dict = field(default_factory=dict)
    f_n: float | None = None
    kappa_exponent: float = 1.0
    mom_batches: int | None = None
    seed: int = 0
    out_dir: str = "out"
    workers: int = 1
    diagnostics_regions: dict = field(default_factory=dict)

    def validate(self) -> None:
        from .models import CATALOG

        if self.model_name not in CATALOG:
            raise ConfigError(f"unknown model {self.model_name!r}; have {sorted(CATALOG)}")
        if self.mode not in _MODE_ALIASES.values():
            raise ConfigError(f"bad mode {self.mode!r}")
        for name in ("epsilon", "delta", "delta_prime"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if self.mode == "slow_mixing" and (self.f_n is None or self.f_n <= 0):
            raise ConfigError("slow mode requires a positive f_n")
        if not self.observables:
            raise ConfigError("at least one observable is required")
        if self.k0 < 0 or self.n_test < 1 or self.workers < 1:
            raise ConfigError("k0 >= 0, n_test >= 1, workers >= 1 required")
        if self.n_cap is not None and self.n_cap < 1:
            raise ConfigError("n_cap must be positive (or null for uncapped)")
        if any(s < 1 for s in self.sweep):
            raise ConfigError("sweep sample counts must be positive")
        if self.constants_source not in ("measure", "explicit"):
            raise ConfigError("constants source must be 'measure' or 'explicit'")
        if self.constants_source == "explicit":
            missing = {"xi", "gamma_prime", "c_prime"} - set(self.constants)
            if missing:
                raise ConfigError(f"explicit constants missing {sorted(missing)}")
        if self.omega not in (0, 1):
            raise ConfigError("omega must be 0 or 1")
        if self.omega == 1 and not (self.lattice.dim == 1 and self.lattice.boundary == "open"):
            raise ConfigError("ancilla choice 1 needs an open 1D chain")
        # observable parse check against the lattice
        from .lattice import observable_from_string

        for spec in self.observables:
            try:
                obs = observable_from_string(spec, self.lattice, k0=max(self.k0, 1))
            except Exception as exc:
                raise ConfigError(f"bad observable {spec!r}: {exc}") from exc
            if any(s >= self.lattice.n_sites for s in obs.support.sites):
                raise ConfigError(f"observable {spec!r} leaves the lattice")
        if self.diagnostics_regions:
            self._validate_regions()

    def _validate_regions(self) -> None:
        need = {"a", "r", "w"}
        if not need <= set(self.diagnostics_regions):
            raise ConfigError("diagnostics regions need keys 'a', 'r', 'w'")
        n = self.lattice.n_sites
        prev: set[int] = set()
        for key in ("a", "r", "w"):
            sites = set(self.diagnostics_regions[key])
            if not sites or any(not 0 <= s < n for s in sites):
                raise ConfigError(f"region {key!r} has sites outside the lattice")
            if prev and not prev <= sites:
                raise ConfigError("diagnostics regions must nest a within r within w")
            prev = sites


def _coerce(value: str, where: str) -> Any:
    try:
        return json.loads(value)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"value {value!r} at {where} is not a JSON literal") from exc


def parse_config_text(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc

    def section(name: str) -> dict:
        if not cp.has_section(name):
            return {}
        return {k: _coerce(v, f"[{name}] {k}") for k, v in cp.items(name)}

    model = section("model")
    lattice_s = section("lattice")
    targets = section("targets")
    mode_s = section("mode")
    training = section("training")
    constants_s = section("constants")
    run = section("run")
    obs_s = section("observables")
    diag = section("diagnostics")

    if "name" not in model:
        raise ConfigError("[model] section must define name")
    name = model.pop("name")
    try:
        lattice = Lattice(
            dim=lattice_s.get("dim", 1),
            extent=tuple(lattice_s.get("extent", [4])),
            boundary=lattice_s.get("boundary", "open"),
            local_dim=lattice_s.get("local_dim", 2),
        )
    except ValueError as exc:
        raise ConfigError(f"bad lattice: {exc}") from exc

    raw_mode = mode_s.get("mode", "steady")
    if raw_mode not in _MODE_ALIASES:
        raise ConfigError(f"unknown mode {raw_mode!r}")

    def opt(d: dict, key: str, default=None):
        v = d.get(key, default)
        return None if v == "plan" else v

    constants_source = constants_s.pop("source", "measure")
    kappa_exponent = constants_s.pop("kappa_exponent", 1.0)
    cfg = ExperimentConfig(
        model_name=name,
        hyper=model,
        lattice=lattice,
        mode=_MODE_ALIASES[raw_mode],
        epsilon=targets.get("epsilon", 0.3),
        delta=targets.get("delta", 0.1),
        delta_prime=targets.get("delta_prime", 0.1),
        observables=obs_s.get("specs", ["Z@0"]),
        k0=targets.get("k0", 1),
        omega=mode_s.get("omega", 0),
        n_cap=training.get("n_cap", 100_000),
        n_override=opt(training, "n_override"),
        q_override=opt(training, "q_override"),
        gamma_override=opt(training, "gamma_override"),
        r_override=opt(training, "r_override"),
        n_test=training.get("n_test", 50),
        sweep=training.get("sweep", []),
        constants_source=constants_source,
        constants=constants_s,
        f_n=mode_s.get("f_n"),
        kappa_exponent=kappa_exponent,
        mom_batches=opt(training, "mom_batches"),
        seed=run.get("seed", 0),
        out_dir=run.get("out", "out"),
        workers=run.get("workers", 1),
        diagnostics_regions=diag,
    )
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} does not exist")
    return parse_config_text(p.read_text())

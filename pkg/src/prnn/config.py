"""Experiment configuration files.

A config is a YAML mapping with ``schema_version: 1``. Every section is
optional and falls back to the defaults below; unknown keys are rejected so
that typos fail loudly.

.. code-block:: yaml

    schema_version: 1
    seed: 0
    out: runs/demo
    rve: {n_fibers: 4, vf: 0.6, n_div: 24, seed: 0}
    paths: {step_size: 1.0e-4, n_steps: 60}
    datasets:
      train: {counts: {I: all}}
      test_III: {counts: {III: 10}, split: 2}
    network: {n_points: 2}
    train: {set: train, epochs: 1000, seeds: [0]}
    eval: {sets: [test_III]}
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .microfe import SolverSettings
from .pathgen import CURVE_TYPES, CurveTypeParams, GpSpec

__all__ = ["SCHEMA_VERSION", "ConfigError", "ExperimentConfig", "load_config", "DEFAULTS"]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


DEFAULTS: dict = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "out": "runs/default",
    "workers": 1,
    "rve": {"n_fibers": 4, "vf": 0.6, "n_div": 24, "seed": 0, "min_gap": 0.05},
    "solver": {"tol": 1e-8, "max_iter": 25, "max_bisections": 5},
    "paths": {"step_size": 1e-4, "n_steps": 60, "iii_peak": 30, "iii_valley": 45,
              "iii_fraction": 0.4, "iva_peak": 40, "iva_valley": 50, "iva_fraction": 0.2,
              "ivb_refine": 10},
    "gp": {"lengthscale": 20.0, "sigma_f": 1e-3, "jitter": 1e-10},
    "datasets": {
        "train": {"counts": {"I": "all"}},
        "val": {"counts": {"II": 10}, "split": 1},
    },
    "network": {"n_points": 2},
    "train": {"set": "train", "epochs": 1000, "batch_size": 9, "lr": 1e-3,
              "beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "seeds": [0], "log_every": 100},
    "grid": {"sizes": [1, 2, 3, 4], "n_seeds": 5, "train_set": "train", "val_set": "val"},
    "eval": {"sets": ["val"]},
    "drive": {"direction": [1.0, 0.0, 0.0], "peak_stress": 40.0, "n_steps": 20},
    "bench": {"set": "train", "index": 0},
}

_DATASET_KEYS = {"counts", "split", "seed", "source", "teacher_seed", "teacher_points"}


def _merge(base: dict, over: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown key {where}{k!r}")
        if isinstance(base[k], dict) and k != "datasets":
            if not isinstance(v, dict):
                raise ConfigError(f"{where}{k} must be a mapping")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))
    source: Path | None = None

    def __post_init__(self):
        self.validate()

    # convenience views -------------------------------------------------

    @property
    def out(self) -> Path:
        return Path(self.raw["out"])

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def curve_params(self) -> CurveTypeParams:
        return CurveTypeParams(**self.raw["paths"])

    @property
    def gp_spec(self) -> GpSpec:
        g = self.raw["gp"]
        return GpSpec(lengthscale=float(g["lengthscale"]), sigma_f=float(g["sigma_f"]),
                      n_steps=int(self.raw["paths"]["n_steps"]), jitter=float(g["jitter"]))

    @property
    def solver(self) -> SolverSettings:
        s = self.raw["solver"]
        return SolverSettings(tol=float(s["tol"]), max_iter=int(s["max_iter"]),
                              max_bisections=int(s["max_bisections"]))

    @property
    def datasets(self) -> dict:
        return self.raw["datasets"]

    def section(self, name: str) -> dict:
        return self.raw[name]

    def dataset_spec(self, name: str, where: str = "") -> dict:
        """Spec of a named dataset; references are checked when they are used."""
        if name not in self.raw["datasets"]:
            raise ConfigError(f"{where or 'reference'}: undefined dataset {name!r}")
        return self.raw["datasets"][name]

    def validate(self) -> None:
        r = self.raw
        if r.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {r.get('schema_version')!r}")
        try:
            self.curve_params
            self.gp_spec
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad paths/gp section: {exc}") from exc
        for name, ds in r["datasets"].items():
            if not isinstance(ds, dict) or "counts" not in ds:
                raise ConfigError(f"dataset {name!r} needs a 'counts' mapping")
            extra = set(ds) - _DATASET_KEYS
            if extra:
                raise ConfigError(f"dataset {name!r}: unknown keys {sorted(extra)}")
            for t in ds["counts"]:
                if t not in CURVE_TYPES:
                    raise ConfigError(f"dataset {name!r}: unknown curve type {t!r}")
            if ds.get("source", "oracle") not in ("oracle", "teacher"):
                raise ConfigError(f"dataset {name!r}: source must be 'oracle' or 'teacher'")
        if int(r["network"]["n_points"]) < 1:
            raise ConfigError("network.n_points must be >= 1")


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a YAML config (or the defaults when ``path`` is None)."""
    doc: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} not found")
        try:
            doc = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a mapping")
    raw = _merge(DEFAULTS, doc, "")
    if overrides:
        raw = _merge(raw, overrides, "")
    return ExperimentConfig(raw, Path(path) if path else None)

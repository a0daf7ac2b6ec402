"""File formats: checkpoints, labeled datasets, loss and grid tables.

Checkpoints are JSON with a schema version. Floats are written with
``repr`` precision, so a save/load round trip is bit-exact. Datasets live in
a directory with one CSV per curve plus a ``manifest.json``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import PrnnConfig, PrnnParams
from .pathgen import LoadPath

__all__ = [
    "CHECKPOINT_VERSION",
    "MANIFEST_VERSION",
    "CheckpointError",
    "LabeledCurve",
    "save_checkpoint",
    "load_checkpoint",
    "save_dataset",
    "load_dataset",
    "write_loss_csv",
    "read_loss_csv",
    "write_rows_csv",
]

CHECKPOINT_VERSION = 1
MANIFEST_VERSION = 1

_CURVE_COLUMNS = ["t", "eps_xx", "eps_yy", "gamma_xy", "sig_xx", "sig_yy", "sig_xy"]


class CheckpointError(ValueError):
    """Unreadable checkpoint or one that does not match its configuration."""


@dataclass
class LabeledCurve:
    """A strain path together with its oracle stresses."""

    path: LoadPath
    stresses: np.ndarray
    name: str = ""
    info: dict = field(default_factory=dict)

    @property
    def strains(self) -> np.ndarray:
        return self.path.strains

    @property
    def curve_type(self) -> str:
        return self.path.curve_type


def save_checkpoint(path, params: PrnnParams, config: PrnnConfig, extra: dict | None = None) -> None:
    doc = {
        "schema_version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "w_encoder": params.w_encoder.tolist(),
        "w_decoder_raw": params.w_decoder_raw.tolist(),
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))


def load_checkpoint(path) -> tuple[PrnnParams, PrnnConfig, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("schema_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('schema_version')!r}")
    config = PrnnConfig.from_dict(doc["config"])
    params = PrnnParams(np.array(doc["w_encoder"], dtype=float),
                        np.array(doc["w_decoder_raw"], dtype=float))
    try:
        params.check(config)
    except ValueError as exc:
        raise CheckpointError(str(exc)) from exc
    return params, config, doc.get("extra", {})


def _curve_meta(curve: LabeledCurve, fname: str) -> dict:
    p = curve.path
    return {
        "name": curve.name,
        "file": fname,
        "curve_type": p.curve_type,
        "seed": p.seed,
        "n_steps": p.n_steps,
        "step_size": p.step_size,
        "direction": None if p.direction is None else [float(x) for x in p.direction],
        "meta": p.meta,
        "info": curve.info,
    }


def save_dataset(directory, curves, failed: list[dict] | None = None, header: dict | None = None) -> Path:
    """Write one CSV per curve and a manifest; returns the manifest path."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, c in enumerate(curves):
        name = c.name or f"{c.curve_type}_{i:04d}"
        fname = f"{name}.csv"
        with open(d / fname, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_CURVE_COLUMNS)
            for t, (e, s) in enumerate(zip(c.strains, c.stresses)):
                w.writerow([t, *map(repr, map(float, e)), *map(repr, map(float, s))])
        entries.append(_curve_meta(c, fname))
    manifest = {"schema_version": MANIFEST_VERSION, **(header or {}),
                "curves": entries, "failed": failed or []}
    out = d / "manifest.json"
    out.write_text(json.dumps(manifest, indent=1))
    return out


def load_dataset(directory, curve_types=None) -> list[LabeledCurve]:
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"no dataset manifest in {d}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("schema_version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {manifest.get('schema_version')!r}")
    out = []
    for e in manifest["curves"]:
        if curve_types is not None and e["curve_type"] not in curve_types:
            continue
        data = np.loadtxt(d / e["file"], delimiter=",", skiprows=1, ndmin=2)
        direction = None if e["direction"] is None else np.array(e["direction"])
        path = LoadPath(data[:, 1:4].copy(), e["curve_type"], e["seed"], e["step_size"],
                        direction, e.get("meta", {}))
        out.append(LabeledCurve(path, data[:, 4:7].copy(), e["name"], e.get("info", {})))
    return out


def write_loss_csv(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(history):
            w.writerow([i, repr(float(v))])


def read_loss_csv(path) -> list[float]:
    with open(path, newline="") as fh:
        return [float(r["loss"]) for r in csv.DictReader(fh)]


def write_rows_csv(path, rows: list[dict]) -> None:
    """Plain table from a list of dicts sharing the same keys."""
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)

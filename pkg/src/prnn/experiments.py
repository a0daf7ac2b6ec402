"""Evaluation, labeling and benchmarking workflows built on the core modules.

Error metric used throughout: for one curve, the RMSE over every step and
all three stress components (MPa). A test-set error is the mean of the
per-curve RMSEs; the per-step series is the mean absolute error over curves
and components at each step.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constitutive import ReturnMapDiverged, elastic_stiffness
from .io import LabeledCurve
from .microfe import (
    PathFailed,
    RveMesh,
    PbcMap,
    SolverSettings,
    SolverStats,
    label_path,
)
from .network import (
    PrnnConfig,
    PrnnParams,
    PrnnState,
    forward_sequence,
    forward_step,
    jacobian,
)

__all__ = [
    "METRIC",
    "CurveError",
    "SetReport",
    "ErrorReport",
    "DriverDiverged",
    "DriveResult",
    "label_curves",
    "evaluate_set",
    "evaluate",
    "secant_unloading_error",
    "elastic_network_tangent",
    "drive",
    "bench",
]

log = logging.getLogger(__name__)

METRIC = ("per-curve RMSE over all steps and 3 stress components (MPa); set error = mean over "
          "curves; per-step series = mean |error| over curves and components")


# --------------------------------------------------------------------------
# labeling
# --------------------------------------------------------------------------


def _label_one(mesh, pbc, path, settings):
    stats = SolverStats()
    t0 = time.perf_counter()
    try:
        sig = label_path(mesh, pbc, path, settings, stats)
    except PathFailed as exc:
        return None, {"error": str(exc), "step": exc.step, **stats.as_dict()}
    # wall time goes to the log only so that written labels stay reproducible
    log.info("labelled %s path (seed %s) in %.2f s", path.curve_type, path.seed, time.perf_counter() - t0)
    return sig, stats.as_dict()


def label_curves(mesh: RveMesh, pbc: PbcMap, paths, settings: SolverSettings = SolverSettings(),
                 workers: int = 1, prefix: str = "") -> tuple[list[LabeledCurve], list[dict]]:
    """Label paths with the oracle; failed paths are returned separately.

    Each path gets its own solver state, so jobs are independent and the
    result is the same for any number of workers.
    """
    paths = list(paths)
    if workers > 1:
        # each job needs its own assembly cache
        import copy

        def job(p):
            return _label_one(mesh, copy.copy(pbc), p, settings)

        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, paths))
    else:
        results = [_label_one(mesh, pbc, p, settings) for p in paths]
    good, failed = [], []
    for i, (p, (sig, info)) in enumerate(zip(paths, results)):
        name = f"{prefix}{p.curve_type}_{i:04d}"
        if sig is None:
            failed.append({"name": name, "curve_type": p.curve_type, "seed": p.seed, **info})
        else:
            good.append(LabeledCurve(p, sig, name, info))
    return good, failed


# --------------------------------------------------------------------------
# errors
# --------------------------------------------------------------------------


@dataclass
class CurveError:
    name: str
    curve_type: str
    rmse: float
    step_sq: np.ndarray  # mean squared error over components, per step
    step_abs: np.ndarray  # mean absolute error over components, per step

    def as_dict(self) -> dict:
        return {"name": self.name, "curve_type": self.curve_type, "rmse": self.rmse}


@dataclass
class SetReport:
    name: str
    curves: list[CurveError]

    @property
    def rmse(self) -> float:
        return float(np.mean([c.rmse for c in self.curves]))

    @property
    def worst(self) -> float:
        return float(max(c.rmse for c in self.curves))

    @property
    def best(self) -> float:
        return float(min(c.rmse for c in self.curves))

    def step_series(self) -> np.ndarray:
        lengths = {c.step_abs.size for c in self.curves}
        if len(lengths) != 1:
            raise ValueError(f"set {self.name!r} mixes path lengths {sorted(lengths)}")
        return np.mean([c.step_abs for c in self.curves], axis=0)

    def summary(self) -> dict:
        return {"set": self.name, "n_curves": len(self.curves), "mean_rmse": self.rmse,
                "best_rmse": self.best, "worst_rmse": self.worst}


@dataclass
class ErrorReport:
    sets: dict[str, SetReport] = field(default_factory=dict)
    metric: str = METRIC

    def summary(self) -> dict:
        return {"metric": self.metric, "sets": {k: v.summary() for k, v in self.sets.items()}}

    def curve_rows(self) -> list[dict]:
        return [{"set": k, **c.as_dict()} for k, s in self.sets.items() for c in s.curves]

    def step_rows(self) -> list[dict]:
        rows = []
        for k, s in self.sets.items():
            for t, v in enumerate(s.step_series()):
                rows.append({"set": k, "step": t, "mean_abs_error": float(v)})
        return rows


def _curve_error(params, config, curve) -> CurveError:
    pred, _ = forward_sequence(params, config, curve.strains)
    err = pred - curve.stresses
    sq = np.mean(err ** 2, axis=1)
    return CurveError(getattr(curve, "name", ""), getattr(curve, "curve_type", ""),
                      float(math.sqrt(sq.mean())), sq, np.mean(np.abs(err), axis=1))


def evaluate_set(params: PrnnParams, config: PrnnConfig, curves, name: str = "test") -> SetReport:
    curves = list(curves)
    if not curves:
        raise ValueError(f"test set {name!r} is empty")
    return SetReport(name, [_curve_error(params, config, c) for c in curves])


def evaluate(params: PrnnParams, config: PrnnConfig, test_sets: dict) -> ErrorReport:
    return ErrorReport({k: evaluate_set(params, config, v, k) for k, v in test_sets.items()})


def secant_unloading_error(params: PrnnParams, config: PrnnConfig, curve, peak: int,
                           valley: int) -> float:
    """Relative error of the unloading secant stiffness along the path direction.

    The secant is ``(sig[peak] - sig[valley]) . n / (lam[peak] - lam[valley])``
    evaluated for the network and the oracle labels.
    """
    pred, _ = forward_sequence(params, config, curve.strains)
    n = curve.path.direction
    deps = (curve.strains[peak] - curve.strains[valley]) @ n
    ref = (curve.stresses[peak] - curve.stresses[valley]) @ n / deps
    got = (pred[peak] - pred[valley]) @ n / deps
    return float(abs(got - ref) / abs(ref))


# --------------------------------------------------------------------------
# stress-controlled driver
# --------------------------------------------------------------------------


class DriverDiverged(RuntimeError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass
class DriveResult:
    strains: np.ndarray
    stresses: np.ndarray
    iterations: list[int]
    residuals: list[list[float]]

    @property
    def mean_iterations(self) -> float:
        return float(np.mean(self.iterations)) if self.iterations else 0.0


def elastic_network_tangent(params: PrnnParams, config: PrnnConfig) -> np.ndarray:
    """Network Jacobian with every fictitious point elastic."""
    De = elastic_stiffness(config.material.props)
    m = config.n_points
    block = np.kron(np.eye(m), De)
    return params.decoder_weights @ block @ params.w_encoder


def drive(params: PrnnParams, config: PrnnConfig, target_stresses, tangent: str = "consistent",
          tol: float = 1e-8, max_iter: int = 25) -> DriveResult:
    """Find the strain path whose network stress equals the given stresses.

    At every step Newton iterations update the strain from the previous
    converged value; the history is advanced only once a step converges.
    ``tangent`` is ``"consistent"`` (the network Jacobian) or ``"elastic"``
    (the constant initial Jacobian). Iterations count residual evaluations,
    so a step that is already in equilibrium costs one.
    """
    if tangent not in ("consistent", "elastic"):
        raise ValueError(f"unknown tangent {tangent!r}")
    targets = np.atleast_2d(np.asarray(target_stresses, dtype=float))
    K_el = elastic_network_tangent(params, config) if tangent == "elastic" else None
    state = PrnnState.virgin(config.n_points)
    eps = np.zeros(3)
    strains, stresses, its, logs = [], [], [], []
    for t, target in enumerate(targets):
        scale = max(float(np.linalg.norm(target)), 1.0)
        res_log = []
        for it in range(1, max_iter + 1):
            try:
                sig, new_state, rec = forward_step(params, config, eps, state)
            except ReturnMapDiverged as exc:
                raise DriverDiverged(f"step {t}, iteration {it}: {exc}", step=t) from exc
            r = sig - target
            res_log.append(float(np.linalg.norm(r)))
            if res_log[-1] <= tol * scale:
                break
            K = jacobian(params, config, rec) if K_el is None else K_el
            try:
                eps = eps - np.linalg.solve(K, r)
            except np.linalg.LinAlgError as exc:
                raise DriverDiverged(f"step {t}, iteration {it}: singular tangent", step=t) from exc
        else:
            raise DriverDiverged(f"step {t}: no convergence in {max_iter} iterations", step=t)
        state = new_state
        strains.append(eps.copy())
        stresses.append(sig)
        its.append(it)
        logs.append(res_log)
    return DriveResult(np.array(strains), np.array(stresses), its, logs)


# --------------------------------------------------------------------------
# benchmark
# --------------------------------------------------------------------------


def bench(params: PrnnParams, config: PrnnConfig, mesh: RveMesh, pbc: PbcMap, path,
          settings: SolverSettings = SolverSettings(), repeats: int = 5) -> dict:
    """Per-step wall-clock cost of the network and of the oracle on one path."""
    strains = np.asarray(getattr(path, "strains", path), dtype=float)
    n = strains.shape[0]
    forward_sequence(params, config, strains[:2])  # compile outside the timer
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        forward_sequence(params, config, strains)
        best = min(best, time.perf_counter() - t0)
    label_path(mesh, pbc, strains[:2], settings)
    stats = SolverStats()
    t0 = time.perf_counter()
    label_path(mesh, pbc, strains, settings, stats)
    oracle = time.perf_counter() - t0
    return {
        "n_steps": n,
        "n_points": config.n_points,
        "n_elements": mesh.n_elements,
        "prnn_seconds_per_step": best / n,
        "oracle_seconds_per_step": oracle / n,
        "speedup": (oracle / n) / (best / n),
        "prnn_material_calls_per_step": config.n_points,
        "oracle_material_calls_per_step": stats.material_calls / n,
        "oracle_iterations_per_step": stats.iterations / n,
        "oracle_stats": stats.as_dict(),
    }

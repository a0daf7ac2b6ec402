"""Training: loss, backpropagation through time, Adam and the model-selection grid.

Gradients are written out by hand. Going backwards in time, the error
signal of each fictitious point has two parts: the usual one coming from
the decoder and a history part ``d_h`` that flows from step ``t+1`` back
into the internal variables produced at step ``t``. The stress-strain block
of the material Jacobian is the consistent tangent returned by the model;
the three history blocks (internal variables w.r.t. strain, stress w.r.t.
previous internal variables, internal variables w.r.t. previous internal
variables) are taken by central finite differences.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from .constitutive import KIND_J2, N_INTVAR, ReturnMapDiverged, j2_fd_blocks
from .network import (
    ForwardTrace,
    PrnnConfig,
    PrnnParams,
    forward_sequence,
    init_params,
    sigmoid,
)

__all__ = [
    "TrainingFault",
    "Gradients",
    "AdamState",
    "TrainSpec",
    "TrainResult",
    "MaterialDerivatives",
    "loss",
    "dataset_loss",
    "material_fd_derivatives",
    "backward_sequence",
    "loss_and_gradients",
    "batch_gradients",
    "adam_step",
    "train",
    "GridRow",
    "grid_search",
    "summarize_grid",
    "rmse",
    "set_rmse",
]

log = logging.getLogger(__name__)

H_STRAIN = 1e-7
H_ALPHA = 1e-7


class TrainingFault(RuntimeError):
    """Non-finite gradients or a failed material update during training.

    ``params`` and ``history`` hold the state at the last good epoch.
    """

    def __init__(self, message, params=None, history=None, epoch=None):
        super().__init__(message)
        self.params = params
        self.history = history if history is not None else []
        self.epoch = epoch


@dataclass
class Gradients:
    g_encoder: np.ndarray
    g_decoder_raw: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.g_encoder.ravel(), self.g_decoder_raw.ravel()])

    def __add__(self, other: "Gradients") -> "Gradients":
        return Gradients(self.g_encoder + other.g_encoder, self.g_decoder_raw + other.g_decoder_raw)

    def scaled(self, a: float) -> "Gradients":
        return Gradients(a * self.g_encoder, a * self.g_decoder_raw)

    @classmethod
    def zeros_like(cls, params: PrnnParams) -> "Gradients":
        return cls(np.zeros_like(params.w_encoder), np.zeros_like(params.w_decoder_raw))


def loss(predictions, targets) -> float:
    """Mean over snapshots of half the squared stress error (MPa^2)."""
    p = np.asarray(predictions, dtype=float).reshape(-1, 3)
    t = np.asarray(targets, dtype=float).reshape(-1, 3)
    if p.shape != t.shape:
        raise ValueError(f"predictions {p.shape} and targets {t.shape} differ in length")
    return float(0.5 * np.sum((p - t) ** 2) / p.shape[0])


def rmse(predictions, targets) -> float:
    """Root-mean-square error over all steps and stress components (MPa)."""
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(targets, dtype=float)
    return float(np.sqrt(np.mean((p - t) ** 2)))


# --------------------------------------------------------------------------
# material-layer derivatives
# --------------------------------------------------------------------------


class MaterialDerivatives(NamedTuple):
    dsig_deps: np.ndarray      # (3, 3) consistent tangent
    dalpha_deps: np.ndarray    # (5, 3)
    dsig_dalpha: np.ndarray    # (3, 5)
    dalpha_dalpha: np.ndarray  # (5, 5)


def material_fd_derivatives(model, local_strain, state_prev=None,
                            h: float = H_STRAIN, h_alpha: float | None = None) -> MaterialDerivatives:
    """Jacobians of one constitutive update around ``(local_strain, state_prev)``."""
    from .constitutive import ElasticMaterial, MaterialState

    strain = np.asarray(local_strain, dtype=float)
    if state_prev is None:
        state_prev = MaterialState.virgin()
    alpha = state_prev.to_array() if hasattr(state_prev, "to_array") else np.asarray(state_prev, dtype=float)
    tangent = model.update(strain, MaterialState.from_array(alpha)).tangent
    if isinstance(model, ElasticMaterial):
        return MaterialDerivatives(tangent, np.zeros((N_INTVAR, 3)), np.zeros((3, N_INTVAR)), np.eye(N_INTVAR))
    dadeps = np.empty((N_INTVAR, 3))
    dsda = np.empty((3, N_INTVAR))
    dada = np.empty((N_INTVAR, N_INTVAR))
    j2_fd_blocks(model.packed, strain, alpha, h, h if h_alpha is None else h_alpha, dadeps, dsda, dada)
    return MaterialDerivatives(tangent, dadeps, dsda, dada)


# --------------------------------------------------------------------------
# backpropagation through time
# --------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def backward_kernel(w_enc, w_dec_eff, kind, mat, strains, loc_eps, loc_sig, tangents,
                    a_before, out, targets, scale, h_eps, h_alpha, g_enc, g_dec_eff):
    T = strains.shape[0]
    m = loc_eps.shape[1]
    d_h = np.zeros((m, N_INTVAR))
    d_k = np.empty(3 * m)
    d_l = np.empty(3)
    dadeps = np.zeros((N_INTVAR, 3))
    dsda = np.zeros((3, N_INTVAR))
    dada = np.zeros((N_INTVAR, N_INTVAR))
    if kind != KIND_J2:
        for i in range(N_INTVAR):
            dada[i, i] = 1.0
    dbar = np.empty(3)
    new_dh = np.empty(N_INTVAR)
    for t in range(T - 1, -1, -1):
        for i in range(3):
            d_l[i] = (out[t, i] - targets[t, i]) * scale
        for i in range(3):
            for j in range(m):
                for c in range(3):
                    g_dec_eff[i, 3 * j + c] += d_l[i] * loc_sig[t, j, c]
        for r in range(3 * m):
            s = 0.0
            for i in range(3):
                s += w_dec_eff[i, r] * d_l[i]
            d_k[r] = s
        for j in range(m):
            if kind == KIND_J2:
                j2_fd_blocks(mat, loc_eps[t, j], a_before[t, j], h_eps, h_alpha, dadeps, dsda, dada)
            for c in range(3):
                s = 0.0
                for i in range(3):
                    s += tangents[t, j, i, c] * d_k[3 * j + i]
                for q in range(N_INTVAR):
                    s += dadeps[q, c] * d_h[j, q]
                dbar[c] = s
            for k in range(N_INTVAR):
                s = 0.0
                for i in range(3):
                    s += dsda[i, k] * d_k[3 * j + i]
                for q in range(N_INTVAR):
                    s += dada[q, k] * d_h[j, q]
                new_dh[k] = s
            for k in range(N_INTVAR):
                d_h[j, k] = new_dh[k]
            for c in range(3):
                for e in range(3):
                    g_enc[3 * j + c, e] += dbar[c] * strains[t, e]


def backward_sequence(params: PrnnParams, config: PrnnConfig, trace: ForwardTrace, targets,
                      h: float = H_STRAIN, h_alpha: float = H_ALPHA) -> Gradients:
    """Gradient of the single-curve loss w.r.t. encoder and raw decoder weights."""
    targets = np.ascontiguousarray(targets, dtype=float).reshape(-1, 3)
    T = len(trace)
    if targets.shape[0] != T:
        raise ValueError(f"{targets.shape[0]} targets for a trace of {T} steps")
    kind, mat = config.material_array()
    w_dec_eff = params.decoder_weights
    g_enc = np.zeros_like(params.w_encoder)
    g_dec_eff = np.zeros_like(params.w_decoder_raw)
    backward_kernel(params.w_encoder, w_dec_eff, kind, mat, trace.macro_strains,
                    trace.local_strains, trace.local_stresses, trace.tangents,
                    trace.alpha_before, trace.macro_stresses, targets, 1.0 / T, h, h_alpha,
                    g_enc, g_dec_eff)
    grads = Gradients(g_enc, g_dec_eff * sigmoid(params.w_decoder_raw))
    if not (np.all(np.isfinite(grads.g_encoder)) and np.all(np.isfinite(grads.g_decoder_raw))):
        bad = np.argwhere(~np.isfinite(trace.macro_stresses))
        where = f"first non-finite output at step {bad[0][0]}" if len(bad) else "outputs finite"
        raise TrainingFault(f"non-finite gradient ({where})")
    return grads


def loss_and_gradients(params: PrnnParams, config: PrnnConfig, strains, targets,
                       **kw) -> tuple[float, Gradients]:
    pred, trace = forward_sequence(params, config, strains)
    return loss(pred, targets), backward_sequence(params, config, trace, targets, **kw)


def batch_gradients(params: PrnnParams, config: PrnnConfig, curves, **kw) -> tuple[float, Gradients]:
    """Average loss and gradient over curves (each curve weighted equally)."""
    total = Gradients.zeros_like(params)
    total_loss = 0.0
    for strains, targets in curves:
        val, g = loss_and_gradients(params, config, strains, targets, **kw)
        total = total + g
        total_loss += val
    b = len(curves)
    return total_loss / b, total.scaled(1.0 / b)


# --------------------------------------------------------------------------
# Adam
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: PrnnParams, **hyper) -> "AdamState":
        n = params.flat().size
        return cls(np.zeros(n), np.zeros(n), 0, **hyper)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(state: AdamState, params: PrnnParams, grads: Gradients) -> tuple[PrnnParams, AdamState]:
    g = grads.flat()
    x = params.flat()
    if g.shape != x.shape or state.m.shape != x.shape:
        raise ValueError("gradient, parameter and moment shapes disagree")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    x_new = x - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, step, state.lr, state.beta1, state.beta2, state.eps)
    return PrnnParams.from_flat(x_new, params.n_points), new_state


# --------------------------------------------------------------------------
# training loop
# --------------------------------------------------------------------------


@dataclass
class TrainSpec:
    epochs: int = 1000
    batch_size: int = 9
    seed: int = 0
    config: PrnnConfig = field(default_factory=PrnnConfig)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    h_strain: float = H_STRAIN
    h_alpha: float = H_ALPHA
    log_every: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainResult:
    params: PrnnParams
    loss_history: list[float]
    adam: AdamState
    spec: TrainSpec

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1]


def _as_pairs(dataset) -> list[tuple[np.ndarray, np.ndarray]]:
    pairs = []
    for item in dataset:
        if hasattr(item, "strains") and hasattr(item, "stresses"):
            strains, stresses = item.strains, item.stresses
        else:
            strains, stresses = item
        pairs.append((np.ascontiguousarray(strains, dtype=float),
                      np.ascontiguousarray(stresses, dtype=float)))
    return pairs


def train(spec: TrainSpec, dataset, params: PrnnParams | None = None, callback=None) -> TrainResult:
    """Mini-batch Adam over whole curves with full BPTT.

    One epoch is one shuffled pass over the curves; the last short batch is
    kept. The recorded epoch loss is the mean of the per-curve losses seen
    during that epoch. Initial weights (unless given) and shuffling are both
    derived from ``spec.seed``.
    """
    curves = _as_pairs(dataset)
    if not curves:
        raise ValueError("empty training set")
    config = spec.config
    if params is None:
        params = init_params(config, spec.seed)
    params.check(config)
    adam = AdamState.create(params, lr=spec.lr, beta1=spec.beta1, beta2=spec.beta2, eps=spec.eps)
    rng = np.random.default_rng([spec.seed, 1])
    history: list[float] = []
    kw = dict(h=spec.h_strain, h_alpha=spec.h_alpha)
    n = len(curves)
    for epoch in range(spec.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        good_params, good_adam = params, adam
        try:
            for start in range(0, n, spec.batch_size):
                batch = [curves[i] for i in order[start:start + spec.batch_size]]
                val, grads = batch_gradients(params, config, batch, **kw)
                epoch_loss += val * len(batch)
                params, adam = adam_step(adam, params, grads)
        except (TrainingFault, ReturnMapDiverged) as exc:
            raise TrainingFault(f"epoch {epoch}: {exc}", good_params, history, epoch) from exc
        history.append(epoch_loss / n)
        if not math.isfinite(history[-1]):
            raise TrainingFault(f"epoch {epoch}: non-finite loss", good_params, history[:-1], epoch)
        if spec.log_every and (epoch % spec.log_every == 0 or epoch == spec.epochs - 1):
            log.info("epoch %d loss %.6e", epoch, history[-1])
        if callback is not None:
            callback(epoch, params, history[-1])
    return TrainResult(params, history, adam, spec)


def dataset_loss(params: PrnnParams, config: PrnnConfig, dataset) -> float:
    """Mean per-curve loss evaluated forward-only."""
    curves = _as_pairs(dataset)
    return float(np.mean([loss(forward_sequence(params, config, s)[0], t) for s, t in curves]))


def set_rmse(params: PrnnParams, config: PrnnConfig, dataset) -> float:
    """Mean over curves of the per-curve RMSE (MPa)."""
    curves = _as_pairs(dataset)
    return float(np.mean([rmse(forward_sequence(params, config, s)[0], t) for s, t in curves]))


# --------------------------------------------------------------------------
# model selection
# --------------------------------------------------------------------------


@dataclass
class GridRow:
    size: int
    seed: int
    train_error: float
    val_error: float
    fault: str = ""

    def as_dict(self) -> dict:
        return {"size": self.size, "seed": self.seed, "train_error": self.train_error,
                "val_error": self.val_error, "fault": self.fault}


def _grid_job(size, seed, train_set, val_set, base: TrainSpec) -> GridRow:
    config = PrnnConfig(size, base.config.material)
    spec = TrainSpec(**{**base.__dict__, "config": config, "seed": seed})
    try:
        res = train(spec, train_set)
    except TrainingFault as exc:
        return GridRow(size, seed, math.nan, math.nan, str(exc))
    try:
        return GridRow(size, seed, set_rmse(res.params, config, train_set),
                       set_rmse(res.params, config, val_set))
    except ReturnMapDiverged as exc:
        return GridRow(size, seed, math.nan, math.nan, str(exc))


def grid_search(sizes: Sequence[int], n_seeds: int, train_set, val_set,
                base: TrainSpec | None = None, seeds: Sequence[int] | None = None,
                workers: int = 1) -> list[GridRow]:
    """Train every (size, seed) pair and report train/validation RMSE.

    Errors are the mean per-curve RMSE in MPa. Failed runs are kept as rows
    with NaN errors and the fault message.
    """
    base = base or TrainSpec()
    train_set = _as_pairs(train_set)
    val_set = _as_pairs(val_set)
    seeds = list(seeds) if seeds is not None else list(range(n_seeds))
    jobs = [(size, seed) for size in sizes for seed in seeds]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            futures = [pool.submit(_grid_job, s, sd, train_set, val_set, base) for s, sd in jobs]
            return [f.result() for f in futures]
    return [_grid_job(s, sd, train_set, val_set, base) for s, sd in jobs]


def summarize_grid(rows: Sequence[GridRow]) -> dict[int, float]:
    """Mean validation error per layer size (failed runs ignored)."""
    out: dict[int, list[float]] = {}
    for r in rows:
        if math.isfinite(r.val_error):
            out.setdefault(r.size, []).append(r.val_error)
    return {k: float(np.mean(v)) for k, v in sorted(out.items())}

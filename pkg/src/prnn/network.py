"""Physically recurrent network: dense encoder, material layer, positive decoder.

The macroscopic strain is mapped linearly to ``m`` local strains, each local
strain is fed to a real constitutive model carrying its own internal
variables, and the local stresses are recombined by a decoder whose weights
pass through a softplus so that every contribution is positive::

    v = W_enc @ eps                 (3m,)
    a_j, h_j = D(v_j, h_j^{t-1})    j = 1..m
    sig = softplus(W_dec) @ a       (3,)

There are no biases. The only recurrence is the internal-variable history of
each fictitious material point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .constitutive import (
    N_INTVAR,
    ElasticMaterial,
    J2Material,
    MaterialState,
    ReturnMapDiverged,
    KIND_ELASTIC,
    KIND_J2,
    material_kernel,
)

__all__ = [
    "PrnnConfig",
    "PrnnParams",
    "PrnnState",
    "StepRecord",
    "ForwardTrace",
    "softplus",
    "softplus_inverse",
    "sigmoid",
    "init_params",
    "identity_params",
    "forward_step",
    "forward_sequence",
    "predict",
    "jacobian",
]



def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus_inverse(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True)
class PrnnConfig:
    """Architecture of a network: number of fictitious points and their model.

    Every point uses the same constitutive model. ``J2Material`` is the
    intended choice; ``ElasticMaterial`` turns the network into a linear map
    and is useful for testing.
    """

    n_points: int = 2
    material: J2Material | ElasticMaterial = field(default_factory=J2Material)
    strain_dim: int = 3

    def __post_init__(self):
        if self.n_points < 1:
            raise ValueError("n_points must be >= 1")
        if self.strain_dim != 3:
            raise ValueError("only plane-stress (3-component) strains are supported")

    @property
    def width(self) -> int:
        return 3 * self.n_points

    @property
    def n_params(self) -> int:
        return 2 * 9 * self.n_points

    def material_array(self) -> tuple[int, np.ndarray]:
        if isinstance(self.material, J2Material):
            return KIND_J2, self.material.packed
        props = self.material.props
        return KIND_ELASTIC, np.array([props.young_modulus, props.poisson_ratio, 0.0, 0.0, 1.0])

    def to_dict(self) -> dict:
        if isinstance(self.material, J2Material):
            mat = self.material.to_dict()
        else:
            mat = {"model": "elastic", "young_modulus": self.material.props.young_modulus,
                   "poisson_ratio": self.material.props.poisson_ratio}
        return {"n_points": self.n_points, "strain_dim": self.strain_dim, "material": mat}

    @classmethod
    def from_dict(cls, d: dict) -> "PrnnConfig":
        from .constitutive import ElasticProps

        mat = d.get("material", {"model": "j2"})
        if mat.get("model", "j2") == "j2":
            material = J2Material.from_dict({**J2Material().to_dict(), **mat})
        else:
            material = ElasticMaterial(ElasticProps(mat["young_modulus"], mat["poisson_ratio"]))
        return cls(int(d["n_points"]), material)


@dataclass
class PrnnParams:
    w_encoder: np.ndarray
    w_decoder_raw: np.ndarray

    @property
    def n_points(self) -> int:
        return self.w_encoder.shape[0] // 3

    @property
    def decoder_weights(self) -> np.ndarray:
        """Effective (softplus-activated, strictly positive) decoder weights."""
        return softplus(self.w_decoder_raw)

    def copy(self) -> "PrnnParams":
        return PrnnParams(self.w_encoder.copy(), self.w_decoder_raw.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w_encoder.ravel(), self.w_decoder_raw.ravel()])

    @classmethod
    def from_flat(cls, x, n_points: int) -> "PrnnParams":
        x = np.asarray(x, dtype=float)
        k = 9 * n_points
        return cls(x[:k].reshape(3 * n_points, 3).copy(), x[k:].reshape(3, 3 * n_points).copy())

    def check(self, config: PrnnConfig):
        if self.w_encoder.shape != (config.width, 3) or self.w_decoder_raw.shape != (3, config.width):
            raise ValueError(
                f"parameter shapes {self.w_encoder.shape}/{self.w_decoder_raw.shape} "
                f"do not match a network with {config.n_points} points")


@dataclass
class PrnnState:
    """History vectors of all fictitious points, shape ``(m, 5)``."""

    alphas: np.ndarray

    @classmethod
    def virgin(cls, n_points: int) -> "PrnnState":
        return cls(np.zeros((n_points, N_INTVAR)))

    @property
    def states(self) -> list[MaterialState]:
        return [MaterialState.from_array(a) for a in self.alphas]

    def __len__(self):
        return self.alphas.shape[0]


@dataclass
class StepRecord:
    macro_strain: np.ndarray
    local_strains: np.ndarray     # (m, 3)
    local_stresses: np.ndarray    # (m, 3)
    tangents: np.ndarray          # (m, 3, 3)
    alpha_before: np.ndarray      # (m, 5)
    alpha_after: np.ndarray       # (m, 5)
    iterations: np.ndarray        # (m,)  0 = elastic
    macro_stress: np.ndarray

    @property
    def all_elastic(self) -> bool:
        return bool(np.all(self.iterations == 0))


@dataclass
class ForwardTrace:
    """Everything the backward pass needs, stored per step and per point."""

    macro_strains: np.ndarray     # (T, 3)
    local_strains: np.ndarray     # (T, m, 3)
    local_stresses: np.ndarray    # (T, m, 3)
    tangents: np.ndarray          # (T, m, 3, 3)
    alpha_before: np.ndarray      # (T, m, 5)
    alpha_after: np.ndarray       # (T, m, 5)
    iterations: np.ndarray        # (T, m)
    macro_stresses: np.ndarray    # (T, 3)

    def __len__(self):
        return self.macro_strains.shape[0]

    def record(self, t: int) -> StepRecord:
        return StepRecord(self.macro_strains[t], self.local_strains[t], self.local_stresses[t],
                          self.tangents[t], self.alpha_before[t], self.alpha_after[t],
                          self.iterations[t], self.macro_stresses[t])

    @property
    def all_elastic(self) -> bool:
        return bool(np.all(self.iterations == 0))

    @property
    def final_state(self) -> PrnnState:
        return PrnnState(self.alpha_after[-1].copy())


def init_params(config: PrnnConfig, seed: int | None = 0, noise: float = 0.05) -> PrnnParams:
    """Glorot-uniform encoder; decoder starting at an equal-share average.

    The raw decoder weights start at ``softplus_inverse(1/m)`` plus uniform
    noise in ``[-noise, noise]``, so summing the effective weights of one
    stress component over the points gives roughly one.
    """
    rng = np.random.default_rng(seed)
    m = config.n_points
    limit = math.sqrt(6.0 / (3 + 3 * m))
    w_enc = rng.uniform(-limit, limit, size=(3 * m, 3))
    w_dec = softplus_inverse(1.0 / m) + rng.uniform(-noise, noise, size=(3, 3 * m))
    return PrnnParams(w_enc, w_dec)


def identity_params(n_points: int) -> PrnnParams:
    """Parameters that collapse the network onto a single material point.

    Every point receives the macroscopic strain and the decoder averages them.
    Effective off-block decoder weights cannot be exactly zero under the
    softplus, so they are set to a raw value of -40 (about 4e-18).
    """
    w_enc = np.tile(np.eye(3), (n_points, 1))
    w_dec = np.full((3, 3 * n_points), -40.0)
    for j in range(n_points):
        w_dec[:, 3 * j:3 * j + 3] = np.where(np.eye(3) > 0, softplus_inverse(1.0 / n_points), -40.0)
    return PrnnParams(w_enc, w_dec)


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def forward_kernel(w_enc, w_dec_eff, kind, mat, strains, alpha0,
                   loc_eps, loc_sig, tangents, a_before, a_after, iters, out):
    """Run a whole strain sequence; returns ``-1`` or the flat index ``t*m+j`` of a failure."""
    T = strains.shape[0]
    m = alpha0.shape[0]
    alpha = alpha0.copy()
    for t in range(T):
        for r in range(3 * m):
            s = 0.0
            for c in range(3):
                s += w_enc[r, c] * strains[t, c]
            loc_eps[t, r // 3, r % 3] = s
        for j in range(m):
            a_before[t, j, :] = alpha[j, :]
            it = material_kernel(kind, mat, loc_eps[t, j], alpha[j], loc_sig[t, j],
                               a_after[t, j], tangents[t, j], True)
            if it < 0:
                return t * m + j
            iters[t, j] = it
            alpha[j, :] = a_after[t, j, :]
        for i in range(3):
            s = 0.0
            for j in range(m):
                for c in range(3):
                    s += w_dec_eff[i, 3 * j + c] * loc_sig[t, j, c]
            out[t, i] = s
    return -1


def _allocate_trace(strains: np.ndarray, m: int) -> ForwardTrace:
    T = strains.shape[0]
    return ForwardTrace(
        macro_strains=strains,
        local_strains=np.empty((T, m, 3)),
        local_stresses=np.empty((T, m, 3)),
        tangents=np.empty((T, m, 3, 3)),
        alpha_before=np.empty((T, m, N_INTVAR)),
        alpha_after=np.empty((T, m, N_INTVAR)),
        iterations=np.empty((T, m), dtype=np.int64),
        macro_stresses=np.empty((T, 3)),
    )


def _run(params: PrnnParams, config: PrnnConfig, strains, alpha0) -> ForwardTrace:
    params.check(config)
    strains = np.ascontiguousarray(strains, dtype=float).reshape(-1, 3)
    m = config.n_points
    trace = _allocate_trace(strains, m)
    kind, mat = config.material_array()
    fail = forward_kernel(params.w_encoder, params.decoder_weights, kind, mat, strains,
                          np.ascontiguousarray(alpha0, dtype=float),
                          trace.local_strains, trace.local_stresses, trace.tangents,
                          trace.alpha_before, trace.alpha_after, trace.iterations,
                          trace.macro_stresses)
    if fail >= 0:
        t, j = divmod(fail, m)
        raise ReturnMapDiverged(f"return mapping diverged at step {t}, material point {j}")
    return trace


def forward_step(params: PrnnParams, config: PrnnConfig, macro_strain,
                 state: PrnnState | None = None) -> tuple[np.ndarray, PrnnState, StepRecord]:
    """Advance the network by one strain increment."""
    if state is None:
        state = PrnnState.virgin(config.n_points)
    if len(state) != config.n_points:
        raise ValueError(f"state has {len(state)} points, network has {config.n_points}")
    trace = _run(params, config, np.asarray(macro_strain, dtype=float)[None, :], state.alphas)
    record = trace.record(0)
    return record.macro_stress.copy(), trace.final_state, record


def forward_sequence(params: PrnnParams, config: PrnnConfig, path,
                     state: PrnnState | None = None) -> tuple[np.ndarray, ForwardTrace]:
    """Evaluate a strain path from a virgin (or given) state.

    ``path`` is a :class:`~prnn.pathgen.LoadPath` or a ``(T, 3)`` array.
    """
    strains = getattr(path, "strains", path)
    strains = np.asarray(strains, dtype=float)
    if strains.ndim != 2 or strains.shape[0] == 0:
        raise ValueError("path must be a non-empty (T, 3) strain sequence")
    alpha0 = state.alphas if state is not None else np.zeros((config.n_points, N_INTVAR))
    trace = _run(params, config, strains, alpha0)
    return trace.macro_stresses, trace


def predict(params: PrnnParams, config: PrnnConfig, path) -> np.ndarray:
    return forward_sequence(params, config, path)[0]


def jacobian(params: PrnnParams, config: PrnnConfig, record: StepRecord) -> np.ndarray:
    """Macroscopic consistent tangent ``d sig / d eps`` at one recorded step.

    Chain rule through the three layers; the material-layer block is the
    block-diagonal matrix of the per-point consistent tangents.
    """
    m = config.n_points
    block = np.zeros((3 * m, 3 * m))
    for j in range(m):
        block[3 * j:3 * j + 3, 3 * j:3 * j + 3] = record.tangents[j]
    return params.decoder_weights @ block @ params.w_encoder

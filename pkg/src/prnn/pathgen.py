"""Strain-path generators for training and testing.

Proportional paths are ``strains[t] = lam(t) * n`` with a unit direction
``n`` and a scalar loading function ``lam``. Curve families:

========  =============================================================
``I``     monotonic ramp along one of 18 fixed directions
``II``    monotonic ramp along a random direction
``III``   ramp, one unloading, reloading (random direction)
``IVa``   like III with a later and deeper unloading (III directions)
``IVb``   the III loading function with 10x smaller steps (600 steps)
``V``     non-proportional random walk, one Gaussian process per component
========  =============================================================

Every path includes the unstrained state at ``t = 0`` as its first row, so
a path of ``n_steps`` increments has ``n_steps + 1`` rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg

__all__ = [
    "CURVE_TYPES",
    "LoadPath",
    "GpSpec",
    "CurveTypeParams",
    "GpSampleError",
    "known_directions",
    "random_direction",
    "loading_function",
    "proportional_path",
    "se_kernel",
    "gp_walk",
    "gp_joint_sample",
    "curve_seed",
    "make_dataset",
]

CURVE_TYPES = ("I", "II", "III", "IVa", "IVb", "V")

# seed families: II draws its own directions, III/IVa/IVb share theirs
_FAMILY = {"I": 1, "II": 2, "III": 3, "IVa": 3, "IVb": 3, "V": 5}


class GpSampleError(RuntimeError):
    """Conditioning Gram matrix not positive definite even after jitter."""


@dataclass
class LoadPath:
    strains: np.ndarray
    curve_type: str
    seed: int | None = None
    step_size: float | None = None
    direction: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.strains.shape[0] - 1

    def __len__(self):
        return self.strains.shape[0]


@dataclass(frozen=True)
class GpSpec:
    lengthscale: float = 20.0
    sigma_f: float = 1e-3
    n_components: int = 3
    n_steps: int = 60
    jitter: float = 1e-10

    def __post_init__(self):
        if not (self.lengthscale > 0 and self.sigma_f > 0):
            raise ValueError("lengthscale and sigma_f must be positive")

    @property
    def variance(self) -> float:
        return self.sigma_f ** 2


@dataclass(frozen=True)
class CurveTypeParams:
    """Shape of the proportional loading functions.

    Unloading curves go up to ``t_peak``, down to ``valley_fraction`` of the
    peak value at ``t_valley`` and back up until ``n_steps``, where they
    reach ``n_steps * step_size`` (the end point of a monotonic curve).
    """

    step_size: float = 1e-4
    n_steps: int = 60
    iii_peak: int = 30
    iii_valley: int = 45
    iii_fraction: float = 0.4
    iva_peak: int = 40
    iva_valley: int = 50
    iva_fraction: float = 0.2
    ivb_refine: int = 10

    def __post_init__(self):
        for peak, valley in ((self.iii_peak, self.iii_valley), (self.iva_peak, self.iva_valley)):
            if not 0 < peak < valley < self.n_steps:
                raise ValueError(f"breakpoints must satisfy 0 < {peak} < {valley} < {self.n_steps}")

    def steps_for(self, curve_type: str) -> int:
        return self.n_steps * self.ivb_refine if curve_type == "IVb" else self.n_steps


def known_directions() -> np.ndarray:
    """The 18 fixed unit directions: uniaxial, biaxial and biaxial with shear."""
    dirs = []
    for i in range(3):
        for s in (1.0, -1.0):
            v = np.zeros(3)
            v[i] = s
            dirs.append(v)
    for a in (1.0, -1.0):
        for b in (1.0, -1.0):
            dirs.append(np.array([a, b, 0.0]) / math.sqrt(2.0))
    for a in (1.0, -1.0):
        for b in (1.0, -1.0):
            for c in (1.0, -1.0):
                dirs.append(np.array([a, b, c]) / math.sqrt(3.0))
    return np.array(dirs)


def random_direction(seed) -> np.ndarray:
    """Normalized standard-normal vector; uniform on the unit sphere."""
    rng = np.random.default_rng(seed)
    while True:
        v = rng.standard_normal(3)
        nrm = np.linalg.norm(v)
        if nrm > 0:
            return v / nrm


def _piecewise(t, peak, valley, fraction, n_steps, de):
    lam_peak = peak * de
    lam_valley = fraction * lam_peak
    lam_end = n_steps * de
    return np.interp(t, [0, peak, valley, n_steps], [0.0, lam_peak, lam_valley, lam_end])


def loading_function(curve_type: str, params: CurveTypeParams, t):
    """Scalar loading factor ``lam`` at (possibly fractional) step ``t``."""
    de = params.step_size
    n = params.steps_for(curve_type)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t > n):
        raise ValueError(f"t outside [0, {n}] for type {curve_type}")
    if curve_type in ("I", "II"):
        out = t * de
    elif curve_type == "III":
        out = _piecewise(t, params.iii_peak, params.iii_valley, params.iii_fraction, params.n_steps, de)
    elif curve_type == "IVa":
        out = _piecewise(t, params.iva_peak, params.iva_valley, params.iva_fraction, params.n_steps, de)
    elif curve_type == "IVb":
        out = _piecewise(t / params.ivb_refine, params.iii_peak, params.iii_valley,
                         params.iii_fraction, params.n_steps, de)
    else:
        raise ValueError(f"no loading function for curve type {curve_type!r}")
    return out if out.ndim else float(out)


def proportional_path(curve_type: str, direction, params: CurveTypeParams | None = None,
                      seed=None) -> LoadPath:
    params = params or CurveTypeParams()
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    t = np.arange(params.steps_for(curve_type) + 1)
    lam = loading_function(curve_type, params, t)
    return LoadPath(lam[:, None] * direction[None, :], curve_type, seed, params.step_size, direction)


# --------------------------------------------------------------------------
# Gaussian-process random walks
# --------------------------------------------------------------------------


def se_kernel(xp, xq, variance: float, lengthscale: float) -> np.ndarray:
    """Squared-exponential covariance between two sets of scalar inputs."""
    xp = np.asarray(xp, dtype=float).reshape(-1, 1)
    xq = np.asarray(xq, dtype=float).reshape(1, -1)
    return variance * np.exp(-0.5 * (xp - xq) ** 2 / lengthscale ** 2)


def _cholesky(K: np.ndarray, jitter: float, stats: dict | None = None) -> np.ndarray:
    """Lower Cholesky factor; one retry with 100x extra jitter on the sampled entries."""
    try:
        return scipy.linalg.cholesky(K, lower=True)
    except np.linalg.LinAlgError:
        if stats is not None:
            stats["retries"] = stats.get("retries", 0) + 1
    bump = np.full(K.shape[0], 100.0 * jitter)
    bump[0] = 0.0
    try:
        return scipy.linalg.cholesky(K + np.diag(bump), lower=True)
    except np.linalg.LinAlgError as exc:
        raise GpSampleError(f"Gram matrix of size {K.shape[0]} not positive definite") from exc


def _step_noise(seed, spec: GpSpec) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal((spec.n_steps, spec.n_components))


def gp_walk(spec: GpSpec = GpSpec(), seed=0, stats: dict | None = None) -> LoadPath:
    """Non-proportional random walk sampled one step at a time.

    Each strain component is an independent zero-mean GP over the step
    index. At step ``t`` a value is drawn from the posterior conditioned on
    the prior datum ``(0, 0)`` and every previously drawn value, then added
    to the conditioning set. Drawn values are treated as observations with
    variance ``spec.jitter`` (a nugget that keeps the Gram matrices of this
    very smooth kernel factorizable); the prior datum is exact.
    """
    z = _step_noise(seed, spec)
    T = spec.n_steps
    var, ell, jit = spec.variance, spec.lengthscale, spec.jitter
    strains = np.zeros((T + 1, spec.n_components))
    times = np.arange(T + 1, dtype=float)
    for t in range(1, T + 1):
        X = times[:t]
        K = se_kernel(X, X, var, ell)
        K[1:, 1:] += jit * np.eye(t - 1)
        L = _cholesky(K, jit, stats)
        k_star = se_kernel(X, [times[t]], var, ell)[:, 0]
        w = scipy.linalg.solve_triangular(L, k_star, lower=True)
        pvar = max(var + jit - w @ w, 0.0)
        for i in range(spec.n_components):
            y = strains[:t, i]
            alpha = scipy.linalg.solve_triangular(L, y, lower=True)
            strains[t, i] = w @ alpha + math.sqrt(pvar) * z[t - 1, i]
    return LoadPath(strains, "V", seed, None, None,
                    {"lengthscale": ell, "sigma_f": spec.sigma_f, "jitter": jit})


def gp_joint_sample(spec: GpSpec = GpSpec(), seed=0) -> np.ndarray:
    """Whole-path sample from the joint posterior given the prior datum.

    Uses the same per-step noise stream as :func:`gp_walk`; the two agree
    up to round-off because sequential conditioning is the Cholesky
    factorization of the joint covariance.
    """
    z = _step_noise(seed, spec)
    var, ell, jit = spec.variance, spec.lengthscale, spec.jitter
    t = np.arange(1, spec.n_steps + 1, dtype=float)
    k0 = se_kernel(t, [0.0], var, ell)[:, 0]
    cov = se_kernel(t, t, var, ell) - np.outer(k0, k0) / var + jit * np.eye(t.size)
    L = scipy.linalg.cholesky(cov, lower=True)
    out = np.zeros((spec.n_steps + 1, spec.n_components))
    out[1:] = L @ z
    return out


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------


def curve_seed(base_seed: int, curve_type: str, index: int, split: int = 0) -> int:
    """Deterministic per-curve seed; different splits never collide."""
    ss = np.random.SeedSequence([base_seed, _FAMILY[curve_type], split, index])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def make_dataset(counts: Mapping[str, int | str], seed: int = 0, split: int = 0,
                 params: CurveTypeParams | None = None, gp: GpSpec | None = None) -> list[LoadPath]:
    """Generate a reproducible set of curves.

    ``counts`` maps a curve type to a number of curves; for type ``I`` the
    value ``"all"`` (or any count >= 18) yields the 18 fixed directions.
    Types III, IVa and IVb with the same ``(seed, split, index)`` share
    their loading direction.
    """
    params = params or CurveTypeParams()
    gp = gp or GpSpec(n_steps=params.n_steps)
    paths: list[LoadPath] = []
    for ctype, count in counts.items():
        if ctype not in CURVE_TYPES:
            raise ValueError(f"unknown curve type {ctype!r}")
        if ctype == "I":
            dirs = known_directions()
            n = len(dirs) if count == "all" else min(int(count), len(dirs))
            for i in range(n):
                p = proportional_path("I", dirs[i], params, seed=i)
                paths.append(p)
            continue
        count = int(count)
        if count < 0:
            raise ValueError("counts must be non-negative")
        for i in range(count):
            s = curve_seed(seed, ctype, i, split)
            if ctype == "V":
                paths.append(gp_walk(gp, s))
            else:
                paths.append(proportional_path(ctype, random_direction(s), params, seed=s))
    return paths

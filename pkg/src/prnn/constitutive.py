"""Small-strain plane-stress material models.

Two models are provided: linear elasticity (used for the fibres of the RVE)
and von Mises plasticity with isotropic exponential hardening (used for the
matrix and for every fictitious material point of the network).

Vectors use Voigt notation with engineering shear strain::

    strain = (eps_xx, eps_yy, gamma_xy)
    stress = (sig_xx, sig_yy, sig_xy)

The internal-variable vector of a J2 point has five entries::

    alpha = (epsp_xx, epsp_yy, gammap_xy, epsp_zz, epsp_eq)

The numerical work is done by numba kernels operating on flat arrays
(``j2_kernel``, ``elastic_kernel``); the dataclasses below wrap them for
interactive use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

__all__ = [
    "ElasticProps",
    "HardeningLaw",
    "MaterialState",
    "MaterialResponse",
    "ReturnMapDiverged",
    "ElasticMaterial",
    "J2Material",
    "FIBER_PROPS",
    "MATRIX_PROPS",
    "MATRIX_HARDENING",
    "N_INTVAR",
    "KIND_ELASTIC",
    "KIND_J2",
    "material_kernel",
    "elastic_stiffness",
    "yield_stress",
    "von_mises",
    "update_elastic",
    "update_j2",
    "tangent_fd_check",
    "j2_kernel",
    "elastic_kernel",
]

N_INTVAR = 5

# model codes understood by material_kernel
KIND_ELASTIC = 0
KIND_J2 = 1

RETURN_MAP_TOL = 1e-10
YIELD_TOL = 1e-8
MAX_ITER = 50


class ReturnMapDiverged(RuntimeError):
    """Local Newton iteration of the plastic corrector did not converge."""


@dataclass(frozen=True)
class ElasticProps:
    young_modulus: float
    poisson_ratio: float

    def __post_init__(self):
        if not self.young_modulus > 0:
            raise ValueError(f"young_modulus must be positive, got {self.young_modulus}")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ValueError(f"poisson_ratio must lie in [0, 0.5), got {self.poisson_ratio}")


@dataclass(frozen=True)
class HardeningLaw:
    """Saturating yield law ``sigma_y = sigma_inf - delta_sigma * exp(-epsp_eq / eps_ref)``."""

    sigma_inf: float = 64.8
    delta_sigma: float = 33.6
    eps_ref: float = 0.0003407

    def __post_init__(self):
        if not self.sigma_inf > self.delta_sigma > 0:
            raise ValueError("need sigma_inf > delta_sigma > 0")
        if not self.eps_ref > 0:
            raise ValueError("eps_ref must be positive")

    @property
    def initial_yield(self) -> float:
        return self.sigma_inf - self.delta_sigma


FIBER_PROPS = ElasticProps(74000.0, 0.2)
MATRIX_PROPS = ElasticProps(3130.0, 0.3)
MATRIX_HARDENING = HardeningLaw()


@dataclass(frozen=True)
class MaterialState:
    plastic_strain: np.ndarray = field(default_factory=lambda: np.zeros(3))
    plastic_strain_zz: float = 0.0
    eps_p_eq: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([*self.plastic_strain, self.plastic_strain_zz, self.eps_p_eq], dtype=float)

    @classmethod
    def from_array(cls, alpha) -> "MaterialState":
        alpha = np.asarray(alpha, dtype=float)
        return cls(alpha[:3].copy(), float(alpha[3]), float(alpha[4]))

    @classmethod
    def virgin(cls) -> "MaterialState":
        return cls()


@dataclass(frozen=True)
class MaterialResponse:
    stress: np.ndarray
    new_state: MaterialState
    tangent: np.ndarray
    iterations: int = 0

    @property
    def plastic(self) -> bool:
        return self.iterations > 0


# --------------------------------------------------------------------------
# numba kernels
# --------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _fill_stiffness(E, nu, out):
    c = E / (1.0 - nu * nu)
    out[:, :] = 0.0
    out[0, 0] = c
    out[1, 1] = c
    out[0, 1] = c * nu
    out[1, 0] = c * nu
    out[2, 2] = E / (2.0 * (1.0 + nu))


@njit(cache=True, nogil=True)
def elastic_kernel(E, nu, strain, stress, tangent):
    _fill_stiffness(E, nu, tangent)
    for i in range(3):
        s = 0.0
        for j in range(3):
            s += tangent[i, j] * strain[j]
        stress[i] = s


@njit(cache=True, nogil=True)
def _sym3_inverse(a, out):
    det = (a[0, 0] * (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1])
           - a[0, 1] * (a[1, 0] * a[2, 2] - a[1, 2] * a[2, 0])
           + a[0, 2] * (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]))
    inv = 1.0 / det
    out[0, 0] = (a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]) * inv
    out[0, 1] = (a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2]) * inv
    out[0, 2] = (a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]) * inv
    out[1, 0] = (a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]) * inv
    out[1, 1] = (a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]) * inv
    out[1, 2] = (a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]) * inv
    out[2, 0] = (a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]) * inv
    out[2, 1] = (a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]) * inv
    out[2, 2] = (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]) * inv


@njit(cache=True, nogil=True)
def _eval_corrector(dgam, a1, a2, a3, E, G, nu, kappa_n, sinf, dsig, eref):
    """Projected yield function and its derivative along the multiplier."""
    r1 = 1.0 + E * dgam / (3.0 * (1.0 - nu))
    r2 = 1.0 + 2.0 * G * dgam
    xi = a1 / (6.0 * r1 * r1) + (0.5 * a2 + 2.0 * a3) / (r2 * r2)
    dxi = (-a1 * E / (9.0 * (1.0 - nu) * r1 * r1 * r1)
           - 4.0 * G * (0.5 * a2 + 2.0 * a3) / (r2 * r2 * r2))
    sq = math.sqrt(2.0 * xi / 3.0)
    kappa = kappa_n + dgam * sq
    ex = math.exp(-kappa / eref)
    sy = sinf - dsig * ex
    hard = dsig / eref * ex
    dkappa = sq + dgam * dxi / (3.0 * sq) if sq > 0.0 else 0.0
    phi = 0.5 * xi - sy * sy / 3.0
    dphi = 0.5 * dxi - 2.0 / 3.0 * sy * hard * dkappa
    return phi, dphi, xi, kappa, sy


@njit(cache=True, nogil=True)
def j2_kernel(mat, strain, alpha, stress, alpha_new, tangent, want_tangent):
    """Plane-stress J2 update with exponential isotropic hardening.

    ``mat = (E, nu, sigma_inf, delta_sigma, eps_ref)``. Results are written to
    ``stress``, ``alpha_new`` and (when ``want_tangent``) ``tangent``.

    Returns the number of local Newton iterations (0 for an elastic step) or
    -1 when the corrector failed to converge.
    """
    E = mat[0]
    nu = mat[1]
    sinf = mat[2]
    dsig = mat[3]
    eref = mat[4]
    G = E / (2.0 * (1.0 + nu))
    c = E / (1.0 - nu * nu)

    ee0 = strain[0] - alpha[0]
    ee1 = strain[1] - alpha[1]
    ee2 = strain[2] - alpha[2]
    s0 = c * (ee0 + nu * ee1)
    s1 = c * (nu * ee0 + ee1)
    s2 = G * ee2
    kappa_n = alpha[4]
    sy_n = sinf - dsig * math.exp(-kappa_n / eref)

    vm2 = s0 * s0 + s1 * s1 - s0 * s1 + 3.0 * s2 * s2
    for i in range(N_INTVAR):
        alpha_new[i] = alpha[i]
    if vm2 <= (sy_n * (1.0 + YIELD_TOL)) ** 2:
        stress[0] = s0
        stress[1] = s1
        stress[2] = s2
        if want_tangent:
            _fill_stiffness(E, nu, tangent)
        return 0

    # plastic corrector: scalar Newton on the multiplier, iterating in the
    # eigenbasis of the plane-stress projector where the system is diagonal
    a1 = (s0 + s1) ** 2
    a2 = (s1 - s0) ** 2
    a3 = s2 * s2
    dgam = 0.0
    lo = 0.0
    hi = math.inf
    converged = False
    n_iter = 0
    for it in range(MAX_ITER):
        n_iter = it + 1
        phi, dphi, xi, kappa, sy = _eval_corrector(dgam, a1, a2, a3, E, G, nu,
                                                   kappa_n, sinf, dsig, eref)
        done = abs(math.sqrt(1.5 * xi) - sy) <= RETURN_MAP_TOL * sy
        if phi == 0.0:
            converged = True
            break
        if phi > 0.0:
            lo = dgam
        else:
            hi = dgam
        new = dgam - phi / dphi if dphi < 0.0 else math.nan
        inside = new > lo and new < hi
        if done:
            # one extra Newton step brings the residual to round-off level
            if inside:
                dgam = new
            converged = True
            break
        if not inside:
            new = 2.0 * lo + 1e-12 if math.isinf(hi) else 0.5 * (lo + hi)
        dgam = new
    if not converged:
        return -1
    phi, dphi, xi, kappa, sy = _eval_corrector(dgam, a1, a2, a3, E, G, nu,
                                               kappa_n, sinf, dsig, eref)

    r1 = 1.0 + E * dgam / (3.0 * (1.0 - nu))
    r2 = 1.0 + 2.0 * G * dgam
    p = (s0 + s1) / r1
    q = (s1 - s0) / r2
    t0 = 0.5 * (p - q)
    t1 = 0.5 * (p + q)
    t2 = s2 / r2
    stress[0] = t0
    stress[1] = t1
    stress[2] = t2

    # flow direction P.sigma (engineering shear in the third slot)
    n0 = (2.0 * t0 - t1) / 3.0
    n1 = (2.0 * t1 - t0) / 3.0
    n2 = 2.0 * t2
    alpha_new[0] = alpha[0] + dgam * n0
    alpha_new[1] = alpha[1] + dgam * n1
    alpha_new[2] = alpha[2] + dgam * n2
    alpha_new[3] = alpha[3] - dgam * (n0 + n1)
    alpha_new[4] = kappa

    if want_tangent:
        # algorithmic modulus  Ebar = (De^-1 + dgam P)^-1
        dinv = np.empty((3, 3))
        dinv[0, 0] = 1.0 / E + dgam * 2.0 / 3.0
        dinv[1, 1] = 1.0 / E + dgam * 2.0 / 3.0
        dinv[0, 1] = -nu / E - dgam / 3.0
        dinv[1, 0] = dinv[0, 1]
        dinv[2, 2] = 1.0 / G + 2.0 * dgam
        dinv[0, 2] = 0.0
        dinv[2, 0] = 0.0
        dinv[1, 2] = 0.0
        dinv[2, 1] = 0.0
        ebar = np.empty((3, 3))
        _sym3_inverse(dinv, ebar)
        pn = np.array([n0, n1, n2])
        nvec = ebar @ pn
        beta = pn[0] * nvec[0] + pn[1] * nvec[1] + pn[2] * nvec[2]
        hard = dsig / eref * math.exp(-kappa / eref)
        sqxi = math.sqrt(xi)
        c1 = 1.0 - 2.0 / 3.0 * sy * hard * dgam * math.sqrt(2.0 / 3.0) / sqxi
        c2 = 2.0 / 3.0 * sy * hard * math.sqrt(2.0 * xi / 3.0)
        fac = c1 / (c1 * beta + c2)
        for i in range(3):
            for j in range(3):
                tangent[i, j] = ebar[i, j] - fac * nvec[i] * nvec[j]
    return n_iter


@njit(cache=True, nogil=True)
def material_kernel(kind, mat, strain, alpha, stress, alpha_new, tangent, want_tangent):
    """Dispatch on ``kind``; for elasticity ``mat`` holds ``(E, nu, ...)``."""
    if kind == KIND_J2:
        return j2_kernel(mat, strain, alpha, stress, alpha_new, tangent, want_tangent)
    elastic_kernel(mat[0], mat[1], strain, stress, tangent)
    for i in range(alpha.shape[0]):
        alpha_new[i] = alpha[i]
    return 0


@njit(cache=True, nogil=True)
def j2_fd_blocks(mat, strain, alpha, h_strain, h_alpha, dadeps, dsda, dada):
    """Central-difference Jacobians of one J2 update.

    Fills ``dadeps`` (5x3, new internal variables w.r.t. strain), ``dsda``
    (3x5, stress w.r.t. previous internal variables) and ``dada`` (5x5, new
    w.r.t. previous internal variables).
    """
    sp = np.empty(3)
    sm = np.empty(3)
    ap = np.empty(N_INTVAR)
    am = np.empty(N_INTVAR)
    dummy = np.empty((3, 3))
    x = strain.copy()
    for k in range(3):
        x[k] = strain[k] + h_strain
        j2_kernel(mat, x, alpha, sp, ap, dummy, False)
        x[k] = strain[k] - h_strain
        j2_kernel(mat, x, alpha, sm, am, dummy, False)
        x[k] = strain[k]
        for i in range(N_INTVAR):
            dadeps[i, k] = (ap[i] - am[i]) / (2.0 * h_strain)
    y = alpha.copy()
    for k in range(N_INTVAR):
        y[k] = alpha[k] + h_alpha
        j2_kernel(mat, strain, y, sp, ap, dummy, False)
        y[k] = alpha[k] - h_alpha
        j2_kernel(mat, strain, y, sm, am, dummy, False)
        y[k] = alpha[k]
        for i in range(3):
            dsda[i, k] = (sp[i] - sm[i]) / (2.0 * h_alpha)
        for i in range(N_INTVAR):
            dada[i, k] = (ap[i] - am[i]) / (2.0 * h_alpha)


# --------------------------------------------------------------------------
# Python-level API
# --------------------------------------------------------------------------


def elastic_stiffness(props: ElasticProps) -> np.ndarray:
    """Plane-stress Hooke matrix for engineering shear strain."""
    out = np.empty((3, 3))
    _fill_stiffness(props.young_modulus, props.poisson_ratio, out)
    return out


def yield_stress(law: HardeningLaw, eps_p_eq: float) -> float:
    if eps_p_eq < 0:
        raise ValueError("equivalent plastic strain must be non-negative")
    if math.isinf(eps_p_eq):
        return law.sigma_inf
    return law.sigma_inf - law.delta_sigma * math.exp(-eps_p_eq / law.eps_ref)


def von_mises(stress) -> float:
    s0, s1, s2 = stress
    return math.sqrt(max(s0 * s0 + s1 * s1 - s0 * s1 + 3.0 * s2 * s2, 0.0))


def update_elastic(props: ElasticProps, strain, state: MaterialState | None = None) -> MaterialResponse:
    strain = np.asarray(strain, dtype=float)
    stress = np.empty(3)
    tangent = np.empty((3, 3))
    elastic_kernel(props.young_modulus, props.poisson_ratio, strain, stress, tangent)
    return MaterialResponse(stress, state if state is not None else MaterialState.virgin(), tangent)


def _pack(props: ElasticProps, law: HardeningLaw) -> np.ndarray:
    return np.array([props.young_modulus, props.poisson_ratio,
                     law.sigma_inf, law.delta_sigma, law.eps_ref])


def update_j2(props: ElasticProps, law: HardeningLaw, strain,
              state: MaterialState | None = None) -> MaterialResponse:
    """Return-mapping stress update of one plane-stress J2 point.

    Raises
    ------
    ReturnMapDiverged
        If the local Newton iteration exceeds its iteration budget; the
        caller may subdivide the strain increment.
    """
    strain = np.asarray(strain, dtype=float)
    if state is None:
        state = MaterialState.virgin()
    alpha = state.to_array()
    stress = np.empty(3)
    alpha_new = np.empty(N_INTVAR)
    tangent = np.empty((3, 3))
    n_iter = j2_kernel(_pack(props, law), strain, alpha, stress, alpha_new, tangent, True)
    if n_iter < 0:
        raise ReturnMapDiverged(f"return mapping did not converge for strain {strain}")
    new_state = state if n_iter == 0 else MaterialState.from_array(alpha_new)
    return MaterialResponse(stress, new_state, tangent, n_iter)


class ElasticMaterial:
    """Linear elastic material with no internal variables."""

    n_intvar = 0

    def __init__(self, props: ElasticProps = FIBER_PROPS):
        self.props = props

    def update(self, strain, state=None) -> MaterialResponse:
        return update_elastic(self.props, strain, state)


class J2Material:
    """Von Mises plasticity with exponential isotropic hardening (plane stress)."""

    n_intvar = N_INTVAR

    def __init__(self, props: ElasticProps = MATRIX_PROPS, law: HardeningLaw = MATRIX_HARDENING):
        self.props = props
        self.law = law
        self.packed = _pack(props, law)

    def update(self, strain, state=None) -> MaterialResponse:
        return update_j2(self.props, self.law, strain, state)

    def yield_stress(self, eps_p_eq: float) -> float:
        return yield_stress(self.law, eps_p_eq)

    def yield_function(self, stress, state: MaterialState) -> float:
        return von_mises(stress) - self.yield_stress(state.eps_p_eq)

    def to_dict(self) -> dict:
        return {
            "model": "j2",
            "young_modulus": self.props.young_modulus,
            "poisson_ratio": self.props.poisson_ratio,
            "sigma_inf": self.law.sigma_inf,
            "delta_sigma": self.law.delta_sigma,
            "eps_ref": self.law.eps_ref,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "J2Material":
        return cls(ElasticProps(d["young_modulus"], d["poisson_ratio"]),
                   HardeningLaw(d["sigma_inf"], d["delta_sigma"], d["eps_ref"]))

    def __repr__(self):
        return f"J2Material({self.props}, {self.law})"


def tangent_fd_check(model, strain, state=None, h: float = 1e-7, reg: float | None = None) -> float:
    """Max relative entry error between the returned tangent and central differences.

    ``reg`` regularises the denominator (default ``1e-6 * max|D_fd|``) so
    that structurally zero entries do not dominate.
    """
    strain = np.asarray(strain, dtype=float)
    tangent = model.update(strain, state).tangent
    fd = np.empty((3, 3))
    for k in range(3):
        dp = strain.copy()
        dm = strain.copy()
        dp[k] += h
        dm[k] -= h
        fd[:, k] = (model.update(dp, state).stress - model.update(dm, state).stress) / (2.0 * h)
    if reg is None:
        reg = 1e-6 * np.abs(fd).max()
    return float(np.max(np.abs(tangent - fd) / (np.abs(fd) + reg)))

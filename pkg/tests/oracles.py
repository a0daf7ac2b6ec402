"""Independent reference implementations used by the tests.

None of these share code with the package kernels: the plasticity oracle is
a three-dimensional radial return with the out-of-plane strain found by an
outer root search, the network oracle loops over points in plain Python,
and the GP oracle factorizes the joint covariance directly.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.optimize


def yield_law(kappa, sigma_inf=64.8, delta=33.6, eps_ref=0.0003407):
    return sigma_inf - delta * math.exp(-kappa / eps_ref)


def plane_stress_hooke(E, nu):
    c = E / (1.0 - nu * nu)
    return np.array([[c, nu * c, 0.0], [nu * c, c, 0.0], [0.0, 0.0, E / (2.0 * (1.0 + nu))]])


def _tensor(eps_xx, eps_yy, eps_zz, gam_xy):
    return np.array([[eps_xx, 0.5 * gam_xy, 0.0], [0.5 * gam_xy, eps_yy, 0.0], [0.0, 0.0, eps_zz]])


def radial_return_3d(E, nu, eps, eps_p, kappa, law=yield_law):
    """Classical 3D backward-Euler radial return; returns (sigma, eps_p_new, kappa_new)."""
    G = E / (2.0 * (1.0 + nu))
    K = E / (3.0 * (1.0 - 2.0 * nu))
    ee = eps - eps_p
    tr = np.trace(ee)
    dev = ee - tr / 3.0 * np.eye(3)
    s_tr = 2.0 * G * dev
    q_tr = math.sqrt(1.5 * np.sum(s_tr * s_tr))
    if q_tr - law(kappa) <= 0.0:
        return K * tr * np.eye(3) + s_tr, eps_p.copy(), kappa
    f = lambda dg: q_tr - 3.0 * G * dg - law(kappa + dg)
    dg = scipy.optimize.brentq(f, 0.0, q_tr / (3.0 * G), xtol=1e-16, rtol=1e-15, maxiter=500)
    nflow = 1.5 * s_tr / q_tr
    s = s_tr * (1.0 - 3.0 * G * dg / q_tr)
    return K * tr * np.eye(3) + s, eps_p + dg * nflow, kappa + dg


def j2_plane_stress_reference(strain, alpha, E=3130.0, nu=0.3, law=yield_law):
    """Plane-stress J2 update by enforcing sigma_zz = 0 on the 3D algorithm.

    ``alpha`` is ``(epsp_xx, epsp_yy, gammap_xy, epsp_zz, epsp_eq)``; returns
    the in-plane stress and the new alpha.
    """
    exx, eyy, gxy = strain
    ep = _tensor(alpha[0], alpha[1], alpha[3], alpha[2])
    kappa = alpha[4]

    def szz(ezz):
        sig, _, _ = radial_return_3d(E, nu, _tensor(exx, eyy, ezz, gxy), ep, kappa, law)
        return sig[2, 2]

    # sigma_zz is monotonic in eps_zz; bracket generously around the elastic guess
    guess = -nu / (1.0 - nu) * (exx + eyy - alpha[0] - alpha[1]) + alpha[3]
    span = 10.0 * (abs(exx) + abs(eyy) + abs(gxy) + abs(guess)) + 1e-3
    ezz = scipy.optimize.brentq(szz, guess - span, guess + span, xtol=1e-16, rtol=1e-15, maxiter=500)
    sig, ep_new, k_new = radial_return_3d(E, nu, _tensor(exx, eyy, ezz, gxy), ep, kappa, law)
    stress = np.array([sig[0, 0], sig[1, 1], sig[0, 1]])
    alpha_new = np.array([ep_new[0, 0], ep_new[1, 1], 2.0 * ep_new[0, 1], ep_new[2, 2], k_new])
    return stress, alpha_new


def softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


def prnn_reference(w_enc, w_dec_raw, strains, update):
    """Plain loop over steps and points. ``update(strain, alpha) -> (stress, alpha)``."""
    m = w_enc.shape[0] // 3
    wd = softplus(w_dec_raw)
    alphas = [np.zeros(5) for _ in range(m)]
    out = []
    for eps in strains:
        v = w_enc @ eps
        a = np.zeros(3 * m)
        for j in range(m):
            s, alphas[j] = update(v[3 * j:3 * j + 3], alphas[j])
            a[3 * j:3 * j + 3] = s
        out.append(wd @ a)
    return np.array(out)


def gp_joint_reference(n_steps, variance, lengthscale, jitter, noise):
    """Joint posterior draw given f(0) = 0 from standard-normal ``noise`` (n_steps, d)."""
    t = np.arange(n_steps + 1, dtype=float)
    K = variance * np.exp(-0.5 * (t[:, None] - t[None, :]) ** 2 / lengthscale ** 2)
    cond = K[1:, 1:] - np.outer(K[1:, 0], K[0, 1:]) / K[0, 0] + jitter * np.eye(n_steps)
    L = np.linalg.cholesky(cond)
    return np.vstack([np.zeros(noise.shape[1]), L @ noise])


def voigt_reuss(vf, Df, Dm):
    upper = vf * Df + (1.0 - vf) * Dm
    lower = np.linalg.inv(vf * np.linalg.inv(Df) + (1.0 - vf) * np.linalg.inv(Dm))
    return lower, upper


def central_fd(fun, x, h):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return g

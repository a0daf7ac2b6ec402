"""Shared probes for the network tests and the acceptance suite."""

from __future__ import annotations

import numpy as np

from prnn.network import PrnnParams, PrnnState, forward_sequence, forward_step, jacobian
from prnn.train import backward_sequence, loss


def random_path(rng, n_steps=20, scale=3e-4):
    """Random-walk strain path starting at zero."""
    steps = rng.normal(size=(n_steps, 3)) * scale
    return np.vstack([np.zeros(3), np.cumsum(steps, axis=0)])


def jacobian_probe(params, config, path, t, h=1e-7):
    """Analytic and FD network tangent at step ``t``; None if a probe changes regime."""
    _, trace = forward_sequence(params, config, path[:t + 1])
    state = PrnnState(trace.alpha_before[t].copy())
    rec = trace.record(t)
    J = jacobian(params, config, rec)
    fd = np.zeros((3, 3))
    for k in range(3):
        cols = []
        for sgn in (1.0, -1.0):
            e = path[t].copy()
            e[k] += sgn * h
            s, _, r = forward_step(params, config, e, state)
            if not np.array_equal(r.iterations > 0, rec.iterations > 0):
                return None
            cols.append(s)
        fd[:, k] = (cols[0] - cols[1]) / (2.0 * h)
    return J, fd


def relative_entry_error(a, b, floor_frac=1e-6):
    floor = floor_frac * np.abs(b).max()
    return float(np.max(np.abs(a - b) / (np.abs(b) + floor)))


def regime_signature(params, config, path):
    _, tr = forward_sequence(params, config, path)
    return tr.iterations > 0


def loss_gradient_probe(params, config, path, targets, h=1e-6, skip_straddling=True, order=2):
    """Analytic BPTT gradient vs central FD of the sequence loss.

    Returns ``(grad, fd, mask)`` where ``mask`` marks parameters whose FD
    probes did not change the elastic/plastic pattern of any step.
    ``order=4`` uses the five-point stencil, which allows a larger ``h``
    (less roundoff) on smooth traces.
    """
    m = config.n_points
    _, trace = forward_sequence(params, config, path)
    grad = backward_sequence(params, config, trace, targets).flat()
    x0 = params.flat()
    ref = trace.iterations > 0
    if order == 2:
        stencil = ((1.0, 0.5), (-1.0, -0.5))
    elif order == 4:
        stencil = ((2.0, -1.0 / 12), (1.0, 8.0 / 12), (-1.0, -8.0 / 12), (-2.0, 1.0 / 12))
    else:
        raise ValueError("order must be 2 or 4")
    fd = np.zeros_like(x0)
    mask = np.ones(x0.size, dtype=bool)
    for k in range(x0.size):
        for shift, weight in stencil:
            x = x0.copy()
            x[k] += shift * h
            pred, tr = forward_sequence(PrnnParams.from_flat(x, m), config, path)
            if skip_straddling and not np.array_equal(tr.iterations > 0, ref):
                mask[k] = False
            fd[k] += weight * loss(pred, targets) / h
    return grad, fd, mask

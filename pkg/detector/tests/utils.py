"""
Shared helpers for the detector tests
"""

import numpy as np


def randomize(params, rng, scale=0.1):
    """Add Gaussian noise to every parameter array in place"""
    for p in params:
        p += scale * rng.standard_normal(p.shape)


def numerical_grads(loss_fn, params, eps=1e-6):
    """Central differences of a scalar loss_fn() for every entry of every array"""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        g_flat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            plus = loss_fn()
            flat[i] = old - eps
            minus = loss_fn()
            flat[i] = old
            g_flat[i] = (plus - minus) / (2.0 * eps)
        grads.append(g)
    return grads


def relative_error(analytic, numeric):
    a = np.concatenate([np.ravel(x) for x in analytic])
    b = np.concatenate([np.ravel(x) for x in numeric])
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))

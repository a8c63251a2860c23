"""Shared oracles: central finite differences and relative-error checks."""

from __future__ import annotations

import numpy as np

from unbalance_lab.net import NetworkParams, forward


def rel_close(analytic, numeric, tol, abs_floor=1e-8):
    """True where |a - n| <= tol * max(|a|, |n|), with an absolute floor for
    gradients that are themselves tiny."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return np.abs(analytic - numeric) <= np.maximum(tol * scale, abs_floor)


def fd_loss_grad(loss_fn, p, h=1e-5):
    """Central finite difference of a scalar-in-p loss."""
    lp, _ = loss_fn(p + h)
    lm, _ = loss_fn(p - h)
    return (np.asarray(lp) - np.asarray(lm)) / (2 * h)


def fd_param_grads(params: NetworkParams, batch, scalar_loss, h=1e-5):
    """Finite-difference gradient of ``scalar_loss(p_vector)`` w.r.t. every
    network parameter, matching the analytic backward convention."""
    grads_w, grads_b = [], []
    for arrs, out in ((params.weights, grads_w), (params.biases, grads_b)):
        for arr in arrs:
            g = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                ix = it.multi_index
                orig = arr[ix]
                arr[ix] = orig + h
                lp = scalar_loss(forward(params, batch).p)
                arr[ix] = orig - h
                lm = scalar_loss(forward(params, batch).p)
                arr[ix] = orig
                g[ix] = (lp - lm) / (2 * h)
            out.append(g)
    return grads_w, grads_b

"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

from lfldnet import autodiff as ad


def autodiff_grads(loss_fn, params):
    ad.zero_grads(params)
    with ad.Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else np.array(p.grad) for p in params]


def numeric_grads(loss_fn, params, h=1e-3):
    """Fourth-order central differences (truncation error O(h^4))."""
    out = []
    for p in params:
        fd = np.zeros_like(p.data)
        for i in np.ndindex(p.data.shape):
            old = p.data[i]
            vals = []
            for step in (2 * h, h, -h, -2 * h):
                p.data[i] = old + step
                vals.append(loss_fn().item())
            p.data[i] = old
            fd[i] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
        out.append(fd)
    return out


def max_rel_error(loss_fn, params, h=1e-3, floor=1e-6):
    """Largest |autodiff - fd| / (max(|autodiff|, |fd|) + floor) over every scalar parameter.

    The floor keeps entries whose true gradient is zero from turning the
    finite-difference roundoff (~1e-13) into a meaningless relative error.
    """
    got = autodiff_grads(loss_fn, params)
    want = numeric_grads(loss_fn, params, h)
    worst = 0.0
    for g, f in zip(got, want):
        rel = np.abs(g - f) / (np.maximum(np.abs(g), np.abs(f)) + floor)
        if rel.size:
            worst = max(worst, float(rel.max()))
    return worst

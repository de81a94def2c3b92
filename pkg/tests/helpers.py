"""Shared test oracles: central finite differences against the autodiff path."""

from __future__ import annotations

import numpy as np

from diffepi.diffcore import DTensor


def central_diff(f, x0: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x0 (flat input)."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        g.reshape(-1)[i] = (f(xp.reshape(x0.shape)) - f(xm.reshape(x0.shape))) / (2 * h)
    return g


def check_grads(build, x0, h=1e-4, rtol=1e-3, floor=1e-8):
    """Compare autodiff and finite-difference gradients of a scalar map.

    `build(xt)` takes a DTensor leaf and returns a scalar DTensor. Entries
    where both gradients are below `floor` in magnitude are skipped.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    leaf = DTensor(x0, requires_grad=True)
    out = build(leaf)
    out.backward()
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(x0)

    def f(x):
        return float(build(DTensor(x)).values)

    numeric = central_diff(f, x0, h=h)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    live = scale > floor
    if not np.any(live):
        return
    rel = np.abs(analytic - numeric)[live] / scale[live]
    assert rel.max() < rtol, (
        f"gradient mismatch: max rel err {rel.max():.3e}, "
        f"analytic {analytic[live][np.argmax(rel)]:.6e} vs "
        f"numeric {numeric[live][np.argmax(rel)]:.6e}"
    )

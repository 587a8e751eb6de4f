"""Central finite-difference gradient oracle, independent of the backward pass."""

from __future__ import annotations

import numpy as np


def finite_diff_grads(f, arrays, h=1e-5):
    """Numerical gradients of the scalar f() w.r.t. each array (perturbed in place)."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gf = arr.ravel(), g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f()
            flat[i] = orig - h
            fm = f()
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def assert_gradients_match(build_loss, params, h=1e-5, tol=1e-4):
    """Compare autodiff gradients of build_loss() against central differences.

    build_loss must rebuild the graph on every call; params are Parameters
    whose .data is perturbed in place for the numerical side.
    """
    loss = build_loss()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    for p in params:
        p.zero_grad()
    numeric = finite_diff_grads(lambda: float(build_loss().data), [p.data for p in params], h=h)
    for p, a, n in zip(params, analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-4)
        rel = np.abs(a - n) / denom
        assert rel.max() < tol, (
            f"gradient mismatch for {getattr(p, 'name', '?')}: max rel err {rel.max():.3e}"
        )

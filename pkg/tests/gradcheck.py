"""Finite-difference gradient oracle shared by the test modules.

All checks run in float64 with central differences at eps=1e-4.  The error
reported for one instance is a scaled max-norm:

    err = max|analytic - numeric| / max(1, max|analytic|, max|numeric|)

which behaves like a relative error for O(1) gradients and like an absolute
error near zero, so near-zero gradient entries do not blow the ratio up.
"""

from __future__ import annotations

import numpy as np

import recsfm.tensor as T


def numeric_gradients(f, arrays: list[np.ndarray], eps: float = 1e-4) -> list[np.ndarray]:
    """Central-difference d f() / d arrays[k], mutating each array in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f()
            flat[i] = orig - eps
            lo = f()
            flat[i] = orig
            gf[i] = (hi - lo) / (2.0 * eps)
        grads.append(g)
    return grads


def check_gradients(build, arrays, eps: float = 1e-4) -> float:
    """Compare autodiff against finite differences; return the worst error.

    `build(*tensors) -> scalar Tensor` must be a pure function of its inputs.
    `arrays` are float64 seeds; gradients are checked for every one of them.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    leaves = [T.tensor(a, requires_grad=True) for a in arrays]
    loss = build(*leaves)
    T.backward(loss)
    analytic = [np.zeros_like(a) if t.grad is None else t.grad.copy()
                for a, t in zip(arrays, leaves)]

    def f() -> float:
        fresh = [T.tensor(a) for a in arrays]
        return build(*fresh).item()

    numeric = numeric_gradients(f, arrays, eps=eps)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = max(1.0, float(np.abs(a).max(initial=0.0)),
                    float(np.abs(n).max(initial=0.0)))
        worst = max(worst, float(np.abs(a - n).max(initial=0.0)) / denom)
    return worst

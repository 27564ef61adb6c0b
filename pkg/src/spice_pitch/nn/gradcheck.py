"""Finite-difference gradient checking."""

import numpy as np

from .tensor import Tensor


def numeric_grad(f, arrays, i, eps=1e-6):
    """Central differences of scalar ``f(*arrays)`` w.r.t. ``arrays[i]``."""
    x = arrays[i]
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for j in range(flat.size):
        old = flat[j]
        flat[j] = old + eps
        up = f(*arrays)
        flat[j] = old - eps
        down = f(*arrays)
        flat[j] = old
        gf[j] = (up - down) / (2 * eps)
    return g


def gradcheck(build, arrays, eps=1e-6, rtol=1e-4, atol=1e-10):
    """Compare autodiff and numeric gradients of ``build(*tensors) -> scalar Tensor``.

    ``arrays`` are float64 inputs; every one is differentiated. Returns the
    worst relative error; raises AssertionError if any element exceeds
    ``rtol * max(|analytic|, |numeric|) + atol``.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(*tensors).backward()

    def value(*xs):
        return float(build(*[Tensor(x) for x in xs]).data)

    worst = 0.0
    for i, t in enumerate(tensors):
        num = numeric_grad(value, arrays, i, eps)
        ana = np.zeros_like(num) if t.grad is None else t.grad
        err = np.abs(ana - num)
        scale = np.maximum(np.abs(ana), np.abs(num))
        bad = err > rtol * scale + atol
        if bad.any():
            j = np.argmax(np.where(bad, err, -1))
            raise AssertionError(
                f"gradient mismatch in input {i} at {np.unravel_index(j, num.shape)}: "
                f"analytic {ana.flat[j]:.6g}, numeric {num.flat[j]:.6g}")
        rel = err / np.maximum(scale, atol)
        worst = max(worst, float(rel.max()) if rel.size else 0.0)
    return worst

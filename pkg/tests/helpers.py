"""Shared test utilities: central finite differences for gradient checks."""

import numpy as np

from cpcser.tensor import Tensor


def numeric_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar-valued f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
        it.iternext()
    return g


def rel_error(a, b):
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return np.max(np.abs(a - b)) / denom


def gradcheck(build_loss, inputs, tol=1e-4, h=1e-5):
    """Compare analytic gradients of build_loss(*tensors) to finite differences.

    build_loss takes Tensors (one per array in `inputs`) and returns a scalar
    Tensor. Returns the worst relative error over all inputs.
    """
    tensors = [Tensor(x, requires_grad=True) for x in inputs]
    loss = build_loss(*tensors)
    loss.backward()
    worst = 0.0
    for i, t in enumerate(tensors):
        def scalar_f(x, i=i):
            probe = [Tensor(arr.data.copy()) for arr in tensors]
            probe[i] = Tensor(x)
            return float(build_loss(*probe).data)

        num = numeric_grad(scalar_f, t.data, h=h)
        assert t.grad is not None, f"input {i} received no gradient"
        worst = max(worst, rel_error(t.grad, num))
    assert worst < tol, f"gradient mismatch: rel error {worst:.3e} >= {tol}"
    return worst

"""Central finite-difference gradient checking used across the test suite.

The oracle only ever calls the forward pass (no tape), perturbing raw
parameter buffers in place, so it stays independent of the backward rules it
verifies.
"""

import numpy as np

from farnet.numerics import Tape, Tensor


def finite_difference_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, perturbing x in place."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def check_gradients(loss_fn, tensors: dict[str, Tensor], h: float = 1e-5,
                    tol: float = 1e-5) -> float:
    """Compare tape gradients of loss_fn() against finite differences.

    loss_fn must rebuild the loss from the current contents of ``tensors``
    each time it is called. Returns the worst relative error seen.
    """
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    analytic = {}
    for name, t in tensors.items():
        assert t.grad is not None, f"no gradient reached {name}"
        analytic[name] = t.grad.copy()
        t.grad = None

    worst = 0.0
    for name, t in tensors.items():
        fd = finite_difference_grad(lambda: loss_fn().item(), t.data, h=h)
        err = max_rel_err(analytic[name], fd)
        assert err <= tol, f"gradient mismatch for {name}: rel err {err:.3e} > {tol}"
        worst = max(worst, err)
    return worst

"""Shared test utilities: the finite-difference gradient oracle.

The oracle runs the forward function on float64 tensors and compares central
finite differences (step 1e-3) against the engine's analytic gradients. It is
deliberately independent of the autodiff implementation: it only calls the
forward path and perturbs raw numpy buffers.
"""

import numpy as np

from sedlab.tensor import Tensor

FD_STEP = 1e-3
FD_RTOL = 1e-4


def f64_tensor(rng, shape, scale=1.0, requires_grad=True):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=requires_grad,
                  dtype=np.float64)


def finite_difference_grad(fn, tensors, index, step=FD_STEP):
    """Central-difference gradient of scalar fn() w.r.t. tensors[index]."""
    target = tensors[index]
    grad = np.zeros_like(target.data)
    flat = target.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = float(fn().data)
        flat[i] = orig - step
        down = float(fn().data)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def check_gradients(fn, tensors, step=FD_STEP, rtol=FD_RTOL, atol=None):
    """Assert analytic gradients of scalar fn() match finite differences.

    ``tensors`` are the float64 leaves fn() reads. Relative error is measured
    against the larger of the two gradient norms (with a small absolute floor
    so near-zero gradients do not blow up the ratio).
    """
    for t in tensors:
        t.zero_grad()
    loss = fn()
    loss.backward()
    for idx, t in enumerate(tensors):
        if not t.requires_grad:
            continue
        fd = finite_difference_grad(fn, tensors, idx, step)
        an = t.grad if t.grad is not None else np.zeros_like(t.data)
        denom = max(np.abs(fd).max(), np.abs(an).max(), 1e-6 if atol is None else atol)
        err = np.abs(an - fd).max() / denom
        assert err < rtol, (
            f"gradient mismatch on tensor {idx} shape {t.shape}: rel err {err:.3e} "
            f"(analytic max {np.abs(an).max():.3e}, fd max {np.abs(fd).max():.3e})")

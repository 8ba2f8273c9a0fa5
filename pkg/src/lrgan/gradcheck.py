"""Central-difference gradient checking for autodiff verification.

Runs in float64 mode only: float32 has too little headroom to separate
truncation error from genuine gradient bugs.
"""

from __future__ import annotations

import numpy as np

from .optim import zero_grads
from .tensor import NumericsError, backward, get_precision


def grad_check(f, params, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    f is a deterministic builder returning a scalar Tensor computed from
    `params` (a list of requires_grad leaf tensors). Every parameter entry is
    perturbed by +/-h, so keep parameter counts small.
    """
    if get_precision() != "float64":
        raise RuntimeError("grad_check requires the float64 precision mode")
    for i, p in enumerate(params):
        if p.data.dtype != np.float64:
            raise RuntimeError(f"grad_check parameter {i} is not float64; rebuild under precision('float64')")

    zero_grads(params)
    out = f()
    backward(out)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    zero_grads(params)

    worst = 0.0
    for i, p in enumerate(params):
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            try:
                f_plus = float(f().data.reshape(-1)[0])
                flat[j] = orig - h
                f_minus = float(f().data.reshape(-1)[0])
            except NumericsError as err:
                raise NumericsError(f"non-finite value while perturbing parameter {i} entry {j}: {err}") from err
            finally:
                flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[i].reshape(-1)[j]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if rel > worst:
                worst = rel
    return worst

"""Adam optimizer with bias correction, operating on parameter tensors in place."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError


@dataclass
class AdamState:
    """First/second moments and step counter for one parameter group."""

    m: list
    v: list
    t: int = 0
    lr: float = 0.0002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=0.0002, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
        )


def adam_step(params, grads, state):
    """One bias-corrected Adam update; mutates params and state, returns both."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError(
            f"adam_step size mismatch: {len(params)} params, {len(grads)} grads, "
            f"{len(state.m)} moment slots"
        )
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step grad shape {g.shape} != param shape {p.data.shape}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def zero_grads(params):
    for p in params:
        p.grad = None


def collect_grads(params):
    """Gradients aligned with params; missing grads become zeros."""
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

"""Adam with bias correction, over named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _param_dict(model_or_params) -> dict[str, np.ndarray]:
    return getattr(model_or_params, "params", model_or_params)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    v: dict[str, np.ndarray] = field(default_factory=dict, repr=False)


def init_adam(
    model_or_params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    params = _param_dict(model_or_params)
    return AdamState(
        lr=lr, beta1=beta1, beta2=beta2, eps=eps, t=0,
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def step(model_or_params, grads: dict[str, np.ndarray], state: AdamState):
    """One in-place Adam update. Returns the model/params it was given.

    A parameter whose gradient is exactly zero (all moments zero) is left
    bit-identical: m_hat = 0 makes the update exactly 0.0.
    """
    params = _param_dict(model_or_params)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(
                f"divergence: non-finite gradient in {name} at step {state.t}"
            )
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return model_or_params

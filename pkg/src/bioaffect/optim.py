"""Adam optimizer over a ParamStore."""

from __future__ import annotations

import numpy as np

from .errors import GraphError
from .params import ParamStore


class AdamState:
    """First/second moment buffers plus the step counter for one run.

    Defaults: lr 1e-4, beta1 0.9, beta2 0.999, eps 1e-8.
    """

    def __init__(
        self,
        params: ParamStore,
        lr: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}


def adam_step(params: ParamStore, state: AdamState) -> None:
    """One bias-corrected Adam update, in place, over every parameter."""
    for name, t in params.items():
        if t.grad is None:
            raise GraphError(f"adam_step: parameter {name!r} has no gradient")
        if name not in state.m:
            raise GraphError(f"adam_step: state was not built for parameter {name!r}")
    state.step_count += 1
    t_step = state.step_count
    bc1 = 1.0 - state.beta1**t_step
    bc2 = 1.0 - state.beta2**t_step
    for name, p in params.items():
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)

"""Adam optimizer (adaptive moment estimation) with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, ShapeError


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState) -> AdamState:
    """One update over aligned lists of parameter and gradient tensors.

    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps), with first/second
    moments updated in place and bias-corrected by the step counter.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        pd = p.data if isinstance(p, Tensor) else p
        gd = g.data if isinstance(g, Tensor) else g
        if gd.shape != pd.shape:
            raise ShapeError(f"grad shape {gd.shape} != param shape {pd.shape} at index {i}")
        if i not in state.m:
            state.m[i] = np.zeros_like(pd, dtype=np.float64)
            state.v[i] = np.zeros_like(pd, dtype=np.float64)
        m, v = state.m[i], state.v[i]
        m *= b1
        m += (1.0 - b1) * gd
        v *= b2
        v += (1.0 - b2) * np.square(gd, dtype=np.float64)
        pd -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(pd.dtype)
    return state


class Adam:
    """Binds an AdamState to a network's parameter list."""

    def __init__(self, named_params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.names = [name for name, _ in named_params]
        self.params = [t for _, t in named_params]
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self) -> None:
        grads = []
        for name, t in zip(self.names, self.params):
            if t.grad is None:
                raise ValueError(f"parameter {name!r} has no gradient; run backward first")
            grads.append(t.grad)
        adam_step([t.data for t in self.params], grads, self.state)

    def zero_grad(self) -> None:
        for t in self.params:
            t.zero_grad()

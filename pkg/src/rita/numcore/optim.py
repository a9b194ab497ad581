"""Adaptive-moment (Adam) parameter updates over flat array lists."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mlp import MlpParams
from .tensor import NonFiniteError, Tensor

__all__ = ["OptState", "init_opt_state", "adam_update", "optimizer_step", "Adam"]


@dataclass
class OptState:
    """Moment accumulators mirroring the parameter shapes."""

    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_opt_state(arrays: Sequence[np.ndarray], lr: float = 3e-4, **kw) -> OptState:
    return OptState(
        step=0,
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
        lr=lr,
        **kw,
    )


def adam_update(
    arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: OptState
) -> tuple[list[np.ndarray], OptState]:
    """One Adam step; returns new arrays and the advanced state."""
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ValueError("parameter/gradient/state length mismatch")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient; update rejected")
    t = state.step + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_arrays, new_m, new_v = [], [], []
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_arrays.append(a - step)
        new_m.append(m)
        new_v.append(v)
    return new_arrays, OptState(
        t, new_m, new_v, state.lr, state.beta1, state.beta2, state.eps
    )


def optimizer_step(
    params: MlpParams, grads, state: OptState
) -> tuple[MlpParams, OptState]:
    """Adam step on an MLP; grads is the (dw, db) list from gradient_of."""
    flat_grads: list[np.ndarray] = []
    for dw, db in grads:
        flat_grads.extend((dw, db))
    new_arrays, new_state = adam_update(params.arrays(), flat_grads, state)
    return params.with_arrays(new_arrays), new_state


class Adam:
    """Stateful convenience wrapper around adam_update for Tensor lists."""

    def __init__(self, params: list[Tensor], lr: float = 3e-4, **kw):
        self.params = params
        self.state = init_opt_state([p.data for p in params], lr=lr, **kw)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [
            p.grad if p.grad is not None else np.zeros_like(p.data)
            for p in self.params
        ]
        new_arrays, self.state = adam_update(
            [p.data for p in self.params], grads, self.state
        )
        for p, a in zip(self.params, new_arrays):
            p.data = a

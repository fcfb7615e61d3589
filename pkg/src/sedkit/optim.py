"""Adam optimizer over named parameter stores."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Var


class TrainingDivergence(RuntimeError):
    """Raised when a gradient or loss goes non-finite."""


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params: dict[str, Var], state: AdamState, lr: float):
    """One Adam step with bias correction, in place.

    ``params`` maps name -> Var; gradients are read from ``Var.grad``
    (missing/None grads are treated as zero).
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.value)
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient in {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def zero_grads(params: dict[str, Var]):
    for p in params.values():
        p.zero_grad()

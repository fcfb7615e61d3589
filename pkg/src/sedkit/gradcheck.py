"""Finite-difference verification of the backward passes.

All checks run in float64 with central differences; the relative error is
|analytic - numeric| / max(|analytic|, |numeric|, 1e-12) maximized over
sampled coordinates.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Var
from .optim import zero_grads


def grad_check(loss_fn, params: dict[str, Var], eps: float = 1e-5,
               max_coords: int = 200, rng=None) -> float:
    """Return the max relative error between analytic and numeric gradients.

    ``loss_fn`` maps the (shared, mutable) params dict to a scalar Var.
    Parameters must hold float64 values for the stated tolerances to apply.
    """
    if rng is None:
        rng = np.random.default_rng(0)

    zero_grads(params)
    loss = loss_fn(params)
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value))
                for k, p in params.items()}

    coords = []
    for name, p in params.items():
        for flat_idx in range(p.value.size):
            coords.append((name, flat_idx))
    if len(coords) > max_coords:
        sel = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sel]

    worst = 0.0
    for name, flat_idx in coords:
        p = params[name]
        flat = p.value.reshape(-1)
        orig = flat[flat_idx]
        flat[flat_idx] = orig + eps
        lp = float(loss_fn(params).value)
        flat[flat_idx] = orig - eps
        lm = float(loss_fn(params).value)
        flat[flat_idx] = orig
        numeric = (lp - lm) / (2.0 * eps)
        a = analytic[name].reshape(-1)[flat_idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
        worst = max(worst, err)
    return worst

"""Training losses: binary cross entropy and categorical cross entropy.

The negative SI-SDR loss lives with the enhancer, next to the metric.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

PROB_EPS = 1e-7


def bce_loss(y_hat, y):
    """-[y ln(p) + (1-y) ln(1-p)] with p clamped to [1e-7, 1-1e-7].

    ``y_hat`` may be a Var or array (elementwise); ``y`` must be 0/1.
    Returns a Var of the same shape (reduce with ad.mean for a batch).
    """
    y_arr = np.asarray(y)
    if not np.all((y_arr == 0) | (y_arr == 1)):
        raise ValueError(f"BCE target must be 0 or 1, got {y!r}")
    p = ad.clip(ad.as_var(y_hat), PROB_EPS, 1.0 - PROB_EPS)
    y_arr = y_arr.astype(p.value.dtype)
    return ad.mul(ad.add(ad.mul(ad.log(p), y_arr),
                         ad.mul(ad.log(ad.add(1.0, ad.mul(p, -1.0))), 1.0 - y_arr)),
                  -1.0)


def cross_entropy(probs, labels):
    """Mean -ln p[label] over a batch. ``probs`` is (B, K) on the simplex."""
    probs = ad.as_var(probs)
    B, K = probs.value.shape
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"label outside [0, {K})")
    onehot = np.zeros((B, K), dtype=probs.value.dtype)
    onehot[np.arange(B), labels] = 1.0
    p = ad.clip(probs, PROB_EPS, 1.0)
    return ad.mul(ad.mean(ad.sum_(ad.mul(ad.log(p), onehot), axis=1)), -1.0)

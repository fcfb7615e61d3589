"""Dense and GRU layers with explicit reverse-mode backward passes.

The GRU follows the double-bias convention with the reset gate applied to
the hidden-side transform:

    r  = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
    z  = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
    n  = tanh(W_in x + b_in + r * (W_hn h + b_hn))
    h' = (1 - z) * n + z * h

``gru_sequence`` runs the whole unrolled sequence as one fused graph node so
training does not pay per-frame tape overhead; ``gru_step`` is the single-step
building block used by tests and exposed for clarity.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Var

GATE_NAMES = ("ir", "iz", "in", "hr", "hz", "hn")


class DimensionError(ValueError):
    """Raised when tensor shapes do not conform."""


def uniform_init(shape, hidden_size, rng, dtype=np.float32):
    """Uniform in [-1/sqrt(hidden), +1/sqrt(hidden)]."""
    bound = 1.0 / np.sqrt(hidden_size)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


@dataclass
class GruLayerParams:
    """Weights of one GRU layer. Input-side W_* are (hidden, input);
    hidden-side are (hidden, hidden); biases are (hidden,)."""

    W_ir: Var
    W_iz: Var
    W_in: Var
    W_hr: Var
    W_hz: Var
    W_hn: Var
    b_ir: Var
    b_iz: Var
    b_in: Var
    b_hr: Var
    b_hz: Var
    b_hn: Var

    @classmethod
    def init(cls, input_size, hidden_size, rng, dtype=np.float32):
        kw = {}
        for g in GATE_NAMES:
            in_dim = input_size if g[0] == "i" else hidden_size
            kw[f"W_{g}"] = Var(uniform_init((hidden_size, in_dim), hidden_size, rng, dtype),
                               requires_grad=True)
            kw[f"b_{g}"] = Var(uniform_init((hidden_size,), hidden_size, rng, dtype),
                               requires_grad=True)
        return cls(**kw)

    @property
    def hidden_size(self):
        return self.W_hr.value.shape[0]

    @property
    def input_size(self):
        return self.W_ir.value.shape[1]

    def named(self, prefix=""):
        return {prefix + f.name: getattr(self, f.name) for f in fields(self)}

    def param_count(self):
        return sum(getattr(self, f.name).value.size for f in fields(self))


def dense_forward(x, W, b, activation="identity"):
    """y = act(W x + b).

    ``x`` may be a vector (in,) or a batch (..., in); W is (out, in).
    """
    x, W, b = ad.as_var(x), ad.as_var(W), ad.as_var(b)
    if W.value.ndim != 2 or W.value.shape[1] != x.value.shape[-1]:
        raise DimensionError(
            f"dense: W {W.value.shape} incompatible with x {x.value.shape}")
    if b.value.shape != (W.value.shape[0],):
        raise DimensionError(f"dense: b {b.value.shape} expected ({W.value.shape[0]},)")
    y = ad.add(_matmul_wt(x, W), b)
    if activation == "identity":
        return y
    if activation == "sigmoid":
        return ad.sigmoid(y)
    if activation == "softmax":
        return ad.softmax(y, axis=-1)
    raise ValueError(f"unknown activation {activation!r}")


def _matmul_wt(x, W):
    """x @ W.T without materializing the transpose in the graph."""
    out_val = x.value @ W.value.T

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ W.value)
        if W.requires_grad:
            gm = g.reshape(-1, g.shape[-1])
            xm = x.value.reshape(-1, x.value.shape[-1])
            W.accumulate(gm.T @ xm)

    return ad._make(out_val, (x, W), backward)


def gru_step(x, h, p: GruLayerParams):
    """One GRU step on a vector (in,) or batch (B, in). Graph-based."""
    x, h = ad.as_var(x), ad.as_var(h)
    if x.value.shape[-1] != p.input_size or h.value.shape[-1] != p.hidden_size:
        raise DimensionError(
            f"gru_step: x {x.value.shape}, h {h.value.shape} vs layer "
            f"({p.hidden_size}, {p.input_size})")
    r = ad.sigmoid(ad.add(ad.add(_matmul_wt(x, p.W_ir), p.b_ir),
                          ad.add(_matmul_wt(h, p.W_hr), p.b_hr)))
    z = ad.sigmoid(ad.add(ad.add(_matmul_wt(x, p.W_iz), p.b_iz),
                          ad.add(_matmul_wt(h, p.W_hz), p.b_hz)))
    hh = ad.add(_matmul_wt(h, p.W_hn), p.b_hn)
    n = ad.tanh(ad.add(ad.add(_matmul_wt(x, p.W_in), p.b_in), ad.mul(r, hh)))
    return ad.add(ad.mul(ad.add(1.0, ad.mul(z, -1.0)), n), ad.mul(z, h))


def gru_sequence(X, p: GruLayerParams):
    """Run a GRU over a full sequence.

    X: Var or array of shape (B, T, in). Returns Var (B, T, hidden) of the
    hidden states after each frame. Fused op: forward caches activations,
    backward is hand-rolled backpropagation through time.
    """
    X = ad.as_var(X)
    B, T, Din = X.value.shape
    if Din != p.input_size:
        raise DimensionError(f"gru_sequence: input {Din} vs layer {p.input_size}")
    hid = p.hidden_size
    dtype = X.value.dtype

    Wir, Wiz, Win = p.W_ir.value, p.W_iz.value, p.W_in.value
    Whr, Whz, Whn = p.W_hr.value, p.W_hz.value, p.W_hn.value

    Xm = X.value.reshape(B * T, Din)
    # input-side projections for all frames at once
    pir = (Xm @ Wir.T + p.b_ir.value + p.b_hr.value).reshape(B, T, hid)
    piz = (Xm @ Wiz.T + p.b_iz.value + p.b_hz.value).reshape(B, T, hid)
    pin = (Xm @ Win.T + p.b_in.value).reshape(B, T, hid)

    R = np.empty((B, T, hid), dtype=dtype)
    Z = np.empty((B, T, hid), dtype=dtype)
    N = np.empty((B, T, hid), dtype=dtype)
    HH = np.empty((B, T, hid), dtype=dtype)
    Hprev = np.empty((B, T, hid), dtype=dtype)
    H = np.empty((B, T, hid), dtype=dtype)

    h = np.zeros((B, hid), dtype=dtype)
    bhn = p.b_hn.value
    for t in range(T):
        Hprev[:, t] = h
        r = _sig(pir[:, t] + h @ Whr.T)
        z = _sig(piz[:, t] + h @ Whz.T)
        hh = h @ Whn.T + bhn
        n = np.tanh(pin[:, t] + r * hh)
        h = (1.0 - z) * n + z * h
        R[:, t], Z[:, t], N[:, t], HH[:, t], H[:, t] = r, z, n, hh, h

    def backward(g):
        dar = np.empty((B, T, hid), dtype=dtype)
        daz = np.empty((B, T, hid), dtype=dtype)
        dan = np.empty((B, T, hid), dtype=dtype)
        dhh = np.empty((B, T, hid), dtype=dtype)
        carry = np.zeros((B, hid), dtype=dtype)
        for t in range(T - 1, -1, -1):
            dh = g[:, t] + carry
            r, z, n, hh, hp = R[:, t], Z[:, t], N[:, t], HH[:, t], Hprev[:, t]
            dz = dh * (hp - n)
            dn = dh * (1.0 - z)
            carry = dh * z
            da_n = dn * (1.0 - n * n)
            dr = da_n * hh
            d_hh = da_n * r
            da_r = dr * r * (1.0 - r)
            da_z = dz * z * (1.0 - z)
            carry = carry + da_r @ Whr + da_z @ Whz + d_hh @ Whn
            dar[:, t], daz[:, t], dan[:, t], dhh[:, t] = da_r, da_z, da_n, d_hh

        darm = dar.reshape(B * T, hid)
        dazm = daz.reshape(B * T, hid)
        danm = dan.reshape(B * T, hid)
        dhhm = dhh.reshape(B * T, hid)
        hpm = Hprev.reshape(B * T, hid)

        p.W_ir.accumulate(darm.T @ Xm)
        p.W_iz.accumulate(dazm.T @ Xm)
        p.W_in.accumulate(danm.T @ Xm)
        p.W_hr.accumulate(darm.T @ hpm)
        p.W_hz.accumulate(dazm.T @ hpm)
        p.W_hn.accumulate(dhhm.T @ hpm)
        s_r, s_z, s_n, s_hh = (darm.sum(0), dazm.sum(0), danm.sum(0), dhhm.sum(0))
        p.b_ir.accumulate(s_r)
        p.b_hr.accumulate(s_r)
        p.b_iz.accumulate(s_z)
        p.b_hz.accumulate(s_z)
        p.b_in.accumulate(s_n)
        p.b_hn.accumulate(s_hh)
        if X.requires_grad:
            dX = darm @ Wir + dazm @ Wiz + danm @ Win
            X.accumulate(dX.reshape(B, T, Din))

    parents = (X,) + tuple(p.named().values())
    return ad._make(H, parents, backward)


def _sig(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out

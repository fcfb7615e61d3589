"""Cross-module oracle and invariant suite.

Each registered case checks one invariant against an oracle that is
independent of the implementation under test: central finite differences,
brute-force enumeration, or closed-form arithmetic. Oracles run at 64-bit
even where the production path is 32-bit; tolerances are stated per case.
"""

from __future__ import annotations

import fnmatch
import json
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import data, dsp
from .embedding import EmbedNet, MAG_SCALE, embed_batch, sv_similarity
from .enhancer import DenoiseNet, si_sdr, neg_si_sdr_loss, denoise_batch
from .ensemble import EnsembleModel, GateNet, forward_hard, gate_batch, \
    param_counts, soft_loss_batch
from .gradcheck import grad_check
from .layers import GruLayerParams, dense_forward, gru_sequence
from .losses import bce_loss, cross_entropy
from .clustering import kmeans
from .checkpoint import save_params, load_params


@dataclass
class OracleCase:
    name: str
    description: str
    tolerance: float
    fn: Callable[[], float]  # returns the measured error / deviation
    seed: int = 0


@dataclass
class CaseResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    seconds: float
    error: str | None = None


_CASES: list[OracleCase] = []


def case(name, description, tolerance, seed=0):
    def deco(fn):
        _CASES.append(OracleCase(name=name, description=description,
                                 tolerance=tolerance, fn=fn, seed=seed))
        return fn
    return deco


# --- gradient oracles (central finite differences at 64-bit, eps=1e-5) ---

@case("grad.dense", "dense layer + softmax + cross-entropy vs central "
      "finite differences", 1e-4)
def _grad_dense():
    rng = np.random.default_rng(101)
    W = ad.Var(rng.normal(0, 0.3, (4, 6)), requires_grad=True)
    b = ad.Var(rng.normal(0, 0.3, 4), requires_grad=True)
    x = rng.normal(0, 1, (5, 6))
    labels = rng.integers(0, 4, 5)

    def loss_fn(_params=None):
        probs = dense_forward(ad.Var(x), W, b, activation="softmax")
        return cross_entropy(probs, labels)

    return grad_check(loss_fn, {"W": W, "b": b}, rng=rng)


@case("grad.gru", "2-layer GRU BPTT vs central finite differences", 1e-4)
def _grad_gru():
    rng = np.random.default_rng(102)
    p1 = GruLayerParams.init(7, 5, rng, dtype=np.float64)
    p2 = GruLayerParams.init(5, 5, rng, dtype=np.float64)
    x = rng.normal(0, 1, (3, 6, 7))

    def loss_fn(_params=None):
        h = gru_sequence(ad.Var(x), p1)
        h = gru_sequence(h, p2)
        return ad.mean(ad.square(h))

    params = {f"l1.{k}": v for k, v in p1.named().items()}
    params.update({f"l2.{k}": v for k, v in p2.named().items()})
    return grad_check(loss_fn, params, rng=rng)


@case("grad.bce", "BCE loss gradient vs central finite differences", 1e-4)
def _grad_bce():
    rng = np.random.default_rng(103)
    logits = ad.Var(rng.normal(0, 1, 16), requires_grad=True)
    y = rng.integers(0, 2, 16).astype(np.float64)

    def loss_fn(_params=None):
        return ad.mean(bce_loss(ad.sigmoid(logits), y))

    return grad_check(loss_fn, {"logits": logits}, rng=rng)


@case("grad.siamese", "full Siamese pair path (shared encoder, "
      "sigma(z_i . z_j), BCE)", 1e-4)
def _grad_siamese():
    rng = np.random.default_rng(104)
    net = EmbedNet.init(rng, dtype=np.float64)
    x_i = rng.normal(0, MAG_SCALE, (2, 4, 513))
    x_j = rng.normal(0, MAG_SCALE, (2, 4, 513))
    y = np.array([1.0, 0.0])

    def loss_fn(_params=None):
        z_i = embed_batch(x_i, net)
        z_j = embed_batch(x_j, net)
        return ad.mean(bce_loss(sv_similarity(z_i, z_j), y))

    return grad_check(loss_fn, net.named(), rng=rng, max_coords=60)


@case("grad.ensemble", "soft-gated ensemble SI-SDR loss end to end "
      "(gate + specialists + masked iSTFT)", 1e-4)
def _grad_ensemble():
    rng = np.random.default_rng(105)
    cfg = dsp.StftConfig()
    embed_net = EmbedNet.init(rng, dtype=np.float64)
    gate = GateNet.init(embed_net, K=2, rng=rng, lam=10.0, dtype=np.float64)
    specs = [DenoiseNet.init(rng, hidden=6, dtype=np.float64)
             for _ in range(2)]
    model = EnsembleModel(gate_net=gate, specialists=specs,
                          cluster_model=None, mode="finetune")
    x = rng.normal(0, 0.05, (2, cfg.frame_size * 2))
    clean = rng.normal(0, 0.05, (2, cfg.frame_size * 2))
    spec = np.stack([dsp.stft(xi, cfg).frames for xi in x])
    mag = (np.abs(spec) * MAG_SCALE).astype(np.float64)

    def loss_fn(_params=None):
        return soft_loss_batch(model, mag, spec, clean, lam=10.0)

    return grad_check(loss_fn, model.named(), rng=rng, max_coords=60)


@case("grad.masked_istft", "differentiable masked iSTFT vs central "
      "finite differences", 1e-4)
def _grad_masked_istft():
    rng = np.random.default_rng(106)
    cfg = dsp.StftConfig()
    x = rng.normal(0, 0.1, cfg.frame_size * 2)
    spec = dsp.stft(x, cfg)
    mask = ad.Var(rng.uniform(0.2, 0.8, spec.frames.shape),
                  requires_grad=True)

    def loss_fn(_params=None):
        y = dsp.masked_istft(mask, spec.frames, cfg)
        return ad.mean(ad.square(y))

    return grad_check(loss_fn, {"mask": mask}, rng=rng, max_coords=80)


# --- DSP and signal oracles ---

@case("dsp.roundtrip", "max interior |x - istft(stft(x))| over 20 random "
      "40000-sample signals", 1e-6)
def _dsp_roundtrip():
    rng = np.random.default_rng(201)
    cfg = dsp.StftConfig()
    worst = 0.0
    lo, hi = cfg.frame_size, 40000 - cfg.frame_size
    for _ in range(20):
        x = rng.normal(0, 0.3, 40000)
        y = dsp.istft(dsp.stft(x, cfg))
        worst = max(worst, float(np.max(np.abs(x[lo:hi] - y[lo:hi]))))
    return worst


@case("dsp.cola", "periodic Hann window satisfies COLA at 75% overlap "
      "(interior window-square sum constant)", 1e-12)
def _dsp_cola():
    cfg = dsp.StftConfig()
    w2 = cfg.window() ** 2
    acc = np.zeros(cfg.frame_size * 4)
    for off in range(0, len(acc) - cfg.frame_size + 1, cfg.hop):
        acc[off:off + cfg.frame_size] += w2
    interior = acc[cfg.frame_size:-cfg.frame_size]
    return float(np.max(np.abs(interior - 1.5)))


@case("sisdr.scale", "SI-SDR scale invariance: |si_sdr(a*est, ref) - "
      "si_sdr(est, ref)|", 1e-9)
def _sisdr_scale():
    rng = np.random.default_rng(202)
    ref = rng.normal(0, 1, 4000)
    est = ref + 0.1 * rng.normal(0, 1, 4000)
    base = si_sdr(est, ref)
    worst = 0.0
    for a in (1e-3, 0.5, 3.0, 1e3):
        worst = max(worst, abs(si_sdr(a * est, ref) - base))
    return worst


@case("sisdr.orthogonal", "constructed orthogonal noise at energy ratio "
      "100:1 gives exactly 20 dB", 1e-6)
def _sisdr_orthogonal():
    n = 4096
    t = np.arange(n)
    ref = np.sqrt(2.0) * np.cos(2 * np.pi * 5 * t / n)
    noise = np.sqrt(2.0) * np.cos(2 * np.pi * 11 * t / n)  # orthogonal
    est = ref + noise / 10.0  # energy ratio 100:1
    return abs(si_sdr(est, ref) - 20.0)


@case("mix.snr", "requested vs measured SNR over 1000 random mixtures "
      "in [-5, 10] dB", 1e-6)
def _mix_snr():
    rng = np.random.default_rng(203)
    worst = 0.0
    for _ in range(1000):
        s = rng.normal(0, 1, 512)
        n = rng.normal(0, 1, 512)
        snr = float(rng.uniform(-5, 10))
        m = data.mix(s, n, snr)
        scaled = m.mixture - s
        measured = 10 * np.log10(np.sum(s ** 2) / np.sum(scaled ** 2))
        worst = max(worst, abs(measured - snr))
    return worst


# --- clustering oracles ---

def _brute_force_wcss(points, K=2):
    n = len(points)
    best = np.inf
    for code in range(2 ** n):
        labels = [(code >> i) & 1 for i in range(n)]
        if len(set(labels)) < K:
            continue
        w = 0.0
        for k in range(K):
            members = points[[i for i in range(n) if labels[i] == k]]
            w += float(np.sum((members - members.mean(axis=0)) ** 2))
        best = min(best, w)
    return best


@case("kmeans.bruteforce", "Lloyd-with-restarts objective equals the "
      "exhaustive 2^8 optimum on 20 random instances", 1e-9)
def _kmeans_bruteforce():
    rng = np.random.default_rng(301)
    worst = 0.0
    for i in range(20):
        pts = rng.normal(0, 1, (8, 3))
        model = kmeans(pts, K=2, seed=1000 + i)
        oracle = _brute_force_wcss(pts, K=2)
        worst = max(worst, abs(model.inertia - oracle) / max(oracle, 1e-12))
    return worst


@case("kmeans.monotone", "WCSS non-increasing across Lloyd iterations",
      1e-12)
def _kmeans_monotone():
    from .clustering import _lloyd
    rng = np.random.default_rng(302)
    worst = 0.0
    for _ in range(10):
        pts = rng.normal(0, 1, (30, 4))
        _, _, history = _lloyd(pts, 3, rng)
        increases = np.diff(history)
        if len(increases):
            worst = max(worst, float(np.max(increases)))
    return max(worst, 0.0)


# --- ensemble identities ---

@case("ensemble.sparse_identity", "forward_hard mask bit-equals the "
      "selected specialist's standalone mask on 25 random inputs", 0.0)
def _sparse_identity():
    from .enhancer import denoise
    from .embedding import features
    rng = np.random.default_rng(401)
    embed_net = EmbedNet.init(rng)
    gate = GateNet.init(embed_net, K=3, rng=rng, lam=10.0)
    specs = [DenoiseNet.init(rng, hidden=4) for _ in range(3)]
    model = EnsembleModel(gate_net=gate, specialists=specs,
                          cluster_model=None, mode="infer")
    worst = 0.0
    for _ in range(25):
        x = rng.normal(0, 0.1, 4096)
        mask, k_star, _ = forward_hard(x, model)
        standalone = denoise(features(x), model.specialists[k_star])
        worst = max(worst, float(np.max(np.abs(mask - standalone))))
    return worst


@case("ensemble.param_count", "parameter accounting: H=256 specialist "
      "1,118,721; K=5 total within 2% of 5.6e6", 0.02)
def _param_count():
    total5, _ = param_counts(5, 256)
    from .ensemble import gru_layer_params
    specialist = (gru_layer_params(513, 256) + gru_layer_params(256, 256)
                  + 256 * 513 + 513)
    if specialist != 1_118_721:
        return 1.0
    return abs(total5 - 5.6e6) / 5.6e6


@case("ensemble.softmax_temp", "lambda=10 softmax saturates: soft/hard "
      "mask gap <= 1e-3 when max prob >= 0.999", 1e-3)
def _softmax_temp():
    rng = np.random.default_rng(402)
    embed_net = EmbedNet.init(rng)
    gate = GateNet.init(embed_net, K=2, rng=rng, lam=10.0)
    # bias the classifier so the lambda=10 softmax actually saturates;
    # a freshly initialized gate stays near uniform and would make the
    # max-probability precondition vacuous
    gate.b.value[:] = np.array([1.0, -1.0], dtype=gate.b.value.dtype)
    specs = [DenoiseNet.init(rng, hidden=4) for _ in range(2)]
    model = EnsembleModel(gate_net=gate, specialists=specs,
                          cluster_model=None, mode="infer")
    from .ensemble import forward_soft
    worst = 0.0
    checked = 0
    for _ in range(40):
        x = rng.normal(0, 0.1, 4096)
        m_soft, p = forward_soft(x, model)
        if np.max(p) < 0.999:
            continue
        m_hard, _, _ = forward_hard(x, model)
        worst = max(worst, float(np.max(np.abs(m_soft - m_hard))))
        checked += 1
    return worst if checked else float("inf")


# --- persistence ---

@case("checkpoint.roundtrip", "binary checkpoint save/load round-trip is "
      "bit exact", 0.0)
def _checkpoint_roundtrip():
    import os
    import tempfile
    rng = np.random.default_rng(501)
    arrays = {"a.w": rng.normal(0, 1, (3, 4)).astype(np.float32),
              "b": rng.normal(0, 1, 7),
              "scalar": np.array(3.5)}
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "t.ckpt")
        save_params(path, arrays)
        back = load_params(path)
    if set(back) != set(arrays):
        return 1.0
    worst = 0.0
    for k in arrays:
        if back[k].dtype != arrays[k].dtype or back[k].shape != arrays[k].shape:
            return 1.0
        if arrays[k].size:
            worst = max(worst, float(np.max(np.abs(back[k] - arrays[k]))))
    return worst


@case("wav.rejection", "malformed WAV inputs are rejected", 0.0)
def _wav_rejection():
    import os
    import tempfile
    import wave
    from .data import read_wav, WavFormatError
    failures = 0
    with tempfile.TemporaryDirectory() as d:
        bad = os.path.join(d, "bad.wav")
        with open(bad, "wb") as f:
            f.write(b"RIFFxxxxWAVE")  # truncated garbage
        try:
            read_wav(bad)
            failures += 1
        except (WavFormatError, wave.Error, EOFError):
            pass
        stereo = os.path.join(d, "stereo.wav")
        with wave.open(stereo, "wb") as w:
            w.setnchannels(2)
            w.setsampwidth(2)
            w.setframerate(8000)
            w.writeframes(b"\x00\x00" * 32)
        try:
            read_wav(stereo)
            failures += 1
        except WavFormatError:
            pass
    return float(failures)


def run_suite(filter_pattern=None, json_path=None, stream=None):
    """Run all (or name-matched) cases; returns (n_failed, results)."""
    import sys
    out = stream or sys.stdout
    cases = [c for c in _CASES
             if filter_pattern is None
             or fnmatch.fnmatch(c.name, filter_pattern)]
    results = []
    for c in cases:
        t0 = time.perf_counter()
        try:
            measured = float(c.fn())
            err = None
        except Exception as e:  # report, don't abort the suite
            measured = float("inf")
            err = f"{type(e).__name__}: {e}"
        dt = time.perf_counter() - t0
        passed = err is None and measured <= c.tolerance
        results.append(CaseResult(name=c.name, measured=measured,
                                  tolerance=c.tolerance, passed=passed,
                                  seconds=dt, error=err))
        status = "PASS" if passed else "FAIL"
        line = (f"[{status}] {c.name:28s} measured={measured:.3e} "
                f"tol={c.tolerance:.1e} ({dt:.2f}s)")
        if err:
            line += f"  {err}"
        print(line, file=out)
    n_failed = sum(not r.passed for r in results)
    print(f"{len(results) - n_failed}/{len(results)} cases passed",
          file=out)
    if json_path:
        payload = [{"name": r.name, "measured": r.measured,
                    "tolerance": r.tolerance, "passed": r.passed,
                    "seconds": r.seconds, "error": r.error}
                   for r in results]
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump({"cases": payload, "failed": n_failed}, f, indent=2)
            f.write("\n")
    return n_failed, results

"""Time-frequency front end: STFT analysis/synthesis, ratio-mask targets,
and complex masking that keeps the noisy phase.

Analysis uses a periodic Hann window at 75% overlap (hop = frame/4), which
satisfies constant overlap-add, so synthesis with window-squared
normalization reconstructs interior samples exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

# window-square-sum floor for overlap-add normalization; interior value is 1.5
OLA_NORM_FLOOR = 1e-2


@dataclass(frozen=True)
class StftConfig:
    frame_size: int = 1024
    hop: int = 256
    sample_rate: int = 8000

    def __post_init__(self):
        if self.hop * 4 != self.frame_size:
            raise ValueError("hop must equal frame_size / 4 (75% overlap)")

    @property
    def n_bins(self):
        return self.frame_size // 2 + 1

    def window(self, dtype=np.float64):
        # periodic Hann
        n = np.arange(self.frame_size)
        return (0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.frame_size)).astype(dtype)

    def n_frames(self, n_samples):
        if n_samples < self.frame_size:
            raise ValueError(
                f"signal of {n_samples} samples shorter than frame {self.frame_size}")
        return 1 + (n_samples - self.frame_size) // self.hop

    def n_samples(self, n_frames):
        return self.frame_size + (n_frames - 1) * self.hop


@dataclass
class Spectrogram:
    frames: np.ndarray  # (T, n_bins) complex
    config: StftConfig = field(default_factory=StftConfig)

    @property
    def magnitude(self):
        return np.abs(self.frames)


def _frame(x, cfg):
    T = cfg.n_frames(len(x))
    idx = np.arange(cfg.frame_size)[None, :] + cfg.hop * np.arange(T)[:, None]
    return x[idx]


def stft(x, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """Short-time Fourier transform; no padding, trailing samples dropped."""
    x = np.asarray(x, dtype=np.float64)
    frames = _frame(x, cfg) * cfg.window()
    return Spectrogram(np.fft.rfft(frames, axis=-1), cfg)


def batch_stft(xs, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """STFT of a batch of equal-length signals; returns (B, T, n_bins)."""
    xs = np.asarray(xs, dtype=np.float64)
    T = cfg.n_frames(xs.shape[-1])
    idx = np.arange(cfg.frame_size)[None, :] + cfg.hop * np.arange(T)[:, None]
    frames = xs[..., idx] * cfg.window()
    return np.fft.rfft(frames, axis=-1)


def istft(S: Spectrogram) -> np.ndarray:
    """Overlap-add synthesis with window-squared normalization."""
    cfg = S.config
    frames = np.fft.irfft(S.frames, n=cfg.frame_size, axis=-1)
    return _overlap_add(frames * cfg.window(), cfg)


def _overlap_add(wframes, cfg):
    T = wframes.shape[-2]
    n = cfg.n_samples(T)
    lead = wframes.shape[:-2]
    y = np.zeros(lead + (n,), dtype=wframes.dtype)
    w2 = np.zeros(n, dtype=np.float64)
    win2 = cfg.window() ** 2
    for t in range(T):
        sl = slice(t * cfg.hop, t * cfg.hop + cfg.frame_size)
        y[..., sl] += wframes[..., t, :]
        w2[sl] += win2
    # clamp keeps the few heavily tapered edge samples from being amplified
    return y / np.maximum(w2, OLA_NORM_FLOOR)


def irm_target(mag_s, mag_n):
    """Ideal ratio mask |S| / (|S| + |N|); 0.5 where both are ~zero."""
    mag_s = np.asarray(mag_s)
    mag_n = np.asarray(mag_n)
    if (mag_s < 0).any() or (mag_n < 0).any():
        raise ValueError("magnitudes must be nonnegative")
    denom = mag_s + mag_n
    out = np.full_like(denom, 0.5, dtype=np.float64)
    ok = denom >= 1e-12
    out[ok] = mag_s[ok] / denom[ok]
    return out


def apply_mask(X: Spectrogram, m) -> Spectrogram:
    """Element-wise real mask on the complex spectrum (noisy phase kept)."""
    m = np.asarray(m)
    if m.shape != X.frames.shape:
        raise ValueError(f"mask {m.shape} vs spectrogram {X.frames.shape}")
    return Spectrogram(X.frames * m, X.config)


def masked_istft(mask, spec, cfg: StftConfig = StftConfig()):
    """Differentiable synthesis of istft(mask * spec).

    mask: Var or array (..., T, F) real; spec: constant complex (..., T, F).
    Returns a Var (..., L). Gradient flows to the mask only (the noisy
    spectrogram is data).
    """
    mask = ad.as_var(mask)
    spec = np.asarray(spec)
    win = cfg.window()
    N = cfg.frame_size
    T = mask.value.shape[-2]
    n = cfg.n_samples(T)

    # precompute the overlap-add normalizer once per length
    w2 = np.zeros(n, dtype=np.float64)
    for t in range(T):
        w2[t * cfg.hop: t * cfg.hop + N] += win ** 2
    w2 = np.maximum(w2, OLA_NORM_FLOOR)

    C = mask.value * spec
    frames = np.fft.irfft(C, n=N, axis=-1) * win
    lead = mask.value.shape[:-2]
    y = np.zeros(lead + (n,), dtype=np.float64)
    for t in range(T):
        y[..., t * cfg.hop: t * cfg.hop + N] += frames[..., t, :]
    y = (y / w2).astype(mask.value.dtype)

    def backward(g):
        gn = g / w2
        gf = np.empty(lead + (T, N), dtype=np.float64)
        for t in range(T):
            gf[..., t, :] = gn[..., t * cfg.hop: t * cfg.hop + N]
        gf *= win
        dC = np.fft.rfft(gf, axis=-1) * (2.0 / N)
        dC[..., 0] *= 0.5
        dC[..., -1] *= 0.5
        dm = np.real(np.conj(spec) * dC)
        mask.accumulate(dm.astype(mask.value.dtype))

    return ad._make(y, (mask,), backward)

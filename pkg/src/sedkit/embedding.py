"""Siamese speaker-verification encoder.

Two stacked GRU layers (513 -> 32 -> 32); the utterance embedding is the
second layer's hidden state at the final frame. Pairs of noisy utterances
are scored by the sigmoid of the embeddings' inner product and trained with
binary cross entropy.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad, data, dsp
from .autodiff import Var
from .layers import GruLayerParams, gru_sequence
from .losses import bce_loss
from .optim import AdamState, TrainingDivergence, adam_update, zero_grads

EMBED_DIM = 32
N_BINS = 513

# global scale applied to magnitude-spectrum inputs so GRU pre-activations
# start in a sane range
MAG_SCALE = 0.2


@dataclass
class EmbedNet:
    layer1: GruLayerParams
    layer2: GruLayerParams

    @classmethod
    def init(cls, rng, hidden=EMBED_DIM, n_bins=N_BINS, dtype=np.float32):
        return cls(GruLayerParams.init(n_bins, hidden, rng, dtype),
                   GruLayerParams.init(hidden, hidden, rng, dtype))

    def named(self, prefix=""):
        out = self.layer1.named(prefix + "l1.")
        out.update(self.layer2.named(prefix + "l2."))
        return out

    def clone(self):
        return copy.deepcopy(self)


def features(waveform, cfg=dsp.StftConfig(), dtype=np.float32):
    """Scaled magnitude frames (T, 513) for one waveform."""
    return (np.abs(dsp.stft(waveform, cfg).frames) * MAG_SCALE).astype(dtype)


def batch_features(waves, cfg=dsp.StftConfig(), dtype=np.float32):
    """(B, T, 513) scaled magnitudes plus the complex spectra (B, T, 513)."""
    spec = dsp.batch_stft(waves, cfg)
    return (np.abs(spec) * MAG_SCALE).astype(dtype), spec


def embed_batch(mag, net: EmbedNet) -> Var:
    """mag: (B, T, 513) -> embeddings (B, 32). Differentiable."""
    h1 = gru_sequence(mag, net.layer1)
    h2 = gru_sequence(h1, net.layer2)
    return ad.take_index(h2, h2.value.shape[1] - 1, axis=1)


def embed(mag, net: EmbedNet) -> np.ndarray:
    """Embedding of a single utterance's magnitude frames (T, 513)."""
    mag = np.asarray(mag)
    if mag.ndim != 2 or mag.shape[0] < 1:
        raise ValueError("expected a non-empty (T, 513) frame sequence")
    return embed_batch(mag[None], net).value[0]


def sv_similarity(z_i, z_j):
    """sigmoid(<z_i, z_j>), symmetric; works on Vars or arrays."""
    if isinstance(z_i, Var) or isinstance(z_j, Var):
        return ad.sigmoid(ad.sum_(ad.mul(z_i, z_j), axis=-1))
    s = np.sum(np.asarray(z_i) * np.asarray(z_j), axis=-1)
    return 1.0 / (1.0 + np.exp(-s))


@dataclass
class SvTrainConfig:
    steps: int = 600
    batch_pairs: int = 24
    crop_samples: int = 16384  # ~2 s; T = 61 frames
    lr: float = 1e-3
    val_every: int = 50
    val_pairs: int = 192
    patience: int = 10
    dtype: type = np.float32


def _pair_batch(corpus, rng, n_pairs, crop):
    pairs = [data.sample_pair(corpus, rng, length=crop) for _ in range(n_pairs)]
    xs_i = np.stack([p.x_i.mixture for p in pairs])
    xs_j = np.stack([p.x_j.mixture for p in pairs])
    ys = np.array([p.y for p in pairs])
    return xs_i, xs_j, ys


def pair_accuracy(net, corpus, rng, n_pairs=128, crop=16384, split="val"):
    """Fraction of pairs classified correctly at threshold 0.5."""
    correct = 0
    for _ in range(n_pairs):
        p = data.sample_pair(corpus, rng, split=split, length=crop)
        z_i = embed(features(p.x_i.mixture), net)
        z_j = embed(features(p.x_j.mixture), net)
        correct += int((sv_similarity(z_i, z_j) > 0.5) == bool(p.y))
    return correct / n_pairs


def train_sv(corpus, config: SvTrainConfig, seed) -> EmbedNet:
    """Train the Siamese encoder; returns the best-validation snapshot."""
    if len(corpus.speakers("train")) < 2:
        raise ValueError("SV training needs at least 2 training speakers")
    rng_init = np.random.default_rng([seed, 0])
    rng_data = data.worker_rng(seed, worker=1)
    net = EmbedNet.init(rng_init, dtype=config.dtype)
    params = net.named()
    state = AdamState()
    best = (0.0, net.clone())
    stale = 0
    for step in range(config.steps):
        xs_i, xs_j, ys = _pair_batch(corpus, rng_data, config.batch_pairs,
                                     config.crop_samples)
        mag_i, _ = batch_features(xs_i, dtype=config.dtype)
        mag_j, _ = batch_features(xs_j, dtype=config.dtype)
        zero_grads(params)
        z_i = embed_batch(mag_i, net)
        z_j = embed_batch(mag_j, net)
        loss = ad.mean(bce_loss(sv_similarity(z_i, z_j), ys))
        if not np.isfinite(loss.value):
            raise TrainingDivergence(f"SV loss non-finite at step {step}")
        loss.backward()
        adam_update(params, state, config.lr)
        if (step + 1) % config.val_every == 0:
            acc = pair_accuracy(net, corpus, data.worker_rng(seed, worker=2),
                                n_pairs=config.val_pairs,
                                crop=config.crop_samples)
            if acc > best[0]:
                best = (acc, net.clone())
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    return best[1] if best[0] > 0 else net

"""Mask-estimating denoisers and the scale-invariant SDR objective.

A denoiser is two GRU layers plus a per-frame sigmoid dense head producing a
ratio mask over 513 bins. Specialists are trained on one speaker partition;
the baseline generalist is the same training on the full corpus. The loss is
the negative SI-SDR of the time-domain reconstruction (mask applied to the
complex noisy spectrum, then inverse STFT).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad, data, dsp
from .autodiff import Var
from .embedding import MAG_SCALE, batch_features
from .layers import GruLayerParams, gru_sequence, _matmul_wt
from .optim import AdamState, TrainingDivergence, adam_update, zero_grads

N_BINS = 513
SISDR_CAP_DB = 100.0


@dataclass
class DenoiseNet:
    layer1: GruLayerParams
    layer2: GruLayerParams
    W_out: Var  # (513, H)
    b_out: Var  # (513,)

    @classmethod
    def init(cls, rng, hidden=32, n_bins=N_BINS, dtype=np.float32):
        from .layers import uniform_init
        return cls(
            GruLayerParams.init(n_bins, hidden, rng, dtype),
            GruLayerParams.init(hidden, hidden, rng, dtype),
            Var(uniform_init((n_bins, hidden), hidden, rng, dtype),
                requires_grad=True),
            Var(uniform_init((n_bins,), hidden, rng, dtype), requires_grad=True),
        )

    @property
    def hidden(self):
        return self.layer1.hidden_size

    def named(self, prefix=""):
        out = self.layer1.named(prefix + "l1.")
        out.update(self.layer2.named(prefix + "l2."))
        out[prefix + "out.W"] = self.W_out
        out[prefix + "out.b"] = self.b_out
        return out

    def clone(self):
        return copy.deepcopy(self)


def denoise_batch(mag, net: DenoiseNet) -> Var:
    """mag (B, T, 513) scaled magnitudes -> mask Var (B, T, 513) in (0,1)."""
    h1 = gru_sequence(mag, net.layer1)
    h2 = gru_sequence(h1, net.layer2)
    return ad.sigmoid(ad.add(_matmul_wt(h2, net.W_out), net.b_out))


def denoise(mag, net: DenoiseNet) -> np.ndarray:
    """Mask for one utterance's (T, 513) scaled magnitude frames."""
    mag = np.asarray(mag)
    if mag.ndim != 2 or mag.shape[0] < 1:
        raise ValueError("expected a non-empty (T, 513) frame sequence")
    return denoise_batch(mag[None], net).value[0]


def si_sdr(est, ref) -> float:
    """Scale-invariant SDR in dB, capped at +100 for near-zero residual."""
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch {est.shape} vs {ref.shape}")
    denom = float(np.dot(ref, ref))
    if denom <= 0:
        raise ValueError("zero reference signal")
    alpha = float(np.dot(est, ref)) / denom
    target = alpha * ref
    e_t = float(np.dot(target, target))
    e_r = float(np.dot(target - est, target - est))
    if e_r < 1e-10 * e_t:
        return SISDR_CAP_DB
    return 10.0 * np.log10(e_t / e_r)


def neg_si_sdr_loss(est: Var, ref) -> Var:
    """Differentiable mean negative SI-SDR over a batch (B, L)."""
    ref = np.asarray(ref, dtype=est.value.dtype)
    denom = np.sum(ref * ref, axis=-1)
    alpha = ad.mul(ad.sum_(ad.mul(est, ref), axis=-1), 1.0 / denom)
    a2 = ad.reshape(alpha, alpha.value.shape + (1,))
    target = ad.mul(a2, ref)
    err = target - est
    e_t = ad.sum_(ad.square(target), axis=-1)
    e_r = ad.sum_(ad.square(err), axis=-1)
    ratio = ad.div(e_t, e_r)
    db = ad.mul(ad.log(ratio), 10.0 / np.log(10.0))
    return ad.mul(ad.mean(db), -1.0)


def enhance(waveform, net: DenoiseNet, cfg=dsp.StftConfig()):
    """Denoise one waveform; returns (estimate, mask).

    The estimate has the analyzed length cfg.n_samples(T) <= len(waveform).
    """
    spec = dsp.stft(waveform, cfg)
    mag = (np.abs(spec.frames) * MAG_SCALE).astype(np.float32)
    mask = denoise(mag, net)
    est = dsp.istft(dsp.apply_mask(spec, mask))
    return est, mask


@dataclass
class EnhTrainConfig:
    steps: int = 300
    batch: int = 8
    crop_samples: int = 16384
    lr: float = 1e-3
    val_every: int = 50
    val_mixtures: int = 24
    patience: int = 6
    dtype: type = np.float32


def _mixture_batch(corpus, rng, n, crop, speakers=None, split="train"):
    mixes = [data.sample_mixture(corpus, split, rng, length=crop,
                                 speakers=speakers) for _ in range(n)]
    xs = np.stack([m.mixture for m in mixes])
    cleans = np.stack([m.clean for m in mixes])
    return xs, cleans, mixes


def si_sdr_improvement(net, corpus, rng, n=24, speakers=None, split="val",
                       crop=data.SEGMENT_LEN):
    """Mean SI-SDRi of a single denoiser over fresh mixtures."""
    gains = []
    for _ in range(n):
        m = data.sample_mixture(corpus, split, rng, length=crop,
                                speakers=speakers)
        est, _ = enhance(m.mixture, net)
        L = len(est)
        gains.append(si_sdr(est, m.clean[:L]) - si_sdr(m.mixture[:L], m.clean[:L]))
    return float(np.mean(gains))


def train_denoiser(corpus, config: EnhTrainConfig, seed, hidden=32,
                   speakers=None) -> DenoiseNet:
    """Train one denoiser (specialist if ``speakers`` restricts the corpus,
    generalist otherwise). Returns the best-validation snapshot."""
    if speakers is not None and len(speakers) == 0:
        raise ValueError("empty speaker partition")
    rng_init = np.random.default_rng([seed, 0])
    rng_data = data.worker_rng(seed, worker=1)
    net = DenoiseNet.init(rng_init, hidden=hidden, dtype=config.dtype)
    params = net.named()
    state = AdamState()
    cfg = dsp.StftConfig()
    best = (-np.inf, None)
    stale = 0
    for step in range(config.steps):
        xs, cleans, _ = _mixture_batch(corpus, rng_data, config.batch,
                                       config.crop_samples, speakers)
        mag, spec = batch_features(xs, dtype=config.dtype)
        zero_grads(params)
        mask = denoise_batch(mag, net)
        est = dsp.masked_istft(mask, spec, cfg)
        loss = neg_si_sdr_loss(est, cleans[:, :est.value.shape[-1]])
        if not np.isfinite(loss.value):
            raise TrainingDivergence(f"denoiser loss non-finite at step {step}")
        loss.backward()
        adam_update(params, state, config.lr)
        if (step + 1) % config.val_every == 0:
            # validate on the training partition's speakers (specialists are
            # judged on their own material), val-split noises and SNRs
            gain = si_sdr_improvement(
                net, corpus, data.worker_rng(seed, worker=2),
                n=config.val_mixtures, speakers=speakers, split="train",
                crop=config.crop_samples)
            if gain > best[0]:
                best = (gain, net.clone())
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    return best[1] if best[1] is not None else net


def pretrain_specialist(corpus, cluster_assignment: dict[str, int], label: int,
                        config: EnhTrainConfig, seed, hidden=32) -> DenoiseNet:
    """Train the specialist for one cluster label."""
    speakers = sorted(s for s, l in cluster_assignment.items() if l == label)
    if not speakers:
        raise ValueError(f"cluster {label} has no speakers")
    return train_denoiser(corpus, config, seed, hidden=hidden, speakers=speakers)

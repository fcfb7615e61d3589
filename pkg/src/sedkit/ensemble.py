"""Sparsely active ensemble: gating network, soft-gated fine-tuning,
hard-gated inference, and parameter accounting.

The gate is the speaker-verification encoder plus a dense softmax classifier
over the K clusters. During fine-tuning and inference a logit scale of 10
sharpens the softmax; at test time only the argmax specialist runs.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad, data, dsp
from .autodiff import Var
from .clustering import ClusterModel
from .embedding import (EMBED_DIM, EmbedNet, batch_features, embed_batch,
                        features)
from .enhancer import (DenoiseNet, EnhTrainConfig, denoise, denoise_batch,
                       neg_si_sdr_loss, si_sdr)
from .layers import uniform_init
from .losses import cross_entropy
from .optim import AdamState, TrainingDivergence, adam_update, zero_grads

LAMBDA_FINETUNE = 10.0


@dataclass
class GateNet:
    embed: EmbedNet
    W: Var  # (K, 32)
    b: Var  # (K,)
    lam: float = 1.0

    @classmethod
    def init(cls, embed_net: EmbedNet, K, rng, lam=1.0, dtype=np.float32):
        return cls(embed_net,
                   Var(uniform_init((K, EMBED_DIM), EMBED_DIM, rng, dtype),
                       requires_grad=True),
                   Var(uniform_init((K,), EMBED_DIM, rng, dtype),
                       requires_grad=True),
                   lam)

    @property
    def K(self):
        return self.W.value.shape[0]

    def named(self, prefix=""):
        out = self.embed.named(prefix + "embed.")
        out[prefix + "cls.W"] = self.W
        out[prefix + "cls.b"] = self.b
        return out

    def clone(self):
        return copy.deepcopy(self)


@dataclass
class EnsembleModel:
    gate_net: GateNet
    specialists: list[DenoiseNet]
    cluster_model: ClusterModel | None = None
    mode: str = "hard"

    @property
    def K(self):
        return len(self.specialists)

    def named(self):
        out = self.gate_net.named("gate.")
        for k, sp in enumerate(self.specialists):
            out.update(sp.named(f"spec{k}."))
        return out

    def clone(self):
        return copy.deepcopy(self)


def gate_batch(mag, gate_net: GateNet, lam=None) -> Var:
    """mag (B, T, 513) -> cluster probabilities (B, K) on the simplex."""
    lam = gate_net.lam if lam is None else lam
    from .layers import _matmul_wt
    z = embed_batch(mag, gate_net.embed)
    logits = ad.add(_matmul_wt(z, gate_net.W), gate_net.b)
    return ad.softmax(logits, scale=lam, axis=-1)


def gate(mag, gate_net: GateNet, lam=None) -> np.ndarray:
    """Cluster probabilities for one utterance's (T, 513) frames."""
    mag = np.asarray(mag)
    if mag.ndim != 2 or mag.shape[0] < 1:
        raise ValueError("expected a non-empty (T, 513) frame sequence")
    return gate_batch(mag[None], gate_net, lam).value[0]


def forward_soft(waveform, model: EnsembleModel, cfg=dsp.StftConfig()):
    """Weighted-sum mask over all K specialists; returns (mask, p)."""
    mag, spec = batch_features(np.asarray(waveform)[None])
    p = gate_batch(mag, model.gate_net).value[0]
    masks = np.stack([denoise_batch(mag, sp).value[0]
                      for sp in model.specialists])
    m_hat = np.tensordot(p, masks, axes=(0, 0))
    return m_hat, p


def forward_hard(waveform, model: EnsembleModel, cfg=dsp.StftConfig()):
    """Evaluate only the argmax specialist; returns (mask, k_star, p).

    Ties break toward the lowest index. The mask is bit-identical to the
    chosen specialist's standalone output.
    """
    mag, _ = batch_features(np.asarray(waveform)[None])
    p = gate_batch(mag, model.gate_net).value[0]
    k_star = int(np.argmax(p))
    mask = denoise(mag[0], model.specialists[k_star])
    return mask, k_star, p


def enhance_hard(waveform, model: EnsembleModel, cfg=dsp.StftConfig()):
    """Hard-gated enhancement; returns (estimate, k_star, p)."""
    spec = dsp.stft(waveform, cfg)
    mask, k_star, p = forward_hard(waveform, model, cfg)
    return dsp.istft(dsp.apply_mask(spec, mask)), k_star, p


@dataclass
class GateTrainConfig:
    steps: int = 250
    batch: int = 32
    crop_samples: int = 16384
    lr: float = 1e-3
    val_every: int = 25
    val_samples: int = 96
    patience: int = 8
    dtype: type = np.float32


def gate_accuracy(gate_net, corpus, cluster: ClusterModel, rng, n=96,
                  crop=16384, split="train"):
    """Classification accuracy of the gate against k-means labels on fresh
    noisy mixtures. Speakers without a label use their nearest centroid."""
    correct = 0
    for _ in range(n):
        m = data.sample_mixture(corpus, split, rng, length=crop)
        label = cluster.assignment.get(m.speaker_id)
        if label is None:
            continue
        p = gate(features(m.mixture), gate_net)
        correct += int(int(np.argmax(p)) == label)
    return correct / n


def pretrain_gate(corpus, embed_net: EmbedNet, cluster: ClusterModel,
                  config: GateTrainConfig, seed) -> GateNet:
    """Train the softmax classifier on one-hot k-means labels (lambda = 1),
    embedding function frozen. Returns the best-validation snapshot."""
    rng_init = np.random.default_rng([seed, 0])
    rng_data = data.worker_rng(seed, worker=1)
    gate_net = GateNet.init(embed_net.clone(), cluster.K, rng_init, lam=1.0,
                            dtype=config.dtype)
    params = {"cls.W": gate_net.W, "cls.b": gate_net.b}
    state = AdamState()
    best = (-1.0, None)
    stale = 0
    for step in range(config.steps):
        mixes = [data.sample_mixture(corpus, "train", rng_data,
                                     length=config.crop_samples)
                 for _ in range(config.batch)]
        labels = np.array([cluster.assignment[m.speaker_id] for m in mixes])
        mag, _ = batch_features(np.stack([m.mixture for m in mixes]),
                                dtype=config.dtype)
        zero_grads(params)
        p = gate_batch(mag, gate_net, lam=1.0)
        loss = cross_entropy(p, labels)
        if not np.isfinite(loss.value):
            raise TrainingDivergence(f"gate loss non-finite at step {step}")
        loss.backward()
        adam_update(params, state, config.lr)
        if (step + 1) % config.val_every == 0:
            acc = gate_accuracy(gate_net, corpus, cluster,
                                data.worker_rng(seed, worker=2),
                                n=config.val_samples,
                                crop=config.crop_samples)
            if acc > best[0]:
                best = (acc, gate_net.clone())
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    return best[1] if best[1] is not None else gate_net


@dataclass
class FinetuneConfig:
    steps: int = 150
    batch: int = 8
    crop_samples: int = 16384
    lr: float = 1e-4
    val_every: int = 25
    val_mixtures: int = 24
    patience: int = 6
    lam: float = LAMBDA_FINETUNE
    dtype: type = np.float32


def soft_loss_batch(model: EnsembleModel, mag, spec, cleans, lam):
    """Differentiable soft-gated negative SI-SDR for a batch."""
    p = gate_batch(mag, model.gate_net, lam=lam)
    masks = [denoise_batch(mag, sp) for sp in model.specialists]
    m_hat = None
    for k, mk in enumerate(masks):
        pk = ad.reshape(ad.take_index(p, k, axis=1), (mag.shape[0], 1, 1))
        term = ad.mul(pk, mk)
        m_hat = term if m_hat is None else ad.add(m_hat, term)
    est = dsp.masked_istft(m_hat, spec)
    return neg_si_sdr_loss(est, cleans[:, :est.value.shape[-1]])


def ensemble_si_sdri(model, corpus, rng, n=24, split="val",
                     crop=data.SEGMENT_LEN):
    gains = []
    for _ in range(n):
        m = data.sample_mixture(corpus, split, rng, length=crop)
        est, _, _ = enhance_hard(m.mixture, model)
        L = len(est)
        gains.append(si_sdr(est, m.clean[:L]) - si_sdr(m.mixture[:L], m.clean[:L]))
    return float(np.mean(gains))


def finetune(model: EnsembleModel, corpus, config: FinetuneConfig,
             seed) -> EnsembleModel:
    """End-to-end soft-gated fine-tuning of embedding, classifier, and all
    specialists (lambda = 10). Returns the best-validation snapshot."""
    model = model.clone()
    model.gate_net.lam = config.lam
    rng_data = data.worker_rng(seed, worker=1)
    params = model.named()
    state = AdamState()
    best = (-np.inf, None)
    stale = 0
    for step in range(config.steps):
        mixes = [data.sample_mixture(corpus, "train", rng_data,
                                     length=config.crop_samples)
                 for _ in range(config.batch)]
        xs = np.stack([m.mixture for m in mixes])
        cleans = np.stack([m.clean for m in mixes])
        mag, spec = batch_features(xs, dtype=config.dtype)
        zero_grads(params)
        loss = soft_loss_batch(model, mag, spec, cleans, config.lam)
        if not np.isfinite(loss.value):
            raise TrainingDivergence(f"fine-tune loss non-finite at step {step}")
        loss.backward()
        adam_update(params, state, config.lr)
        if (step + 1) % config.val_every == 0:
            gain = ensemble_si_sdri(model, corpus,
                                    data.worker_rng(seed, worker=2),
                                    n=config.val_mixtures,
                                    crop=config.crop_samples)
            if gain > best[0]:
                best = (gain, model.clone())
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    break
    return best[1] if best[1] is not None else model


def gru_layer_params(input_size, hidden):
    return 3 * (hidden * input_size + hidden * hidden + 2 * hidden)


def param_counts(K, H_specialist, H_embed=EMBED_DIM, n_bins=513):
    """(total, effective) parameter counts for the ensemble.

    A specialist is two GRU layers plus the dense mask head; the gate is the
    two-layer embedding encoder plus the K-way classifier. Effective = gate
    plus one specialist; total = gate plus all K.
    """
    specialist = (gru_layer_params(n_bins, H_specialist)
                  + gru_layer_params(H_specialist, H_specialist)
                  + H_specialist * n_bins + n_bins)
    gate_params = (gru_layer_params(n_bins, H_embed)
                   + gru_layer_params(H_embed, H_embed)
                   + H_embed * K + K)
    return gate_params + K * specialist, gate_params + specialist

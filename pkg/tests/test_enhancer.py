"""Denoiser and SI-SDR objective tests."""

import numpy as np
import pytest

from sedkit import autodiff as ad, data, dsp
from sedkit.autodiff import Var
from sedkit.enhancer import (SISDR_CAP_DB, DenoiseNet, EnhTrainConfig,
                             denoise, denoise_batch, enhance, neg_si_sdr_loss,
                             pretrain_specialist, si_sdr, train_denoiser)
from sedkit.gradcheck import grad_check


@pytest.fixture(scope="module")
def net():
    return DenoiseNet.init(np.random.default_rng(0), hidden=8)


class TestSiSdr:
    def test_perfect_estimate_capped(self):
        x = np.random.default_rng(1).normal(0, 1, 512)
        assert si_sdr(x, x) == SISDR_CAP_DB
        assert si_sdr(3.7 * x, x) == SISDR_CAP_DB  # scale invariance

    def test_scale_invariance_general(self):
        rng = np.random.default_rng(2)
        ref = rng.normal(0, 1, 512)
        est = ref + 0.1 * rng.normal(0, 1, 512)
        assert si_sdr(5.0 * est, ref) == pytest.approx(si_sdr(est, ref),
                                                       abs=1e-9)

    def test_orthogonal_noise_closed_form(self):
        n = 4096
        t = np.arange(n)
        ref = np.sqrt(2) * np.sin(2 * np.pi * 8 * t / n)
        noise = np.sqrt(2) * np.sin(2 * np.pi * 64 * t / n)
        # est = ref + g*noise with orthogonal noise: SI-SDR = -20 log10 g
        for g_db in (0.0, 10.0, 20.0):
            g = 10 ** (-g_db / 20)
            assert si_sdr(ref + g * noise, ref) == pytest.approx(g_db,
                                                                 abs=1e-6)

    def test_zero_reference_rejected(self):
        with pytest.raises(ValueError):
            si_sdr(np.ones(16), np.zeros(16))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            si_sdr(np.ones(16), np.ones(17))

    def test_negative_for_bad_estimate(self):
        rng = np.random.default_rng(3)
        ref = rng.normal(0, 1, 512)
        est = 0.01 * ref + rng.normal(0, 1, 512)
        assert si_sdr(est, ref) < 0


class TestNegSiSdrLoss:
    def test_value_matches_si_sdr(self):
        rng = np.random.default_rng(4)
        ref = rng.normal(0, 1, (3, 256))
        est = ref + 0.2 * rng.normal(0, 1, (3, 256))
        loss = neg_si_sdr_loss(Var(est), ref)
        expected = -np.mean([si_sdr(est[b], ref[b]) for b in range(3)])
        assert loss.value == pytest.approx(expected, abs=1e-9)

    def test_gradient_oracle(self):
        rng = np.random.default_rng(5)
        ref = rng.normal(0, 1, (2, 64))
        est0 = ref + 0.3 * rng.normal(0, 1, (2, 64))
        v = Var(est0.copy(), requires_grad=True)

        def loss_fn(_params=None):
            return neg_si_sdr_loss(v, ref)

        max_err = grad_check(loss_fn, {"est": v}, eps=1e-6)
        assert max_err < 1e-4


class TestDenoise:
    def test_mask_shape_and_range(self, net):
        mag = np.random.default_rng(6).uniform(0, 1, (2, 5, 513)) \
            .astype(np.float32)
        mask = denoise_batch(mag, net).value
        assert mask.shape == (2, 5, 513)
        assert np.all(mask > 0) and np.all(mask < 1)

    def test_single_matches_batch(self, net):
        mag = np.random.default_rng(7).uniform(0, 1, (4, 513)) \
            .astype(np.float32)
        assert np.allclose(denoise(mag, net),
                           denoise_batch(mag[None], net).value[0], atol=1e-7)

    def test_rejects_wrong_rank(self, net):
        with pytest.raises(ValueError):
            denoise(np.zeros(513, dtype=np.float32), net)

    def test_enhance_length_contract(self, net):
        w = np.random.default_rng(8).normal(0, 0.3, 10000)
        est, mask = enhance(w, net)
        cfg = dsp.StftConfig()
        T = cfg.n_frames(len(w))
        assert mask.shape == (T, 513)
        assert len(est) == cfg.n_samples(T)
        assert len(est) <= len(w)


@pytest.fixture(scope="module")
def corpus():
    return data.synth_corpus(n_speakers=4, utterances_per_speaker=3,
                             seed=9, n_val_speakers=2, n_test_speakers=2)


class TestTraining:
    def test_short_run_improves(self, corpus):
        cfg = EnhTrainConfig(steps=30, batch=4, crop_samples=8192,
                             val_every=15, val_mixtures=8)
        net = train_denoiser(corpus, cfg, seed=11, hidden=16)
        from sedkit.enhancer import si_sdr_improvement
        gain = si_sdr_improvement(net, corpus, data.worker_rng(11, 9), n=12,
                                  split="train", crop=8192)
        assert gain > 0.0

    def test_speaker_restriction(self, corpus):
        spk = corpus.speakers("train")[:1]
        cfg = EnhTrainConfig(steps=2, batch=2, crop_samples=8192,
                             val_every=2, val_mixtures=2)
        net = train_denoiser(corpus, cfg, seed=12, hidden=8, speakers=spk)
        assert net.hidden == 8
        with pytest.raises(ValueError):
            train_denoiser(corpus, cfg, seed=12, speakers=[])

    def test_pretrain_specialist_selects_cluster(self, corpus):
        spks = corpus.speakers("train")
        assignment = {s: i % 2 for i, s in enumerate(spks)}
        cfg = EnhTrainConfig(steps=2, batch=2, crop_samples=8192,
                             val_every=2, val_mixtures=2)
        net = pretrain_specialist(corpus, assignment, label=1, config=cfg,
                                  seed=13, hidden=8)
        assert isinstance(net, DenoiseNet)
        with pytest.raises(ValueError):
            pretrain_specialist(corpus, {s: 0 for s in spks}, label=1,
                                config=cfg, seed=13)

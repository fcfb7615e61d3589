"""Siamese speaker-verification encoder tests."""

import numpy as np
import pytest

from sedkit import autodiff as ad, data, dsp
from sedkit.embedding import (EMBED_DIM, N_BINS, EmbedNet, SvTrainConfig,
                              batch_features, embed, embed_batch, features,
                              pair_accuracy, sv_similarity, train_sv)


@pytest.fixture(scope="module")
def net():
    return EmbedNet.init(np.random.default_rng(0))


class TestEmbed:
    def test_shape_and_dim(self, net):
        mag = np.random.default_rng(1).uniform(0, 1, (7, N_BINS)) \
            .astype(np.float32)
        z = embed(mag, net)
        assert z.shape == (EMBED_DIM,)

    def test_batch_matches_single(self, net):
        rng = np.random.default_rng(2)
        mags = rng.uniform(0, 1, (3, 5, N_BINS)).astype(np.float32)
        zb = embed_batch(mags, net).value
        for b in range(3):
            assert np.allclose(zb[b], embed(mags[b], net), atol=1e-6)

    def test_uses_final_frame_state(self, net):
        rng = np.random.default_rng(3)
        mag = rng.uniform(0, 1, (6, N_BINS)).astype(np.float32)
        # appending frames changes the embedding (state is sequential)
        longer = np.concatenate([mag, rng.uniform(0, 1, (1, N_BINS))
                                 .astype(np.float32)])
        assert not np.allclose(embed(mag, net), embed(longer, net))

    def test_rejects_empty_or_wrong_rank(self, net):
        with pytest.raises(ValueError):
            embed(np.zeros((0, N_BINS), dtype=np.float32), net)
        with pytest.raises(ValueError):
            embed(np.zeros(N_BINS, dtype=np.float32), net)

    def test_features_scaled_magnitude(self):
        w = np.random.default_rng(4).normal(0, 1, 8192)
        f = features(w)
        spec = np.abs(dsp.stft(w).frames)
        assert f.shape == spec.shape
        assert np.allclose(f, 0.2 * spec, atol=1e-6)

    def test_batch_features_consistent(self):
        rng = np.random.default_rng(5)
        waves = rng.normal(0, 1, (2, 8192))
        mags, spec = batch_features(waves)
        assert np.allclose(mags, 0.2 * np.abs(spec), atol=1e-6)
        for b in range(2):
            assert np.allclose(spec[b], dsp.stft(waves[b]).frames)


class TestSimilarity:
    def test_zero_dot_is_half(self):
        z = np.zeros(EMBED_DIM)
        assert sv_similarity(z, np.ones(EMBED_DIM)) == pytest.approx(0.5)

    def test_symmetry(self):
        rng = np.random.default_rng(6)
        a, b = rng.normal(0, 1, EMBED_DIM), rng.normal(0, 1, EMBED_DIM)
        assert sv_similarity(a, b) == pytest.approx(sv_similarity(b, a),
                                                    rel=1e-12)

    def test_known_value(self):
        a = np.zeros(EMBED_DIM)
        a[0] = 2.0
        b = np.zeros(EMBED_DIM)
        b[0] = 1.0
        assert sv_similarity(a, b) == pytest.approx(1 / (1 + np.exp(-2.0)),
                                                    rel=1e-12)

    def test_var_path_matches_numpy(self):
        rng = np.random.default_rng(7)
        a, b = rng.normal(0, 1, (2, EMBED_DIM))
        got = sv_similarity(ad.Var(a), ad.Var(b)).value
        assert got == pytest.approx(sv_similarity(a, b), rel=1e-12)


class TestTraining:
    def test_needs_two_speakers(self):
        with pytest.raises(ValueError):
            data.synth_corpus(n_speakers=1, utterances_per_speaker=2, seed=0,
                              n_val_speakers=2, n_test_speakers=2)
        corpus = data.synth_corpus(n_speakers=2, utterances_per_speaker=2,
                                   seed=0, n_val_speakers=2,
                                   n_test_speakers=2)
        spk = corpus.speakers("train")[0]
        one = data.Corpus(
            utterances=[u for u in corpus.utterances
                        if u.split != "train" or u.speaker == spk],
            noises=corpus.noises)
        with pytest.raises(ValueError):
            train_sv(one, SvTrainConfig(steps=1), seed=0)

    def test_short_run_learns_something(self):
        corpus = data.synth_corpus(n_speakers=4, utterances_per_speaker=4,
                                   seed=1, n_val_speakers=2,
                                   n_test_speakers=2)
        cfg = SvTrainConfig(steps=40, batch_pairs=8, crop_samples=8192,
                            val_every=20, val_pairs=32)
        net = train_sv(corpus, cfg, seed=3)
        acc = pair_accuracy(net, corpus, data.worker_rng(3, 9), n_pairs=64,
                            crop=8192, split="train")
        assert acc > 0.5

    def test_deterministic(self):
        corpus = data.synth_corpus(n_speakers=2, utterances_per_speaker=2,
                                   seed=2, n_val_speakers=2,
                                   n_test_speakers=2)
        cfg = SvTrainConfig(steps=5, batch_pairs=4, crop_samples=8192,
                            val_every=5, val_pairs=8)
        a = train_sv(corpus, cfg, seed=4).named()
        b = train_sv(corpus, cfg, seed=4).named()
        for k in a:
            assert np.array_equal(a[k].value, b[k].value)

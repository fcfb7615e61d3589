"""Corpus, mixing, pair sampling, and WAV I/O tests."""

import os
import wave

import numpy as np
import pytest

from sedkit import data
from sedkit.data import (SAMPLE_RATE, SEGMENT_LEN, SilentSegment,
                         WavFormatError, load_corpus, mix, read_wav,
                         sample_pair, sample_segment, save_corpus,
                         synth_corpus, worker_rng, write_wav)


@pytest.fixture(scope="module")
def corpus():
    return synth_corpus(n_speakers=4, utterances_per_speaker=3, seed=5,
                        n_val_speakers=2, n_test_speakers=2)


class TestMix:
    def _unit_energy(self, seed, n=SEGMENT_LEN):
        x = np.random.default_rng(seed).normal(0, 1, n)
        return x / np.sqrt(np.sum(x ** 2))

    def test_equal_energy_zero_snr_gain_one(self):
        s, n = self._unit_energy(0), self._unit_energy(1)
        m = mix(s, n, 0.0)
        assert np.allclose(m.noise, n, atol=1e-12)

    def test_gain_values(self):
        s, n = self._unit_energy(2), self._unit_energy(3)
        g10 = np.sqrt(np.sum(mix(s, n, 10.0).noise ** 2))
        g_neg5 = np.sqrt(np.sum(mix(s, n, -5.0).noise ** 2))
        assert g10 == pytest.approx(10 ** -0.5, rel=1e-9)
        assert g_neg5 == pytest.approx(10 ** 0.25, rel=1e-9)

    def test_additivity_exact(self):
        s, n = self._unit_energy(4), self._unit_energy(5)
        m = mix(s, n, 3.3)
        assert np.array_equal(m.mixture, m.clean + m.noise)

    def test_snr_accuracy_1000_mixtures(self):
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(1000):
            s = rng.normal(0, 1, 256)
            n = rng.normal(0, 1, 256)
            snr = float(rng.uniform(-5, 10))
            m = mix(s, n, snr)
            measured = 10 * np.log10(np.sum(m.clean ** 2)
                                     / np.sum(m.noise ** 2))
            worst = max(worst, abs(measured - snr))
        assert worst <= 1e-6

    def test_silent_inputs_rejected(self):
        s = np.zeros(SEGMENT_LEN)
        n = np.random.default_rng(7).normal(0, 1, SEGMENT_LEN)
        with pytest.raises(SilentSegment):
            mix(s, n, 0.0)
        with pytest.raises(SilentSegment):
            mix(n, s, 0.0)


class TestSampleSegment:
    def test_exact_length_forced_offset(self):
        w = np.random.default_rng(8).normal(0, 1, SEGMENT_LEN)
        out = sample_segment(w, np.random.default_rng(9))
        assert np.array_equal(out, w)

    def test_offset_frequencies(self):
        w = np.arange(SEGMENT_LEN + 1, dtype=float)
        rng = np.random.default_rng(10)
        counts = {0.0: 0, 1.0: 0}
        for _ in range(1000):
            counts[sample_segment(w, rng)[0]] += 1
        assert 400 <= counts[0.0] <= 600
        assert 400 <= counts[1.0] <= 600

    def test_short_noise_tiled(self):
        w = np.random.default_rng(11).normal(0, 1, 10000)
        out = sample_segment(w, np.random.default_rng(12))
        assert len(out) == SEGMENT_LEN
        # tiled content: every sample comes from the original block
        assert set(np.round(out, 9)) <= set(np.round(w, 9))


class TestPairs:
    def test_balance(self, corpus):
        rng = worker_rng(0, 1)
        ys = [sample_pair(corpus, rng, length=2048).y for _ in range(2000)]
        assert 0.46 <= float(np.mean(ys)) <= 0.54

    def test_labels_match_speakers(self, corpus):
        rng = worker_rng(0, 2)
        for _ in range(50):
            p = sample_pair(corpus, rng, length=2048)
            same = p.x_i.speaker_id == p.x_j.speaker_id
            assert bool(p.y) == same

    def test_pair_segments_differ(self, corpus):
        rng = worker_rng(0, 3)
        for _ in range(50):
            p = sample_pair(corpus, rng, length=2048)
            assert not np.array_equal(p.x_i.clean, p.x_j.clean)


class TestSynthCorpus:
    def test_determinism(self):
        a = synth_corpus(n_speakers=2, utterances_per_speaker=2, seed=3,
                         n_val_speakers=2, n_test_speakers=2)
        b = synth_corpus(n_speakers=2, utterances_per_speaker=2, seed=3,
                         n_val_speakers=2, n_test_speakers=2)
        for ua, ub in zip(a.utterances, b.utterances):
            assert ua.speaker == ub.speaker
            assert np.array_equal(ua.waveform, ub.waveform)
        for na, nb in zip(a.noises, b.noises):
            assert np.array_equal(na.waveform, nb.waveform)

    def test_split_speakers_disjoint(self, corpus):
        tr = corpus.speakers("train")
        va = corpus.speakers("val")
        te = corpus.speakers("test")
        assert not (set(tr) & set(te))
        assert not (set(tr) & set(va))
        assert not (set(va) & set(te))

    def test_noise_pools(self, corpus):
        train_ids = {n.noise_id for n in corpus.noise_pool("train")}
        test_ids = {n.noise_id for n in corpus.noise_pool("test")}
        val_ids = {n.noise_id for n in corpus.noise_pool("val")}
        assert not (train_ids & test_ids)
        assert val_ids == train_ids  # val shares the training noises

    def test_min_duration(self, corpus):
        for u in corpus.utterances:
            assert len(u.waveform) >= 5 * SAMPLE_RATE

    def test_family_spectra_distinct(self):
        from sedkit import dsp
        rng = np.random.default_rng(0)
        peaks = []
        for f0, res in ((100.0, 500.0), (250.0, 2100.0)):
            w = data._synth_utterance(f0, res, rng, 48000)
            mag = np.abs(dsp.stft(w).frames).mean(axis=0)
            peak = int(np.argmax(mag))
            # peak lies on the harmonic comb of f0 (within +/-3% jitter)
            f0_bin = f0 * 1024 / 8000
            k = max(1, round(peak / f0_bin))
            assert abs(peak / (k * f0_bin) - 1.0) <= 0.035
            peaks.append(peak)
        assert peaks[0] != peaks[1]


class TestWav:
    def test_roundtrip(self, tmp_path):
        x = np.clip(np.random.default_rng(13).normal(0, 0.2, 12000), -1, 1)
        path = str(tmp_path / "x.wav")
        write_wav(path, x)
        y = read_wav(path)
        assert len(y) == len(x)
        assert np.max(np.abs(x - y)) <= 2 / 32767  # 16-bit quantization

    def test_reject_stereo(self, tmp_path):
        path = str(tmp_path / "stereo.wav")
        with wave.open(path, "wb") as w:
            w.setnchannels(2)
            w.setsampwidth(2)
            w.setframerate(SAMPLE_RATE)
            w.writeframes(b"\x00\x00" * 64)
        with pytest.raises(WavFormatError):
            read_wav(path)

    def test_reject_wrong_rate(self, tmp_path):
        path = str(tmp_path / "rate.wav")
        with wave.open(path, "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(16000)
            w.writeframes(b"\x00\x00" * 64)
        with pytest.raises(WavFormatError):
            read_wav(path)

    def test_reject_8bit(self, tmp_path):
        path = str(tmp_path / "w8.wav")
        with wave.open(path, "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(1)
            w.setframerate(SAMPLE_RATE)
            w.writeframes(b"\x00" * 64)
        with pytest.raises(WavFormatError):
            read_wav(path)

    def test_reject_garbage(self, tmp_path):
        path = str(tmp_path / "garbage.wav")
        with open(path, "wb") as f:
            f.write(b"RIFF????WAVEjunk")
        with pytest.raises((WavFormatError, wave.Error, EOFError)):
            read_wav(path)


class TestCorpusPersistence:
    def test_save_load_roundtrip(self, corpus, tmp_path):
        d = str(tmp_path / "corpus")
        save_corpus(corpus, d)
        assert os.path.exists(os.path.join(d, "utterances.jsonl"))
        assert os.path.exists(os.path.join(d, "noises.jsonl"))
        back = load_corpus(d)
        assert sorted(u.speaker for u in back.utterances) == \
            sorted(u.speaker for u in corpus.utterances)
        orig = {(u.speaker, u.utt_id): u.waveform for u in corpus.utterances}
        for u in back.utterances:
            ref = orig[(u.speaker, u.utt_id)]
            assert np.max(np.abs(u.waveform - ref)) <= 2 / 32767


class TestWorkerRng:
    def test_streams_independent_and_deterministic(self):
        a1 = worker_rng(5, 1).normal(size=8)
        a2 = worker_rng(5, 1).normal(size=8)
        b = worker_rng(5, 2).normal(size=8)
        assert np.array_equal(a1, a2)
        assert not np.array_equal(a1, b)

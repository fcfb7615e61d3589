"""Corpus handling: WAV ingestion, noisy-mixture synthesis at exact SNRs,
Siamese pair sampling, and a synthetic toy-speaker corpus.

Synthetic speakers are harmonic sources with a per-speaker fundamental and a
per-speaker two-pole resonance, amplitude-modulated at syllabic rates.
Speakers come in two spectrally separated families ("a" low-pitched /
low-resonance, "b" high-pitched / high-resonance) so that the embedding ->
clustering -> gating chain is verifiable at desk scale. The family is the
first character of the speaker id.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SAMPLE_RATE = 8000
SEGMENT_LEN = 40000  # 5 s
SILENCE_ENERGY = 1e-10


class WavFormatError(ValueError):
    """Raised for audio files that are not PCM-16 mono 8 kHz WAV."""


class SilentSegment(RuntimeError):
    """Signals the caller to draw a different segment."""


def read_wav(path) -> np.ndarray:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise WavFormatError(f"{path}: expected mono, got {w.getnchannels()} ch")
        if w.getsampwidth() != 2:
            raise WavFormatError(f"{path}: expected 16-bit PCM")
        if w.getframerate() != SAMPLE_RATE:
            raise WavFormatError(f"{path}: expected {SAMPLE_RATE} Hz, "
                                 f"got {w.getframerate()}")
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def write_wav(path, x):
    x = np.asarray(x, dtype=np.float64)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


@dataclass
class Utterance:
    speaker: str
    utt_id: str
    split: str
    waveform: np.ndarray

    @property
    def family(self):
        return self.speaker[0]


@dataclass
class NoiseClip:
    noise_id: str
    split: str
    waveform: np.ndarray


@dataclass
class Corpus:
    utterances: list[Utterance] = field(default_factory=list)
    noises: list[NoiseClip] = field(default_factory=list)

    def split(self, name) -> list[Utterance]:
        return [u for u in self.utterances if u.split == name]

    def speakers(self, split) -> list[str]:
        return sorted({u.speaker for u in self.split(split)})

    def noise_pool(self, split) -> list[NoiseClip]:
        # validation shares the training noise pool; test noises are disjoint
        pool_split = "train" if split in ("train", "val") else "test"
        return [n for n in self.noises if n.split == pool_split]

    def by_speaker(self, split) -> dict[str, list[Utterance]]:
        out: dict[str, list[Utterance]] = {}
        for u in self.split(split):
            out.setdefault(u.speaker, []).append(u)
        return out


@dataclass
class MixtureSample:
    mixture: np.ndarray
    clean: np.ndarray
    noise: np.ndarray  # already scaled
    snr_db: float
    speaker_id: str
    cluster_label: int | None = None


@dataclass
class PairSample:
    x_i: MixtureSample
    x_j: MixtureSample
    y: int


def mix(s, n, snr_db) -> MixtureSample:
    """Scale ``n`` so the mixture s + g*n hits ``snr_db`` exactly."""
    s = np.asarray(s, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    e_s = float(np.dot(s, s))
    e_n = float(np.dot(n, n))
    if e_s < SILENCE_ENERGY or e_n < SILENCE_ENERGY:
        raise SilentSegment("segment energy below threshold")
    g = np.sqrt(e_s / (e_n * 10.0 ** (snr_db / 10.0)))
    scaled = g * n
    return MixtureSample(s + scaled, s, scaled, float(snr_db), speaker_id="")


def sample_segment(w, rng, length=SEGMENT_LEN) -> np.ndarray:
    """Contiguous slice at a uniform random offset; short noise is tiled."""
    w = np.asarray(w)
    if w.size == 0:
        raise ValueError("empty waveform")
    if len(w) < length:
        w = np.tile(w, int(np.ceil(length / len(w))))
    off = int(rng.integers(0, len(w) - length + 1))
    return w[off: off + length]


def sample_mixture(corpus: Corpus, split, rng, snr_range=(-5.0, 10.0),
                   length=SEGMENT_LEN, cluster_of=None, speakers=None,
                   snr_db=None) -> MixtureSample:
    """Random utterance + random noise at a random (or fixed) SNR."""
    utts = corpus.split(split)
    if speakers is not None:
        allowed = set(speakers)
        utts = [u for u in utts if u.speaker in allowed]
    noises = corpus.noise_pool(split)
    if not utts or not noises:
        raise ValueError(f"no material for split {split!r}")
    for _ in range(100):
        u = utts[int(rng.integers(len(utts)))]
        nz = noises[int(rng.integers(len(noises)))]
        snr = float(snr_db) if snr_db is not None else float(rng.uniform(*snr_range))
        try:
            m = mix(sample_segment(u.waveform, rng, length),
                    sample_segment(nz.waveform, rng, length), snr)
        except SilentSegment:
            continue
        m.speaker_id = u.speaker
        if cluster_of is not None:
            m.cluster_label = cluster_of[u.speaker]
        return m
    raise RuntimeError("could not draw a non-silent segment in 100 tries")


def sample_pair(corpus: Corpus, rng, split="train", snr_range=(-5.0, 10.0),
                length=SEGMENT_LEN) -> PairSample:
    """Pair of noisy mixtures, same speaker with probability 1/2."""
    by_spk = corpus.by_speaker(split)
    speakers = sorted(by_spk)
    if len(speakers) < 2:
        raise ValueError("need at least 2 speakers to form pairs")
    y = int(rng.integers(0, 2))
    if y == 1:
        spk = speakers[int(rng.integers(len(speakers)))]
        utts = by_spk[spk]
        if len(utts) >= 2:
            i, j = rng.choice(len(utts), size=2, replace=False)
            u_i, u_j = utts[int(i)], utts[int(j)]
        else:
            u_i = u_j = utts[0]
    else:
        a, b = rng.choice(len(speakers), size=2, replace=False)
        u_i = by_spk[speakers[int(a)]][int(rng.integers(len(by_spk[speakers[int(a)]])))]
        u_j = by_spk[speakers[int(b)]][int(rng.integers(len(by_spk[speakers[int(b)]])))]
    out = []
    for u in (u_i, u_j):
        for _ in range(100):
            try:
                nz = corpus.noise_pool(split)
                n = nz[int(rng.integers(len(nz)))]
                m = mix(sample_segment(u.waveform, rng, length),
                        sample_segment(n.waveform, rng, length),
                        float(rng.uniform(*snr_range)))
                m.speaker_id = u.speaker
                out.append(m)
                break
            except SilentSegment:
                continue
    return PairSample(out[0], out[1], y)


def worker_rng(seed, worker=0, index=0):
    """Counter-based stream: schedule-independent given (seed, worker, index)."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed),
                                                counter=[0, 0, worker, index]))


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

# Narrow per-family bands: adjacent same-family speakers overlap under the
# +/-3% per-utterance f0 jitter, so same-family voices stay statistically
# confusable (as in natural corpora) while the families remain far apart.
FAMILY_F0 = {"a": (100.0, 110.0), "b": (250.0, 268.0)}
FAMILY_RESONANCE = {"a": (470.0, 530.0), "b": (2050.0, 2150.0)}


def _two_pole(x, freq_hz, r=0.97):
    """y[t] = x[t] + 2 r cos(theta) y[t-1] - r^2 y[t-2] (resonator)."""
    from scipy.signal import lfilter
    theta = 2.0 * np.pi * freq_hz / SAMPLE_RATE
    return lfilter([1.0], [1.0, -2.0 * r * np.cos(theta), r * r], x)


def _synth_utterance(f0, res_hz, rng, n_samples):
    t = np.arange(n_samples) / SAMPLE_RATE
    f0_jit = f0 * (1.0 + rng.uniform(-0.03, 0.03))
    n_harm = max(1, int(3600.0 / f0_jit))
    x = np.zeros(n_samples)
    for k in range(1, n_harm + 1):
        x += (1.0 / k) * np.sin(2.0 * np.pi * k * f0_jit * t
                                + rng.uniform(0, 2 * np.pi))
    x = _two_pole(x, res_hz)
    am_hz = rng.uniform(4.0, 8.0)
    x *= 0.75 + 0.25 * np.sin(2.0 * np.pi * am_hz * t + rng.uniform(0, 2 * np.pi))
    rms = np.sqrt(np.mean(x ** 2))
    return 0.08 * x / max(rms, 1e-9)


def _synth_noise(rng, n_samples):
    x = rng.standard_normal(n_samples)
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / SAMPLE_RATE)
    lo = rng.uniform(0.0, 2000.0)
    hi = lo + rng.uniform(500.0, 3500.0)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    x = np.fft.irfft(spec, n=n_samples)
    # slow burst envelope
    knots = rng.uniform(0.2, 1.0, size=max(4, n_samples // 8000 + 2))
    env = np.interp(np.linspace(0, len(knots) - 1, n_samples),
                    np.arange(len(knots)), knots)
    x *= env
    rms = np.sqrt(np.mean(x ** 2))
    return 0.08 * x / max(rms, 1e-9)


def synth_corpus(n_speakers=8, utterances_per_speaker=10, seed=0,
                 n_val_speakers=4, n_test_speakers=4,
                 n_train_noises=12, n_test_noises=6) -> Corpus:
    """Deterministic toy corpus with two spectrally separated speaker
    families; train/val/test speaker sets are disjoint."""
    if n_speakers < 2:
        raise ValueError("need at least 2 speakers")
    rng = np.random.default_rng(seed)
    corpus = Corpus()

    def make_speakers(count, split, tag, positions):
        # speakers sit at spread-out positions of their family's f0 band;
        # the two-pole resonance tracks the same position so identity is a
        # smooth, learnable spectral characteristic
        i = 0
        for fam in ("a", "b"):
            for pos in positions:
                spk = f"{fam}{tag}{i:02d}"
                i += 1
                lo, hi = FAMILY_F0[fam]
                f0 = lo + pos * (hi - lo)
                rlo, rhi = FAMILY_RESONANCE[fam]
                res = rlo + float(np.clip(pos + rng.uniform(-0.08, 0.08),
                                          0.0, 1.0)) * (rhi - rlo)
                n_utts = utterances_per_speaker if split == "train" else max(
                    2, utterances_per_speaker // 2)
                for u in range(n_utts):
                    dur = int(rng.uniform(5.2, 6.5) * SAMPLE_RATE)
                    wav = _synth_utterance(f0, res, rng, dur)
                    corpus.utterances.append(
                        Utterance(spk, f"{spk}-u{u:02d}", split, wav))

    def spread(count, lo, hi):
        if count == 1:
            return [(lo + hi) / 2.0]
        return list(np.linspace(lo, hi, count))

    # val/test speakers sit between the training grid points (unseen voices)
    make_speakers(n_speakers, "train", "tr",
                  spread((n_speakers + 1) // 2, 0.05, 0.95))
    make_speakers(n_val_speakers, "val", "va",
                  spread((n_val_speakers + 1) // 2, 0.2, 0.8))
    make_speakers(n_test_speakers, "test", "te",
                  spread((n_test_speakers + 1) // 2, 0.3, 0.7))

    for i in range(n_train_noises):
        dur = int(rng.uniform(6.0, 9.0) * SAMPLE_RATE)
        corpus.noises.append(NoiseClip(f"ntr{i:02d}", "train",
                                       _synth_noise(rng, dur)))
    for i in range(n_test_noises):
        dur = int(rng.uniform(6.0, 9.0) * SAMPLE_RATE)
        corpus.noises.append(NoiseClip(f"nte{i:02d}", "test",
                                       _synth_noise(rng, dur)))
    return corpus


# ---------------------------------------------------------------------------
# persistence (WAV + JSON-lines manifests)
# ---------------------------------------------------------------------------

def save_corpus(corpus: Corpus, out_dir):
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    with open(out / "utterances.jsonl", "w") as f:
        for u in corpus.utterances:
            rel = f"wav/{u.utt_id}.wav"
            write_wav(out / rel, u.waveform)
            f.write(json.dumps({"speaker": u.speaker, "id": u.utt_id,
                                "path": rel, "split": u.split}) + "\n")
    with open(out / "noises.jsonl", "w") as f:
        for n in corpus.noises:
            rel = f"wav/{n.noise_id}.wav"
            write_wav(out / rel, n.waveform)
            f.write(json.dumps({"id": n.noise_id, "path": rel,
                                "split": n.split}) + "\n")


def load_corpus(root) -> Corpus:
    root = Path(root)
    corpus = Corpus()
    with open(root / "utterances.jsonl") as f:
        for line in f:
            rec = json.loads(line)
            wav = read_wav(root / rec["path"])
            if len(wav) < SEGMENT_LEN:
                continue  # padding-by-rejection: short files excluded
            corpus.utterances.append(
                Utterance(rec["speaker"], rec["id"], rec["split"], wav))
    with open(root / "noises.jsonl") as f:
        for line in f:
            rec = json.loads(line)
            corpus.noises.append(
                NoiseClip(rec["id"], rec["split"], read_wav(root / rec["path"])))
    return corpus

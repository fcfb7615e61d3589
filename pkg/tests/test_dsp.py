"""STFT/iSTFT, IRM, and masking tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sedkit import autodiff as ad
from sedkit import dsp
from sedkit.autodiff import Var
from sedkit.dsp import Spectrogram, StftConfig, apply_mask, irm_target, \
    istft, masked_istft, stft
from sedkit.gradcheck import grad_check

CFG = StftConfig()


class TestConfig:
    def test_defaults(self):
        assert CFG.frame_size == 1024
        assert CFG.hop == 256
        assert CFG.sample_rate == 8000
        assert CFG.n_bins == 513

    def test_hop_constraint(self):
        with pytest.raises(ValueError):
            StftConfig(frame_size=1024, hop=512)

    def test_frame_arithmetic(self):
        assert CFG.n_frames(8192) == 29  # 1 + (8192-1024)//256
        assert CFG.n_frames(1024) == 1
        assert CFG.n_samples(29) == 28 * 256 + 1024

    def test_periodic_hann_cola(self):
        w2 = CFG.window() ** 2
        acc = np.zeros(CFG.frame_size * 3)
        for off in range(0, len(acc) - CFG.frame_size + 1, CFG.hop):
            acc[off:off + CFG.frame_size] += w2
        interior = acc[CFG.frame_size:-CFG.frame_size]
        assert np.allclose(interior, 1.5, atol=1e-12)


class TestStft:
    def test_frame_count_and_bins(self):
        x = np.random.default_rng(0).normal(0, 1, 8192)
        S = stft(x, CFG)
        assert S.frames.shape == (29, 513)
        assert np.iscomplexobj(S.frames)

    def test_too_short_raises(self):
        with pytest.raises(ValueError):
            stft(np.zeros(1023), CFG)

    def test_dc_maps_to_lowest_bins(self):
        # the periodic Hann window is a two-bin spectral kernel, so DC
        # lands exactly in bins 0 and 1; everything above is numerically 0
        S = stft(np.ones(4096), CFG)
        mag = np.abs(S.frames)
        assert np.all(np.argmax(mag, axis=1) == 0)
        assert np.all(mag[:, 2:] <= 1e-10 * mag[:, :1])

    def test_sine_250hz_peaks_at_bin_32(self):
        t = np.arange(8192) / CFG.sample_rate
        S = stft(np.sin(2 * np.pi * 250.0 * t), CFG)
        assert np.all(np.argmax(np.abs(S.frames), axis=1) == 32)

    def test_linearity(self):
        rng = np.random.default_rng(1)
        x = rng.normal(0, 1, 4096)
        a = 3.7
        Sa = stft(a * x, CFG).frames
        S = stft(x, CFG).frames
        assert np.allclose(Sa, a * S, rtol=1e-10, atol=1e-12)


class TestIstft:
    def test_roundtrip_interior(self):
        rng = np.random.default_rng(2)
        lo, hi = CFG.frame_size, 40000 - CFG.frame_size
        for _ in range(5):
            x = rng.normal(0, 1, 40000)
            y = istft(stft(x, CFG))
            assert np.max(np.abs(x[lo:hi] - y[lo:hi])) <= 1e-6

    def test_zero_spectrogram(self):
        S = Spectrogram(np.zeros((10, 513), dtype=complex), CFG)
        assert np.all(istft(S) == 0.0)

    def test_identity_mask_equals_roundtrip(self):
        x = np.random.default_rng(3).normal(0, 1, 4096)
        S = stft(x, CFG)
        masked = apply_mask(S, np.ones(S.frames.shape))
        assert np.allclose(istft(masked), istft(S))


class TestIrm:
    def test_symmetry_half(self):
        m = np.full((2, 513), 1.3)
        assert np.allclose(irm_target(m, m), 0.5)

    def test_clean_case_one(self):
        s = np.full((2, 513), 2.0)
        assert np.allclose(irm_target(s, np.zeros_like(s)), 1.0)

    def test_three_to_one(self):
        s = np.full((1, 513), 3.0)
        n = np.full((1, 513), 1.0)
        assert np.allclose(irm_target(s, n), 0.75)

    def test_silent_bins_half(self):
        z = np.zeros((1, 513))
        assert np.allclose(irm_target(z, z), 0.5)

    def test_negative_magnitude_rejected(self):
        s = np.full((1, 513), -1.0)
        with pytest.raises(ValueError):
            irm_target(s, np.zeros_like(s))

    def test_range(self):
        rng = np.random.default_rng(4)
        m = irm_target(rng.uniform(0, 5, (3, 513)),
                       rng.uniform(0, 5, (3, 513)))
        assert np.all(m >= 0) and np.all(m <= 1)


class TestApplyMask:
    def test_phase_preserved(self):
        x = np.random.default_rng(5).normal(0, 1, 4096)
        S = stft(x, CFG)
        m = np.full(S.frames.shape, 0.5)
        out = apply_mask(S, m)
        nz = np.abs(S.frames) > 1e-9
        assert np.allclose(np.angle(out.frames[nz]), np.angle(S.frames[nz]))
        assert np.allclose(np.abs(out.frames), 0.5 * np.abs(S.frames))

    def test_shape_mismatch(self):
        S = stft(np.zeros(4096) + 1.0, CFG)
        with pytest.raises(ValueError):
            apply_mask(S, np.ones((1, 513)))


class TestMaskedIstft:
    def test_matches_nondifferentiable_path(self):
        rng = np.random.default_rng(6)
        x = rng.normal(0, 1, 4096)
        S = stft(x, CFG)
        m = rng.uniform(0, 1, S.frames.shape)
        a = masked_istft(Var(m), S.frames, CFG).value
        b = istft(apply_mask(S, m))
        assert np.allclose(a, b, atol=1e-12)

    def test_gradient_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.normal(0, 0.3, 2048)
        S = stft(x, CFG)
        mask = Var(rng.uniform(0.2, 0.8, S.frames.shape),
                   requires_grad=True)

        def loss_fn(_=None):
            return ad.mean(ad.square(masked_istft(mask, S.frames, CFG)))

        assert grad_check(loss_fn, {"mask": mask}, max_coords=60,
                          rng=rng) <= 1e-4


@settings(max_examples=10, deadline=None)
@given(st.integers(min_value=2048, max_value=12000),
       st.integers(min_value=0, max_value=2 ** 31 - 1))
def test_roundtrip_property(n, seed):
    x = np.random.default_rng(seed).normal(0, 1, n)
    y = istft(stft(x, CFG))
    lo = CFG.frame_size
    hi = min(len(y), n) - CFG.frame_size
    if hi > lo:
        assert np.max(np.abs(x[lo:hi] - y[lo:hi])) <= 1e-6

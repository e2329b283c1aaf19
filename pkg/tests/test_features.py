"""Feature front end: STFT, mel filterbank, stacking, augmentation, cache."""

import numpy as np
import pytest

from aegm.audio import AudioClip
from aegm.errors import BadMelConfig, ClipTooShort, NonFiniteFeature
from aegm.features import (FeatureConfig, FeatureMatrix, extract, hann_window,
                           load_features, log_mel, mel_filterbank, save_features,
                           shuffle_low_freq, stack_context, stft_magnitude)

SR = 16000


def make_clip(samples, clip_id="t"):
    return AudioClip(samples=np.asarray(samples, dtype=np.float64),
                     sample_rate=SR, clip_id=clip_id)


def sine_clip(freq, seconds=1.0, amplitude=1.0):
    t = np.arange(int(SR * seconds)) / SR
    return make_clip(amplitude * np.sin(2 * np.pi * freq * t))


@pytest.fixture
def cfg():
    return FeatureConfig()


class TestStft:
    def test_sine_peaks_at_expected_bin(self, cfg):
        # oracle: direct DFT of one windowed frame
        clip = sine_clip(1000.0)
        mag = stft_magnitude(clip, cfg)
        expected_bin = round(1000 * cfg.n_fft / SR)
        assert expected_bin == 64
        assert (mag.argmax(axis=1) == expected_bin).all()

        frame = clip.samples[:cfg.n_fft] * hann_window(cfg.n_fft)
        k = np.arange(cfg.n_fft // 2 + 1)
        n = np.arange(cfg.n_fft)
        dft = np.exp(-2j * np.pi * np.outer(k, n) / cfg.n_fft) @ frame
        np.testing.assert_allclose(mag[0], np.abs(dft), rtol=1e-9, atol=1e-9)

    def test_zero_clip_gives_zero_matrix(self, cfg):
        mag = stft_magnitude(make_clip(np.zeros(SR)), cfg)
        assert not mag.any()

    def test_frame_count_arithmetic(self, cfg):
        mag = stft_magnitude(make_clip(np.zeros(16000)), cfg)
        assert mag.shape == (30, 513)

    def test_frame_count_formula_over_lengths(self, cfg):
        for n in (1024, 1500, 1536, 2047, 2048, 50000):
            mag = stft_magnitude(make_clip(np.zeros(n)), cfg)
            assert mag.shape[0] == (n - cfg.n_fft) // cfg.hop + 1

    def test_too_short_clip_raises(self, cfg):
        clip = make_clip(np.zeros(2048))
        clip.samples = clip.samples[:512]  # below one frame
        with pytest.raises(ClipTooShort):
            stft_magnitude(clip, cfg)

    def test_magnitude_scales_linearly(self, cfg, rng):
        samples = rng.normal(size=4096)
        m1 = stft_magnitude(make_clip(samples), cfg)
        m3 = stft_magnitude(make_clip(3.0 * samples), cfg)
        assert (m1 >= 0).all()
        np.testing.assert_allclose(m3, 3.0 * m1, rtol=1e-9, atol=1e-12)


class TestMel:
    def test_filterbank_rows_nonnegative_with_positive_sums(self, cfg):
        fb = mel_filterbank(SR, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax)
        assert fb.shape == (128, 513)
        assert (fb >= 0).all()
        assert (fb.sum(axis=1) > 0).all()

    def test_bad_configs_rejected(self, cfg):
        with pytest.raises(BadMelConfig):
            mel_filterbank(SR, 1024, 0, 0.0, 8000.0)
        with pytest.raises(BadMelConfig):
            mel_filterbank(SR, 1024, 64, 0.0, 9000.0)
        with pytest.raises(BadMelConfig):
            mel_filterbank(SR, 1024, 64, 500.0, 400.0)

    def test_zero_clip_hits_exact_floor(self, cfg):
        out = log_mel(make_clip(np.zeros(SR)), cfg)
        np.testing.assert_array_equal(out, -120.0)

    def test_white_noise_lifts_every_channel(self, cfg, rng):
        # oracle: filterbank applied to an independently computed power spectrum
        samples = rng.normal(scale=0.3, size=SR)
        out = log_mel(make_clip(samples), cfg)
        assert (out > -120.0).all()

        fb = mel_filterbank(SR, cfg.n_fft, cfg.n_mels, cfg.fmin, cfg.fmax)
        frame = samples[:cfg.n_fft] * hann_window(cfg.n_fft)
        power = np.abs(np.fft.rfft(frame)) ** 2
        ref = 10.0 * np.log10(fb @ power + cfg.log_floor_epsilon)
        np.testing.assert_allclose(out[0], ref, rtol=1e-9)

    def test_monotone_in_channel_power(self, cfg):
        quiet = log_mel(sine_clip(1000.0, amplitude=0.1), cfg)
        loud = log_mel(sine_clip(1000.0, amplitude=1.0), cfg)
        ch = quiet[0].argmax()
        assert loud[0, ch] > quiet[0, ch]

    def test_extraction_is_deterministic(self, cfg, rng):
        samples = rng.normal(size=2 * SR)
        a = extract(make_clip(samples), cfg).rows
        b = extract(make_clip(samples), cfg).rows
        np.testing.assert_array_equal(a, b)


class TestStacking:
    def test_boundary_single_row(self):
        frames = np.arange(10.0).reshape(5, 2)
        out = stack_context(frames, 5)
        assert out.shape == (1, 10)
        np.testing.assert_array_equal(out[0], np.arange(10.0))

    def test_context_one_is_identity(self, rng):
        frames = rng.normal(size=(7, 3))
        np.testing.assert_array_equal(stack_context(frames, 1), frames)

    def test_shape_arithmetic(self, rng):
        out = stack_context(rng.normal(size=(30, 128)), 5)
        assert out.shape == (26, 640)

    def test_rows_are_consecutive_frames(self, rng):
        frames = rng.normal(size=(6, 2))
        out = stack_context(frames, 3)
        np.testing.assert_array_equal(out[1], frames[1:4].reshape(-1))

    def test_too_few_frames(self, rng):
        with pytest.raises(ClipTooShort):
            stack_context(rng.normal(size=(3, 4)), 5)


class TestShuffle:
    def test_zero_probability_is_identity(self, rng):
        rows = rng.normal(size=(8, 20))
        out = shuffle_low_freq(rows, 4, 5, 2, 0.0, rng)
        np.testing.assert_array_equal(out, rows)

    def test_zero_bins_is_identity(self, rng):
        rows = rng.normal(size=(8, 20))
        out = shuffle_low_freq(rows, 4, 5, 0, 1.0, rng)
        np.testing.assert_array_equal(out, rows)

    def test_forced_swap_smallest_case(self):
        # two context slots, one low bin: the values swap across slots
        class SwapRng:
            def random(self):
                return 0.0

            def permutation(self, n):
                return np.array([1, 0])

        rows = np.array([[1.0, 2.0, 3.0, 4.0]])  # slots (1,2) and (3,4)
        out = shuffle_low_freq(rows, 2, 2, 1, 1.0, SwapRng())
        np.testing.assert_array_equal(out, [[3.0, 2.0, 1.0, 4.0]])

    def test_high_bins_untouched_and_multiset_preserved(self, rng):
        per_frame, context, low = 6, 4, 3
        rows = rng.normal(size=(32, per_frame * context))
        out = shuffle_low_freq(rows, per_frame, context, low, 1.0, rng)
        orig = rows.reshape(32, context, per_frame)
        new = out.reshape(32, context, per_frame)
        np.testing.assert_array_equal(new[:, :, low:], orig[:, :, low:])
        for i in range(32):
            for k in range(low):
                np.testing.assert_array_equal(np.sort(new[i, :, k]), np.sort(orig[i, :, k]))

    def test_input_rows_not_mutated(self, rng):
        rows = rng.normal(size=(8, 12))
        copy = rows.copy()
        shuffle_low_freq(rows, 3, 4, 2, 1.0, rng)
        np.testing.assert_array_equal(rows, copy)


class TestCache:
    def test_round_trip(self, tmp_path, cfg, rng):
        fm = FeatureMatrix(rows=rng.normal(size=(26, 640)).astype(np.float32),
                           clip_id="clip_a", section_id=2, section_code="02")
        path = tmp_path / "clip_a.feat"
        save_features(path, fm, cfg)
        loaded, header = load_features(path)
        np.testing.assert_array_equal(loaded.rows, fm.rows)
        assert loaded.clip_id == "clip_a"
        assert loaded.section_id == 2
        assert loaded.section_code == "02"
        assert header["config_hash"] == cfg.config_hash()
        assert header["feature_kind"] == "logmel"

    def test_non_finite_rows_rejected(self):
        rows = np.zeros((2, 4))
        rows[1, 2] = np.nan
        with pytest.raises(NonFiniteFeature):
            FeatureMatrix(rows=rows, clip_id="x", section_id=0)

    def test_config_hash_tracks_fields(self):
        a = FeatureConfig()
        b = FeatureConfig(n_mels=64)
        c = FeatureConfig(feature_kind="stft")
        assert a.config_hash() != b.config_hash()
        assert a.config_hash() != c.config_hash()
        assert a.config_hash() == FeatureConfig().config_hash()

    def test_dimensions_per_kind(self):
        assert FeatureConfig().input_dim == 640
        assert FeatureConfig(feature_kind="stft").input_dim == 2565

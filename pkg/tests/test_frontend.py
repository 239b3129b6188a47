"""Tone synthesis, log-frequency analysis, pair sampling, augmentation, I/O."""

import numpy as np
import pytest

from otpitch.errors import DomainError, ShapeError
from otpitch.frontend import (
    FrontendConfig,
    HarmonicToneSpec,
    augment,
    center_wide_frame,
    compress_frame,
    log_freq_transform,
    read_annotations,
    read_wav,
    sample_shifted_pair,
    synth_tone,
    write_annotations,
    write_wav,
)

SR = 8000.0
F_MIN = 32.7
BPS = 3


def transform(samples, n_bins=216):
    return log_freq_transform(samples, SR, F_MIN, n_bins, bps=BPS)


class TestSynthTone:
    def test_pure_tone_peaks_at_nearest_bin(self, rng):
        f0 = 220.0
        spec = transform(synth_tone(HarmonicToneSpec(f0, num_harmonics=1), rng))
        frame = spec.frames[spec.frames.shape[0] // 2]
        expected = round(12 * BPS * np.log2(f0 / F_MIN))
        assert int(np.argmax(frame)) == expected

    def test_harmonic_decay_ratio(self, rng):
        f0 = 200.0
        spec = HarmonicToneSpec(f0, num_harmonics=3, amplitude_decay=0.5)
        frame = transform(synth_tone(spec, rng)).frames[3]
        mags = []
        for h in (1, 2, 3):
            b = round(12 * BPS * np.log2(h * f0 / F_MIN))
            mags.append(frame[b - 1:b + 2].max())
        assert mags[1] / mags[0] == pytest.approx(0.5, rel=0.1)
        assert mags[2] / mags[0] == pytest.approx(0.25, rel=0.1)

    def test_zero_duration_rejected(self):
        with pytest.raises(DomainError):
            HarmonicToneSpec(220.0, duration=0.0)

    def test_aliasing_rejected(self):
        with pytest.raises(DomainError):
            HarmonicToneSpec(1500.0, num_harmonics=3)

    def test_peak_normalized(self, rng):
        samples = synth_tone(HarmonicToneSpec(220.0, num_harmonics=2), rng)
        assert np.max(np.abs(samples)) == pytest.approx(0.9, abs=1e-9)

    def test_snr_adds_noise(self, rng):
        quiet = synth_tone(HarmonicToneSpec(220.0, noise_snr_db=None),
                           np.random.default_rng(1))
        noisy = synth_tone(HarmonicToneSpec(220.0, noise_snr_db=10.0),
                           np.random.default_rng(1))
        assert np.std(noisy - quiet) > 0.01


class TestLogFreqTransform:
    def test_geometric_bin_spacing(self, rng):
        spec = transform(rng.normal(size=4000))
        ratios = spec.bin_frequencies[1:] / spec.bin_frequencies[:-1]
        assert np.max(np.abs(ratios - ratios[0])) < 1e-12

    def test_silence_is_all_zero(self):
        spec = transform(np.zeros(8000))
        assert np.all(spec.frames == 0.0)

    def test_transposition_is_translation(self, rng):
        f0 = 220.0
        shift_semitones = 5
        a = transform(synth_tone(HarmonicToneSpec(f0, num_harmonics=1), rng))
        b = transform(synth_tone(
            HarmonicToneSpec(f0 * 2 ** (shift_semitones / 12.0),
                             num_harmonics=1), rng))
        fa = a.frames[a.frames.shape[0] // 2]
        fb = b.frames[b.frames.shape[0] // 2]
        assert np.argmax(fb) - np.argmax(fa) == shift_semitones * BPS

    def test_nyquist_violation_rejected(self, rng):
        with pytest.raises(DomainError):
            log_freq_transform(rng.normal(size=1000), SR, F_MIN, 300, bps=BPS)

    def test_transposition_translation_rate(self, rng):
        # Cross-correlation lag between wide frames of transposed tones
        # should equal the bin shift for nearly all random draws.
        front = FrontendConfig()
        hits = 0
        trials = 40
        for _ in range(trials):
            f0 = float(np.exp(rng.uniform(np.log(100), np.log(500))))
            s = int(rng.integers(-12, 13))
            wa = center_wide_frame(
                synth_tone(HarmonicToneSpec(f0, num_harmonics=1), rng), front)
            wb = center_wide_frame(
                synth_tone(HarmonicToneSpec(f0 * 2 ** (s / 12.0),
                                            num_harmonics=1), rng), front)
            corr = np.correlate(wb, wa, mode="full")
            lag = int(np.argmax(corr)) - (wa.size - 1)
            hits += lag == s * BPS
        assert hits / trials >= 0.95


class TestSampleShiftedPair:
    def test_zero_shift_is_identity(self):
        wide = np.arange(20.0)
        rng = np.random.default_rng(3)
        while True:
            pair = sample_shifted_pair(wide, 4, rng)
            if pair.k == 0:
                break
        np.testing.assert_array_equal(pair.x, pair.x_k)

    def test_one_hot_crop_arithmetic(self, rng):
        k_max = 4
        wide = np.zeros(20)
        wide[10] = 1.0
        for _ in range(50):
            pair = sample_shifted_pair(wide, k_max, rng)
            x_idx = int(np.argmax(pair.x))
            xk_idx = int(np.argmax(pair.x_k))
            assert xk_idx - x_idx == pair.k

    def test_wrong_width_rejected(self, rng):
        with pytest.raises(ShapeError):
            sample_shifted_pair(np.zeros(8), 4, rng)

    def test_shift_distribution_uniform(self, rng):
        k_max = 4
        wide = np.ones(20)
        draws = 10_000
        counts = np.zeros(2 * k_max + 1)
        for _ in range(draws):
            counts[sample_shifted_pair(wide, k_max, rng).k + k_max] += 1
        expected = draws / (2 * k_max + 1)
        sigma = np.sqrt(expected * (1 - 1 / (2 * k_max + 1)))
        assert np.all(np.abs(counts - expected) < 3 * sigma)


class TestAugment:
    def test_identity_settings(self, rng):
        frame = rng.uniform(size=30)
        out = augment(frame, rng, gain_range_db=(0.0, 0.0), noise_std=0.0)
        np.testing.assert_allclose(out, frame, atol=1e-12)

    def test_argmax_preserved_under_small_noise(self, rng):
        frame = np.zeros(50)
        frame[20] = 1.0
        frame[10] = 0.4
        preserved = sum(
            int(np.argmax(augment(frame, rng, noise_std=0.01))) == 20
            for _ in range(1000))
        assert preserved >= 990

    def test_output_nonnegative(self, rng):
        frame = rng.uniform(size=30) * 0.01
        for _ in range(50):
            assert np.all(augment(frame, rng, noise_std=0.5) >= 0.0)


class TestCompressFrame:
    def test_max_is_one(self, rng):
        out = compress_frame(rng.uniform(0.1, 5.0, size=40))
        assert out.max() == pytest.approx(1.0)

    def test_monotone(self, rng):
        frame = np.sort(rng.uniform(size=40))
        out = compress_frame(frame)
        assert np.all(np.diff(out) >= 0)

    def test_zero_frame_stays_zero(self):
        np.testing.assert_array_equal(compress_frame(np.zeros(8)), np.zeros(8))


class TestFileFormats:
    def test_wav_roundtrip(self, tmp_path, rng):
        samples = synth_tone(HarmonicToneSpec(220.0), rng)
        path = tmp_path / "tone.wav"
        write_wav(path, SR, samples)
        rate, back = read_wav(path)
        assert rate == SR
        np.testing.assert_allclose(back, samples, atol=1e-6)

    def test_int16_wav_accepted(self, tmp_path):
        from scipy.io import wavfile
        path = tmp_path / "pcm.wav"
        wavfile.write(path, 8000, (np.sin(np.linspace(0, 50, 4000))
                                   * 20000).astype(np.int16))
        rate, samples = read_wav(path)
        assert rate == 8000.0
        assert np.max(np.abs(samples)) < 1.0

    def test_annotation_roundtrip(self, tmp_path):
        times = np.array([0.0, 0.128, 0.256])
        f0s = np.array([220.0, 0.0, 440.0])
        path = tmp_path / "ann.csv"
        write_annotations(path, times, f0s)
        t_back, f_back = read_annotations(path)
        np.testing.assert_allclose(t_back, times, atol=1e-6)
        np.testing.assert_allclose(f_back, f0s, atol=1e-6)

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("0.0,220.0\n")
        with pytest.raises(DomainError):
            read_annotations(path)

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time_sec,f0_hz\n0.0,220.0\noops,not-a-number\n")
        with pytest.raises(DomainError, match=":3"):
            read_annotations(path)


class TestFrontendConfig:
    def test_wide_grid_extends_both_sides(self):
        front = FrontendConfig()
        assert front.n_bins_wide == front.n_bins + 2 * front.k_max
        assert front.f_min_wide < front.f_min

    def test_top_bin_below_nyquist_enforced(self):
        with pytest.raises(DomainError):
            FrontendConfig(n_bins=300)

    def test_bin_frequency_geometric(self):
        front = FrontendConfig()
        assert front.bin_frequency(12 * front.bps) == pytest.approx(
            2 * front.f_min, rel=1e-12)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spkrobust.signal import (COMPOSITE_PEAK, NoiseType, SignalError, Waveform, clip_counter,
                              fit_noise_to, make_babble, make_television, measure_snr,
                              mix_at_snr, read_wav, rms_power, snr_gain, write_wav)


def wav(x, rate=16000):
    return Waveform(np.asarray(x, dtype=float), rate)


def test_noise_type_has_exactly_four_members():
    assert {t.value for t in NoiseType} == {"music", "ambient", "television", "babble"}


class TestWavIO:
    def test_round_trip_length_and_rate(self, tmp_path):
        x = np.random.default_rng(0).uniform(-0.5, 0.5, 16000)
        write_wav(wav(x), tmp_path / "a.wav")
        w = read_wav(tmp_path / "a.wav")
        assert len(w) == 16000 and w.sample_rate == 16000

    def test_min_pcm_value_maps_to_minus_one(self, tmp_path):
        from scipy.io import wavfile
        wavfile.write(tmp_path / "m.wav", 16000, np.array([-32768, 0, 32767], dtype=np.int16))
        w = read_wav(tmp_path / "m.wav")
        assert w.samples[0] == -1.0
        assert w.samples[1] == 0.0

    def test_stereo_antiphase_averages_to_silence(self, tmp_path):
        from scipy.io import wavfile
        x = (np.random.default_rng(1).uniform(-0.5, 0.5, 1000) * 32767).astype(np.int16)
        wavfile.write(tmp_path / "s.wav", 16000, np.stack([x, -x], axis=1))
        assert np.all(read_wav(tmp_path / "s.wav").samples == 0.0)

    def test_float32_input(self, tmp_path):
        from scipy.io import wavfile
        x = np.linspace(-1, 1, 500, dtype=np.float32)
        wavfile.write(tmp_path / "f.wav", 8000, x)
        w = read_wav(tmp_path / "f.wav")
        assert w.sample_rate == 8000
        np.testing.assert_array_equal(w.samples, x.astype(np.float64))

    def test_ramp_quantization_bound(self, tmp_path):
        x = np.linspace(-1, 1, 4001)
        write_wav(wav(x), tmp_path / "r.wav")
        assert np.max(np.abs(read_wav(tmp_path / "r.wav").samples - x)) <= 2.0 ** -15

    def test_zeros_give_zero_data_chunk(self, tmp_path):
        write_wav(wav(np.zeros(300)), tmp_path / "z.wav")
        raw = (tmp_path / "z.wav").read_bytes()
        idx = raw.index(b"data")
        payload = raw[idx + 8:]
        assert len(payload) == 600 and set(payload) == {0}

    def test_over_range_is_clipped_and_counted(self, tmp_path):
        clip_counter.reset()
        n = write_wav(wav([2.0, 0.0, -3.0]), tmp_path / "c.wav")
        assert n == 2 and clip_counter.samples == 2 and clip_counter.events == 1
        w = read_wav(tmp_path / "c.wav")
        assert w.samples[0] == pytest.approx(32767 / 32768)
        assert w.samples[2] == -1.0

    def test_over_range_error_policy(self, tmp_path):
        with pytest.raises(SignalError):
            write_wav(wav([2.0]), tmp_path / "e.wav", clip="error")

    def test_malformed_header(self, tmp_path):
        (tmp_path / "bad.wav").write_bytes(b"RIFF\x00\x00\x00\x00JUNK")
        with pytest.raises(SignalError):
            read_wav(tmp_path / "bad.wav")

    def test_zero_length_payload(self, tmp_path):
        from scipy.io import wavfile
        wavfile.write(tmp_path / "empty.wav", 16000, np.zeros(0, dtype=np.int16))
        with pytest.raises(SignalError):
            read_wav(tmp_path / "empty.wav")

    def test_unsupported_codec(self, tmp_path):
        from scipy.io import wavfile
        wavfile.write(tmp_path / "i32.wav", 16000, np.zeros(10, dtype=np.int32))
        with pytest.raises(SignalError):
            read_wav(tmp_path / "i32.wav")

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_random_round_trip(self, tmp_path_factory, seed):
        x = np.random.default_rng(seed).uniform(-1, 1, 257)
        p = tmp_path_factory.mktemp("rt") / "x.wav"
        write_wav(wav(x), p)
        assert np.max(np.abs(read_wav(p).samples - x)) <= 2.0 ** -15


class TestPower:
    def test_zeros(self):
        assert rms_power(wav(np.zeros(10))) == 0.0

    def test_constant(self):
        assert rms_power(wav(np.full(7, 0.5))) == 0.25

    def test_unit_sine_whole_periods(self):
        t = np.arange(16000) / 16000
        assert rms_power(wav(np.sin(2 * np.pi * 100 * t))) == pytest.approx(0.5, abs=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(SignalError):
            rms_power(np.zeros(0))


class TestFitNoise:
    def test_equal_length_unchanged(self):
        x = np.arange(100.0)
        for seed in range(5):
            out = fit_noise_to(wav(x), 100, np.random.default_rng(seed))
            np.testing.assert_array_equal(out.samples, x)

    def test_short_noise_is_tiled_rotation(self):
        x = np.random.default_rng(0).standard_normal(50)
        out = fit_noise_to(wav(x), 120, np.random.default_rng(3)).samples
        assert out.shape == (120,)
        np.testing.assert_array_equal(out[:70], out[50:])
        # the first period is a rotation of the source cycle
        rotations = [np.roll(x, -k) for k in range(50)]
        assert any(np.array_equal(out[:50], r) for r in rotations)

    def test_long_noise_is_contiguous_slice(self):
        x = np.random.default_rng(1).standard_normal(200)
        out = fit_noise_to(wav(x), 80, np.random.default_rng(9)).samples
        assert any(np.array_equal(x[i:i + 80], out) for i in range(121))

    def test_lengths_for_random_pairs(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            n, target = int(rng.integers(1, 300)), int(rng.integers(1, 300))
            assert len(fit_noise_to(wav(np.ones(n)), target, rng)) == target


class TestMixing:
    def test_gain_equal_power(self):
        assert snr_gain(0.3, 0.3, 0.0) == pytest.approx(1.0)
        assert snr_gain(0.3, 0.3, 20.0) == pytest.approx(0.1)

    def test_unit_gain_at_zero_db(self):
        rng = np.random.default_rng(0)
        clean = wav(np.sign(rng.standard_normal(1000)) * 0.5)
        noise = wav(np.sign(rng.standard_normal(1000)) * 0.5)
        out = mix_at_snr(clean, noise, 0.0)
        np.testing.assert_allclose(out.samples, clean.samples + noise.samples)

    @pytest.mark.parametrize("snr", [-5, 0, 5, 10, 15, 20])
    def test_measured_snr_matches(self, snr):
        rng = np.random.default_rng(snr + 10)
        clean = wav(rng.standard_normal(4000) * 0.3)
        noise = wav(rng.standard_normal(1500))
        out = mix_at_snr(clean, noise, snr, rng)
        assert abs(measure_snr(clean, out) - snr) < 1e-6

    def test_scale_invariance_of_achieved_snr(self):
        rng = np.random.default_rng(5)
        clean = rng.standard_normal(3000) * 0.2
        noise = rng.standard_normal(5000)
        a = mix_at_snr(wav(clean), wav(noise), 7.5, np.random.default_rng(1))
        b = mix_at_snr(wav(3 * clean), wav(3 * noise), 7.5, np.random.default_rng(1))
        assert abs(measure_snr(wav(clean), a) - measure_snr(wav(3 * clean), b)) < 1e-9

    def test_silent_inputs_rejected(self):
        with pytest.raises(SignalError):
            mix_at_snr(wav(np.zeros(10)), wav(np.ones(10)), 5)
        with pytest.raises(SignalError):
            mix_at_snr(wav(np.ones(10)), wav(np.zeros(10)), 5)

    def test_rate_mismatch(self):
        with pytest.raises(SignalError):
            mix_at_snr(wav(np.ones(10), 16000), wav(np.ones(10), 8000), 5)


class TestComposites:
    def test_babble_of_in_phase_sines_peaks_at_point_nine(self):
        t = np.arange(1600) / 16000
        s = np.sin(2 * np.pi * 100 * t)
        out = make_babble([wav(s)] * 3, 3, np.random.default_rng(0))
        assert np.max(np.abs(out.samples)) == pytest.approx(COMPOSITE_PEAK, abs=1e-12)

    def test_babble_uses_distinct_sources(self):
        pool = [wav(np.random.default_rng(i).standard_normal(500)) for i in range(8)]
        for seed in range(20):
            _, idx = make_babble(pool, 6, np.random.default_rng(seed), return_indices=True)
            assert len(idx) == 6 and len(set(idx)) == 6

    def test_babble_cancellation_is_degenerate(self):
        x = np.random.default_rng(0).standard_normal(100)
        pool = [wav(x), wav(-x), wav(np.zeros(100))]
        with pytest.raises(SignalError, match="degenerate babble"):
            make_babble(pool, 3, np.random.default_rng(0))

    @pytest.mark.parametrize("k", [2, 7])
    def test_babble_k_range(self, k):
        pool = [wav(np.ones(10))] * 8
        with pytest.raises(SignalError):
            make_babble(pool, k, np.random.default_rng(0))

    def test_babble_pool_too_small(self):
        with pytest.raises(SignalError):
            make_babble([wav(np.ones(10))] * 3, 4, np.random.default_rng(0))

    def test_television_identical_inputs(self):
        x = np.random.default_rng(2).standard_normal(300)
        out = make_television(wav(x), wav(x)).samples
        np.testing.assert_allclose(out, 2 * x * (COMPOSITE_PEAK / np.max(np.abs(2 * x))))
        assert np.max(np.abs(out)) == pytest.approx(0.9)

    def test_television_power_matching(self):
        music = np.full(100, 0.2)                    # power 0.04
        speech = np.tile([0.1, -0.1], 50)            # power 0.01
        out = make_television(wav(music), wav(speech)).samples
        expected = music + 2.0 * speech
        np.testing.assert_allclose(out, expected * (0.9 / np.max(np.abs(expected))))

    def test_television_longer_length(self):
        out = make_television(wav(np.ones(100)), wav(np.ones(160)))
        assert len(out) == 160

    def test_television_silent_input(self):
        with pytest.raises(SignalError):
            make_television(wav(np.zeros(10)), wav(np.ones(10)))

import numpy as np
import pytest

from spkrobust.features import (FbankConfig, FeatureError, FeatureMatrix, dump_feature_set,
                                fbank_energies, frame_count, hz_to_mel, logmel, mel_centers,
                                mel_filterbank, read_features, write_features)
from spkrobust.signal import Waveform

CFG = FbankConfig()


def test_frame_count_formula():
    assert frame_count(16000, CFG) == 98
    assert frame_count(400, CFG) == 1
    with pytest.raises(FeatureError):
        frame_count(399, CFG)


@pytest.mark.parametrize("kw", [dict(win_length=600), dict(fmin=100, fmax=50),
                                dict(fmax=9000), dict(n_mels=0), dict(log_floor=0.0)])
def test_config_invariants(kw):
    with pytest.raises(FeatureError):
        FbankConfig(**kw)


def test_silence_maps_to_log_floor():
    feat = logmel(Waveform(np.zeros(16000)), CFG)
    assert feat.values.shape == (98, 64)
    assert np.all(feat.values == np.log(CFG.log_floor))


def test_gain_shifts_log_energies():
    x = np.random.default_rng(0).standard_normal(8000) * 0.1
    a = logmel(Waveform(x), CFG).values
    b = logmel(Waveform(10 * x), CFG).values
    np.testing.assert_allclose(b - a, np.log(100.0), atol=1e-6)


def _brute_force_power(frame, n_fft):
    k = np.arange(n_fft // 2 + 1)[:, None]
    n = np.arange(frame.size)[None, :]
    spec = (frame[None, :] * np.exp(-2j * np.pi * k * n / n_fft)).sum(axis=1)
    return np.abs(spec) ** 2


def test_sine_at_filter_centre_peaks_in_that_filter():
    cfg = FbankConfig(win_length=128, hop_length=64, n_fft=128, n_mels=16, fmin=100, fmax=7600)
    centres = mel_centers(cfg)[1:-1]
    fb = mel_filterbank(cfg)
    for j in range(3, 13):
        t = np.arange(2048) / cfg.sample_rate
        x = np.sin(2 * np.pi * centres[j] * t)
        feat = logmel(Waveform(x), cfg).values
        assert np.all(np.argmax(feat, axis=1) == j)
        # the fast path agrees with an explicit DFT of the first frame
        frame = x[:cfg.win_length] * np.hamming(cfg.win_length)
        ref = np.log(fb @ _brute_force_power(frame, cfg.n_fft) + cfg.log_floor)
        np.testing.assert_allclose(feat[0], ref, rtol=1e-9, atol=1e-9)
        assert np.argmax(ref) == j


class TestFilterbank:
    def test_rows_have_unique_peak_at_most_one(self):
        fb = mel_filterbank(CFG)
        assert fb.shape == (64, 257)
        assert np.all(fb.max(axis=1) <= 1.0) and np.all(fb.max(axis=1) > 0)
        for row in fb:
            assert np.count_nonzero(row == row.max()) == 1

    def test_peak_is_exactly_one_on_grid(self):
        # centres that land on FFT bins give weight exactly 1
        cfg = FbankConfig(n_mels=1, fmin=0.0, fmax=8000.0)
        fb = mel_filterbank(cfg)
        centre = mel_centers(cfg)[1]
        freqs = np.arange(257) * 16000 / 512
        nearest = np.argmin(np.abs(freqs - centre))
        assert np.argmax(fb[0]) == nearest

    def test_overlap_covers_bank_range(self):
        fb = mel_filterbank(CFG)
        freqs = np.arange(257) * 16000 / 512
        edges = mel_centers(CFG)
        inside = (freqs > edges[0]) & (freqs < edges[-1])
        assert np.all(fb.sum(axis=0)[inside] > 0)

    def test_single_filter_spans_range(self):
        cfg = FbankConfig(n_mels=1, fmin=300, fmax=3000)
        fb = mel_filterbank(cfg)[0]
        freqs = np.arange(257) * 16000 / 512
        assert np.all(fb[(freqs <= 300) | (freqs >= 3000)] == 0)
        assert np.all(fb[(freqs > 300) & (freqs < 3000)] > 0)

    def test_mel_scale_monotone(self):
        f = np.linspace(0, 8000, 1001)
        assert np.all(np.diff(hz_to_mel(f)) > 0)
        assert np.all(np.diff(mel_centers(CFG)) > 0)


def test_deterministic_bit_identical():
    x = np.random.default_rng(3).standard_normal(5000)
    a = logmel(Waveform(x), CFG).values
    b = logmel(Waveform(x.copy()), CFG).values
    assert a.tobytes() == b.tobytes()


def test_energy_additivity_for_disjoint_bands():
    # one 512-sample frame whose windowed content sits exactly on DFT bins, so
    # the two bands share no spectral support and power adds without cross terms
    cfg = FbankConfig(win_length=512, hop_length=256)
    n = np.arange(512)
    window = np.hamming(512)
    rng = np.random.default_rng(7)
    for _ in range(5):
        k_low, k_high = int(rng.integers(5, 60)), int(rng.integers(120, 240))
        low = np.cos(2 * np.pi * k_low * n / 512 + rng.uniform(0, 6)) / window
        high = 0.7 * np.cos(2 * np.pi * k_high * n / 512 + rng.uniform(0, 6)) / window
        e_low = fbank_energies(Waveform(low), cfg)
        e_high = fbank_energies(Waveform(high), cfg)
        e_sum = fbank_energies(Waveform(low + high), cfg)
        significant = e_sum > 1e-9 * e_sum.max()
        np.testing.assert_allclose(e_sum[significant], (e_low + e_high)[significant], rtol=1e-6)


def test_mean_norm_flag():
    x = np.random.default_rng(4).standard_normal(8000)
    feat = logmel(Waveform(x), FbankConfig(mean_norm=True)).values
    np.testing.assert_allclose(feat.mean(axis=0), 0.0, atol=1e-9)


def test_rate_mismatch_rejected():
    with pytest.raises(FeatureError):
        logmel(Waveform(np.ones(8000), 8000), CFG)


def test_feature_dump_round_trip(tmp_path):
    vals = np.random.default_rng(0).standard_normal((7, 64)).astype(np.float32)
    write_features(FeatureMatrix(vals, 0.01, 64), tmp_path / "a.lmel")
    raw = (tmp_path / "a.lmel").read_bytes()
    assert raw[:4] == b"LMEL" and len(raw) == 12 + 7 * 64 * 4
    back = read_features(tmp_path / "a.lmel")
    np.testing.assert_array_equal(back.values, vals)
    scp = dump_feature_set({"u2": FeatureMatrix(vals, 0.01, 64), "u1": FeatureMatrix(vals[:3], 0.01, 64)},
                           tmp_path / "dump")
    lines = scp.read_text().splitlines()
    assert [ln.split("\t")[0] for ln in lines] == ["u1", "u2"]
    assert read_features(lines[0].split("\t")[1]).frames == 3

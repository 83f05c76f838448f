import numpy as np
import pytest
from scipy import signal

from neraf.dsp import (
    Spectrogram,
    StftConfig,
    Waveform,
    convolve,
    griffin_lim,
    hann_window,
    istft,
    log_magnitude,
    log_stft,
    magnitude,
    pad_or_trim,
    read_wav,
    spectral_convergence,
    stft,
    write_wav,
)
from neraf.errors import InvalidInputError


def test_hann_is_periodic():
    w = hann_window(8)
    np.testing.assert_allclose(w, signal.get_window("hann", 8, fftbins=True))


def test_stft_matches_scipy(rng):
    cfg = StftConfig(256, 256, 64)
    x = rng.standard_normal(3000)
    spec = stft(Waveform(x, 16000), cfg).values[0]
    # scipy normalizes by the window sum
    _, _, ref = signal.stft(x, window="hann", nperseg=256, noverlap=192, boundary="zeros", padded=False)
    np.testing.assert_allclose(spec, ref * hann_window(256).sum(), atol=1e-10)
    assert spec.shape == (cfg.n_freqs, cfg.n_frames(3000))


def test_impulse_column_is_flat():
    cfg = StftConfig(256, 256, 64)
    x = np.zeros(2048)
    x[0] = 1.0
    col = np.abs(stft(Waveform(x, 16000), cfg).values[0, :, 0])
    # the impulse sits at the window center; a DFT of a single sample is flat
    frame = np.zeros(256)
    frame[128] = hann_window(256)[128]
    np.testing.assert_allclose(col, np.abs(np.fft.rfft(frame)), atol=1e-12)
    np.testing.assert_allclose(col, col[0], atol=1e-12)


def test_sinusoid_peak_bin():
    cfg = StftConfig(256, 256, 64)
    sr, k = 16000, 20
    t = np.arange(8000) / sr
    x = np.sin(2 * np.pi * k * sr / cfg.n_fft * t)
    mag = np.abs(stft(Waveform(x, sr), cfg).values[0])
    interior = mag[:, 4:-4]
    assert np.all(np.argmax(interior, axis=0) == k)


def test_zero_waveform():
    spec = stft(Waveform(np.zeros(1000), 8000), StftConfig(256, 256, 64))
    assert np.all(spec.values == 0)


def test_stft_rejects_short_input():
    with pytest.raises(InvalidInputError):
        stft(Waveform(np.zeros(100), 8000), StftConfig(256, 256, 64))


def test_istft_round_trip(rng):
    cfg = StftConfig(256, 256, 64)
    x = rng.standard_normal((2, 4000))
    spec = stft(Waveform(x, 16000), cfg)
    np.testing.assert_allclose(istft(spec, cfg, 4000), x, atol=1e-10)


def test_log_magnitude_anchors():
    z = np.array([0.0, 1 - 1e-3, np.e - 1e-3], dtype=complex).reshape(1, 3, 1)
    v = log_magnitude(Spectrogram(z, "complex"), 1e-3).values.ravel()
    assert v[0] == pytest.approx(np.log(1e-3))
    assert v[1] == pytest.approx(0.0, abs=1e-15)
    assert v[2] == pytest.approx(1.0, abs=1e-15)
    back = magnitude(Spectrogram(v.reshape(1, 3, 1), "logmag"), 1e-3).values.ravel()
    np.testing.assert_allclose(back, [0.0, 1 - 1e-3, np.e - 1e-3], atol=1e-12)


def test_griffin_lim_zero_and_determinism(oracle_rir, small_cfg):
    zero = Spectrogram(np.zeros((1, 129, 20)), "mag")
    out = griffin_lim(zero, small_cfg, 10)
    assert np.all(out.samples == 0)

    mag = magnitude(stft(oracle_rir, small_cfg))
    a = griffin_lim(mag, small_cfg, 20, seed=3, momentum=0.99)
    b = griffin_lim(mag, small_cfg, 20, seed=3, momentum=0.99)
    assert np.array_equal(a.samples, b.samples)


def test_griffin_lim_reconstructs_oracle_rir(oracle_rir, small_cfg):
    mag = magnitude(stft(oracle_rir, small_cfg))
    w = griffin_lim(mag, small_cfg, 100, momentum=0.99, length=oracle_rir.length)
    rebuilt = np.abs(stft(w, small_cfg).values)
    assert spectral_convergence(rebuilt, mag.values) < 0.05


def test_plain_griffin_lim_is_monotone(oracle_rir, small_cfg):
    mag = magnitude(stft(oracle_rir, small_cfg))
    res = griffin_lim(mag, small_cfg, 30, return_history=True)
    h = np.asarray(res.history)
    assert np.all(np.diff(h) <= 1e-12)


def test_griffin_lim_accepts_log_magnitude(oracle_rir, small_cfg):
    spec = log_stft(oracle_rir, small_cfg)
    w = griffin_lim(spec, small_cfg, 5)
    assert w.length == small_cfg.istft_length(spec.n_frames)


def test_griffin_lim_rejects_complex(oracle_rir, small_cfg):
    with pytest.raises(InvalidInputError):
        griffin_lim(stft(oracle_rir, small_cfg), small_cfg, 5)


def test_convolve_identity_and_shift(rng):
    dry = Waveform(rng.standard_normal(500), 16000)
    ident = Waveform(np.r_[1.0, np.zeros(9)], 16000)
    out = convolve(dry, ident)
    np.testing.assert_array_equal(out.samples[0, :500], dry.samples[0])
    assert np.all(out.samples[0, 500:] == 0)

    k, g = 7, 0.5
    h = np.zeros(20)
    h[k] = g
    out = convolve(dry, Waveform(h, 16000)).samples[0]
    np.testing.assert_allclose(out[k : k + 500], g * dry.samples[0], atol=1e-12)


def test_convolve_matches_naive(rng):
    x = rng.standard_normal(64)
    h = np.zeros(16)
    h[2], h[11] = 0.8, -0.3
    out = convolve(Waveform(x, 8000), Waveform(h, 8000)).samples[0]
    naive = np.zeros(len(x) + len(h) - 1)
    for i in range(len(x)):
        for j in range(len(h)):
            naive[i + j] += x[i] * h[j]
    np.testing.assert_allclose(out, naive, atol=1e-12)


def test_convolve_sample_rate_mismatch():
    with pytest.raises(InvalidInputError):
        convolve(Waveform(np.ones(10), 8000), Waveform(np.ones(3), 16000))


def test_pad_or_trim():
    v = np.random.default_rng(0).standard_normal((1, 4, 12))
    s = Spectrogram(v, "logmag")
    assert np.array_equal(pad_or_trim(s, 12).values, v)
    assert np.array_equal(pad_or_trim(s, 8).values, v[:, :, :8])
    short = v[:, :, :5].copy()
    short[0, 0, 0] = np.log(1e-3)
    out = pad_or_trim(Spectrogram(short, "logmag"), 8).values
    assert np.all(out[:, :, 5:] == np.log(1e-3))


def test_wav_round_trip(tmp_path, rng):
    w = Waveform(rng.uniform(-1, 1, (2, 300)), 16000)
    write_wav(tmp_path / "a.wav", w)
    r = read_wav(tmp_path / "a.wav")
    assert r.sample_rate == 16000
    np.testing.assert_allclose(r.samples, w.samples.astype(np.float32), atol=0)


@pytest.mark.parametrize("kw", [dict(n_fft=0), dict(hop_length=0), dict(win_length=600), dict(epsilon_log=0)])
def test_stft_config_validation(kw):
    base = dict(n_fft=512, win_length=512, hop_length=128, epsilon_log=1e-3)
    base.update(kw)
    with pytest.raises(InvalidInputError):
        StftConfig(**base)

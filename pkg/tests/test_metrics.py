import math

import numpy as np
import pytest

from neraf.dsp import StftConfig, Waveform, log_stft
from neraf.errors import DegenerateInputError, InfiniteClarityError, InsufficientDecayError, InvalidInputError
from neraf.metrics import (
    T30,
    RirErrorReport,
    c50,
    edt,
    rir_error_report,
    schroeder_decay,
    stft_error,
    t60,
)
from neraf.oracle import Pose, ShoeboxRoom, image_source_rir

SR = 16000


def envelope(alpha, seconds=2.0, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return Waveform(np.exp(-alpha * t), sr)


def test_schroeder_two_impulses():
    x = np.zeros(SR // 5)
    x[0] = x[int(0.1 * SR)] = 1.0
    _, lv = schroeder_decay(Waveform(x, SR))
    assert lv[0] == 0.0
    assert lv[1] == pytest.approx(10 * math.log10(0.5), abs=1e-12)


def test_schroeder_single_impulse():
    x = np.zeros(100)
    x[10] = 2.0
    _, lv = schroeder_decay(Waveform(x, SR))
    assert np.all(lv[:11] == 0.0)
    assert np.all(np.isneginf(lv[11:]))


def test_schroeder_exponential_closed_form():
    alpha = 3.0
    w = envelope(alpha, 4.0)
    t, lv = schroeder_decay(w)
    # tail of a discrete geometric energy sequence; compare away from the end
    sel = t < 1.5
    np.testing.assert_allclose(lv[sel], -20 * alpha * t[sel] / math.log(10), atol=1e-6)


def test_schroeder_zero_signal():
    with pytest.raises(DegenerateInputError):
        schroeder_decay(Waveform(np.zeros(10), SR))


@pytest.mark.parametrize("alpha,expected", [(6.9078, 1.0), (13.8155, 0.5)])
def test_t60_and_edt_envelope(alpha, expected):
    w = envelope(alpha, 3.0 * expected)
    assert t60(w) == pytest.approx(expected, rel=0.02)
    assert t60(w, span=T30) == pytest.approx(expected, rel=0.02)
    assert edt(w) == pytest.approx(expected, rel=0.02)


def test_edt_slope_break():
    # Schroeder curve falling 20 dB/s for 0.5 s, then 5 dB/s; the signal is
    # the energy that produces exactly this decay curve.
    sr = 2000
    t = np.arange(int(14.0 * sr) + 1) / sr
    level = np.where(t < 0.5, -20 * t, -10 - 5 * (t - 0.5))
    tail = 10 ** (level / 10)
    energy = -np.diff(tail)
    w = Waveform(np.sqrt(energy), sr)
    assert edt(w) == pytest.approx(3.0, rel=0.05)


def test_t60_insufficient_decay():
    # ten equal samples: the backward integral bottoms out at -10 dB
    w = Waveform(np.ones(10), SR)
    with pytest.raises(InsufficientDecayError) as info:
        t60(w)
    assert info.value.reached_db == pytest.approx(-10.0)


def test_c50_cases():
    x = np.zeros(SR)
    x[0] = 1.0
    x[int(0.2 * SR)] = 1.0
    assert c50(Waveform(x, SR)) == pytest.approx(0.0, abs=0.01)
    x[0] = math.sqrt(10)
    assert c50(Waveform(x, SR)) == pytest.approx(10.0, abs=0.01)

    y = np.zeros(SR)
    y[:10] = math.sqrt(0.99 / 10)
    y[SR // 2] = math.sqrt(0.01)
    assert c50(Waveform(y, SR)) == pytest.approx(10 * math.log10(0.99 / 0.01), abs=1e-9)


def test_c50_without_late_energy():
    x = np.zeros(SR)
    x[3] = 1.0
    with pytest.raises(InfiniteClarityError):
        c50(Waveform(x, SR))


def test_stft_error(rng):
    a = rng.standard_normal((2, 5, 7))
    assert stft_error(a, a) == 0.0
    assert stft_error(a + 0.3, a) == pytest.approx(0.3, abs=1e-12)
    b = rng.standard_normal((2, 5, 7))
    total = 0.0
    for i in range(2):
        for j in range(5):
            for k in range(7):
                total += abs(a[i, j, k] - b[i, j, k])
    assert stft_error(a, b) == pytest.approx(total / a.size, abs=1e-12)
    with pytest.raises(InvalidInputError):
        stft_error(a, b[:, :4])


@pytest.fixture(scope="module")
def pair():
    room = ShoeboxRoom((4, 3, 2.5), 0.3)
    src = Pose((1.2, 1.0, 1.3))
    a = image_source_rir(room, src, Pose((2.5, 1.5, 1.5)), SR, 0.25)
    b = image_source_rir(room, src, Pose((3.0, 1.5, 1.5)), SR, 0.25)
    return a, b


def test_report_identity_and_scale(pair):
    a, _ = pair
    cfg = StftConfig(256, 256, 64)
    r = rir_error_report(a, a, cfg)
    assert (r.t60_pct, r.c50_db, r.edt_s, r.stft_err) == (0.0, 0.0, 0.0, 0.0)
    r2 = rir_error_report(Waveform(2 * a.samples, SR), a, cfg)
    assert r2.t60_pct == pytest.approx(0.0, abs=1e-9)
    assert r2.c50_db == pytest.approx(0.0, abs=1e-9)
    assert r2.edt_s == pytest.approx(0.0, abs=1e-9)
    # ln 2 where the magnitude dominates eps; smaller elsewhere
    hi = np.abs(log_stft(a, cfg).values) < 2
    diff = log_stft(Waveform(2 * a.samples, SR), cfg).values - log_stft(a, cfg).values
    assert np.median(diff[hi]) == pytest.approx(math.log(2), abs=0.01)
    assert 0 < r2.stft_err < math.log(2)


def _reference_report(pred, gt, cfg):
    # independent scalar implementation of the same formulas
    def curve(x):
        e = x.astype(float) ** 2
        tail = np.array([e[i:].sum() for i in range(0, len(e))])
        with np.errstate(divide="ignore"):
            return 10 * np.log10(tail / tail[0])

    def fit(x, hi, lo):
        c = curve(x)
        i0 = next(i for i, v in enumerate(c) if v <= hi)
        i1 = next(i for i, v in enumerate(c) if v <= lo)
        tt = np.arange(i0, i1 + 1) / SR
        A = np.vstack([tt, np.ones_like(tt)]).T
        slope = np.linalg.lstsq(A, c[i0 : i1 + 1], rcond=None)[0][0]
        return -60.0 / slope

    def clar(x):
        k = int(round(0.05 * SR))
        return 10 * math.log10((x[:k] ** 2).sum() / (x[k:] ** 2).sum())

    p, g = pred.samples[0], gt.samples[0]
    tp, tg = fit(p, -5, -25), fit(g, -5, -25)
    ep, eg = fit(p, 0, -10), fit(g, 0, -10)
    return abs(tp - tg) / tg * 100, abs(clar(p) - clar(g)), abs(ep - eg)


def test_report_matches_reference(pair):
    a, b = pair
    cfg = StftConfig(256, 256, 64)
    r = rir_error_report(a, b, cfg)
    t, c, e = _reference_report(a, b, cfg)
    assert r.t60_pct == pytest.approx(t, abs=1e-9)
    assert r.c50_db == pytest.approx(c, abs=1e-9)
    assert r.edt_s == pytest.approx(e, abs=1e-9)


def test_report_serialization():
    r = RirErrorReport(1.0, 2.0, 3.0, 4.0, 1)
    assert RirErrorReport.from_dict(r.to_dict()) == r
    assert '"t60_pct": 1.0' in r.to_json()


def test_report_excludes_degenerate_channel(pair):
    a, _ = pair
    silent = np.vstack([a.samples[0], np.zeros(a.length)])
    w = Waveform(silent, SR)
    r = rir_error_report(w, w, StftConfig(256, 256, 64))
    assert r.excluded_channels == 1
    with pytest.raises(DegenerateInputError):
        rir_error_report(Waveform(np.zeros((1, 100)), SR), Waveform(np.zeros((1, 100)), SR), StftConfig(64, 64, 16))

"""Room-acoustics metrics (T60, C50, EDT, STFT error) and error reports."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .dsp import StftConfig, Waveform, log_stft
from .errors import (
    DegenerateInputError,
    InfiniteClarityError,
    InsufficientDecayError,
    InvalidInputError,
)

# decay-fit spans in dB below the initial level
T20 = (-5.0, -25.0)
T30 = (-5.0, -35.0)
EDT_SPAN = (0.0, -10.0)


def _channel(w: Waveform, channel: int) -> np.ndarray:
    if not 0 <= channel < w.channels:
        raise InvalidInputError(f"channel {channel} out of range for {w.channels} channels")
    return w.samples[channel]


def schroeder_decay(w: Waveform, channel: int = 0):
    """Backward-integrated energy decay curve.

    Returns ``(times, levels)`` where ``levels[n] = 10 log10(sum_{m >= n} x^2 /
    sum x^2)`` in dB. Samples past the last nonzero one are ``-inf``.
    """
    x = _channel(w, channel)
    energy = x * x
    tail = np.cumsum(energy[::-1])[::-1]
    total = tail[0] if tail.size else 0.0
    if not total > 0:
        raise DegenerateInputError("Schroeder curve of an all-zero signal is undefined")
    with np.errstate(divide="ignore"):
        levels = 10.0 * np.log10(tail / total)
    # cumulative sums may wobble by an ulp; the curve is nonincreasing by definition
    levels = np.minimum.accumulate(levels)
    times = np.arange(x.size) / w.sample_rate
    return times, levels


def _decay_time(times, levels, span) -> float:
    hi, lo = span
    if not np.any(levels <= lo):
        raise InsufficientDecayError(
            f"decay curve never reaches {lo} dB (minimum {levels.min():.2f} dB)",
            reached_db=float(levels[np.isfinite(levels)].min()),
        )
    start = int(np.argmax(levels <= hi))
    stop = int(np.argmax(levels <= lo))
    sel = slice(start, stop + 1)
    t, l = times[sel], levels[sel]
    if t.size < 2:
        # the whole span falls between two samples: use the secant
        t = times[max(stop - 1, 0) : stop + 1]
        l = levels[max(stop - 1, 0) : stop + 1]
    slope = np.polyfit(t, l, 1)[0]
    if not slope < 0:
        raise InsufficientDecayError("decay fit has nonnegative slope")
    return 60.0 / abs(slope)


def t60(w: Waveform, channel: int = 0, span=T20) -> float:
    """Reverberation time from a line fit over ``span`` dB, extrapolated to 60 dB."""
    times, levels = schroeder_decay(w, channel)
    return _decay_time(times, levels, span)


def edt(w: Waveform, channel: int = 0) -> float:
    """Early decay time: fit over the first 10 dB, extrapolated to 60 dB."""
    times, levels = schroeder_decay(w, channel)
    return _decay_time(times, levels, EDT_SPAN)


def c50(w: Waveform, channel: int = 0) -> float:
    """Clarity: early (< 50 ms) over late energy ratio in dB."""
    x = _channel(w, channel)
    split = int(round(0.05 * w.sample_rate))
    early = float(np.sum(x[:split] ** 2))
    late = float(np.sum(x[split:] ** 2))
    if late <= 0:
        raise InfiniteClarityError("no energy after 50 ms; C50 is unbounded")
    if early <= 0:
        raise DegenerateInputError("no energy in the first 50 ms")
    return 10.0 * math.log10(early / late)


def stft_error(pred, gt) -> float:
    """Mean absolute difference between two log-magnitude spectrograms."""
    p = np.asarray(getattr(pred, "values", pred), dtype=np.float64)
    g = np.asarray(getattr(gt, "values", gt), dtype=np.float64)
    if p.shape != g.shape:
        raise InvalidInputError(f"shape mismatch: {p.shape} vs {g.shape}")
    return float(np.mean(np.abs(p - g)))


@dataclass
class RirErrorReport:
    t60_pct: float
    c50_db: float
    edt_s: float
    stft_err: float
    excluded_channels: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "RirErrorReport":
        return cls(**{k: d[k] for k in ("t60_pct", "c50_db", "edt_s", "stft_err")},
                   excluded_channels=d.get("excluded_channels", 0))


def rir_error_report(pred: Waveform, gt: Waveform, cfg: StftConfig, t60_span=T20) -> RirErrorReport:
    """Compare a predicted RIR with the ground truth, averaging over channels.

    Channels where either side lacks enough decay (or has no late energy for
    C50) are dropped from the acoustic metrics and counted in
    ``excluded_channels``; the STFT error always uses every channel.
    """
    if pred.sample_rate != gt.sample_rate:
        raise InvalidInputError("sample-rate mismatch")
    if pred.channels != gt.channels:
        raise InvalidInputError(f"channel mismatch: {pred.channels} vs {gt.channels}")
    if pred.length != gt.length:
        n = min(pred.length, gt.length)
        pred = Waveform(pred.samples[:, :n], pred.sample_rate)
        gt = Waveform(gt.samples[:, :n], gt.sample_rate)

    t60s, c50s, edts = [], [], []
    excluded = 0
    last_error = None
    for ch in range(gt.channels):
        try:
            tg, tp = t60(gt, ch, t60_span), t60(pred, ch, t60_span)
            cg, cp = c50(gt, ch), c50(pred, ch)
            eg, ep = edt(gt, ch), edt(pred, ch)
        except DegenerateInputError as exc:
            excluded += 1
            last_error = exc
            continue
        t60s.append(abs(tp - tg) / tg * 100.0)
        c50s.append(abs(cp - cg))
        edts.append(abs(ep - eg))
    if not t60s:
        raise last_error
    err = stft_error(log_stft(pred, cfg), log_stft(gt, cfg))
    return RirErrorReport(
        float(np.mean(t60s)), float(np.mean(c50s)), float(np.mean(edts)), err, excluded
    )

"""Time-frequency transforms, phase reconstruction and auralization kernels.

Every function here is a pure function of its inputs. Waveforms are stored
channel-major as ``(C, N)`` float64 arrays and spectrograms as ``(C, F, T)``
arrays, with ``F = n_fft // 2 + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve

from .errors import InvalidInputError

SpecKind = Literal["complex", "mag", "logmag"]


@dataclass(frozen=True)
class Waveform:
    """Multi-channel audio signal.

    Parameters
    ----------
    samples : array_like
        ``(C, N)`` or ``(N,)`` real samples. A 1-D input is treated as mono.
    sample_rate : int
        Sampling rate in Hz.
    meta : dict
        Free-form metadata, e.g. the oracle's truncation flag.
    """

    samples: np.ndarray
    sample_rate: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2:
            raise InvalidInputError(f"samples must be 1-D or 2-D, got shape {x.shape}")
        if int(self.sample_rate) <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate

    def channel(self, i: int) -> np.ndarray:
        return self.samples[i]


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 512
    win_length: int = 512
    hop_length: int = 128
    epsilon_log: float = 1e-3

    def __post_init__(self):
        n = self.n_fft
        if n < 2 or n & (n - 1):
            raise InvalidInputError(f"n_fft must be a power of two, got {n}")
        if not 1 <= self.hop_length <= self.win_length <= self.n_fft:
            raise InvalidInputError(
                "need hop_length <= win_length <= n_fft, got "
                f"{self.hop_length}, {self.win_length}, {self.n_fft}"
            )
        if not self.epsilon_log > 0:
            raise InvalidInputError("epsilon_log must be positive")

    @property
    def n_freqs(self) -> int:
        return self.n_fft // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        return n_samples // self.hop_length + 1

    def istft_length(self, n_frames: int) -> int:
        return self.hop_length * (n_frames - 1)

    def to_dict(self) -> dict:
        return {
            "n_fft": self.n_fft,
            "win_length": self.win_length,
            "hop_length": self.hop_length,
            "epsilon_log": self.epsilon_log,
        }


@dataclass(frozen=True)
class Spectrogram:
    """``(C, F, T)`` spectrogram tagged with its representation."""

    values: np.ndarray
    kind: SpecKind = "logmag"

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3:
            raise InvalidInputError(f"spectrogram must be (C, F, T), got shape {v.shape}")
        if self.kind not in ("complex", "mag", "logmag"):
            raise InvalidInputError(f"unknown spectrogram kind {self.kind!r}")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_frames(self) -> int:
        return self.values.shape[2]


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window of length ``n``."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _analysis_window(cfg: StftConfig) -> np.ndarray:
    win = np.zeros(cfg.n_fft)
    lpad = (cfg.n_fft - cfg.win_length) // 2
    win[lpad : lpad + cfg.win_length] = hann_window(cfg.win_length)
    return win


def _frames(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    # x: (C, L) -> (C, T, n_fft) strided view
    view = np.lib.stride_tricks.sliding_window_view(x, n_fft, axis=-1)
    return view[:, ::hop, :]


def _stft_uncentered(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    frames = _frames(x, cfg.n_fft, cfg.hop_length) * _analysis_window(cfg)
    return np.fft.rfft(frames, axis=-1).transpose(0, 2, 1)


def _stft_centered(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    pad = cfg.n_fft // 2
    return _stft_uncentered(np.pad(x, ((0, 0), (pad, pad))), cfg)


def _overlap_add(z: np.ndarray, cfg: StftConfig, full: int):
    win = _analysis_window(cfg)
    frames = np.fft.irfft(z.transpose(0, 2, 1), n=cfg.n_fft, axis=-1) * win
    num = np.zeros((frames.shape[0], full))
    den = np.zeros(full)
    hop = cfg.hop_length
    for t in range(frames.shape[1]):
        s = t * hop
        num[:, s : s + cfg.n_fft] += frames[:, t]
        den[s : s + cfg.n_fft] += win**2
    return num, den


def _istft_ls(z: np.ndarray, cfg: StftConfig, length: int) -> np.ndarray:
    """Least-squares inverse of the centered, zero-padded STFT."""
    pad = cfg.n_fft // 2
    num, den = _overlap_add(z, cfg, length + 2 * pad)
    num_x = num[:, pad : pad + length]
    den_x = den[pad : pad + length]
    ok = den_x > 1e-10
    out = np.zeros_like(num_x)
    out[:, ok] = num_x[:, ok] / den_x[ok]
    return out


def _check_frames(cfg: StftConfig, n_frames: int, length: int) -> None:
    if cfg.n_frames(length) != n_frames:
        raise InvalidInputError(
            f"length {length} yields {cfg.n_frames(length)} frames, spectrogram has {n_frames}"
        )
    if length <= cfg.n_fft // 2:
        raise InvalidInputError("length too short for centered framing")


def stft(w: Waveform, cfg: StftConfig) -> Spectrogram:
    """Centered STFT (frames at ``t * hop``, zero padding); complex output."""
    x = w.samples
    if x.shape[1] == 0:
        raise InvalidInputError("empty waveform")
    if x.shape[1] < cfg.win_length:
        raise InvalidInputError(
            f"waveform length {x.shape[1]} shorter than win_length {cfg.win_length}"
        )
    return Spectrogram(_stft_centered(x, cfg), kind="complex")


def istft(spec: Spectrogram, cfg: StftConfig, length: int | None = None) -> np.ndarray:
    """Least-squares inverse of :func:`stft`; returns ``(C, N)`` samples."""
    if spec.kind != "complex":
        raise InvalidInputError("istft needs a complex spectrogram")
    n = cfg.istft_length(spec.n_frames) if length is None else int(length)
    _check_frames(cfg, spec.n_frames, n)
    return _istft_ls(spec.values, cfg, n)


def log_magnitude(spec: Spectrogram, eps: float = 1e-3) -> Spectrogram:
    """``ln(|z| + eps)`` elementwise."""
    if spec.kind == "logmag":
        raise InvalidInputError("spectrogram is already log-magnitude")
    return Spectrogram(np.log(np.abs(spec.values) + eps), kind="logmag")


def magnitude(spec: Spectrogram, eps: float = 1e-3) -> Spectrogram:
    """Linear magnitude of any spectrogram kind.

    Log-magnitudes are inverted as ``exp(v) - eps`` and clamped at zero.
    """
    if spec.kind == "logmag":
        return Spectrogram(np.maximum(np.exp(spec.values) - eps, 0.0), kind="mag")
    return Spectrogram(np.abs(spec.values), kind="mag")


def log_stft(w: Waveform, cfg: StftConfig) -> Spectrogram:
    return log_magnitude(stft(w, cfg), cfg.epsilon_log)


def spectral_convergence(mag: np.ndarray, target: np.ndarray) -> float:
    """``||mag - target||_F / ||target||_F`` on linear magnitudes."""
    denom = np.linalg.norm(target)
    if denom == 0:
        return 0.0 if not np.any(mag) else np.inf
    return float(np.linalg.norm(mag - target) / denom)


@dataclass
class GriffinLimResult:
    waveform: Waveform
    # inconsistency ||A - |STFT(x_k)||| / ||A|| after each projection
    history: list


def griffin_lim(
    mag: Spectrogram,
    cfg: StftConfig,
    iterations: int = 64,
    seed: int = 0,
    sample_rate: int = 16000,
    momentum: float = 0.0,
    length: int | None = None,
    return_history: bool = False,
):
    """Recover a waveform whose STFT magnitude approximates ``mag``.

    Phase starts at zero, so ``seed`` only matters for API stability; the
    algorithm is deterministic. ``momentum > 0`` enables the fast variant
    (Perraudin et al.), which is no longer monotone.

    Each iteration uses the exact least-squares inverse of :func:`stft`, so
    without momentum ``history`` (spectral convergence of the current
    estimate, measured before each projection) is nonincreasing.
    """
    if iterations < 1:
        raise InvalidInputError("iterations must be >= 1")
    if mag.kind == "complex":
        raise InvalidInputError("griffin_lim expects a magnitude spectrogram")
    a = magnitude(mag, cfg.epsilon_log).values.astype(np.float64)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("non-finite magnitude entries")
    if a.shape[1] != cfg.n_freqs:
        raise InvalidInputError(f"expected {cfg.n_freqs} frequency bins, got {a.shape[1]}")
    del seed  # zero-phase init is fully deterministic

    n_frames = a.shape[2]
    n = cfg.istft_length(n_frames) if length is None else int(length)
    _check_frames(cfg, n_frames, n)
    target_norm = np.linalg.norm(a)
    history = []
    z = a.astype(np.complex128)
    prev = z
    for _ in range(iterations):
        x = _istft_ls(z, cfg, n)
        rebuilt = _stft_centered(x, cfg)
        mod = np.abs(rebuilt)
        history.append(float(np.linalg.norm(mod - a) / target_norm) if target_norm > 0 else 0.0)
        phase = np.where(mod > 0, rebuilt / np.where(mod > 0, mod, 1.0), 1.0)
        proj = a * phase
        z = proj + momentum * (proj - prev) if momentum else proj
        prev = proj
    w = Waveform(_istft_ls(prev, cfg, n), sample_rate)
    if return_history:
        return GriffinLimResult(w, history)
    return w


SPARSE_TAPS = 32


def convolve(dry: Waveform, rir: Waveform) -> Waveform:
    """Full linear convolution of ``dry`` with ``rir``, channel by channel.

    A mono input broadcasts against a multi-channel partner. Sparse RIRs
    (a few taps) are applied by exact shift-and-add; others use FFTs.
    """
    if dry.sample_rate != rir.sample_rate:
        raise InvalidInputError(
            f"sample-rate mismatch: {dry.sample_rate} vs {rir.sample_rate}"
        )
    cd, cr = dry.channels, rir.channels
    if cd != cr and 1 not in (cd, cr):
        raise InvalidInputError(f"cannot broadcast {cd} dry channels with {cr} RIR channels")
    n_out = max(cd, cr)
    x = np.broadcast_to(dry.samples, (n_out, dry.length))
    h = np.broadcast_to(rir.samples, (n_out, rir.length))
    if dry.length == 0 or rir.length == 0:
        return Waveform(np.zeros((n_out, 0)), dry.sample_rate)
    if np.count_nonzero(h) <= SPARSE_TAPS * n_out:
        y = np.zeros((n_out, dry.length + rir.length - 1))
        for c in range(n_out):
            for k in np.flatnonzero(h[c]):
                y[c, k : k + dry.length] += h[c, k] * x[c]
    else:
        y = fftconvolve(x, h, axes=-1)
    return Waveform(y, dry.sample_rate)


def pad_or_trim(spec: Spectrogram, t_max: int) -> Spectrogram:
    """Cut to the first ``t_max`` frames or pad with the spectrogram minimum."""
    if t_max < 1:
        raise InvalidInputError("t_max must be >= 1")
    v = spec.values
    t = v.shape[2]
    if t >= t_max:
        return Spectrogram(v[:, :, :t_max].copy(), kind=spec.kind)
    fill = v.min()
    out = np.full(v.shape[:2] + (t_max,), fill, dtype=v.dtype)
    out[:, :, :t] = v
    return Spectrogram(out, kind=spec.kind)


def read_wav(path) -> Waveform:
    sr, data = wavfile.read(path)
    data = np.asarray(data)
    if data.dtype.kind == "i":
        data = data / float(np.iinfo(data.dtype).max)
    data = data.astype(np.float64)
    if data.ndim == 1:
        data = data[None, :]
    else:
        data = data.T
    return Waveform(data, sr)


def write_wav(path, w: Waveform) -> None:
    """Write 32-bit IEEE float little-endian PCM."""
    data = w.samples.T.astype("<f4")
    if w.channels == 1:
        data = data[:, 0]
    wavfile.write(path, w.sample_rate, data)

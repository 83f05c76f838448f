"""Image-source shoebox simulator used as the ground-truth RIR generator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dsp import StftConfig, Waveform, read_wav, write_wav
from .errors import InvalidInputError, ProviderError

FRACTIONAL_TAPS = 16
BINAURAL_OFFSET = 0.18


@dataclass(frozen=True)
class ShoeboxRoom:
    """Rectangular room with frequency-independent wall absorption.

    ``absorption`` is either one coefficient for all walls or six, ordered
    ``(x=0, x=Lx, y=0, y=Ly, z=0, z=Lz)``. Pressure reflection coefficients
    are ``sqrt(1 - absorption)``.
    """

    dims: tuple = (4.0, 3.0, 2.5)
    absorption: tuple = (0.3,) * 6
    speed_of_sound: float = 343.0
    max_order: int = 6

    def __post_init__(self):
        dims = tuple(float(d) for d in self.dims)
        if len(dims) != 3 or min(dims) <= 0:
            raise InvalidInputError(f"room dims must be three positive lengths, got {self.dims}")
        absorption = self.absorption
        if np.isscalar(absorption):
            absorption = (float(absorption),) * 6
        absorption = tuple(float(a) for a in absorption)
        if len(absorption) == 1:
            absorption = absorption * 6
        if len(absorption) != 6 or not all(0.0 <= a <= 1.0 for a in absorption):
            raise InvalidInputError(f"absorption must be 6 values in [0, 1], got {self.absorption}")
        if self.max_order < 0:
            raise InvalidInputError("max_order must be >= 0")
        if self.speed_of_sound <= 0:
            raise InvalidInputError("speed_of_sound must be positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "absorption", absorption)

    @property
    def reflection(self) -> np.ndarray:
        return np.sqrt(1.0 - np.asarray(self.absorption))

    def contains(self, position, strict=True) -> bool:
        p = np.asarray(position, dtype=float)
        d = np.asarray(self.dims)
        if strict:
            return bool(np.all(p > 0) and np.all(p < d))
        return bool(np.all(p >= 0) and np.all(p <= d))

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "absorption": list(self.absorption),
            "speed_of_sound": self.speed_of_sound,
            "max_order": self.max_order,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShoeboxRoom":
        return cls(
            dims=tuple(d["dims"]),
            absorption=tuple(np.atleast_1d(d.get("absorption", 0.3))),
            speed_of_sound=d.get("speed_of_sound", 343.0),
            max_order=d.get("max_order", 6),
        )


@dataclass(frozen=True)
class Pose:
    position: tuple
    yaw: float = 0.0
    pitch: float | None = None

    def __post_init__(self):
        p = tuple(float(v) for v in self.position)
        if len(p) != 3:
            raise InvalidInputError(f"position must have 3 coordinates, got {self.position}")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "yaw", float(self.yaw))

    @property
    def direction(self) -> np.ndarray:
        """Unit facing vector; yaw rotates around the up (z) axis."""
        pitch = 0.0 if self.pitch is None else self.pitch
        return np.array(
            [
                math.cos(self.yaw) * math.cos(pitch),
                math.sin(self.yaw) * math.cos(pitch),
                math.sin(pitch),
            ]
        )

    def to_dict(self) -> dict:
        d = {"position": list(self.position), "yaw": self.yaw}
        if self.pitch is not None:
            d["pitch"] = self.pitch
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(tuple(d["position"]), d.get("yaw", 0.0), d.get("pitch"))


def receiver_positions(mic: Pose, channels="mono", offset=BINAURAL_OFFSET) -> np.ndarray:
    """Receiver coordinates, ``(C, 3)``.

    ``dual_omni`` puts channel 0 on the left (+ perpendicular to yaw) and
    channel 1 on the right.
    """
    p = np.asarray(mic.position, dtype=float)
    if channels == "mono":
        return p[None, :]
    if channels == "dual_omni":
        left = np.array([-math.sin(mic.yaw), math.cos(mic.yaw), 0.0])
        return np.stack([p + 0.5 * offset * left, p - 0.5 * offset * left])
    raise InvalidInputError(f"unknown channel layout {channels!r}")


def image_sources(room: ShoeboxRoom, src, receiver):
    """Enumerate image sources up to ``room.max_order``.

    Returns ``(distances, gains, orders)`` for one receiver position, where
    ``gains`` is the product of wall reflection coefficients (spherical
    spreading is not included).
    """
    src = np.asarray(src, dtype=float)
    rcv = np.asarray(receiver, dtype=float)
    dims = np.asarray(room.dims)
    beta = room.reflection
    order = room.max_order
    n_max = order // 2 + 1
    ns = np.arange(-n_max, n_max + 1)

    # per-axis candidates: (coordinate, hits on low wall, hits on high wall)
    axes = []
    for a in range(3):
        coords, lo, hi = [], [], []
        for p in (0, 1):
            for n in ns:
                coords.append((1 - 2 * p) * src[a] + 2 * n * dims[a])
                lo.append(abs(n - p))
                hi.append(abs(n))
        axes.append((np.array(coords), np.array(lo), np.array(hi)))

    cx, lx, hx = axes[0]
    cy, ly, hy = axes[1]
    cz, lz, hz = axes[2]
    ix, iy, iz = np.meshgrid(
        np.arange(len(cx)), np.arange(len(cy)), np.arange(len(cz)), indexing="ij"
    )
    ix, iy, iz = ix.ravel(), iy.ravel(), iz.ravel()
    orders = lx[ix] + hx[ix] + ly[iy] + hy[iy] + lz[iz] + hz[iz]
    keep = orders <= order
    ix, iy, iz, orders = ix[keep], iy[keep], iz[keep], orders[keep]

    pos = np.stack([cx[ix], cy[iy], cz[iz]], axis=1)
    dist = np.linalg.norm(pos - rcv, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        gains = (
            beta[0] ** lx[ix] * beta[1] ** hx[ix]
            * beta[2] ** ly[iy] * beta[3] ** hy[iy]
            * beta[4] ** lz[iz] * beta[5] ** hz[iz]
        )
    # 0**0 must be 1 for the direct path
    gains = np.where(orders == 0, 1.0, gains)
    return dist, gains, orders


def fractional_delay_kernel(delay: np.ndarray, taps: int = FRACTIONAL_TAPS):
    """Hann-windowed sinc taps for a batch of fractional delays (in samples).

    Returns ``(start_index, weights)`` where ``weights`` has shape ``(K, taps)``
    and applies to samples ``start_index[k] + arange(taps)``.
    """
    delay = np.asarray(delay, dtype=float)
    half = taps // 2
    start = np.floor(delay).astype(np.int64) - (half - 1)
    n = start[:, None] + np.arange(taps)[None, :]
    x = n - delay[:, None]
    weights = np.sinc(x) * 0.5 * (1.0 + np.cos(np.pi * x / half))
    weights[np.abs(x) >= half] = 0.0
    return start, weights


def image_source_rir(
    room: ShoeboxRoom,
    src: Pose,
    mic: Pose,
    sample_rate: int = 16000,
    duration: float = 0.25,
    channels: str = "mono",
    offset: float = BINAURAL_OFFSET,
) -> Waveform:
    """Simulate the RIR between ``src`` and ``mic`` in ``room``.

    Each image contributes ``gain / distance`` at delay ``distance / c``,
    placed with a 16-tap windowed-sinc fractional delay. If some arrivals fall
    past ``duration`` the result carries ``meta["truncated"] = True``.
    """
    if not room.contains(src.position):
        raise InvalidInputError(f"source {src.position} is not strictly inside the room")
    if not room.contains(mic.position):
        raise InvalidInputError(f"microphone {mic.position} is not strictly inside the room")
    receivers = receiver_positions(mic, channels, offset)
    for r in receivers:
        if not room.contains(r):
            raise InvalidInputError(f"receiver {tuple(r)} is not strictly inside the room")

    n = int(round(duration * sample_rate))
    if n <= 0:
        raise InvalidInputError("duration must cover at least one sample")
    out = np.zeros((len(receivers), n))
    truncated = False
    max_delay = 0.0
    for c, rcv in enumerate(receivers):
        dist, gains, _ = image_sources(room, src.position, rcv)
        if np.any(dist < 1e-9):
            raise InvalidInputError("source and receiver coincide")
        delay = dist / room.speed_of_sound * sample_rate
        amp = gains / dist
        live = amp != 0
        delay, amp = delay[live], amp[live]
        max_delay = max(max_delay, float(delay.max(initial=0.0)))
        start, weights = fractional_delay_kernel(delay)
        idx = start[:, None] + np.arange(FRACTIONAL_TAPS)[None, :]
        vals = weights * amp[:, None]
        inside = (idx >= 0) & (idx < n)
        truncated = truncated or bool(np.any((idx >= n) & (weights != 0)))
        np.add.at(out[c], idx[inside], vals[inside])
    meta = {"truncated": truncated, "max_delay_s": max_delay / sample_rate}
    return Waveform(out, sample_rate, meta=meta)


@dataclass
class RirEntry:
    src: Pose
    mic: Pose
    waveform: Waveform | None
    split: str = "train"
    src_index: int = 0
    scene: int = 0
    wav_path: str | None = None


@dataclass
class RirDataset:
    """A list of (source, microphone, RIR) entries with a train/test split."""

    entries: list
    room: ShoeboxRoom
    sample_rate: int
    channels: str = "mono"
    stft: StftConfig | None = None
    meta: dict = field(default_factory=dict)

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]

    @property
    def train(self) -> list:
        return self.split("train")

    @property
    def test(self) -> list:
        return self.split("test")

    def __len__(self):
        return len(self.entries)

    def manifest(self) -> dict:
        return {
            "room": self.room.to_dict(),
            "sample_rate": self.sample_rate,
            "channels": self.channels,
            "stft": None if self.stft is None else self.stft.to_dict(),
            "meta": self.meta,
            "entries": [
                {
                    "src_pose": e.src.to_dict(),
                    "mic_pose": e.mic.to_dict(),
                    "wav_path": e.wav_path,
                    "split": e.split,
                    "src_index": e.src_index,
                    "scene": e.scene,
                }
                for e in self.entries
            ],
        }

    def save(self, out_dir) -> Path:
        """Write float32 WAVs and ``manifest.json`` under ``out_dir``."""
        out = Path(out_dir)
        (out / "rirs").mkdir(parents=True, exist_ok=True)
        for i, e in enumerate(self.entries):
            rel = f"rirs/{i:05d}.wav"
            write_wav(out / rel, e.waveform)
            e.wav_path = rel
        path = out / "manifest.json"
        path.write_text(json.dumps(self.manifest(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "RirDataset":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        m = json.loads(path.read_text())
        entries = []
        for e in m["entries"]:
            w = read_wav(path.parent / e["wav_path"]) if e.get("wav_path") else None
            entries.append(
                RirEntry(
                    Pose.from_dict(e["src_pose"]),
                    Pose.from_dict(e["mic_pose"]),
                    w,
                    e["split"],
                    e.get("src_index", 0),
                    e.get("scene", 0),
                    e.get("wav_path"),
                )
            )
        stft_cfg = StftConfig(**m["stft"]) if m.get("stft") else None
        return cls(
            entries,
            ShoeboxRoom.from_dict(m["room"]),
            m["sample_rate"],
            m.get("channels", "mono"),
            stft_cfg,
            m.get("meta", {}),
        )


def grid_positions(room: ShoeboxRoom, spacing: float, margin: float = 0.25, height: float = 1.5):
    """Mic positions on a horizontal lattice ``margin + k * spacing``.

    A position is kept while it stays strictly below ``L - margin`` on each
    axis, so a 4 x 3 floor with 0.5 m spacing and 0.25 m margin gives 7 x 5.
    """
    if spacing <= 0:
        raise InvalidInputError("grid spacing must be positive")
    axes = []
    for length in room.dims[:2]:
        hi = length - margin
        count = int(math.ceil((hi - margin) / spacing - 1e-9))
        axes.append(margin + spacing * np.arange(max(count, 0)))
    xs, ys = axes
    pts = [(x, y, height) for x in xs for y in ys]
    return [p for p in pts if room.contains(p)]


def generate_dataset(
    room: ShoeboxRoom,
    spacing: float = 0.5,
    orientations: Sequence[float] = (0.0, math.pi / 2, math.pi, 3 * math.pi / 2),
    sources: Sequence[Pose] = (),
    split: str = "pair",
    fraction: float = 0.9,
    seed: int = 0,
    sample_rate: int = 16000,
    duration: float = 0.25,
    channels: str = "mono",
    margin: float = 0.25,
    height: float = 1.5,
    stft_cfg: StftConfig | None = None,
    scene: int = 0,
    out_dir=None,
) -> RirDataset:
    """Simulate every (source, mic pose) pair and split it.

    ``split="pair"`` withholds individual (source, mic) pairs; ``"source"``
    withholds whole sources.
    """
    if not sources:
        raise InvalidInputError("at least one source is required")
    if not 0.0 < fraction <= 1.0:
        raise InvalidInputError("fraction must be in (0, 1]")
    positions = grid_positions(room, spacing, margin, height)
    if not positions:
        raise InvalidInputError("mic grid is empty for this room, spacing and margin")
    mics = [Pose(p, yaw) for p in positions for yaw in orientations]
    entries = []
    for si, s in enumerate(sources):
        for m in mics:
            w = image_source_rir(room, s, m, sample_rate, duration, channels)
            entries.append(RirEntry(s, m, w, "train", si, scene))

    rng = np.random.default_rng(seed)
    if split == "pair":
        order = rng.permutation(len(entries))
        n_train = int(round(fraction * len(entries)))
        for k in order[n_train:]:
            entries[k].split = "test"
    elif split == "source":
        order = rng.permutation(len(sources))
        n_train = int(round(fraction * len(sources)))
        held = set(int(i) for i in order[n_train:])
        for e in entries:
            if e.src_index in held:
                e.split = "test"
    else:
        raise InvalidInputError(f"unknown split mode {split!r}")

    ds = RirDataset(
        entries,
        room,
        sample_rate,
        channels,
        stft_cfg,
        meta={"split": split, "fraction": fraction, "seed": seed, "spacing": spacing,
              "margin": margin, "height": height, "duration": duration},
    )
    if out_dir is not None:
        ds.save(out_dir)
    return ds


@dataclass
class LoudnessMap:
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray  # (len(ys), len(xs))

    def to_csv(self, path) -> None:
        lines = ["x,y,energy"]
        for j, y in enumerate(self.ys):
            for i, x in enumerate(self.xs):
                lines.append(f"{x:.6f},{y:.6f},{self.values[j, i]:.12e}")
        Path(path).write_text("\n".join(lines) + "\n")

    def to_png(self, path) -> None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(5, 4))
        db = 10 * np.log10(np.maximum(self.values, 1e-20))
        im = ax.imshow(
            db,
            origin="lower",
            cmap="viridis",
            extent=(self.xs[0], self.xs[-1], self.ys[0], self.ys[-1]),
        )
        fig.colorbar(im, ax=ax, label="energy (dB)")
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
        fig.savefig(path, dpi=100, bbox_inches="tight")
        plt.close(fig)


def loudness_map(
    rir_provider: Callable[[Pose, Pose], Waveform],
    src: Pose,
    xy_resolution: float,
    heights: Sequence[float],
    extent,
    yaw: float = 0.0,
) -> LoudnessMap:
    """Mean RIR energy over ``heights`` on an xy lattice of cell centers.

    ``extent`` is ``((x0, x1), (y0, y1))``. The provider can be the oracle or
    a trained model; both take ``(src, mic)`` poses.
    """
    if not len(heights):
        raise InvalidInputError("heights must be nonempty")
    (x0, x1), (y0, y1) = extent
    nx = max(int(round((x1 - x0) / xy_resolution)), 1)
    ny = max(int(round((y1 - y0) / xy_resolution)), 1)
    xs = x0 + xy_resolution * (np.arange(nx) + 0.5)
    ys = y0 + xy_resolution * (np.arange(ny) + 0.5)
    values = np.zeros((ny, nx))
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            acc = 0.0
            for h in heights:
                mic = Pose((x, y, h), yaw)
                try:
                    w = rir_provider(src, mic)
                except Exception as exc:
                    raise ProviderError(
                        f"RIR provider failed at cell ({x:.3f}, {y:.3f}, {h:.3f}): {exc}",
                        cell=(float(x), float(y), float(h)),
                    ) from exc
                acc += float(np.sum(np.asarray(w.samples) ** 2))
            values[j, i] = acc / len(heights)
    return LoudnessMap(xs, ys, values)


def oracle_provider(room: ShoeboxRoom, sample_rate=16000, duration=0.25, channels="mono"):
    def provide(src: Pose, mic: Pose) -> Waveform:
        return image_source_rir(room, src, mic, sample_rate, duration, channels)

    return provide

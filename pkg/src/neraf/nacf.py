"""Neural acoustic field: grid-feature encoder, fused query MLP, per-channel heads."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .dsp import Spectrogram, StftConfig, Waveform, griffin_lim
from .encodings import (
    EncodingConfig,
    PoseBounds,
    normalize_pose,
    positional_encode,
    spherical_harmonic_encode,
    yaw_to_direction,
)
from .errors import InvalidInputError

# which direction encodings each field parametrization consumes
PARAMETRIZATIONS = {
    "binaural": {"mic_dir": True, "src_dir": False},
    "monaural": {"mic_dir": False, "src_dir": True},
    "full": {"mic_dir": True, "src_dir": True},
    "omni": {"mic_dir": False, "src_dir": False},
}


@dataclass
class NacfConfig:
    head_count: int = 2
    freq_bins: int = 257
    width: int = 512
    block1_layers: int = 5
    head_layers: int = 0
    leaky_slope: float = 0.1
    output_range: float = 10.0
    feature_dim: int = 256
    grid_resolution: int = 32
    extractor_channels: tuple = (16, 32, 64, 128, 256)
    parametrization: str = "binaural"
    grid_mode: str = "grid"  # "grid" | "zero" | "none"
    encoding: EncodingConfig = field(default_factory=EncodingConfig)

    def __post_init__(self):
        if self.head_count < 1:
            raise InvalidInputError("head_count must be >= 1")
        if self.parametrization not in PARAMETRIZATIONS:
            raise InvalidInputError(f"unknown parametrization {self.parametrization!r}")
        if self.grid_mode not in ("grid", "zero", "none"):
            raise InvalidInputError(f"unknown grid_mode {self.grid_mode!r}")
        if isinstance(self.encoding, dict):
            self.encoding = EncodingConfig(**self.encoding)
        self.extractor_channels = tuple(self.extractor_channels)

    @property
    def uses_mic_dir(self) -> bool:
        return PARAMETRIZATIONS[self.parametrization]["mic_dir"]

    @property
    def uses_src_dir(self) -> bool:
        return PARAMETRIZATIONS[self.parametrization]["src_dir"]

    @property
    def uses_grid(self) -> bool:
        return self.grid_mode != "none"

    def input_dim(self) -> int:
        enc = self.encoding
        dim = 2 * enc.pe_dim(3) + enc.pe_dim(1)
        dim += enc.sh_dim * (int(self.uses_mic_dir) + int(self.uses_src_dir))
        if self.uses_grid:
            dim += self.feature_dim
        return dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extractor_channels"] = list(self.extractor_channels)
        d["encoding"] = self.encoding.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NacfConfig":
        return cls(**d)


class GridEncoder(nn.Module):
    """Strided 3D conv stages followed by global average pooling and a linear map."""

    def __init__(self, channels=(16, 32, 64, 128, 256), feature_dim=256, leaky_slope=0.1, in_channels=7):
        super().__init__()
        convs = []
        c_in = in_channels
        for c in channels:
            convs.append(nn.Conv3d(c_in, c, kernel_size=3, stride=2, padding=1))
            c_in = c
        self.convs = nn.ModuleList(convs)
        self.proj = nn.Linear(c_in, feature_dim)
        self.leaky_slope = leaky_slope

    def forward(self, grid: torch.Tensor) -> torch.Tensor:
        # grid: (B, 7, S, S, S) -> (B, feature_dim)
        h = grid
        for conv in self.convs:
            h = nn.functional.leaky_relu(conv(h), self.leaky_slope)
        h = h.mean(dim=(2, 3, 4))
        return self.proj(h)


class NeuralAcousticField(nn.Module):
    """Maps encoded (mic, source, time) queries plus scene features to log-magnitudes.

    Block 1 is ``block1_layers`` linear layers with leaky ReLU producing a
    ``width``-dimensional embedding; each output channel owns a head ending
    in ``output_range * tanh``.
    """

    def __init__(self, cfg: NacfConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(seed)
        self.encoder = (
            GridEncoder(cfg.extractor_channels, cfg.feature_dim, cfg.leaky_slope)
            if cfg.uses_grid
            else None
        )
        dims = [cfg.input_dim()] + [cfg.width] * cfg.block1_layers
        self.block1 = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.heads = nn.ModuleList()
        for _ in range(cfg.head_count):
            layers = [nn.Linear(cfg.width, cfg.width) for _ in range(cfg.head_layers)]
            layers.append(nn.Linear(cfg.width, cfg.freq_bins))
            self.heads.append(nn.ModuleList(layers))
        self._init(gen)

    def _init(self, gen):
        slope = self.cfg.leaky_slope
        with torch.no_grad():
            for m in self.modules():
                if isinstance(m, (nn.Linear, nn.Conv3d)):
                    fan_in = m.weight[0].numel()
                    gain = math.sqrt(2.0 / (1.0 + slope**2))
                    bound = gain * math.sqrt(3.0 / fan_in)
                    m.weight.uniform_(-bound, bound, generator=gen)
                    b = 1.0 / math.sqrt(fan_in)
                    m.bias.uniform_(-b, b, generator=gen)
            for head in self.heads:
                head[-1].weight.mul_(0.1)
                head[-1].bias.zero_()

    def extract_features(self, grid) -> torch.Tensor:
        """Feature vector(s) for one grid ``(7, S, S, S)`` or a batch of grids."""
        if self.encoder is None:
            raise InvalidInputError("this field is configured without a grid")
        g = torch.as_tensor(grid, dtype=self.block1[0].weight.dtype)
        single = g.dim() == 4
        if single:
            g = g[None]
        if g.dim() != 5 or g.shape[1] != 7:
            raise InvalidInputError(f"grid must be (7, S, S, S), got {tuple(g.shape)}")
        S = self.cfg.grid_resolution
        if tuple(g.shape[2:]) != (S, S, S):
            raise InvalidInputError(f"grid resolution {tuple(g.shape[2:])} does not match {S}")
        if self.cfg.grid_mode == "zero":
            g = torch.zeros_like(g)
        f = self.encoder(g)
        return f[0] if single else f

    def encode_queries(self, q: "QueryBatch") -> torch.Tensor:
        cfg, enc = self.cfg, self.cfg.encoding
        dtype = self.block1[0].weight.dtype
        parts = [positional_encode(q.mic_pos.to(dtype), enc)]
        if cfg.uses_mic_dir:
            if q.mic_dir is None:
                raise InvalidInputError("this parametrization needs microphone directions")
            parts.append(spherical_harmonic_encode(q.mic_dir.to(dtype), enc.sh_levels))
        parts.append(positional_encode(q.src_pos.to(dtype), enc))
        if cfg.uses_src_dir:
            if q.src_dir is None:
                raise InvalidInputError("this parametrization needs source directions")
            parts.append(spherical_harmonic_encode(q.src_dir.to(dtype), enc.sh_levels))
        parts.append(positional_encode(q.t.to(dtype)[..., None], enc))
        return torch.cat(parts, dim=-1)

    def forward(self, q: "QueryBatch", features: torch.Tensor | None = None, row_exact: bool = False) -> torch.Tensor:
        """``(B, C, F)`` log-magnitudes in ``[-output_range, output_range]``.

        With ``row_exact`` every row goes through its own matrix product, so a
        query's output does not depend on what else is in the batch (BLAS
        picks different kernels for different batch sizes otherwise).
        """
        lin = _rowwise if row_exact else (lambda layer, x: layer(x))
        h = self.encode_queries(q)
        if self.cfg.uses_grid:
            if features is None:
                raise InvalidInputError("grid features are required")
            feats = features.to(h.dtype)
            if feats.dim() == 1:
                feats = feats.expand(h.shape[0], -1)
            h = torch.cat([feats, h], dim=-1)
        slope = self.cfg.leaky_slope
        for layer in self.block1:
            h = nn.functional.leaky_relu(lin(layer, h), slope)
        outs = []
        for head in self.heads:
            o = h
            for layer in head[:-1]:
                o = nn.functional.leaky_relu(lin(layer, o), slope)
            outs.append(self.cfg.output_range * torch.tanh(lin(head[-1], o)))
        return torch.stack(outs, dim=1)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def _rowwise(layer: nn.Linear, x: torch.Tensor) -> torch.Tensor:
    w = layer.weight.T.unsqueeze(0).expand(x.shape[0], -1, -1)
    return torch.bmm(x[:, None, :], w)[:, 0] + layer.bias


def analytic_parameter_count(cfg: NacfConfig) -> int:
    """Closed-form parameter count of :class:`NeuralAcousticField` for ``cfg``."""
    n = 0
    if cfg.uses_grid:
        c_in = 7
        for c in cfg.extractor_channels:
            n += c * c_in * 27 + c
            c_in = c
        n += c_in * cfg.feature_dim + cfg.feature_dim
    d = cfg.input_dim()
    for _ in range(cfg.block1_layers):
        n += d * cfg.width + cfg.width
        d = cfg.width
    head = cfg.head_layers * (cfg.width * cfg.width + cfg.width) + cfg.width * cfg.freq_bins + cfg.freq_bins
    return n + cfg.head_count * head


@dataclass
class QueryBatch:
    """Encoded-ready acoustic queries (positions already normalized)."""

    mic_pos: torch.Tensor
    src_pos: torch.Tensor
    t: torch.Tensor
    mic_dir: torch.Tensor | None = None
    src_dir: torch.Tensor | None = None

    def __len__(self):
        return self.mic_pos.shape[0]

    def index(self, idx) -> "QueryBatch":
        pick = lambda x: None if x is None else x[idx]
        return QueryBatch(pick(self.mic_pos), pick(self.src_pos), pick(self.t), pick(self.mic_dir), pick(self.src_dir))


def pose_queries(mics, srcs, times, bounds: PoseBounds, dtype=torch.float32) -> QueryBatch:
    """Build a :class:`QueryBatch` from pose lists and normalized times."""
    mic_pos = np.stack([normalize_pose(m.position, bounds) for m in mics])
    src_pos = np.stack([normalize_pose(s.position, bounds) for s in srcs])
    mic_yaw = torch.as_tensor([m.yaw for m in mics], dtype=torch.float64)
    src_yaw = torch.as_tensor([s.yaw for s in srcs], dtype=torch.float64)
    return QueryBatch(
        torch.as_tensor(mic_pos, dtype=dtype),
        torch.as_tensor(src_pos, dtype=dtype),
        torch.as_tensor(np.asarray(times), dtype=dtype),
        yaw_to_direction(mic_yaw).to(dtype),
        yaw_to_direction(src_yaw).to(dtype),
    )


def time_grid(T: int) -> np.ndarray:
    """Normalized time-bin queries ``t_i = i / (T - 1)`` (zero when ``T == 1``)."""
    if T < 1:
        raise InvalidInputError("T must be >= 1")
    return np.zeros(1) if T == 1 else np.arange(T) / (T - 1)


def render_full_stft(model: NeuralAcousticField, features, mic, src, T: int, bounds: PoseBounds, t_max: int | None = None):
    """Query every time bin and stack the columns into a ``(C, F, T)`` log-magnitude.

    ``t_max`` is the time-normalization length used in training (defaults
    to ``T``); the first ``T`` of its bins are rendered.
    """
    t_max = T if t_max is None else t_max
    times = time_grid(t_max)[:T]
    dtype = next(model.parameters()).dtype
    q = pose_queries([mic] * T, [src] * T, times, bounds, dtype)
    with torch.no_grad():
        out = model(q, features, row_exact=True)  # (T, C, F)
    return Spectrogram(out.permute(1, 2, 0).cpu().numpy().astype(np.float64), kind="logmag")


def render_rir(
    model: NeuralAcousticField,
    features,
    mic,
    src,
    cfg: StftConfig,
    T: int,
    bounds: PoseBounds,
    gl_iterations: int = 64,
    sample_rate: int = 16000,
    length: int | None = None,
    t_max: int | None = None,
    seed: int = 0,
    momentum: float = 0.99,
) -> Waveform:
    """Render the log-magnitude STFT and invert it with Griffin-Lim, per channel."""
    spec = render_full_stft(model, features, mic, src, T, bounds, t_max)
    return griffin_lim(spec, cfg, gl_iterations, seed, sample_rate, momentum=momentum, length=length)

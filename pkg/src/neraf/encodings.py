"""Query embeddings: positional encoding, spherical harmonics, pose normalization."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidInputError


@dataclass(frozen=True)
class EncodingConfig:
    pe_frequencies: int = 10
    pe_max_exponent: float = 8.0
    sh_levels: int = 4
    include_raw: bool = True

    def __post_init__(self):
        if self.pe_frequencies < 1:
            raise InvalidInputError("pe_frequencies must be >= 1")
        if not 1 <= self.sh_levels <= 4:
            raise InvalidInputError("sh_levels must be in [1, 4]")

    def pe_dim(self, k: int) -> int:
        return k * 2 * self.pe_frequencies + (k if self.include_raw else 0)

    @property
    def sh_dim(self) -> int:
        return self.sh_levels**2

    def to_dict(self) -> dict:
        return {
            "pe_frequencies": self.pe_frequencies,
            "pe_max_exponent": self.pe_max_exponent,
            "sh_levels": self.sh_levels,
            "include_raw": self.include_raw,
        }


@dataclass(frozen=True)
class PoseBounds:
    """Per-axis extent of the training poses, widened by ``margin`` meters."""

    lower: tuple
    upper: tuple
    margin: float = 1.0

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float) - self.margin
        hi = np.asarray(self.upper, dtype=float) + self.margin
        if lo.shape != hi.shape:
            raise InvalidInputError("bounds must have matching dimensions")
        if np.any(hi <= lo):
            raise InvalidInputError(f"degenerate pose bounds: lower {lo}, upper {hi}")

    @classmethod
    def from_positions(cls, positions, margin: float = 1.0) -> "PoseBounds":
        p = np.asarray(positions, dtype=float).reshape(-1, 3)
        return cls(tuple(p.min(axis=0)), tuple(p.max(axis=0)), margin)

    @property
    def low(self) -> np.ndarray:
        return np.asarray(self.lower, dtype=float) - self.margin

    @property
    def high(self) -> np.ndarray:
        return np.asarray(self.upper, dtype=float) + self.margin

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "margin": self.margin}


def normalize_pose(position, bounds: PoseBounds) -> np.ndarray:
    """Affine map of ``position`` so the widened bounds become ``[0, 1]``."""
    p = np.asarray(getattr(position, "position", position), dtype=float)
    lo, hi = bounds.low, bounds.high
    return (p - lo) / (hi - lo)


def pe_frequencies(cfg: EncodingConfig) -> torch.Tensor:
    """Angular frequencies ``2**f * pi`` with ``f`` evenly spaced on ``[0, e]``."""
    exps = torch.linspace(0.0, float(cfg.pe_max_exponent), cfg.pe_frequencies, dtype=torch.float64)
    return (2.0**exps) * math.pi


def positional_encode(v, cfg: EncodingConfig = EncodingConfig()) -> torch.Tensor:
    """Multi-scale sin/cos encoding of the last axis of ``v``.

    For each component the output holds ``sin, cos`` pairs per frequency,
    preceded by the raw components when ``cfg.include_raw`` is set.
    """
    x = torch.as_tensor(v)
    if not x.is_floating_point():
        x = x.to(torch.float64)
    freqs = pe_frequencies(cfg).to(x.dtype)
    scaled = x[..., :, None] * freqs  # (..., k, N)
    enc = torch.stack([torch.sin(scaled), torch.cos(scaled)], dim=-1)  # (..., k, N, 2)
    enc = enc.reshape(*x.shape[:-1], -1)
    if cfg.include_raw:
        enc = torch.cat([x, enc], dim=-1)
    return enc


# real spherical harmonics normalization constants
_C0 = 0.28209479177387814
_C1 = 0.4886025119029199
_C2 = (1.0925484305920792, 0.31539156525252005, 0.5462742152960396)
_C3 = (0.5900435899266435, 2.890611442640554, 0.4570457994644658, 0.3731763325901154, 1.445305721320277)


def spherical_harmonic_encode(d, levels: int = 4) -> torch.Tensor:
    """Real spherical harmonics ``Y_l^m`` for ``l < levels`` of unit vectors.

    Ordering is ``l`` ascending and ``m`` from ``-l`` to ``l``. Inputs within
    1e-3 of unit length are renormalized with a warning; anything further off
    is rejected.
    """
    if not 1 <= levels <= 4:
        raise InvalidInputError("levels must be in [1, 4]")
    d = torch.as_tensor(d)
    if not d.is_floating_point():
        d = d.to(torch.float64)
    norm = torch.linalg.vector_norm(d, dim=-1, keepdim=True)
    dev = (norm - 1.0).abs()
    if torch.any(dev > 1e-3):
        raise InvalidInputError("direction vectors must have unit length")
    if torch.any(dev > 1e-6):
        warnings.warn("renormalizing near-unit direction vectors", stacklevel=2)
        d = d / norm
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    out = [torch.full_like(x, _C0)]
    if levels > 1:
        out += [_C1 * y, _C1 * z, _C1 * x]
    if levels > 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            _C2[0] * x * y,
            _C2[0] * y * z,
            _C2[1] * (3.0 * zz - 1.0),
            _C2[0] * x * z,
            _C2[2] * (xx - yy),
        ]
    if levels > 3:
        out += [
            _C3[0] * y * (3.0 * xx - yy),
            _C3[1] * x * y * z,
            _C3[2] * y * (5.0 * zz - 1.0),
            _C3[3] * z * (5.0 * zz - 3.0),
            _C3[2] * x * (5.0 * zz - 1.0),
            _C3[4] * z * (xx - yy),
            _C3[0] * x * (xx - 3.0 * yy),
        ]
    return torch.stack(out, dim=-1)


def yaw_to_direction(yaw) -> torch.Tensor:
    """Lift yaw angles (radians around the up axis) to horizontal unit vectors."""
    yaw = torch.as_tensor(yaw)
    if not yaw.is_floating_point():
        yaw = yaw.to(torch.float64)
    return torch.stack([torch.cos(yaw), torch.sin(yaw), torch.zeros_like(yaw)], dim=-1)

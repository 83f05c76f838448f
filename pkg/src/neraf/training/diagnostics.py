"""Finite-difference check of the full acoustic-field objective."""

from __future__ import annotations

import torch

from ..encodings import EncodingConfig
from ..nacf import NacfConfig, NeuralAcousticField, QueryBatch
from .losses import LossWeights, audio_loss
from .optim import gradient_check, max_relative_error


def reduced_config(width: int = 16, feature_dim: int = 8, resolution: int = 8, freq_bins: int = 9) -> NacfConfig:
    return NacfConfig(
        head_count=2,
        freq_bins=freq_bins,
        width=width,
        block1_layers=2,
        head_layers=1,
        feature_dim=feature_dim,
        grid_resolution=resolution,
        extractor_channels=(4, 8),
        encoding=EncodingConfig(pe_frequencies=4, pe_max_exponent=3),
    )


def nacf_gradient_check(
    seed: int = 0,
    cfg: NacfConfig | None = None,
    n_stfts: int = 2,
    n_frames: int = 5,
    weights: LossWeights | None = None,
    h: float = 1e-5,
    max_entries=None,
) -> dict:
    """Per-tensor max relative error between autograd and central differences.

    The loss is the audio objective (all three terms by default) of a
    double-precision field on random grids, queries and targets, evaluated
    over complete STFTs so the energy-decay term is exercised.
    """
    cfg = cfg or reduced_config()
    weights = weights or LossWeights.plus_plus()
    gen = torch.Generator().manual_seed(seed)
    model = NeuralAcousticField(cfg, seed=seed).double()
    S = cfg.grid_resolution
    grid = torch.rand(7, S, S, S, generator=gen, dtype=torch.float64)
    B = n_stfts * n_frames
    mic = torch.rand(n_stfts, 3, generator=gen, dtype=torch.float64).repeat_interleave(n_frames, 0)
    src = torch.rand(n_stfts, 3, generator=gen, dtype=torch.float64).repeat_interleave(n_frames, 0)
    yaw = torch.rand(n_stfts, generator=gen, dtype=torch.float64).repeat_interleave(n_frames) * 6.28
    d = torch.stack([torch.cos(yaw), torch.sin(yaw), torch.zeros_like(yaw)], -1)
    t = torch.linspace(0, 1, n_frames, dtype=torch.float64).repeat(n_stfts)
    q = QueryBatch(mic, src, t, d, d)
    gt = torch.randn(n_stfts, cfg.head_count, cfg.freq_bins, n_frames, generator=gen, dtype=torch.float64) - 2.0

    def loss_fn():
        feats = model.extract_features(grid) if cfg.uses_grid else None
        pred = model(q, feats).reshape(n_stfts, n_frames, cfg.head_count, cfg.freq_bins).permute(0, 2, 3, 1)
        total, _ = audio_loss(pred, gt, weights, full_stft=True)
        return total

    params = dict(model.named_parameters())
    report = gradient_check(loss_fn, params, h=h, max_entries=max_entries)
    return {"per_tensor": report, "max_relative_error": max_relative_error(report), "parameters": sum(p.numel() for p in params.values()), "batch": B}

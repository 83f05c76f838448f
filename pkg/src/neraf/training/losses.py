"""Audio and vision losses.

Spectrograms reach these functions either as log-magnitudes
``ln(|s| + eps)`` (what the acoustic field predicts) or as linear
magnitudes. All reductions are means over elements.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch

from ..errors import DegenerateInputError, InvalidInputError


@dataclass
class LossWeights:
    lambda_A: float = 1e-3
    lambda_SC: float = 0.1
    lambda_SL: float = 1.0
    lambda_ED: float = 0.0
    eps: float = 1e-3
    spectral_loss_norm: str = "mse"

    def __post_init__(self):
        for name in ("lambda_A", "lambda_SC", "lambda_SL", "lambda_ED"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be nonnegative")
        if self.spectral_loss_norm not in ("mse", "l1"):
            raise InvalidInputError("spectral_loss_norm must be 'mse' or 'l1'")

    @classmethod
    def plus_plus(cls) -> "LossWeights":
        """Weights of the energy-decay ("++") variant."""
        return cls(lambda_SC=3.0, lambda_SL=1.5, lambda_ED=5.0)

    def to_dict(self) -> dict:
        return asdict(self)


def _check_shapes(pred, gt):
    if pred.shape != gt.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")


def to_magnitude(logmag: torch.Tensor, eps: float = 1e-3) -> torch.Tensor:
    """Invert ``ln(|s| + eps)``, clamping at zero."""
    return torch.clamp(torch.exp(logmag) - eps, min=0.0)


def spectral_loss(pred, gt, eps: float = 1e-3, norm: str = "mse", log_input: bool = False):
    """Mean squared (or absolute) difference of ``ln(|s| + eps)``.

    With ``log_input=True`` both arguments already hold ``ln(|s| + eps)`` and
    are compared directly.
    """
    _check_shapes(pred, gt)
    if log_input:
        lp, lg = pred, gt
    else:
        lp, lg = torch.log(pred.abs() + eps), torch.log(gt.abs() + eps)
    diff = lp - lg
    if norm == "mse":
        return torch.mean(diff * diff)
    if norm == "l1":
        return torch.mean(diff.abs())
    raise InvalidInputError(f"unknown norm {norm!r}")


def spectral_convergence_loss(pred, gt):
    """``|| |gt| - |pred| ||_F / || |gt| ||_F`` on linear magnitudes."""
    _check_shapes(pred, gt)
    denom = torch.linalg.vector_norm(gt.abs())
    if denom == 0:
        raise DegenerateInputError("ground-truth magnitude has zero norm")
    return torch.linalg.vector_norm(gt.abs() - pred.abs()) / denom


def energy_curves(mag: torch.Tensor):
    """Per-window energy ``M'`` (sum over frequency of ``M^2``) and its tail sums ``M''``.

    ``mag`` is ``(..., F, T)``; both outputs are ``(..., T)``.
    """
    energy = (mag * mag).sum(dim=-2)
    tail = torch.flip(torch.cumsum(torch.flip(energy, dims=(-1,)), dim=-1), dims=(-1,))
    return energy, tail


def energy_decay_loss(pred, gt, floor: float = 1e-12):
    """Mean L1 distance between ``log10`` tail-energy curves of two magnitude STFTs."""
    _check_shapes(pred, gt)
    _, tail_p = energy_curves(pred)
    _, tail_g = energy_curves(gt)
    lp = torch.log10(torch.clamp(tail_p, min=floor))
    lg = torch.log10(torch.clamp(tail_g, min=floor))
    return torch.mean((lg - lp).abs())


def audio_loss(pred_log, gt_log, weights: LossWeights, full_stft: bool = False):
    """Weighted audio objective on log-magnitude predictions.

    Returns ``(total, components)``. The energy-decay term needs complete
    STFTs (time on the last axis) and is only evaluated with
    ``full_stft=True``.
    """
    _check_shapes(pred_log, gt_log)
    mag_p = to_magnitude(pred_log, weights.eps)
    mag_g = to_magnitude(gt_log, weights.eps)
    sl = spectral_loss(pred_log, gt_log, weights.eps, weights.spectral_loss_norm, log_input=True)
    sc = spectral_convergence_loss(mag_p, mag_g)
    total = weights.lambda_SC * sc + weights.lambda_SL * sl
    parts = {"sc": sc.detach().item(), "sl": sl.detach().item()}
    if weights.lambda_ED > 0:
        if not full_stft:
            raise InvalidInputError("the energy-decay term needs full-STFT batches")
        ed = energy_decay_loss(mag_p, mag_g)
        total = total + weights.lambda_ED * ed
        parts["ed"] = ed.detach().item()
    parts["audio"] = total.detach().item()
    return total, parts


def vision_loss(pred_rgb, gt_rgb):
    """Pixel MSE."""
    _check_shapes(pred_rgb, gt_rgb)
    d = pred_rgb - gt_rgb
    return torch.mean(d * d)


def total_loss(vision, audio, lambda_A: float = 1e-3):
    return vision + lambda_A * audio

"""Optimization loop for the acoustic field (separate, joint and multi-scene modes)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch

from ..errors import InvalidInputError
from ..nacf import NeuralAcousticField, time_grid
from ..scenefield import (
    RadianceField,
    VoxelGrid,
    render_rays,
    sample_voxels,
    voxel_view_directions,
)
from .data import QueryTable
from .losses import LossWeights, audio_loss, total_loss, vision_loss
from .optim import Adam, exponential_lr, gradients

MODES = ("separate", "joint", "multi_scene")


@dataclass
class TrainConfig:
    iterations: int = 5000
    nerf_warmup: int = 2000
    grid_batch: int = 4096
    audio_batch: int = 2048
    ed_batch: int = 34
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-15
    lr_start: float = 1e-4
    lr_end: float = 1e-8
    seed: int = 0
    mode: str = "separate"
    log_interval: int = 100
    eval_interval: int = 0
    vision_rays: int = 512
    vision_samples: int = 32
    grid_flow_through: bool = False
    gl_iterations: int = 64

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.iterations < 1:
            raise InvalidInputError("iterations must be >= 1")
        if self.mode == "joint" and not 0 <= self.nerf_warmup < self.iterations:
            raise InvalidInputError("nerf_warmup must be smaller than iterations")
        if not 0 < self.lr_end <= self.lr_start:
            raise InvalidInputError("need 0 < lr_end <= lr_start")
        for name in ("grid_batch", "audio_batch", "ed_batch", "vision_rays", "vision_samples"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class JointScene:
    """A trainable radiance field together with the field that renders its training views."""

    field: torch.nn.Module
    target: RadianceField
    grid: VoxelGrid
    cursor: int = 0


def _scene_tensor(grids) -> torch.Tensor:
    return torch.stack([torch.from_numpy(g.channels_first()) for g in grids])


def _refresh(scene: JointScene, cfg: TrainConfig):
    """Update the next voxel batch of a joint scene's grid.

    Returns ``(idx, rgb, alpha)`` of the refreshed voxels; the tensors carry
    gradients only when flow-through is enabled.
    """
    grid = scene.grid
    n = grid.n_voxels
    idx = (scene.cursor + np.arange(min(cfg.grid_batch, n))) % n
    dirs = voxel_view_directions(grid.n_directions)
    centers = torch.as_tensor(grid.centers(idx), dtype=torch.float32)
    with torch.set_grad_enabled(cfg.grid_flow_through):
        rgb, alpha = sample_voxels(scene.field, centers, torch.as_tensor(dirs, dtype=torch.float32), grid.delta)
    flat = grid.flat()
    flat[idx, 0:3] = rgb.detach().numpy()
    flat[idx, 3] = alpha.detach().numpy()
    scene.cursor = int((scene.cursor + cfg.grid_batch) % n)
    return idx, rgb, alpha


def _vision_step(scene: JointScene, cfg: TrainConfig, gen: torch.Generator):
    """Pixel MSE of the trainable field against renders of the target field."""
    # rays start inside the room (or anywhere in the cube) and look in random directions
    if hasattr(scene.target, "to_unit"):
        lo = torch.as_tensor(scene.target.to_unit(np.zeros(3)))
        hi = torch.as_tensor(scene.target.to_unit(np.asarray(scene.target.room.dims)))
    else:
        lo, hi = torch.zeros(3, dtype=torch.float64), torch.ones(3, dtype=torch.float64)
    u = torch.rand(cfg.vision_rays, 3, generator=gen, dtype=torch.float64)
    origins = lo + (hi - lo) * u
    d = torch.randn(cfg.vision_rays, 3, generator=gen, dtype=torch.float64)
    d = d / torch.linalg.vector_norm(d, dim=-1, keepdim=True)
    with torch.no_grad():
        gt, _ = render_rays(scene.target, origins, d, 0.0, 0.75, cfg.vision_samples)
    o32, d32 = origins.to(torch.float32), d.to(torch.float32)
    pred, _ = render_rays(scene.field, o32, d32, 0.0, 0.75, cfg.vision_samples)
    return vision_loss(pred, gt.to(pred.dtype))


@dataclass
class TrainState:
    model: NeuralAcousticField
    optimizer: Adam
    step: int
    grids: list
    fields: list
    log: list


def named_parameters(model: NeuralAcousticField, fields=()) -> dict:
    params = {f"nacf.{n}": p for n, p in model.named_parameters()}
    for k, f in enumerate(fields):
        params.update({f"field{k}.{n}": p for n, p in f.named_parameters()})
    return params


def train_loop(
    model: NeuralAcousticField,
    table: QueryTable,
    targets: np.ndarray,
    cfg: TrainConfig,
    weights: LossWeights,
    grids=None,
    joint_scenes=None,
    eval_fn=None,
    log_fn=None,
) -> TrainState:
    """Run ``cfg.iterations`` optimizer steps.

    ``grids`` holds one pre-built :class:`VoxelGrid` per scene (separate and
    multi-scene modes); ``joint_scenes`` holds :class:`JointScene` objects in
    joint mode. ``eval_fn(step)`` may return a metrics dict that is merged
    into the log record; ``log_fn(record)`` receives each record.
    """
    n = len(table)
    if n == 0:
        raise InvalidInputError("training split is empty")
    Y = torch.as_tensor(np.asarray(targets, dtype=np.float32))
    if Y.dim() != 4 or Y.shape[0] != n:
        raise InvalidInputError(f"targets must be (n, C, F, T) with n={n}, got {tuple(Y.shape)}")
    _, C, F, T = Y.shape
    if C != model.cfg.head_count or F != model.cfg.freq_bins:
        raise InvalidInputError(
            f"targets have {C} channels x {F} bins, model expects {model.cfg.head_count} x {model.cfg.freq_bins}"
        )

    joint = cfg.mode == "joint"
    n_scenes = int(table.scene.max()) + 1
    if joint:
        if not joint_scenes:
            raise InvalidInputError("joint mode needs trainable scenes")
        scene_grids = [s.grid for s in joint_scenes]
        fields = [s.field for s in joint_scenes]
    else:
        scene_grids = list(grids or [])
        fields = []
    if model.cfg.uses_grid:
        if len(scene_grids) < n_scenes:
            raise InvalidInputError(f"queries reference {n_scenes} scenes but {len(scene_grids)} grids were given")
        if cfg.mode == "separate" and len(scene_grids) != 1:
            raise InvalidInputError("separate mode takes exactly one grid; use multi_scene")
        for g in scene_grids:
            if g.resolution != model.cfg.grid_resolution:
                raise InvalidInputError(
                    f"grid resolution {g.resolution} does not match model resolution {model.cfg.grid_resolution}"
                )

    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    params = named_parameters(model, fields)
    opt = Adam(params, (cfg.beta1, cfg.beta2), cfg.adam_eps)
    times = torch.as_tensor(time_grid(T), dtype=table.dtype)

    full = weights.lambda_ED > 0
    n_units = n if full else n * T
    batch = min(cfg.ed_batch if full else cfg.audio_batch, n_units)
    order = torch.randperm(n_units, generator=gen)
    cursor = 0
    grid_tensor = _scene_tensor(scene_grids) if (model.cfg.uses_grid and not joint) else None

    log = []
    for step in range(cfg.iterations):
        lr = exponential_lr(step, cfg.iterations, cfg.lr_start, cfg.lr_end)
        record = {"step": step, "lr": lr}
        lv = torch.zeros((), dtype=torch.float32)
        la = torch.zeros((), dtype=torch.float32)
        warm = joint and step < cfg.nerf_warmup

        if joint:
            refreshed = [_refresh(s, cfg) for s in joint_scenes]
            lv = sum(_vision_step(s, cfg, gen) for s in joint_scenes) / len(joint_scenes)
            record["vision"] = float(lv.detach())
            if model.cfg.uses_grid and not warm:
                grid_tensor = _scene_tensor(scene_grids)
                if cfg.grid_flow_through:
                    grid_tensor = _flow_through(grid_tensor, scene_grids, refreshed)

        if not warm:
            if cursor + batch > n_units:
                order = torch.randperm(n_units, generator=gen)
                cursor = 0
            units = order[cursor : cursor + batch]
            cursor += batch
            feats = None
            if model.cfg.uses_grid:
                all_feats = model.extract_features(grid_tensor)
            if full:
                rows = units.repeat_interleave(T)
                t = times.repeat(len(units))
            else:
                rows, t_idx = units // T, units % T
                t = times[t_idx]
            if model.cfg.uses_grid:
                feats = all_feats[table.scene[rows]]
            pred = model(table.batch(rows, t), feats)  # (B, C, F)
            if full:
                pred = pred.reshape(len(units), T, C, F).permute(0, 2, 3, 1)
                gt = Y[units]
            else:
                gt = Y[rows, :, :, t_idx]
            la, parts = audio_loss(pred, gt, weights, full_stft=full)
            record.update(parts)

        loss = total_loss(lv, la, weights.lambda_A)
        record["total"] = float(loss.detach())
        if loss.requires_grad:
            grads = gradients(loss, params)
            opt.step(grads, lr)
        else:
            opt.step_count += 1

        last = step == cfg.iterations - 1
        if eval_fn is not None and cfg.eval_interval and ((step + 1) % cfg.eval_interval == 0 or last):
            record["eval"] = eval_fn(step + 1)
        if cfg.log_interval and (step % cfg.log_interval == 0 or last or "eval" in record):
            log.append(record)
            if log_fn is not None:
                log_fn(record)

    return TrainState(model, opt, cfg.iterations, scene_grids, fields, log)


def _flow_through(grid_tensor, grids, refreshed):
    """Replace refreshed voxels in the stacked grid with their differentiable values."""
    out = []
    for k, (idx, rgb, alpha) in enumerate(refreshed):
        S = grids[k].resolution
        g = grid_tensor[k].reshape(7, -1)
        index = torch.as_tensor(idx)
        vals = torch.cat([rgb.to(g.dtype), alpha.to(g.dtype)[:, None]], dim=1).T  # (4, b)
        g = torch.cat([_scatter(g[:4], index, vals), g[4:]], dim=0)
        out.append(g.reshape(7, S, S, S))
    return torch.stack(out)


def _scatter(base, index, vals):
    mask = torch.zeros(base.shape[1], dtype=torch.bool)
    mask[index] = True
    full = torch.zeros_like(base).index_copy(1, index, vals)
    return torch.where(mask[None, :], full, base)

"""High-level training entry point: datasets and scenes in, fitted estimator and log out."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..dsp import StftConfig
from ..errors import InvalidInputError
from ..nacf import NacfConfig
from ..scenefield import AnalyticShoeboxField, RadianceField, VoxelGrid, build_grid
from .data import entries_to_queries, entries_to_targets
from .evaluation import evaluate
from .loop import JointScene, TrainConfig
from .losses import LossWeights


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def stack_datasets(datasets, split: str, cfg: StftConfig, t_max: int | None = None):
    """Queries, targets and entries of one split across datasets; scene id = dataset index."""
    Xs, ys, entries = [], [], []
    for k, ds in enumerate(datasets):
        part = ds.split(split)
        for e in part:
            e.scene = k
        entries.extend(part)
    if not entries:
        return np.zeros((0, 9)), None, []
    X = entries_to_queries(entries)
    y = entries_to_targets(entries, cfg, t_max)
    return X, y, entries


def scene_grid(scene, resolution: int, batch_size: int = 4096) -> VoxelGrid:
    if isinstance(scene, VoxelGrid):
        return scene
    if isinstance(scene, RadianceField):
        return build_grid(scene, resolution, batch_size)
    raise InvalidInputError(f"cannot build a grid from {type(scene).__name__}")


def train(
    cfg: TrainConfig,
    datasets,
    scenes=None,
    weights: LossWeights | None = None,
    nacf: NacfConfig | None = None,
    stft: StftConfig | None = None,
    margin: float = 1.0,
    checkpoint=None,
    log_path=None,
):
    """Fit an :class:`~neraf.estimator.AcousticFieldRegressor`.

    Parameters
    ----------
    datasets : RirDataset or list of RirDataset
        One dataset per scene; several datasets imply multi-scene training.
    scenes : VoxelGrid, RadianceField, JointScene or a list of them
        Defaults to analytic fields of each dataset's room. Joint mode takes
        :class:`JointScene` objects.
    checkpoint, log_path : optional paths
        The NRAF checkpoint and the JSON-lines training log.

    Returns
    -------
    (estimator, log records)
    """
    from ..estimator import AcousticFieldRegressor

    datasets = _as_list(datasets)
    weights = weights or LossWeights()
    nacf = nacf or NacfConfig()
    stft = stft or datasets[0].stft or StftConfig()
    if scenes is None:
        scenes = [AnalyticShoeboxField(ds.room) for ds in datasets]
    scenes = _as_list(scenes)
    if len(scenes) != len(datasets):
        raise InvalidInputError(f"{len(datasets)} datasets but {len(scenes)} scenes")
    if cfg.mode == "separate" and len(datasets) != 1:
        raise InvalidInputError("separate mode trains on one scene; use multi_scene")
    if cfg.mode == "joint" and not all(isinstance(s, JointScene) for s in scenes):
        raise InvalidInputError("joint mode needs JointScene inputs")

    X, y, _ = stack_datasets(datasets, "train", stft)
    if len(X) == 0:
        raise InvalidInputError("training split is empty")
    _, _, test_entries = stack_datasets(datasets, "test", stft)

    grids = joint = None
    if cfg.mode == "joint":
        joint = scenes
    elif nacf.uses_grid:
        grids = [scene_grid(s, nacf.grid_resolution, cfg.grid_batch) for s in scenes]

    log_fh = open(log_path, "w") if log_path is not None else None

    def log_fn(record):
        if log_fh is not None:
            log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            log_fh.flush()

    def eval_fn(est, step):
        if not test_entries:
            return None
        try:
            return evaluate(est, test_entries, stft, gl_iterations=cfg.gl_iterations).mean.to_dict()
        except InvalidInputError as exc:
            # an unusable evaluation should not abort training
            return {"error": str(exc)}

    est = AcousticFieldRegressor(nacf, cfg, weights, stft, margin, datasets[0].sample_rate)
    try:
        est.fit(X, y, grids=grids, joint_scenes=joint, eval_fn=eval_fn, log_fn=log_fn)
    finally:
        if log_fh is not None:
            log_fh.close()
    if checkpoint is not None:
        Path(checkpoint).parent.mkdir(parents=True, exist_ok=True)
        est.save(checkpoint)
    return est, est.log_

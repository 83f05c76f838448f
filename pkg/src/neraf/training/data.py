"""Tabular views of RIR datasets used by the estimators.

A query row holds ``mic_x, mic_y, mic_z, mic_yaw, src_x, src_y, src_z,
src_yaw, scene``; a target is the ``(C, F, T)`` log-magnitude STFT of the
corresponding RIR.
"""

from __future__ import annotations

import numpy as np
import torch

from ..dsp import StftConfig, log_stft, pad_or_trim
from ..encodings import PoseBounds
from ..errors import InvalidInputError
from ..nacf import QueryBatch
from ..oracle import Pose

QUERY_COLUMNS = (
    "mic_x", "mic_y", "mic_z", "mic_yaw",
    "src_x", "src_y", "src_z", "src_yaw",
    "scene",
)


def entries_to_queries(entries) -> np.ndarray:
    rows = [
        [*e.mic.position, e.mic.yaw, *e.src.position, e.src.yaw, e.scene]
        for e in entries
    ]
    return np.asarray(rows, dtype=np.float64).reshape(-1, len(QUERY_COLUMNS))


def entries_to_targets(entries, cfg: StftConfig, t_max: int | None = None) -> np.ndarray:
    """Stack log-magnitude STFTs of the entries' waveforms as ``(n, C, F, T)`` float32."""
    specs = [log_stft(e.waveform, cfg) for e in entries]
    if not specs:
        return np.zeros((0, 0, cfg.n_freqs, 0), dtype=np.float32)
    t_max = max(s.n_frames for s in specs) if t_max is None else t_max
    return np.stack([pad_or_trim(s, t_max).values for s in specs]).astype(np.float32)


def row_poses(row):
    """``(mic, src)`` poses of one query row."""
    row = np.asarray(row, dtype=float)
    return Pose(tuple(row[0:3]), row[3]), Pose(tuple(row[4:7]), row[7])


def make_row(mic: Pose, src: Pose, scene: int = 0) -> np.ndarray:
    return np.asarray([*mic.position, mic.yaw, *src.position, src.yaw, scene], dtype=np.float64)


def bounds_from_queries(X, margin: float = 1.0) -> PoseBounds:
    X = np.asarray(X, dtype=float)
    pts = np.concatenate([X[:, 0:3], X[:, 4:7]], axis=0)
    return PoseBounds.from_positions(pts, margin)


class QueryTable:
    """Per-row tensors (normalized positions, unit directions, scene ids)."""

    def __init__(self, X, bounds: PoseBounds, dtype=torch.float32):
        X = np.asarray(X, dtype=np.float64)
        lo, hi = bounds.low, bounds.high
        span = hi - lo
        self.mic_pos = torch.as_tensor((X[:, 0:3] - lo) / span, dtype=dtype)
        self.src_pos = torch.as_tensor((X[:, 4:7] - lo) / span, dtype=dtype)
        yaw_m, yaw_s = X[:, 3], X[:, 7]
        zeros = np.zeros_like(yaw_m)
        self.mic_dir = torch.as_tensor(np.stack([np.cos(yaw_m), np.sin(yaw_m), zeros], 1), dtype=dtype)
        self.src_dir = torch.as_tensor(np.stack([np.cos(yaw_s), np.sin(yaw_s), zeros], 1), dtype=dtype)
        scene = X[:, 8]
        if np.any(scene < 0) or np.any(scene != np.round(scene)):
            raise InvalidInputError("scene ids must be nonnegative integers")
        self.scene = torch.as_tensor(scene.astype(np.int64))
        self.dtype = dtype

    def __len__(self):
        return self.mic_pos.shape[0]

    def batch(self, rows: torch.Tensor, t: torch.Tensor) -> QueryBatch:
        return QueryBatch(
            self.mic_pos[rows],
            self.src_pos[rows],
            t.to(self.dtype),
            self.mic_dir[rows],
            self.src_dir[rows],
        )

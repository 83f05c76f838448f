"""Estimator-style wrappers around the acoustic field and the nearest-pair baseline.

Both follow the usual ``fit(X, y)`` / ``predict(X)`` protocol. ``X`` rows are
query poses (see :data:`neraf.training.data.QUERY_COLUMNS`) and ``y`` holds
``(n, C, F, T)`` log-magnitude STFTs.
"""

from __future__ import annotations

import copy
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .dsp import Spectrogram, StftConfig, Waveform, griffin_lim
from .encodings import EncodingConfig, PoseBounds
from .errors import InvalidInputError
from .nacf import NacfConfig, NeuralAcousticField, time_grid
from .scenefield import TrainableField, VoxelGrid
from .store import read_container, write_container
from .training.data import QUERY_COLUMNS, QueryTable, bounds_from_queries
from .training.loop import TrainConfig, named_parameters, train_loop
from .training.losses import LossWeights
from .training.optim import Adam

CHECKPOINT_KIND = "neraf-checkpoint"


def check_queries(X) -> np.ndarray:
    """Validate a query matrix: finite floats with one column per query field."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True)
    if X.shape[1] != len(QUERY_COLUMNS):
        raise InvalidInputError(f"queries need {len(QUERY_COLUMNS)} columns {QUERY_COLUMNS}, got {X.shape[1]}")
    return X


def check_targets(y, n: int | None = None) -> np.ndarray:
    """Validate log-magnitude targets ``(n, C, F, T)``."""
    y = np.asarray(y, dtype=np.float32)
    if y.ndim != 4:
        raise InvalidInputError(f"targets must be (n, C, F, T), got shape {y.shape}")
    if n is not None and y.shape[0] != n:
        raise InvalidInputError(f"{n} queries but {y.shape[0]} targets")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("targets contain non-finite values")
    return y


def _query_distance(A: np.ndarray, B: np.ndarray, direction_weight: float) -> np.ndarray:
    """Pairwise ``|dmic| + |dsrc| + w |ddir|`` between query rows (inf across scenes)."""
    dm = np.linalg.norm(A[:, None, 0:3] - B[None, :, 0:3], axis=-1)
    ds = np.linalg.norm(A[:, None, 4:7] - B[None, :, 4:7], axis=-1)
    da = np.stack([np.cos(A[:, 3]), np.sin(A[:, 3])], 1)
    db = np.stack([np.cos(B[:, 3]), np.sin(B[:, 3])], 1)
    dd = np.linalg.norm(da[:, None] - db[None], axis=-1)
    dist = dm + ds + direction_weight * dd
    dist[A[:, None, 8] != B[None, :, 8]] = np.inf
    return dist


class NearestPairRegressor(BaseEstimator):
    """Returns the training RIR whose (mic, source) poses are closest to the query.

    Parameters
    ----------
    direction_weight : float
        Meters charged per unit of facing-vector difference. The default is
        half the binaural ear spacing.
    """

    def __init__(self, direction_weight: float = 0.09):
        self.direction_weight = direction_weight

    def fit(self, X, y, waveforms=None):
        X = check_queries(X)
        y = check_targets(y, len(X))
        if len(X) == 0:
            raise InvalidInputError("training split is empty")
        if waveforms is not None and len(waveforms) != len(X):
            raise InvalidInputError("need one waveform per training query")
        self.X_ = X
        self.y_ = y
        self.waveforms_ = None if waveforms is None else list(waveforms)
        return self

    def kneighbors(self, X) -> np.ndarray:
        check_is_fitted(self, "X_")
        X = check_queries(X)
        dist = _query_distance(X, self.X_, self.direction_weight)
        if np.any(np.all(np.isinf(dist), axis=1)):
            raise InvalidInputError("a query's scene has no training pairs")
        return np.argmin(dist, axis=1)

    def predict(self, X) -> np.ndarray:
        idx = self.kneighbors(X)
        return self.y_[idx]

    def predict_waveforms(self, X, lengths=None, **_) -> list:
        if self.waveforms_ is None:
            raise InvalidInputError("fit was called without waveforms")
        out = []
        for i, k in enumerate(self.kneighbors(X)):
            w = self.waveforms_[k]
            if lengths is not None and lengths[i] != w.length:
                n = lengths[i]
                s = np.zeros((w.channels, n))
                m = min(n, w.length)
                s[:, :m] = w.samples[:, :m]
                w = Waveform(s, w.sample_rate)
            out.append(w)
        return out

    def score(self, X, y) -> float:
        return -float(np.mean(np.abs(self.predict(X) - check_targets(y))))


class AcousticFieldRegressor(BaseEstimator):
    """Neural acoustic field trained on (pose, log-magnitude STFT) pairs.

    Parameters
    ----------
    nacf : NacfConfig, optional
        Architecture. ``head_count``, ``freq_bins`` and ``grid_resolution``
        are taken from the data at fit time.
    train : TrainConfig, optional
    weights : LossWeights, optional
    stft : StftConfig, optional
        Used for Griffin-Lim when rendering waveforms.
    margin : float
        Pose-normalization margin in meters.
    sample_rate : int
    """

    def __init__(self, nacf=None, train=None, weights=None, stft=None, margin: float = 1.0, sample_rate: int = 16000):
        self.nacf = nacf
        self.train = train
        self.weights = weights
        self.stft = stft
        self.margin = margin
        self.sample_rate = sample_rate

    # resolved configs
    def _configs(self):
        return (
            self.nacf or NacfConfig(),
            self.train or TrainConfig(),
            self.weights or LossWeights(),
            self.stft or StftConfig(),
        )

    def fit(self, X, y, grids=None, joint_scenes=None, eval_fn=None, log_fn=None):
        """Train on queries ``X`` and log-magnitude targets ``y``.

        Parameters
        ----------
        grids : list of VoxelGrid
            One pre-built grid per scene id (separate and multi-scene modes).
        joint_scenes : list of JointScene
            Trainable fields with their vision targets (joint mode).
        eval_fn : callable, optional
            ``eval_fn(estimator, step) -> dict`` called every
            ``train.eval_interval`` steps.
        log_fn : callable, optional
            Receives each JSON-ready log record.
        """
        X = check_queries(X)
        y = check_targets(y, len(X))
        if len(X) == 0:
            raise InvalidInputError("training split is empty")
        nacf, tcfg, weights, _ = self._configs()
        scene_grids = [s.grid for s in joint_scenes] if joint_scenes else list(grids or [])
        resolution = scene_grids[0].resolution if scene_grids else nacf.grid_resolution
        nacf = replace(nacf, head_count=y.shape[1], freq_bins=y.shape[2], grid_resolution=resolution)
        if nacf.uses_grid and not scene_grids:
            raise InvalidInputError("this configuration needs scene grids")

        self.nacf_ = nacf
        self.bounds_ = bounds_from_queries(X, self.margin)
        self.t_max_ = int(y.shape[3])
        self.model_ = NeuralAcousticField(nacf, seed=tcfg.seed)
        self.grids_ = scene_grids
        table = QueryTable(X, self.bounds_)
        cb = None if eval_fn is None else (lambda step: eval_fn(self, step))
        state = train_loop(self.model_, table, y, tcfg, weights, grids, joint_scenes, cb, log_fn)
        self.optimizer_ = state.optimizer
        self.fields_ = state.fields
        self.log_ = state.log
        self.n_iter_ = state.step
        self.n_scenes_ = int(table.scene.max()) + 1
        return self

    def scene_features(self):
        """Feature vectors for every scene grid, ``(n_scenes, feature_dim)`` or ``None``."""
        check_is_fitted(self, "model_")
        if not self.nacf_.uses_grid:
            return None
        g = torch.stack([torch.from_numpy(v.channels_first()) for v in self.grids_])
        with torch.no_grad():
            return self.model_.extract_features(g)

    def predict(self, X, t_max: int | None = None) -> np.ndarray:
        """Log-magnitude STFTs ``(n, C, F, t_max)`` for query rows."""
        check_is_fitted(self, "model_")
        X = check_queries(X)
        T = self.t_max_ if t_max is None else int(t_max)
        feats = self.scene_features()
        table = QueryTable(X, self.bounds_, dtype=next(self.model_.parameters()).dtype)
        if feats is not None and len(table) and int(table.scene.max()) >= feats.shape[0]:
            raise InvalidInputError("query references a scene without a grid")
        times = torch.as_tensor(time_grid(self.t_max_), dtype=table.dtype)
        out = np.empty((len(X), self.nacf_.head_count, self.nacf_.freq_bins, T), dtype=np.float32)
        with torch.no_grad():
            for i in range(len(X)):
                rows = torch.full((T,), i, dtype=torch.long)
                t_idx = torch.clamp(torch.arange(T), max=self.t_max_ - 1)
                f = None if feats is None else feats[table.scene[rows]]
                pred = self.model_(table.batch(rows, times[t_idx]), f, row_exact=True)  # (T, C, F)
                out[i] = pred.permute(1, 2, 0).numpy()
        return out

    def predict_waveforms(self, X, lengths=None, gl_iterations: int | None = None, momentum: float = 0.99, seed: int = 0) -> list:
        """Render RIRs: predicted log-magnitudes inverted by Griffin-Lim."""
        _, tcfg, _, stft_cfg = self._configs()
        iters = tcfg.gl_iterations if gl_iterations is None else gl_iterations
        frames = None if lengths is None else [stft_cfg.n_frames(int(n)) for n in lengths]
        # time frames are independent queries, so one long prediction can be sliced per output
        specs = self.predict(X, max(frames) if frames else None)
        out = []
        for i, s in enumerate(specs):
            length = None if lengths is None else int(lengths[i])
            if frames is not None:
                s = s[..., : frames[i]]
            out.append(
                griffin_lim(
                    Spectrogram(s.astype(np.float64), kind="logmag"),
                    stft_cfg,
                    iters,
                    seed,
                    self.sample_rate,
                    momentum=momentum,
                    length=length,
                )
            )
        return out

    def score(self, X, y) -> float:
        """Negative mean absolute log-magnitude error."""
        y = check_targets(y)
        return -float(np.mean(np.abs(self.predict(X, y.shape[3]) - y)))

    # persistence
    def checkpoint_tensors(self) -> dict:
        check_is_fitted(self, "model_")
        params = named_parameters(self.model_, self.fields_)
        tensors = {n: p.detach() for n, p in params.items()}
        tensors.update(self.optimizer_.state_tensors())
        for k, g in enumerate(self.grids_):
            tensors[f"grid.{k}"] = g.values
        feats = self.scene_features()
        if feats is not None:
            tensors["features"] = feats
        return tensors

    def checkpoint_meta(self) -> dict:
        _, tcfg, weights, stft_cfg = self._configs()
        return {
            "kind": CHECKPOINT_KIND,
            "nacf": self.nacf_.to_dict(),
            "train": tcfg.to_dict(),
            "weights": weights.to_dict(),
            "stft": stft_cfg.to_dict(),
            "bounds": self.bounds_.to_dict(),
            "margin": self.margin,
            "sample_rate": self.sample_rate,
            "t_max": self.t_max_,
            "step": self.n_iter_,
            "n_scenes": self.n_scenes_,
            "grids": [{"delta": g.delta, "n_directions": g.n_directions} for g in self.grids_],
            "fields": [
                {"width": f.sigma_out.in_features, "layers": len(f.trunk) + 1, "encoding": f.encoding.to_dict()}
                for f in self.fields_
            ],
        }

    def save(self, path) -> Path:
        write_container(path, self.checkpoint_tensors(), self.checkpoint_meta())
        return Path(path)

    @classmethod
    def load(cls, path) -> "AcousticFieldRegressor":
        tensors, meta = read_container(path)
        if meta.get("kind") != CHECKPOINT_KIND:
            raise InvalidInputError(f"{path} is not an acoustic-field checkpoint")
        nacf = NacfConfig.from_dict(meta["nacf"])
        tcfg = TrainConfig(**meta["train"])
        est = cls(nacf, tcfg, LossWeights(**meta["weights"]), StftConfig(**meta["stft"]), meta["margin"], meta["sample_rate"])
        est.nacf_ = nacf
        b = meta["bounds"]
        est.bounds_ = PoseBounds(tuple(b["lower"]), tuple(b["upper"]), b["margin"])
        est.t_max_ = meta["t_max"]
        est.n_iter_ = meta["step"]
        est.n_scenes_ = meta["n_scenes"]
        est.model_ = NeuralAcousticField(nacf)
        est.grids_ = [
            VoxelGrid.from_values(tensors[f"grid.{k}"], g["delta"], g["n_directions"])
            for k, g in enumerate(meta["grids"])
        ]
        est.fields_ = [
            TrainableField(f["width"], f["layers"], EncodingConfig(**f["encoding"])) for f in meta["fields"]
        ]
        params = named_parameters(est.model_, est.fields_)
        with torch.no_grad():
            for n, p in params.items():
                if n not in tensors:
                    raise InvalidInputError(f"checkpoint lacks parameter {n!r}")
                p.copy_(torch.from_numpy(tensors[n]))
        est.optimizer_ = Adam(params, (tcfg.beta1, tcfg.beta2), tcfg.adam_eps)
        est.optimizer_.load_state_tensors(tensors, meta["step"])
        est.log_ = []
        return est

    def clone_untrained(self) -> "AcousticFieldRegressor":
        return type(self)(**copy.deepcopy(self.get_params(deep=False)))

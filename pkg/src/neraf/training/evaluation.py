"""Test-split evaluation, the resynthesis reference and inference speed reports."""

from __future__ import annotations

import csv
import json
import os
import statistics
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..dsp import StftConfig, griffin_lim, log_stft, magnitude, stft
from ..errors import InvalidInputError, NerafError
from ..metrics import T20, RirErrorReport, rir_error_report
from ..nacf import analytic_parameter_count, time_grid
from .data import QueryTable, entries_to_queries

METRIC_FIELDS = ("t60_pct", "c50_db", "edt_s", "stft_err")


class ResynthesisReference:
    """Stand-in predictor returning Griffin-Lim reconstructions of the true magnitudes.

    Evaluating it measures the error floor that phase reconstruction alone
    imposes on every model.
    """

    def __init__(self, entries, cfg: StftConfig, gl_iterations: int = 100, momentum: float = 0.99):
        self.entries = list(entries)
        self.cfg = cfg
        self.gl_iterations = gl_iterations
        self.momentum = momentum

    def predict_waveforms(self, X, lengths=None, **_):
        out = []
        for i, e in enumerate(self.entries):
            mag = magnitude(stft(e.waveform, self.cfg))
            n = e.waveform.length if lengths is None else int(lengths[i])
            out.append(
                griffin_lim(mag, self.cfg, self.gl_iterations, 0, e.waveform.sample_rate, momentum=self.momentum, length=n)
            )
        return out


@dataclass
class EvaluationResult:
    mean: RirErrorReport
    median: RirErrorReport
    records: list = field(default_factory=list)
    excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.to_dict(),
            "median": self.median.to_dict(),
            "excluded": self.excluded,
            "count": len(self.records) - self.excluded,
        }

    def write(self, out_dir) -> tuple:
        """Write ``eval.json`` (aggregates and records) and ``eval.csv`` (records)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        jpath, cpath = out / "eval.json", out / "eval.csv"
        jpath.write_text(json.dumps({**self.to_dict(), "records": self.records}, indent=2))
        cols = ["index", *METRIC_FIELDS, "excluded_channels", "error"]
        with open(cpath, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.records:
                w.writerow({c: r.get(c, "") for c in cols})
        return jpath, cpath


def _aggregate(reports, fn) -> RirErrorReport:
    vals = {k: float(fn([getattr(r, k) for r in reports])) for k in METRIC_FIELDS}
    return RirErrorReport(**vals, excluded_channels=int(sum(r.excluded_channels for r in reports)))


def evaluate(
    predictor,
    entries,
    cfg: StftConfig,
    gl_iterations: int | None = None,
    t60_span=T20,
    out_dir=None,
) -> EvaluationResult:
    """Render every entry, compare with its ground-truth RIR and aggregate.

    ``predictor`` is anything with ``predict_waveforms(X, lengths, ...)``: a
    fitted :class:`~neraf.estimator.AcousticFieldRegressor` (or a checkpoint
    path), a :class:`~neraf.estimator.NearestPairRegressor` for the baseline,
    or a :class:`ResynthesisReference`. Entries whose metrics cannot be
    computed are excluded and counted.
    """
    from ..estimator import AcousticFieldRegressor

    if isinstance(predictor, (str, os.PathLike)):
        predictor = AcousticFieldRegressor.load(predictor)
    entries = list(entries)
    if not entries:
        raise InvalidInputError("test split is empty")
    if isinstance(predictor, AcousticFieldRegressor):
        own = predictor._configs()[3]
        if (own.n_fft, own.hop_length, own.win_length) != (cfg.n_fft, cfg.hop_length, cfg.win_length):
            raise InvalidInputError("checkpoint STFT configuration does not match the dataset")
    X = entries_to_queries(entries)
    lengths = [e.waveform.length for e in entries]
    kwargs = {} if gl_iterations is None else {"gl_iterations": gl_iterations}
    preds = predictor.predict_waveforms(X, lengths, **kwargs)

    reports, records = [], []
    for i, (e, p) in enumerate(zip(entries, preds)):
        try:
            r = rir_error_report(p, e.waveform, cfg, t60_span)
        except (NerafError, ValueError) as exc:
            records.append({"index": i, "error": f"{type(exc).__name__}: {exc}"})
            continue
        reports.append(r)
        records.append({"index": i, **r.to_dict()})
    if not reports:
        raise InvalidInputError("every entry was excluded from evaluation")
    result = EvaluationResult(
        _aggregate(reports, np.mean),
        _aggregate(reports, np.median),
        records,
        len(entries) - len(reports),
    )
    if out_dir is not None:
        result.write(out_dir)
    return result


def speed_report(estimator, n_renders: int = 100, gl_iterations: int | None = None) -> dict:
    """Parameter count, checkpoint size and median inference latencies."""
    from ..estimator import AcousticFieldRegressor

    path = None
    if isinstance(estimator, (str, os.PathLike)):
        path = Path(estimator)
        estimator = AcousticFieldRegressor.load(path)
    if path is None:
        with tempfile.TemporaryDirectory() as tmp:
            size = estimator.save(Path(tmp) / "model.nraf").stat().st_size
    else:
        size = path.stat().st_size

    model = estimator.model_
    bounds = estimator.bounds_
    lo, hi = bounds.low, bounds.high
    mid = 0.5 * (lo + hi)
    row = np.array([[*mid, 0.0, *(mid + 0.1 * (hi - lo)), 0.0, 0.0]])
    table = QueryTable(row, bounds, dtype=next(model.parameters()).dtype)
    feats = estimator.scene_features()
    f1 = None if feats is None else feats[:1]
    one = torch.zeros(1, dtype=torch.long)
    t0 = torch.as_tensor(time_grid(estimator.t_max_)[:1], dtype=table.dtype)

    query_times = []
    with torch.no_grad():
        for _ in range(n_renders):
            start = time.perf_counter()
            model(table.batch(one, t0), f1, row_exact=True)
            query_times.append(time.perf_counter() - start)
    rir_times = []
    for _ in range(n_renders):
        start = time.perf_counter()
        estimator.predict_waveforms(row, gl_iterations=gl_iterations)
        rir_times.append(time.perf_counter() - start)
    return {
        "parameter_count": int(model.parameter_count()),
        "analytic_parameter_count": int(analytic_parameter_count(model.cfg)),
        "checkpoint_bytes": int(size),
        "per_query_s": statistics.median(query_times),
        "per_rir_s": statistics.median(rir_times),
        "renders": n_renders,
    }


def log_stft_error(pred, gt, cfg: StftConfig) -> float:
    """Mean absolute log-magnitude difference of two waveforms."""
    a, b = log_stft(pred, cfg).values, log_stft(gt, cfg).values
    return float(np.mean(np.abs(a - b)))

"""``neraf`` command line.

Exit codes: 0 success, 1 validation error, 2 runtime error. With ``--json``
results go to stdout as one JSON object and errors to stderr as
``{"error": {...}}``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig
from .dsp import Waveform, convolve, read_wav, write_wav
from .errors import FormatError, InvalidInputError, NerafError
from .oracle import Pose, RirDataset, generate_dataset, loudness_map, oracle_provider
from .scenefield import AnalyticShoeboxField, build_grid, grid_sections, save_sections

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class UsageError(InvalidInputError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _pose(text: str) -> Pose:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise InvalidInputError(f"pose must be 'x,y,z[,yaw]', got {text!r}") from exc
    if len(vals) not in (3, 4):
        raise InvalidInputError(f"pose must be 'x,y,z[,yaw]', got {text!r}")
    return Pose(tuple(vals[:3]), vals[3] if len(vals) == 4 else 0.0)


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    # the experiment seed drives training unless the train section sets its own
    cfg.train = replace(cfg.train, seed=cfg.seed if args.seed is not None or cfg.train.seed == 0 else cfg.train.seed)
    return cfg


def _emit(args, result: dict, text: str | None = None) -> None:
    if args.json:
        print(json.dumps(result, sort_keys=True, default=float))
    else:
        print(text if text is not None else "\n".join(f"{k}: {v}" for k, v in result.items()))


def _load_estimator(path):
    from .estimator import AcousticFieldRegressor

    if not path:
        raise InvalidInputError("--checkpoint is required")
    return AcousticFieldRegressor.load(path)


def _render(est, src: Pose, mic: Pose, scene: int = 0) -> Waveform:
    from .training.data import make_row

    return est.predict_waveforms(make_row(mic, src, scene)[None])[0]


def cmd_simulate(args) -> dict:
    cfg = _load_config(args)
    d = cfg.dataset
    split = args.split or d.split
    fraction = args.fraction if args.fraction is not None else d.fraction
    out = args.out or cfg.paths.dataset
    if not out:
        raise InvalidInputError("--out is required")
    ds = generate_dataset(
        cfg.room, d.spacing, d.orientations, d.source_poses(), split, fraction, cfg.seed,
        d.sample_rate, d.duration, d.channels, d.margin, d.height, cfg.stft, out_dir=out,
    )
    return {"entries": len(ds), "train": len(ds.train), "test": len(ds.test), "split": split,
            "manifest": str(Path(out) / "manifest.json")}


def cmd_train(args) -> dict:
    from .training.runner import train

    cfg = _load_config(args)
    tcfg = cfg.train
    if args.iterations is not None:
        tcfg = replace(tcfg, iterations=args.iterations)
    if args.mode is not None:
        tcfg = replace(tcfg, mode=args.mode)
    paths = [args.dataset] if args.dataset else ([cfg.paths.dataset] if cfg.paths.dataset else [])
    if not paths:
        raise InvalidInputError("--dataset is required")
    datasets = [RirDataset.load(p) for p in paths[0].split(",")]
    out = args.out or cfg.paths.checkpoint
    if not out:
        raise InvalidInputError("--out is required")
    log = args.log or cfg.paths.log or str(Path(out).with_suffix(".log.jsonl"))
    if tcfg.mode == "separate" and len(datasets) > 1:
        tcfg = replace(tcfg, mode="multi_scene")
    est, records = train(tcfg, datasets, None, cfg.weights, cfg.nacf, cfg.stft, checkpoint=out, log_path=log)
    last = records[-1] if records else {}
    return {"checkpoint": out, "log": log, "iterations": est.n_iter_, "final_loss": last.get("total")}


def cmd_eval(args) -> dict:
    from .estimator import NearestPairRegressor
    from .training.evaluation import evaluate
    from .training.runner import stack_datasets

    ds = RirDataset.load(args.dataset) if args.dataset else None
    if ds is None:
        raise InvalidInputError("--dataset is required")
    est = _load_estimator(args.checkpoint)
    cfg = est._configs()[3]
    predictor = est
    if args.baseline:
        X, y, tr = stack_datasets([ds], "train", cfg)
        predictor = NearestPairRegressor().fit(X, y, [e.waveform for e in tr])
    result = evaluate(predictor, ds.test, cfg, args.gl_iterations, out_dir=args.out)
    out = result.to_dict()
    out["mode"] = "baseline" if args.baseline else "model"
    return out


def cmd_render(args) -> dict:
    est = _load_estimator(args.checkpoint)
    w = _render(est, _pose(args.src), _pose(args.mic), args.scene)
    write_wav(args.out, w)
    return {"out": args.out, "channels": w.channels, "samples": w.length, "sample_rate": w.sample_rate}


def cmd_auralize(args) -> dict:
    dry = read_wav(args.dry)
    if args.rir:
        rir = read_wav(args.rir)
    else:
        if not (args.src and args.mic):
            raise InvalidInputError("--src and --mic are required with --checkpoint")
        rir = _render(_load_estimator(args.checkpoint), _pose(args.src), _pose(args.mic), args.scene)
    wet = convolve(dry, rir)
    if not args.full:
        wet = Waveform(wet.samples[:, : dry.length], wet.sample_rate)
    write_wav(args.out, wet)
    return {"out": args.out, "channels": wet.channels, "samples": wet.length}


def cmd_loudness(args) -> dict:
    cfg = _load_config(args)
    src = _pose(args.src)
    if args.oracle:
        provider = oracle_provider(cfg.room, cfg.dataset.sample_rate, cfg.dataset.duration, "mono")
        dims = cfg.room.dims
        extent = ((0.0, dims[0]), (0.0, dims[1]))
    else:
        est = _load_estimator(args.checkpoint)
        provider = lambda s, m: _render(est, s, m, args.scene)  # noqa: E731
        lo, hi = est.bounds_.low + est.bounds_.margin, est.bounds_.high - est.bounds_.margin
        extent = ((lo[0], hi[0]), (lo[1], hi[1]))
    heights = [float(h) for h in args.heights.split(",")]
    lm = loudness_map(provider, src, args.resolution, heights, extent)
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path, png_path = prefix.with_suffix(".csv"), prefix.with_suffix(".png")
    lm.to_csv(csv_path)
    lm.to_png(png_path)
    return {"csv": str(csv_path), "png": str(png_path), "shape": list(lm.values.shape)}


def cmd_grid_dump(args) -> dict:
    if args.checkpoint:
        est = _load_estimator(args.checkpoint)
        grid = est.grids_[args.scene]
    else:
        cfg = _load_config(args)
        grid = build_grid(AnalyticShoeboxField(cfg.room), args.resolution or cfg.nacf.grid_resolution)
    indices = (
        [int(i) for i in args.indices.split(",")]
        if args.indices
        else [grid.resolution // 4, grid.resolution // 2, 3 * grid.resolution // 4]
    )
    paths = save_sections(grid_sections(grid, args.axis, indices), args.out, args.axis)
    return {"files": [str(p) for p in paths], "resolution": grid.resolution, "axis": args.axis}


def cmd_gradcheck(args) -> dict:
    from .training.diagnostics import nacf_gradient_check

    cfg = _load_config(args)
    report = nacf_gradient_check(seed=cfg.seed, max_entries=args.max_entries)
    err = report["max_relative_error"]
    out = {"max_relative_error": err, "threshold": 1e-3, "passed": bool(err < 1e-3),
           "parameters": report["parameters"], "per_tensor": report["per_tensor"]}
    if not out["passed"]:
        raise GradientCheckFailed(f"max relative error {err:.3e} >= 1e-3", out)
    return out


class GradientCheckFailed(NerafError):
    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


def cmd_speed(args) -> dict:
    from .training.evaluation import speed_report

    if not args.checkpoint:
        raise InvalidInputError("--checkpoint is required")
    return speed_report(args.checkpoint, args.renders, args.gl_iterations)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="experiment config JSON")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--json", action="store_true", help="machine-readable output")

    p = _Parser(prog="neraf", description="Neural acoustic field toolkit", parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="simulate an oracle RIR dataset")
    s.add_argument("--out")
    s.add_argument("--split", choices=["pair", "source"])
    s.add_argument("--fraction", type=float)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", parents=[common], help="train an acoustic field")
    s.add_argument("--dataset", help="dataset directory (comma-separated for several scenes)")
    s.add_argument("--out", help="checkpoint path")
    s.add_argument("--log")
    s.add_argument("--iterations", type=int)
    s.add_argument("--mode", choices=["separate", "multi_scene"])
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="evaluate on the test split")
    s.add_argument("--checkpoint")
    s.add_argument("--dataset")
    s.add_argument("--baseline", action="store_true", help="nearest training pair instead of the model")
    s.add_argument("--gl-iterations", type=int)
    s.add_argument("--out", help="directory for eval.json / eval.csv")
    s.set_defaults(func=cmd_eval)

    for name, func, helptext in (("render", cmd_render, "render one RIR to WAV"),
                                 ("auralize", cmd_auralize, "convolve dry audio with an RIR")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--checkpoint")
        s.add_argument("--src", help="x,y,z[,yaw]")
        s.add_argument("--mic", help="x,y,z[,yaw]")
        s.add_argument("--scene", type=int, default=0)
        s.add_argument("--out", required=True)
        if name == "auralize":
            s.add_argument("--dry", required=True)
            s.add_argument("--rir", help="use this RIR WAV instead of rendering")
            s.add_argument("--full", action="store_true", help="keep the convolution tail")
        s.set_defaults(func=func)

    s = sub.add_parser("loudness-map", parents=[common], help="RIR energy over the floor plan")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--oracle", action="store_true")
    s.add_argument("--src", required=True)
    s.add_argument("--resolution", type=float, default=0.25)
    s.add_argument("--heights", default="1.5")
    s.add_argument("--scene", type=int, default=0)
    s.add_argument("--out", required=True, help="output prefix; writes .csv and .png")
    s.set_defaults(func=cmd_loudness)

    s = sub.add_parser("grid-dump", parents=[common], help="write voxel-grid sections as PNGs")
    s.add_argument("--checkpoint")
    s.add_argument("--scene", type=int, default=0)
    s.add_argument("--resolution", type=int)
    s.add_argument("--axis", type=int, default=2, choices=[0, 1, 2])
    s.add_argument("--indices")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_grid_dump)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    s.add_argument("--max-entries", type=int, help="entries checked per tensor (default all)")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("speed", parents=[common], help="inference speed and storage")
    s.add_argument("--checkpoint")
    s.add_argument("--renders", type=int, default=100)
    s.add_argument("--gl-iterations", type=int)
    s.set_defaults(func=cmd_speed)
    return p


def _error_payload(exc: BaseException, code: int) -> dict:
    err = {"type": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, FormatError):
        err.update(exc.to_dict())
    if isinstance(exc, GradientCheckFailed):
        err["result"] = exc.result
    return {"error": err}


def main(argv=None) -> int:
    threads = os.environ.get("NERAF_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    want_json = "--json" in (argv if argv is not None else sys.argv[1:])
    try:
        args = build_parser().parse_args(argv)
        if args.seed is not None:
            torch.manual_seed(args.seed)
            np.random.seed(args.seed % 2**32)
        result = args.func(args)
        _emit(args, result)
        return EXIT_OK
    except (InvalidInputError, FormatError, UsageError) as exc:
        return _fail(exc, EXIT_VALIDATION, want_json)
    except Exception as exc:  # noqa: BLE001
        return _fail(exc, EXIT_RUNTIME, want_json)


def _fail(exc: BaseException, code: int, want_json: bool) -> int:
    if want_json:
        print(json.dumps(_error_payload(exc, code), sort_keys=True, default=str), file=sys.stderr)
    else:
        print(f"neraf: error: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

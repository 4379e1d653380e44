"""Command-line entry point: ``qednet {train,predict,evaluate,index,synth,ablation,selftest}``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import indices, model, train
from ._parallel import default_workers
from .container import FormatError, atomic_write
from .data import (
    Raster,
    SynthSpec,
    load_scene_dir,
    normalize,
    pad_even,
    read_mask,
    read_raster,
    scene_paths,
    synth_scene,
    write_mask,
    write_raster,
)
from .metrics import confusion, report_csv, report_table, summary
from .qsim import ContractError

EXIT_RUNTIME, EXIT_CONFIG, EXIT_DATA = 1, 2, 3
SCHEDULE_EPOCHS = 200

log = logging.getLogger("qednet")


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def _workers(args) -> int:
    if os.environ.get("QEDNET_WORKERS"):
        try:
            return default_workers()
        except ValueError:
            raise ConfigError("QEDNET_WORKERS must be an integer") from None
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        return args.workers
    return default_workers()


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n) in (None, [])]
    if missing:
        raise ConfigError(f"missing required option(s): {', '.join(missing)}")


def _reflectance(raster: Raster) -> Raster:
    return raster if raster.scale == 1.0 else normalize(raster, raster.scale)[0]


def _scenes(directory):
    try:
        return [(_reflectance(r), m) for _, r, m in load_scene_dir(directory)]
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc


def _config(args) -> train.TrainConfig:
    epochs = args.epochs or SCHEDULE_EPOCHS
    if epochs < 1 or args.batch < 1:
        raise ConfigError("--epochs and --batch must be at least 1")
    return train.TrainConfig(
        max_epochs=max(SCHEDULE_EPOCHS, epochs), epochs=epochs, batch_size=args.batch,
        seed=args.seed, workers=_workers(args),
    )


def _samples(scenes, size):
    if size is not None and (size < 2 or size % 2):
        raise ConfigError("--size must be a positive even number")
    return train.samples_from_scenes(scenes, size)


def _predict_map(params: model.ModelParams, raster: Raster, workers: int) -> np.ndarray:
    """Sigmoid map for a whole raster, padding odd sizes and cropping back."""
    if raster.bands != 12:
        raise DataError(f"model input needs 12 bands, got {raster.bands}")
    padded = pad_even(raster)
    y = model.forward(padded.values.astype(np.float64), params, workers)
    return y[: raster.height, : raster.width]


def cmd_train(args) -> int:
    _require(args, "train_dir", "val_dir", "out")
    config = _config(args)
    tr = _samples(_scenes(args.train_dir), args.size)
    va = _samples(_scenes(args.val_dir), args.size)
    result = train.train(tr, va, config, args.variant, args.feat_width)
    meta = {"seed": args.seed, "best_epoch": result.best_epoch, "best_kappa": result.best_kappa}
    train.save_checkpoint(args.out, result.best, meta)
    history = args.report or f"{args.out}.history.csv"
    atomic_write(history, result.history_csv().encode())
    print(f"best epoch {result.best_epoch} kappa {result.best_kappa:.4f}")
    print(f"checkpoint {args.out}")
    print(f"history {history}")
    return 0


def _load_ckpt(path, variant=None):
    try:
        params, header = train.load_checkpoint(path)
    except FileNotFoundError as exc:
        raise DataError(str(exc)) from exc
    if variant is not None and variant != params.variant:
        raise DataError(f"checkpoint holds variant {params.variant!r}, not {variant!r}")
    return params


def cmd_predict(args) -> int:
    _require(args, "checkpoint", "input", "out")
    params = _load_ckpt(args.checkpoint, args.variant)
    raster = _reflectance(read_raster(args.input[0]))
    y = _predict_map(params, raster, _workers(args))
    if args.threshold is not None:
        t = float(args.threshold)
        binary = (y > t).astype(np.uint8)
    else:
        binary, t = model.auto_threshold(y, return_threshold=True)
    write_raster(f"{args.out}.sigmoid.mqr", Raster(y.astype(np.float32)[..., None], ["sigmoid"]))
    write_mask(f"{args.out}.class.mqm", binary)
    print(f"threshold {t!r}")
    return 0


def _index_map(args, raster: Raster):
    name = args.index.lower()
    values, flagged = indices.compute_index(name, raster)
    if args.threshold is not None:
        t, direction = float(args.threshold), "above"
    elif name in indices.DEFAULT_THRESHOLDS:
        t, direction = indices.default_threshold(name)
    else:
        t = direction = None
    return values, flagged, t, direction


def cmd_index(args) -> int:
    _require(args, "input", "index", "out")
    if args.index.lower() == "emvi" and args.threshold is None:
        raise ConfigError("emvi has no default threshold; pass --threshold")
    raster = _reflectance(read_raster(args.input[0]))
    values, flagged, t, direction = _index_map(args, raster)
    write_raster(f"{args.out}.{args.index.lower()}.mqr", Raster(values.astype(np.float32)[..., None], [args.index]))
    if t is not None:
        write_mask(f"{args.out}.class.mqm", indices.classify_index(values, t, direction))
        print(f"threshold {t!r} ({direction})")
    print(f"zero-denominator pixels {flagged}")
    return 0


def cmd_evaluate(args) -> int:
    _require(args, "input")
    if len(args.input) == 2:
        pred, gt = read_mask(args.input[0]), read_mask(args.input[1])
        label = Path(args.input[0]).stem
    elif len(args.input) == 1:
        raster_path, mask_path = scene_paths(args.input[0])
        raster, gt = _reflectance(read_raster(raster_path)), read_mask(mask_path)
        if args.checkpoint:
            params = _load_ckpt(args.checkpoint, args.variant)
            y = _predict_map(params, raster, _workers(args))
            pred = (y > float(args.threshold)).astype(np.uint8) if args.threshold is not None else model.auto_threshold(y)
            label = "QEDNet"
        elif args.index:
            values, _, t, direction = _index_map(args, raster)
            if t is None:
                raise ConfigError(f"{args.index} has no default threshold; pass --threshold")
            pred = indices.classify_index(values, t, direction)
            label = args.index.upper()
        else:
            raise ConfigError("evaluate on a scene needs --checkpoint or --index")
    else:
        raise ConfigError("--input takes PRED GT masks or a single scene")
    if pred.shape != gt.shape:
        raise DataError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    results = {label: summary(confusion(pred, gt))}
    print(report_table(results))
    if args.report:
        atomic_write(args.report, report_csv(results).encode())
    return 0


def cmd_synth(args) -> int:
    _require(args, "out")
    size = args.size or 64
    if size < 2:
        raise ConfigError("--size must be at least 2")
    spec = SynthSpec(seed=args.seed, height=size, width=size, noise_std=0.03 if args.noise is None else args.noise)
    raster, mask = synth_scene(spec)
    r_path, m_path = scene_paths(args.out)
    write_raster(r_path, raster)
    write_mask(m_path, mask)
    print(f"wrote {r_path} and {m_path} (mangrove fraction {mask.mean():.3f})")
    return 0


def cmd_ablation(args) -> int:
    _require(args, "train_dir", "val_dir")
    config = _config(args)
    tr = _samples(_scenes(args.train_dir), args.size)
    va = _samples(_scenes(args.val_dir), args.size)
    rows = train.ablation(tr, va, config, args.feat_width)
    print(train.ablation_table(rows))
    if args.report:
        atomic_write(args.report, report_csv({v: rows[v] for v in rows}).encode())
    return 0


def cmd_selftest(args) -> int:
    from . import selftest

    return selftest.run()


COMMANDS = {
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "index": cmd_index,
    "synth": cmd_synth,
    "ablation": cmd_ablation,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qednet", description="Hybrid CNN/QNN mangrove segmentation.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--train-dir")
    p.add_argument("--val-dir")
    p.add_argument("--out")
    p.add_argument("--variant", choices=model.VARIANTS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--feat-width", type=int, default=64)
    p.add_argument("--epochs", type=int, help="epochs to run; the cosine schedule spans max(200, epochs)")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--workers", type=int)
    p.add_argument("--checkpoint")
    p.add_argument("--input", nargs="+")
    p.add_argument("--threshold", type=float)
    p.add_argument("--index", choices=indices.INDEX_NAMES)
    p.add_argument("--size", type=int, help="patch size for train/ablation, scene side for synth")
    p.add_argument("--noise", type=float, help="noise std for synth (default 0.03)")
    p.add_argument("--report", help="CSV output path")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command in ("train", "ablation") and args.variant is None:
        args.variant = model.CNN_QNN
    if args.feat_width < 1:
        print("qednet: --feat-width must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"qednet: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError, ContractError, OSError) as exc:
        print(f"qednet: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"qednet: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point for the sensing/classification pipeline.

Subcommands: gen, train, eval, flip-eval, search, render, inspect.
Every run writes a run_manifest.txt of resolved parameters into --out;
that manifest is the only output allowed to carry timestamps, everything
else is byte-reproducible for a fixed --seed.
"""

import argparse
import os
import struct
import sys
import time

import numpy as np

from . import dataset as ds
from . import model as md
from . import search as sr
from . import waveform as wf
from .errors import (
    ArchitectureError,
    ChecksumError,
    ConfigError,
    DivergenceError,
    FormatError,
    SearchError,
    SizingError,
    SplitError,
)
from .periodogram import compute_periodogram, render, write_pgm

EXIT_CODES = """\
exit codes:
  0  success
  2  usage error (unknown flag or bad argument)
  3  missing, corrupt or truncated file
  4  invalid or infeasible configuration
  5  training diverged
  6  architecture search found no usable trial
  1  unexpected failure
"""

_FILE_ERRORS = (FileNotFoundError, IsADirectoryError, PermissionError, FormatError, ChecksumError)
_CONFIG_ERRORS = (ConfigError, SizingError, ArchitectureError, SplitError)


def _ensure_out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _write_run_manifest(args, out_dir, started, extra=None) -> None:
    path = os.path.join(out_dir, "run_manifest.txt")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"command = {args.command}\n")
        for key, value in sorted(vars(args).items()):
            if key in ("func", "command"):
                continue
            fh.write(f"{key} = {value}\n")
        for key, value in (extra or {}).items():
            fh.write(f"{key} = {value}\n")
        fh.write(f"started_utc = {time.strftime('%Y-%m-%dT%H:%M:%SZ', time.gmtime(started))}\n")
        fh.write(f"wall_time_s = {time.time() - started:.3f}\n")


def _load_split(path):
    samples, header = ds.load_dataset(path)
    train_s, test_s = ds.stratified_split(samples, header.split_fraction, header.seed)
    return samples, header, train_s, test_s


def _class_name(t: int) -> str:
    if 0 <= t < len(ds.DEFAULT_CLASS_LIBRARY):
        return ds.DEFAULT_CLASS_LIBRARY[t].name
    return f"class_{t}"


def cmd_gen(args) -> int:
    started = time.time()
    out = _ensure_out(args)
    if args.config:
        manifest = ds.load_manifest(args.config)
    else:
        manifest = ds.DatasetManifest()
    if args.full_scale:
        manifest.radio = wf.full_scale_preset()
    if args.seed is not None:
        manifest.seed = args.seed
    if args.f is not None:
        manifest.padding_factor = args.f
    if args.samples is not None:
        manifest.total_samples = args.samples
    if args.snr is not None:
        manifest.snr_db = args.snr
    if args.split is not None:
        manifest.split_fraction = args.split
    if args.raw_features:
        manifest.feature_mode = "raw"
    ds.DatasetManifest.__post_init__(manifest)  # revalidate overrides
    samples = ds.generate_dataset(manifest)
    path = os.path.join(out, args.name)
    ds.save_dataset(samples, manifest, path)
    counts = manifest.class_counts()
    _write_run_manifest(args, out, started, {"samples_written": len(samples), "dataset": path})
    print(f"wrote {len(samples)} samples ({'/'.join(map(str, counts))}) to {path}")
    return 0


def _train_config(args, default_epochs=50):
    return md.TrainConfig(
        batch_size=args.batch,
        lr=args.lr,
        epochs=args.epochs if args.epochs is not None else default_epochs,
        seed=args.seed if args.seed is not None else 0,
    )


def cmd_train(args) -> int:
    started = time.time()
    out = _ensure_out(args)
    _, header, train_s, test_s = _load_split(args.dataset)
    if args.config:
        cfg = md.load_detector_config(args.config)
    else:
        cfg = md.tuned_config(header.padding_factor)
    weights = ds.class_weights(ds.label_counts(train_s, cfg.T))
    tc = _train_config(args)
    model = md.build_detector(
        cfg, (header.n_prime, header.m_prime), header.channels, seed=tc.seed
    )
    history = md.train(model, train_s, test_s, tc, weights)
    ckpt = os.path.join(out, "checkpoint.iatm")
    md.save_checkpoint(model, ckpt)
    md.write_history_csv(history, os.path.join(out, "history.csv"))
    report = md.evaluate(model, test_s, weights)
    report.write_csv(os.path.join(out, "report.csv"))
    _write_run_manifest(args, out, started, {"checkpoint": ckpt, "param_count": model.param_count()})
    final = history[-1]
    print(
        f"trained {tc.epochs} epochs: test loss {final[2]:.6f}, "
        f"test accuracy {final[3]:.4f}, checkpoint {ckpt}"
    )
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    out = _ensure_out(args)
    model = md.load_checkpoint(args.checkpoint)
    _, header, train_s, test_s = _load_split(args.dataset)
    weights = ds.class_weights(ds.label_counts(train_s, model.config.T))
    report = md.evaluate(model, test_s, weights)
    report.write_csv(os.path.join(out, "report.csv"))
    report.write_confusion_csv(os.path.join(out, "confusion.csv"))
    report.write_heatmap(os.path.join(out, "confusion.pgm"))
    _write_run_manifest(args, out, started)
    print(f"test loss {report.mean_loss:.6f}, test accuracy {report.overall_accuracy:.4f}")
    return 0


def cmd_flip_eval(args) -> int:
    started = time.time()
    out = _ensure_out(args)
    model = md.load_checkpoint(args.checkpoint)
    _, header, train_s, test_s = _load_split(args.dataset)
    weights = ds.class_weights(ds.label_counts(train_s, model.config.T))
    plain = md.evaluate(model, test_s, weights)
    flipped = md.evaluate_flipped(model, test_s, weights)
    plain.write_csv(os.path.join(out, "report.csv"))
    flipped.write_csv(os.path.join(out, "report_flipped.csv"))
    plain.write_confusion_csv(os.path.join(out, "confusion.csv"))
    flipped.write_confusion_csv(os.path.join(out, "confusion_flipped.csv"))
    _write_run_manifest(args, out, started)
    deltas = flipped.per_class_accuracy - plain.per_class_accuracy
    order = sorted(range(model.config.T), key=lambda t: deltas[t])
    for t in order:
        print(
            f"class {t} {_class_name(t)}: {plain.per_class_accuracy[t]:.4f} -> "
            f"{flipped.per_class_accuracy[t]:.4f} (delta {deltas[t]:+.4f})"
        )
    print(
        f"overall: {plain.overall_accuracy:.4f} -> {flipped.overall_accuracy:.4f} "
        f"(delta {flipped.overall_accuracy - plain.overall_accuracy:+.4f})"
    )
    return 0


def cmd_search(args) -> int:
    started = time.time()
    out = _ensure_out(args)
    _, header, train_s, test_s = _load_split(args.dataset)
    records, best, best_model = sr.run_search(
        train_s,
        test_s,
        factor=header.padding_factor,
        trials=args.trials,
        master_seed=args.seed if args.seed is not None else 0,
        epochs=args.epochs if args.epochs is not None else 15,
    )
    sr.write_ledger(records, os.path.join(out, "ledger.csv"))
    md.save_detector_config(best.config, os.path.join(out, "best_config.cfg"))
    ckpt = os.path.join(out, "best.iatm")
    md.save_checkpoint(best_model, ckpt)
    ok = sum(1 for r in records if r.status == "ok")
    _write_run_manifest(args, out, started, {"ok_trials": ok, "best_trial": best.index})
    print(
        f"searched {len(records)} trials ({ok} ok): best trial {best.index} "
        f"loss {best.loss:.6f} accuracy {best.accuracy:.4f} params {best.param_count}"
    )
    return 0


def cmd_render(args) -> int:
    started = time.time()
    out = _ensure_out(args)
    factor = args.f if args.f is not None else 0
    if args.scene:
        scene = wf.load_scene(args.scene)
        radio = wf.full_scale_preset() if args.full_scale else wf.desk_preset()
        h = wf.apply_tdd_mask(wf.synthesize_channel(scene, radio))
        if not np.isinf(scene.snr_db):
            h = wf.add_noise(h, scene.snr_db, scene.seed)
        p = compute_periodogram(h, factor)
        path = os.path.join(out, "periodogram.pgm")
        render(p, path)
    elif args.dataset:
        samples, header = ds.load_dataset(args.dataset)
        if not (0 <= args.index < len(samples)):
            raise ConfigError(f"sample index {args.index} out of range 0..{len(samples) - 1}")
        mag = samples[args.index].features.data[:, :, 0].astype(np.float64)
        span = mag.max() - mag.min()
        img = (mag - mag.min()) / span if span > 0 else np.zeros_like(mag)
        path = os.path.join(out, f"sample_{args.index}.pgm")
        write_pgm(img, path)
    else:
        raise ConfigError("render needs --scene or --dataset")
    _write_run_manifest(args, out, started, {"image": path})
    print(f"wrote {path}")
    return 0


def cmd_inspect(args) -> int:
    with open(args.file, "rb") as fh:
        magic = fh.read(4)
    if magic == ds.MAGIC:
        header = ds.read_header(args.file)
        print(f"dataset file {args.file}")
        print(f"  samples = {header.sample_count}")
        print(f"  features = {header.n_prime}x{header.m_prime}x{header.channels}")
        print(f"  padding_factor = {header.padding_factor}")
        print(f"  feature_mode = {header.feature_mode}")
        print(f"  snr_db = {header.snr_db}")
        print(f"  split_fraction = {header.split_fraction}")
        print(f"  seed = {header.seed}")
        r = header.radio
        print(
            f"  radio: f_c={r.f_c} delta_f={r.delta_f} N={r.N} M={r.M} "
            f"T_s={r.T_s} tdd={r.tdd.dl_symbols}/{r.tdd.period_symbols}"
        )
    elif magic == md.CHECKPOINT_MAGIC:
        model = md.load_checkpoint(args.file)
        cfg = model.config
        print(f"checkpoint file {args.file}")
        print(f"  input = {model.input_hw[0]}x{model.input_hw[1]}x{model.in_channels}")
        print(
            f"  arch: C={cfg.C} k_first={cfg.k_first} k_c={cfg.k_c} s_c={cfg.s_c} "
            f"o_c={cfg.o_c} k_m={cfg.k_m} s_m={cfg.s_m} f={cfg.f} d={cfg.d} "
            f"F={cfg.F} T={cfg.T}"
        )
        print(f"  trainable parameters = {model.param_count()}")
    elif magic[:2] == b"P5":
        with open(args.file, "rb") as fh:
            head = fh.read(64).split()
        print(f"graymap file {args.file}")
        print(f"  size = {head[1].decode()}x{head[2].decode()}")
    else:
        raise FormatError(f"unrecognized file magic {magic!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isac-atr",
        description="OFDM sensing simulator and delay-Doppler target classifier",
        epilog=EXIT_CODES,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        if out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master random seed")

    p = sub.add_parser("gen", help="generate and persist a synthetic dataset")
    common(p)
    p.add_argument("--config", help="manifest key/value file")
    p.add_argument("--f", type=int, choices=(0, 1, 2), default=None, help="padding factor")
    p.add_argument("--samples", type=int, default=None, help="total sample count")
    p.add_argument("--snr", type=float, default=None, help="base downlink per-element SNR [dB]")
    p.add_argument("--split", type=float, default=None, help="train fraction")
    p.add_argument("--full-scale", action="store_true", help="use the 1584x1120 radio preset")
    p.add_argument("--raw-features", action="store_true", help="store raw magnitude/phase")
    p.add_argument("--name", default="dataset.iatr", help="dataset file name")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a detector on a dataset")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="detector key/value file (default: tuned for the dataset's F)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=32)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset's test split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flip-eval", help="paired plain/mirrored evaluation")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_flip_eval)

    p = sub.add_parser("search", help="random architecture search")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--trials", type=int, default=16)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("render", help="write a graymap image of a frame or sample")
    common(p)
    p.add_argument("--scene", help="scene key/value file")
    p.add_argument("--dataset", help="dataset file")
    p.add_argument("--index", type=int, default=0, help="sample index within --dataset")
    p.add_argument("--f", type=int, choices=(0, 1, 2), default=None, help="padding factor")
    p.add_argument("--full-scale", action="store_true")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("inspect", help="print headers of a binary artifact")
    p.add_argument("file")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _FILE_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except _CONFIG_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    except DivergenceError as exc:
        print(f"error: DivergenceError: {exc}", file=sys.stderr)
        return 5
    except SearchError as exc:
        print(f"error: SearchError: {exc}", file=sys.stderr)
        return 6
    except Exception as exc:  # pragma: no cover - last resort
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

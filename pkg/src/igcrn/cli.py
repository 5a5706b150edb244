"""``igcrn`` command line: simulate, train, enhance, evaluate, accounting.

Settings resolve as defaults < ``--config`` JSON file < explicit flags. Every
command prints its resolved configuration as one JSON line before running.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import numpy as np

from .acoustics import AcousticError
from .checkpoint import CheckpointError, load_model
from .dataset import DataError, SimConfig, read_manifest, simulate
from .dsp import DspError
from .inference import enhance_full_length, enhance_waveform
from .metrics import GROUPINGS, MetricError, evaluate_records
from .model import VARIANTS, ModelConfig, count_params_and_macs, variant_config
from .mvdr import BeamformerError, enhance_mvdr
from .nn import ConfigError
from .tensor import NumericError
from .training import TrainConfig, Trainer
from .wavio import WavError, read_wav, write_wav

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
DATA_ERRORS = (DataError, WavError, DspError, CheckpointError, ConfigError, AcousticError, MetricError,
               BeamformerError, FileNotFoundError, PermissionError, IsADirectoryError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _echo(command: str, resolved: dict) -> None:
    print(json.dumps({"command": command, "config": resolved}, sort_keys=True), flush=True)


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise DataError(f"config file {path} must hold a JSON object")
    return data


def _merge(base: dict, file_cfg: dict, flags: dict) -> dict:
    out = dict(base)
    for src in (file_cfg, {k: v for k, v in flags.items() if v is not None}):
        for k, v in src.items():
            if k not in out:
                raise UsageError(f"unknown setting {k!r}")
            out[k] = v
    return out


# ---------------------------------------------------------------- simulate

def _sim_flags(p):
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--n-train", type=int, dest="n_train")
    p.add_argument("--n-val", type=int, dest="n_val")
    p.add_argument("--n-test", type=int, dest="n_test")
    p.add_argument("--duration", type=float, help="seconds per mixture")
    p.add_argument("--snrs", type=float, nargs="+", help="train/val SNRs in dB")
    p.add_argument("--test-snrs", type=float, nargs="+", dest="test_snrs")
    p.add_argument("--noises", nargs="+", help="noise presets")
    p.add_argument("--t60", type=float)
    p.add_argument("--test-offset", type=float, dest="test_offset", help="test DOA grid offset in degrees")
    p.add_argument("--seed", type=int)


def cmd_simulate(args) -> int:
    keys = [k for k in SimConfig().to_dict() if k not in ("test_pairs", "sample_rate")]
    flags = {k: getattr(args, k, None) for k in keys}
    resolved = _merge(SimConfig().to_dict(), _load_config_file(args.config), flags)
    cfg = SimConfig.from_dict(resolved)
    _echo("simulate", {**cfg.to_dict(), "out": args.out})
    records = simulate(cfg, args.out, log=print)
    print(f"wrote {len(records)} mixtures to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- train

_MODEL_FLAGS = ("base_channels", "downsample_stages", "lstm_hidden")


def _train_flags(p):
    p.add_argument("--data", required=True, help="dataset directory written by simulate")
    p.add_argument("--out", required=True, help="run directory for checkpoints and loss log")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-drop-epochs", type=int, nargs="+", dest="lr_drop_epochs",
                   help="epochs from which the learning rate is multiplied by --lr-drop-factor")
    p.add_argument("--lr-drop-factor", type=float, dest="lr_drop_factor")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--crop-seconds", type=float, dest="crop_seconds")
    p.add_argument("--base-channels", type=int, dest="base_channels")
    p.add_argument("--downsample-stages", type=int, dest="downsample_stages")
    p.add_argument("--lstm-hidden", type=int, dest="lstm_hidden")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --out")


def cmd_train(args) -> int:
    base = TrainConfig().to_dict()
    file_cfg = _load_config_file(args.config)
    model = dict(base["model"])
    model.update(file_cfg.pop("model", {}))
    model.update({k: getattr(args, k) for k in _MODEL_FLAGS if getattr(args, k) is not None})
    flags = {k: getattr(args, k) for k in ("epochs", "lr", "batch_size", "crop_seconds", "seed", "lr_drop_epochs",
                                           "lr_drop_factor")}
    resolved = _merge(base, file_cfg, flags)
    resolved["model"] = ModelConfig.from_dict(model).to_dict()
    cfg = TrainConfig.from_dict(resolved)
    _echo("train", {**cfg.to_dict(), "data": args.data, "out": args.out, "resume": args.resume})
    Trainer(cfg, args.data, args.out).run(resume=args.resume)
    return EXIT_OK


# ---------------------------------------------------------------- enhance

def cmd_enhance(args) -> int:
    _echo("enhance", {"checkpoint": args.checkpoint, "input": args.input, "output": args.output,
                      "format": args.format})
    model, _ = load_model(args.checkpoint)
    x, fs = read_wav(args.input, 16000)
    if x.shape[0] != 2:
        raise DataError(f"{args.input}: expected 2 channels, got {x.shape[0]}")
    y = enhance_waveform(model, x)
    write_wav(args.output, y, fs, args.format)
    print(f"wrote {y.size} samples ({x.shape[1] - y.size} trailing samples past the last full frame dropped)")
    return EXIT_OK


# ---------------------------------------------------------------- evaluate

def make_enhancer(backend: str, data_dir: str, checkpoint: str | None = None):
    if backend == "identity":
        return lambda noisy, rec: noisy[0]
    if backend == "mvdr":
        def mvdr(noisy, rec):
            noise, _ = read_wav(os.path.join(data_dir, rec["noise_path"]), None)
            spacing = rec.get("scene", {}).get("mic_spacing", 0.02)
            return enhance_mvdr(noisy, rec["speech_doa"], "oracle", noise, mic_spacing=spacing)
        return mvdr
    if backend == "igcrn":
        if checkpoint is None:
            raise UsageError("--checkpoint is required for the igcrn backend")
        model, _ = load_model(checkpoint)
        return lambda noisy, rec: enhance_full_length(model, noisy)
    raise UsageError(f"unknown backend {backend!r}")


def cmd_evaluate(args) -> int:
    _echo("evaluate", {"data": args.data, "split": args.split, "backend": args.backend,
                       "checkpoint": args.checkpoint, "report": args.report})
    records = read_manifest(args.data, args.split)
    enhancer = make_enhancer(args.backend, args.data, args.checkpoint)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = evaluate_records(records, args.data, enhancer)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(report.to_jsonl())
    for g in GROUPINGS:
        print(f"[{g}]")
        print(report.table(g), end="")
    print(json.dumps({"overall": report.overall()}, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- accounting

def accounting_rows(names, frames_per_second: float = 62.5) -> list[dict]:
    rows = []
    for name in names:
        cfg = variant_config(name)
        params, macs = count_params_and_macs(cfg, frames_per_second)
        rows.append({"variant": name, "params": params, "params_m": params / 1e6,
                     "macs_g_per_s": macs / 1e9, "lstm": cfg.lstm_width})
    return rows


def cmd_accounting(args) -> int:
    names = args.variants or list(VARIANTS)
    for n in names:
        if n not in VARIANTS:
            raise UsageError(f"unknown variant {n!r}; known: {', '.join(VARIANTS)}")
    _echo("accounting", {"variants": names, "frames_per_second": args.fps})
    rows = accounting_rows(names, args.fps)
    if args.json:
        for r in rows:
            print(json.dumps(r, sort_keys=True))
        return EXIT_OK
    print(f"{'variant':<14} {'LSTM':>5} {'MAC(G/s)':>10} {'Params(M)':>10}")
    for r in rows:
        print(f"{r['variant']:<14} {r['lstm']:>5} {r['macs_g_per_s']:>10.2f} {r['params_m']:>10.3f}")
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="igcrn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="synthesize a dual-channel dataset and manifest")
    _sim_flags(p)
    p.add_argument("--config", help="JSON file of settings")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train a model on a simulated dataset")
    _train_flags(p)
    p.add_argument("--config", help="JSON file of settings")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance one 2-channel 16 kHz WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--format", choices=("float32", "pcm16"), default="float32")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="score an enhancer over a manifest split")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--backend", choices=("igcrn", "mvdr", "identity"), default="identity")
    p.add_argument("--checkpoint")
    p.add_argument("--report", help="write per-utterance and group records as JSONL")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("accounting", help="parameter and MAC counts of the model variants")
    p.add_argument("--variants", nargs="+")
    p.add_argument("--fps", type=float, default=62.5, help="STFT frames per second of audio")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_accounting)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TypeError, ValueError) as exc:
        if isinstance(exc, np.linalg.LinAlgError):
            raise
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

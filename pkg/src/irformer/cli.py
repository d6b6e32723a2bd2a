"""``irformer`` command line: train, infer, eval, gradcheck, analyze, synth.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime or numerical
failure. Logs go to stderr; artifacts go to files.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .blocks import init_params
from .budget import count_params_and_macs
from .checkpoint import load_checkpoint
from .config import RunConfig
from .data import (ImagePair, load_pairs, load_png, make_synthetic_pairs, resize_image, save_png,
                   scan_manifest, write_pairs)
from .exceptions import ConfigError, DatasetError, IRFormerError
from .gradcheck import block_checks
from .losses import format_db
from .tensor import Tensor
from .train import TrainSettings, evaluate, predict, train

log = logging.getLogger("irformer")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--literal-eq7", action="store_true", help="add SSIM instead of 1 - SSIM to the loss")
    p.add_argument("--no-epa", action="store_true", help="ablate the enhanced perception attention block")
    p.add_argument("--no-dfa", action="store_true", help="replace DFA with a 3x3 conv")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="irformer", description="Visible-to-infrared image translation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model")
    _config_flags(p)
    p.add_argument("--synthetic", type=int, metavar="N", help="train on N generated pairs instead of data.root")
    p.add_argument("--resume", metavar="CKPT", help="continue from an epoch checkpoint")
    p.add_argument("--epochs", type=int, help="shorthand for --set train.epochs=N")

    p = sub.add_parser("infer", help="translate an image or a directory of images")
    _config_flags(p)
    p.add_argument("checkpoint")
    p.add_argument("input")
    p.add_argument("out_dir")

    p = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint on a paired dataset")
    _config_flags(p)
    p.add_argument("checkpoint")
    p.add_argument("data_root", nargs="?")
    p.add_argument("--synthetic", type=int, metavar="N")
    p.add_argument("--out", help="metrics CSV path (default: stdout)")

    p = sub.add_parser("gradcheck", help="finite-difference check of every block and loss")
    _config_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("analyze", help="parameter and MAC counts")
    _config_flags(p)
    p.add_argument("--resolution", type=int)

    p = sub.add_parser("synth", help="write a generated dataset to disk")
    p.add_argument("n", type=int)
    p.add_argument("out_root")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config, args.overrides)
    if getattr(args, "literal_eq7", False):
        cfg["loss.literal_eq7"] = True
    if getattr(args, "no_epa", False):
        cfg["model.use_epa"] = False
    if getattr(args, "no_dfa", False):
        cfg["model.use_dfa"] = False
    if getattr(args, "epochs", None) is not None:
        cfg["train.epochs"] = args.epochs
    if getattr(args, "synthetic", None):
        cfg["data.synthetic"] = args.synthetic
    return cfg


def _load_dataset(roots: str, resolution: int, split: str) -> list[ImagePair]:
    pairs = []
    # several comma-separated roots are concatenated in the listed order
    for root in [r for r in roots.split(",") if r.strip()]:
        pairs.extend(load_pairs(scan_manifest(root.strip(), split), resolution))
    return pairs


def _training_pairs(cfg: RunConfig) -> list[ImagePair]:
    res = cfg["data.resolution"]
    if cfg["data.synthetic"]:
        return make_synthetic_pairs(cfg["data.synthetic"], res, cfg["data.synthetic_seed"])
    return _load_dataset(cfg.require("data.root"), res, "train")


def write_metrics(rows: list[dict], stream) -> dict:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["image_id", "psnr_db", "ssim"])
    for r in rows:
        writer.writerow([r["image_id"], format_db(r["psnr_db"]), f"{r['ssim']:.6f}"])
    mean = {"image_id": "mean", "psnr_db": float(np.mean([r["psnr_db"] for r in rows])),
            "ssim": float(np.mean([r["ssim"] for r in rows]))}
    writer.writerow([mean["image_id"], format_db(mean["psnr_db"]), f"{mean['ssim']:.6f}"])
    return mean


def cmd_train(args) -> int:
    cfg = _run_config(args)
    model_cfg = cfg.model_config()
    settings = TrainSettings.from_run_config(cfg)
    pairs = _training_pairs(cfg)
    out = Path(cfg["out.dir"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    resume = None
    if args.resume:
        resume = load_checkpoint(args.resume)
        if resume.config != model_cfg:
            raise ConfigError(f"checkpoint config {resume.config} differs from the run config {model_cfg}")
    log.info("training on %d pairs for %d epochs -> %s", len(pairs), settings.epochs, out)
    t0 = time.time()
    result = train(pairs, model_cfg, settings, out_dir=out, resume=resume)
    log.info("finished %d steps in %.1fs", result.train_state.step, time.time() - t0)
    val_root = cfg["data.val_root"]
    if val_root:
        val_pairs = _load_dataset(val_root, cfg["data.resolution"], "val")
        with (out / "val_metrics.csv").open("w") as fh:
            mean = write_metrics(evaluate(result.params, model_cfg, val_pairs), fh)
        log.info("validation: PSNR %s dB, SSIM %.4f", format_db(mean["psnr_db"]), mean["ssim"])
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = _run_config(args)
    ck = load_checkpoint(args.checkpoint)
    src = Path(args.input)
    files = sorted(src.glob("*.png")) if src.is_dir() else [src]
    if not files:
        raise DatasetError(f"no PNG files found at {src}")
    res = cfg["data.resolution"]
    out = Path(args.out_dir)
    for path in files:
        vis = load_png(path)
        if vis.shape[0] == 1:
            vis = Tensor(np.repeat(vis.data, 3, axis=0))
        vis = resize_image(vis, res)
        pred = predict(ck.params, ck.config, Tensor(vis.data[None]))
        save_png(pred.data[0], out / f"{path.stem}.png")
        log.info("wrote %s", out / f"{path.stem}.png")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    ck = load_checkpoint(args.checkpoint)
    res = cfg["data.resolution"]
    if args.synthetic:
        pairs = make_synthetic_pairs(args.synthetic, res, cfg["data.synthetic_seed"])
    else:
        root = args.data_root or cfg.get("data.root")
        if not root:
            raise UsageError("eval needs a data root or --synthetic N")
        pairs = _load_dataset(root, res, "test")
    rows = evaluate(ck.params, ck.config, pairs, literal_eq7=cfg["loss.literal_eq7"])
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w") as fh:
            mean = write_metrics(rows, fh)
    else:
        mean = write_metrics(rows, sys.stdout)
    log.info("%d images: PSNR %s dB, SSIM %.4f", len(rows), format_db(mean["psnr_db"]), mean["ssim"])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _run_config(args)
    model_cfg = cfg.model_config()
    # blocks run on 12x12 and the full model on 16x16; keep the scales both admit
    scales = [s for s in model_cfg.efm_scales if 12 % s == 0 and 16 % s == 0] or [2]
    if scales != model_cfg.efm_scales:
        log.info("gradcheck uses efm_scales=%s (small inputs)", scales)
    model_cfg.efm_scales = scales
    t0 = time.time()
    reports = block_checks(model_cfg, seed=args.seed, eps=args.eps, tol=args.tol)
    for r in reports:
        print(r.line())
    ok = all(r.passed for r in reports)
    print(f"{'PASS' if ok else 'FAIL'} all ({len(reports)} checks, {time.time() - t0:.1f}s)")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_analyze(args) -> int:
    cfg = _run_config(args)
    model_cfg = cfg.model_config()
    res = args.resolution or cfg["data.resolution"]
    report = count_params_and_macs(model_cfg, res, res)
    live = init_params(model_cfg, 0).count()
    for line in report.lines():
        print(line)
    print(f"live ParamStore count: {live} ({'match' if live == report.params else 'MISMATCH'})")
    return EXIT_OK if live == report.params else EXIT_RUNTIME


def cmd_synth(args) -> int:
    pairs = make_synthetic_pairs(args.n, args.size, args.seed)
    write_pairs(pairs, args.out_root)
    log.info("wrote %d pairs under %s", len(pairs), args.out_root)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
    "gradcheck": cmd_gradcheck, "analyze": cmd_analyze, "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (IRFormerError, OSError, ValueError, FloatingPointError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

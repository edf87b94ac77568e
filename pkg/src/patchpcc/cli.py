"""Command line entry point: ``patchpcc {train,compress,decompress,eval,inspect}``."""

import argparse
import glob
import json
import math
import os
import sys

import numpy as np

from patchpcc import container as ctr
from patchpcc.errors import CloudParseError, FormatMismatchError, MalformedStreamError
from patchpcc.io import parse_cloud, write_cloud
from patchpcc.metrics import evaluate
from patchpcc.model import CodecModel
from patchpcc.pipeline import CodecSettings, compress, decode_codes, decompress

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_MISMATCH = 3
EXIT_MALFORMED = 4


def _codec_args(p):
    p.add_argument("--k", dest="K", type=int, default=256, help="input patch size K")
    p.add_argument("--roc", type=float, default=0.25, help="octree budget in bits per point")
    p.add_argument("--alpha", type=float, default=None,
                   help="coverage factor (default 2, or 6 with --extended)")
    p.add_argument("--extended", action="store_true",
                   help="random sampling and unit-ball patches for sparse clouds")
    p.add_argument("--seed", type=int, default=0)


def _alpha(args):
    if args.alpha is not None:
        return args.alpha
    return 6.0 if args.extended else 2.0


def build_parser():
    parser = argparse.ArgumentParser(prog="patchpcc", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="fit a codec model on one or more clouds")
    p.add_argument("inputs", nargs="+", help="cloud files or glob patterns")
    p.add_argument("--weights", required=True, help="output weight file (rewritten every epoch)")
    p.add_argument("--init", default=None, help="start from these weights (e.g. before --mode gan)")
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--lr", type=float, default=None,
                   help="learning rate (default 5e-4 plain, 5e-5 gan)")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-6)
    p.add_argument("--lambda2", dest="lam2", type=float, default=1e-3)
    p.add_argument("--mode", choices=("plain", "gan"), default="plain")
    p.add_argument("--d", type=int, default=16, help="latent width")
    p.add_argument("--levels", type=int, default=7, help="quantisation levels L")
    p.add_argument("--log", default=None, help="training log file (default: stdout)")
    _codec_args(p)

    p = sub.add_parser("compress", help="encode a cloud into a container file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--weights", required=True)
    _codec_args(p)

    p = sub.add_parser("decompress", help="decode a container into a cloud file")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--weights", required=True)

    p = sub.add_parser("eval", help="distortion and uniformity metrics of a reconstruction")
    p.add_argument("reference")
    p.add_argument("test")
    p.add_argument("--peak", type=float, default=1.0, help="PSNR peak value")
    p.add_argument("--container", default=None, help="compressed file, for the bpp field")

    p = sub.add_parser("inspect", help="dump container fields (and codes, given weights)")
    p.add_argument("input")
    p.add_argument("--weights", default=None)
    return parser


def _expand(patterns):
    paths = []
    for pat in patterns:
        hits = sorted(glob.glob(pat))
        paths.extend(hits if hits else [pat])
    return paths


def cmd_train(args, out):
    from patchpcc.training import TrainConfig, Trainer

    clouds = [parse_cloud(p) for p in _expand(args.inputs)]
    cfg = dict(K=args.K, alpha=_alpha(args), L=args.levels, d=args.d, lam=args.lam,
               lam2=args.lam2, epochs=args.epochs, seed=args.seed, mode=args.mode,
               roc=args.roc, extended=args.extended)
    if args.lr is not None:
        cfg["lr" if args.mode == "plain" else "gan_lr"] = args.lr
    config = TrainConfig(**cfg)
    if args.init:
        model = CodecModel.load(args.init)
        if model.k != config.k or model.d != config.d or model.levels != config.L:
            raise FormatMismatchError(
                f"initial weights have (k, d, L)=({model.k}, {model.d}, {model.levels}), "
                f"config needs ({config.k}, {config.d}, {config.L})")
    else:
        model = config.build_model()
    trainer = Trainer(model, config)
    log_fh = open(args.log, "w") if args.log else None

    def log(line):
        print(line, file=log_fh or out, flush=log_fh is None)

    def checkpoint(epoch, trace):
        model.save(args.weights)
        with open(args.weights + ".trace", "w") as fh:
            fh.writelines(rec.to_line(config.mode == "gan") + "\n" for rec in trace)

    try:
        trainer.fit(clouds, log=log, on_epoch=checkpoint)
    finally:
        if log_fh:
            log_fh.close()
    return EXIT_OK


def _settings(args, model):
    settings = CodecSettings(K=args.K, alpha=_alpha(args), roc=args.roc,
                             extended=args.extended, seed=args.seed)
    if settings.k != model.k:
        raise FormatMismatchError(
            f"weights decode k={model.k} points per patch but K={args.K}, "
            f"alpha={settings.alpha} gives k={settings.k}")
    return settings


def cmd_compress(args, out):
    model = CodecModel.load(args.weights)
    settings = _settings(args, model)
    cloud = parse_cloud(args.input)
    result = compress(cloud, model, settings)
    with open(args.output, "wb") as fh:
        fh.write(result.data)
    print(" ".join(f"{k}={v!r}" for k, v in result.summary().items()), file=out)
    return EXIT_OK


def cmd_decompress(args, out):
    model = CodecModel.load(args.weights)
    with open(args.input, "rb") as fh:
        data = fh.read()
    result = decompress(data, model)
    write_cloud(args.output, result.cloud)
    h = result.header
    print(f"points={len(result.cloud)} patches={result.container.n_centroids} k={h.k}", file=out)
    return EXIT_OK


def cmd_eval(args, out):
    ref = parse_cloud(args.reference)
    test = parse_cloud(args.test)
    bpp = math.nan
    if args.container:
        bpp = 8 * os.path.getsize(args.container) / len(ref)
    print(evaluate(ref.points, test.points, peak=args.peak, bpp=bpp).to_line(), file=out)
    return EXIT_OK


def cmd_inspect(args, out):
    with open(args.input, "rb") as fh:
        data = fh.read()
    box = ctr.unpack(data)
    h = box.header
    info = {
        "n": h.n, "K": h.K, "k": h.k, "d": h.d, "L": h.L,
        "scale": h.scale, "offset": list(h.offset), "flags": h.flags,
        "depth": box.octree.depth if box.octree is not None else 0,
        "patches": box.n_centroids, "bytes": len(data), "bpp": 8 * len(data) / h.n,
        "sections": box.sections(),
    }
    if args.weights:
        model = CodecModel.load(args.weights)
        _, codes = decode_codes(box, model)
        info["codes"] = np.asarray(codes).tolist()
    print(json.dumps(info), file=out)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train, "compress": cmd_compress, "decompress": cmd_decompress,
    "eval": cmd_eval, "inspect": cmd_inspect,
}


def main(argv=None, out=None):
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.verb](args, out)
    except CloudParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except FormatMismatchError as exc:
        print(f"format mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except MalformedStreamError as exc:
        print(f"malformed stream: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command line entry point: encode, decode, train, metrics, visualize, gen-data."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import codec, data, metrics, visualize
from .config import TOY, ModelConfig
from .model import ParaHydra
from .train import DatasetSpec, TrainConfig, train


def _load_model(path: str) -> ParaHydra:
    return ParaHydra.load(path)


def cmd_encode(args: argparse.Namespace) -> int:
    model = _load_model(args.weights)
    views = data.read_views(args.views)
    result = codec.compress(model, views, lam=args.lam, workers=args.workers)
    Path(args.output).write_bytes(result.data)
    h = result.header
    for k, bpp in enumerate(result.view_bpp()):
        print(f"view {k}: {bpp!r} bpp (payload)")
    print(f"total: {len(result.data)} bytes, {result.bpp!r} bpp over {h.k} x {h.orig_h} x {h.orig_w}")
    if args.debug_hashes:
        for k, digest in enumerate(result.latent_hashes()):
            print(f"latent {k}: {digest}")
    return 0


def cmd_decode(args: argparse.Namespace) -> int:
    model = _load_model(args.weights)
    result = codec.decompress(model, Path(args.bitstream).read_bytes(), workers=args.workers)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for k, img in enumerate(result.images):
        path = out / f"view{k}.ppm"
        data.write_ppm(path, img)
        print(f"wrote {path}")
    if args.debug_hashes:
        for k, digest in enumerate(result.latent_hashes()):
            print(f"latent {k}: {digest}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    model_cfg = ModelConfig(
        channels=args.channels, slices=args.slices, window=TOY.window, ep_hidden=args.channels, seed=args.seed
    )
    cfg = TrainConfig(
        lam=args.lam,
        steps=args.steps,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        dataset=DatasetSpec(args.scenes, args.views, args.size, args.size, args.disparity, args.seed),
        model=model_cfg,
        allow_any_lambda=args.any_lambda,
    )
    _, records = train(cfg, weights_out=args.output, log_path=args.log)
    if records:
        last = records[-1]
        print(f"step {last.step}: distortion {last.distortion:.6g}, rate {last.rate_bpp:.6g} bpp, loss {last.loss:.6g}")
    print(f"wrote {args.output}")
    return 0


def _read_curve(path: str) -> list[metrics.RdPoint]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    try:
        return [metrics.RdPoint(float(r[0]), float(r[1])) for r in rows]
    except (IndexError, ValueError) as exc:
        raise ValueError(f"{path}: expected rows of 'bpp,psnr' ({exc})") from exc


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def cmd_metrics(args: argparse.Namespace) -> int:
    if args.metric == "psnr":
        value = metrics.psnr(data.read_ppm(args.reference), data.read_ppm(args.test))
        print(f"psnr: {value:.4f} dB")
    else:
        value = metrics.bdbr(_read_curve(args.curve_a), _read_curve(args.curve_b))
        print(f"bdbr: {value:.4f} %")
    return 0


def cmd_visualize(args: argparse.Namespace) -> int:
    main = data.read_ppm(args.main)
    sides = data.read_views([args.main, *args.sides])[1:]
    if args.weights:
        maps = visualize.model_consistency(_load_model(args.weights), main, sides)
    else:
        maps = visualize.descriptor_consistency(main, sides)
    for path in visualize.write_maps(maps, args.output):
        print(f"wrote {path} and {path.with_suffix('.txt')}")
    return 0


def cmd_gen_data(args: argparse.Namespace) -> int:
    occ = []
    for spec in args.occlude or []:
        try:
            occ.append(data.Occlusion(*(int(v) for v in spec.split(","))))
        except TypeError as exc:
            raise ValueError(f"--occlude expects VIEW,TOP,LEFT,HEIGHT,WIDTH, got {spec!r}") from exc
    vs = data.gen_synthetic_views(args.seed, args.views, args.height, args.width, args.disparity, occ)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    for k, v in enumerate(vs.views):
        path = out / f"view{k}.ppm"
        data.write_ppm(path, v)
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parahydra", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("encode", help="encode K views into one bitstream")
    e.add_argument("views", nargs="+", help="P6 images, all the same size")
    e.add_argument("-w", "--weights", required=True)
    e.add_argument("-o", "--output", required=True)
    e.add_argument("--lambda", dest="lam", type=float, default=None, help="recorded in the header")
    e.add_argument("--workers", type=int, default=1, help="threads for per-view encoding")
    e.add_argument("--debug-hashes", action="store_true", help="print a hash of every quantized latent")
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="jointly decode a bitstream")
    d.add_argument("bitstream")
    d.add_argument("-w", "--weights", required=True)
    d.add_argument("-o", "--output", required=True, help="directory for view<k>.ppm")
    d.add_argument("--workers", type=int, default=1, help="threads for per-view entropy decoding")
    d.add_argument("--debug-hashes", action="store_true", help="print a hash of every decoded latent")
    d.set_defaults(func=cmd_decode)

    t = sub.add_parser("train", help="train on synthetic scenes")
    t.add_argument("-o", "--output", required=True, help="weights file")
    t.add_argument("--log", default=None, help="CSV loss log (step,distortion,rate_bpp,loss)")
    t.add_argument("--lambda", dest="lam", type=float, default=1024.0)
    t.add_argument("--any-lambda", action="store_true", help="allow lambda outside the standard set")
    t.add_argument("--steps", type=int, default=500)
    t.add_argument("--batch-size", type=int, default=2)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--scenes", type=int, default=8)
    t.add_argument("--views", type=int, default=2)
    t.add_argument("--size", type=int, default=64)
    t.add_argument("--disparity", type=int, default=4)
    t.add_argument("--channels", type=int, default=TOY.channels)
    t.add_argument("--slices", type=int, default=TOY.slices)
    t.set_defaults(func=cmd_train)

    m = sub.add_parser("metrics", help="PSNR between images or BDBR between RD curves")
    msub = m.add_subparsers(dest="metric", required=True)
    mp = msub.add_parser("psnr")
    mp.add_argument("reference")
    mp.add_argument("test")
    mb = msub.add_parser("bdbr", help="CSV files with rows 'bpp,psnr'")
    mb.add_argument("curve_a")
    mb.add_argument("curve_b")
    m.set_defaults(func=cmd_metrics)

    v = sub.add_parser("visualize", help="consistency maps of side views against a main view")
    v.add_argument("main")
    v.add_argument("sides", nargs="+")
    v.add_argument("-o", "--output", required=True, help="prefix for <prefix>_side<k>.pgm/.txt")
    v.add_argument("-w", "--weights", default=None, help="use the first joint-decoder stage of these weights")
    v.set_defaults(func=cmd_visualize)

    g = sub.add_parser("gen-data", help="write a synthetic multi-view scene")
    g.add_argument("-o", "--output", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--views", type=int, default=2)
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--disparity", type=int, default=4)
    g.add_argument("--occlude", action="append", metavar="VIEW,TOP,LEFT,H,W")
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"parahydra: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

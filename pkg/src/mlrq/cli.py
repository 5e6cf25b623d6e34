"""Command-line interface.

Every command writes ``<output>.manifest.json`` next to its main output;
``mlrq replay <manifest>`` re-runs the recorded command and reproduces the
outputs byte for byte.  Exit status: 0 success, 1 invalid input, 2 I/O
failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from mlrq import __version__, synth
from mlrq._backend import backend_name
from mlrq.codec import (
    DEFAULT_BLOCK,
    Bitstream,
    bpp,
    decode_image,
    encode_image,
    psnr,
    read_pgm,
    train_image_model,
    write_pgm,
)
from mlrq.model import Model, write_atomic
from mlrq.trainer import POLICIES, TrainConfig, parse_layer_sizes

log = logging.getLogger("mlrq")

DEFAULT_LAYER_SIZES = "256x5,128x5,32x5,16x5"
EVAL_HEADER = ("image", "layers", "raw_bpp", "coded_bpp", "psnr_db")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _write_text(path, text: str) -> None:
    write_atomic(path, text.encode())


def _expand_images(items) -> list[Path]:
    paths = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("*.pgm")))
        elif p.exists():
            paths.append(p)
        else:
            raise FileNotFoundError(f"no such image or directory: {p}")
    if not paths:
        raise ValueError("no PGM images found")
    return paths


# -- commands -----------------------------------------------------------------

def cmd_simulate(args):
    src = synth.SourceSpec(args.n, args.sigma2, args.seed, args.samples)
    if args.rate is not None:
        rates = [args.rate] * args.layers
    else:
        rates = [math.log2(args.k) / args.n] * args.layers

    def progress(row):
        log.info("layer %d  R=%.4f  D=%.6g  bound=%.6g", row.layer, row.cum_rate_bits, row.distortion, row.shannon_bound)

    trace = synth.simulate_multistage(
        src, rates, args.family, args.schedule, args.normalization, args.max_codewords, progress
    )
    _write_text(args.out, trace.to_csv())
    return [args.out]


def cmd_sweep(args):
    src = synth.SourceSpec(args.n, args.sigma2, args.seed, args.samples)
    if args.variances:
        variances = [float(v) for v in args.variances.split(",")]
    else:
        variances = synth.default_sweep_variances(src, args.k, args.points, args.span)
    table = synth.sweep_codebook_variance(src, args.k, variances)
    _write_text(args.out, table.to_csv())
    v0 = synth.first_layer_variance(args.sigma2, args.k, args.n)
    print(f"argmin variance {table.argmin_variance():.6g} (first-layer rule {v0:.6g})")
    return [args.out]


def _split(paths, fraction, seed):
    if len(paths) < 2:
        raise ValueError("need at least two images to form train and test sets")
    order = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x5A1,))).permutation(len(paths))
    n_train = min(max(1, int(round(fraction * len(paths)))), len(paths) - 1)
    return [paths[i] for i in sorted(order[:n_train])], [paths[i] for i in sorted(order[n_train:])]


def cmd_train(args):
    if not 0 < args.split < 1:
        raise ValueError("--split must be in (0, 1)")
    paths = _expand_images(args.images)
    train_paths, test_paths = _split(paths, args.split, args.seed)
    cfg = TrainConfig(
        layer_sizes=parse_layer_sizes(args.layer_sizes),
        max_iters=args.max_iters,
        rel_tol=args.rel_tol,
        restarts=args.restarts,
        overfit_margin=args.margin,
        seed=args.seed,
        policy=args.policy,
    )
    model, report = train_image_model(
        [read_pgm(p) for p in train_paths], [read_pgm(p) for p in test_paths], cfg, args.block
    )
    model.save(args.out)
    report_path = args.report or f"{args.out}.report.csv"
    _write_text(report_path, report.to_csv())
    if report.flagged_layers:
        print(f"layers over the {args.margin:g} margin: {report.flagged_layers}", file=sys.stderr)
    if args.test_list:
        _write_text(args.test_list, "".join(f"{p}\n" for p in test_paths))
    print(f"model {model.hash:016x}: {model.stack.L} layers, raw {model.stack.total_rate() :.4f} bits/dim")
    outs = [args.out, report_path] + ([args.test_list] if args.test_list else [])
    return outs


def cmd_encode(args):
    model = Model.load(args.model)
    bs = encode_image(read_pgm(args.input), model, args.layers)
    write_atomic(args.out, bs.to_bytes())
    raw, coded = bpp(bs, model.stack)
    print(f"{bs.layers} layers  raw_bpp {raw:.4f}  coded_bpp {coded:.4f}")
    return [args.out]


def cmd_decode(args):
    model = Model.load(args.model)
    bs = Bitstream.from_bytes(Path(args.input).read_bytes())
    write_pgm(args.out, decode_image(bs, model, args.layers))
    return [args.out]


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else repr(x)


def _read_baseline(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return [(float(r["bpp"]), float(r["psnr_db"])) for r in rows]
    except (KeyError, ValueError):
        raise ValueError(f"{path}: baseline CSV needs numeric 'bpp' and 'psnr_db' columns") from None


def cmd_eval(args):
    model = Model.load(args.model)
    paths = _expand_images(args.images)
    L = model.stack.L
    layer_list = [int(j) for j in args.layers.split(",")] if args.layers else list(range(1, L + 1))
    if any(not 0 <= j <= L for j in layer_list):
        raise ValueError(f"--layers values must be in [0, {L}]")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_HEADER)
    summary = {j: [] for j in layer_list}
    for p in paths:
        img = read_pgm(p)
        bs = encode_image(img, model, max(layer_list))
        for j in layer_list:
            part = bs.truncated(j)
            raw, coded = bpp(part, model.stack)
            q = psnr(img, decode_image(part, model))
            w.writerow([p.name, j, repr(raw), repr(coded), _fmt(q)])
            summary[j].append((raw, coded, q))
    _write_text(args.out, buf.getvalue())

    print("layers,raw_bpp,coded_bpp,psnr_db")
    for j, vals in summary.items():
        a = np.array(vals)
        print(f"{j},{a[:, 0].mean():.4f},{a[:, 1].mean():.4f},{a[:, 2].mean():.3f}")
    if args.baseline:
        base = sorted(_read_baseline(args.baseline))
        bx, by = np.array([b[0] for b in base]), np.array([b[1] for b in base])
        print("coded_bpp,psnr_db,baseline_psnr_db")
        for j, vals in summary.items():
            a = np.array(vals)
            c = a[:, 1].mean()
            ref = np.interp(c, bx, by, left=np.nan, right=np.nan)
            print(f"{c:.4f},{a[:, 2].mean():.3f},{ref:.3f}")
    return [args.out]


def cmd_corpus(args):
    from mlrq.corpus import write_corpus

    paths = write_corpus(args.out, args.count, args.seed, args.height, args.width)
    print(f"wrote {len(paths)} images to {args.out}")
    return [str(p) for p in paths]


def cmd_replay(args):
    manifest = json.loads(Path(args.manifest).read_text())
    argv = manifest.get("argv")
    if not isinstance(argv, list) or not argv or argv[0] == "replay":
        raise ValueError("manifest has no replayable command")
    code = run(argv, write_manifest=False)
    if code:
        raise ValueError(f"replayed command failed with status {code}")
    return []


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mlrq", description="Multi-layer residual vector quantization.")
    p.add_argument("--version", action="version", version=f"mlrq {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    D = argparse.ArgumentDefaultsHelpFormatter

    s = sub.add_parser("simulate", help="distortion-rate trace for a random Gaussian source", formatter_class=D)
    s.add_argument("--n", type=int, default=512, help="vector dimension")
    s.add_argument("--layers", type=int, default=200, help="number of layers L")
    s.add_argument("--k", type=int, default=4096, help="codewords per layer")
    s.add_argument("--rate", type=float, default=None, help="per-layer rate in bits/dim (overrides --k)")
    s.add_argument("--family", choices=synth.FAMILIES, default="gaussian", help="codebook entry distribution")
    s.add_argument("--schedule", choices=synth.SCHEDULE_MODES, default="residual-energy",
                   help="codeword variance rule")
    s.add_argument("--normalization", choices=synth.NORMALIZATIONS, default="predicted",
                   help="size layers from predicted or measured distortion")
    s.add_argument("--sigma2", type=float, default=1.0, help="source variance")
    s.add_argument("--samples", type=int, default=1000, help="source realizations")
    s.add_argument("--max-codewords", type=int, default=synth.DEFAULT_MAX_CODEWORDS, help="cap on k per layer")
    s.add_argument("--seed", type=int, default=0, help="master RNG seed")
    s.add_argument("--out", required=True, help="output CSV")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep-variance", help="distortion and orthogonality versus codebook variance",
                       formatter_class=D)
    s.add_argument("--n", type=int, default=200, help="vector dimension")
    s.add_argument("--k", type=int, default=8, help="codewords")
    s.add_argument("--sigma2", type=float, default=1.0, help="source variance")
    s.add_argument("--samples", type=int, default=1000, help="source realizations")
    s.add_argument("--points", type=int, default=41, help="number of variances")
    s.add_argument("--span", type=float, default=4.0, help="sweep up to span x sigma2(1-2^-2R)")
    s.add_argument("--variances", default=None, help="explicit comma-separated variances")
    s.add_argument("--seed", type=int, default=0, help="master RNG seed")
    s.add_argument("--out", required=True, help="output CSV")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("train", help="train a layer stack on PGM images", formatter_class=D)
    s.add_argument("--images", nargs="+", required=True, help="PGM files or directories")
    s.add_argument("--layer-sizes", "--k", dest="layer_sizes", default=DEFAULT_LAYER_SIZES,
                   help="codewords per layer, e.g. 256x5,128x5")
    s.add_argument("--block", type=int, default=DEFAULT_BLOCK, help="block side b")
    s.add_argument("--margin", type=float, default=0.10, help="overfit margin (test/train - 1)")
    s.add_argument("--policy", choices=POLICIES, default="report", help="what to do with flagged layers")
    s.add_argument("--split", type=float, default=0.8, help="training fraction of the images")
    s.add_argument("--max-iters", type=int, default=100, help="Lloyd iterations per run")
    s.add_argument("--rel-tol", type=float, default=1e-4, help="relative improvement to stop")
    s.add_argument("--restarts", type=int, default=3, help="k-means++ restarts per layer")
    s.add_argument("--seed", type=int, default=0, help="master RNG seed")
    s.add_argument("--report", default=None, help="report CSV (default <out>.report.csv)")
    s.add_argument("--test-list", default=None, help="write the held-out image paths here")
    s.add_argument("--out", required=True, help="output model file")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("encode", help="compress a PGM image", formatter_class=D)
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True, help="PGM image")
    s.add_argument("--layers", type=int, default=None, help="layers to emit (default all)")
    s.add_argument("--out", required=True, help="output bitstream")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("decode", help="decompress a bitstream to PGM", formatter_class=D)
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True, help="bitstream")
    s.add_argument("--layers", type=int, default=None, help="layers to use (default all present)")
    s.add_argument("--out", required=True, help="output PGM")
    s.set_defaults(func=cmd_decode)

    s = sub.add_parser("eval", help="PSNR and BPP per decoded layer count", formatter_class=D)
    s.add_argument("--model", required=True)
    s.add_argument("--images", nargs="+", required=True, help="PGM files or directories")
    s.add_argument("--layers", default=None, help="comma-separated layer counts (default 1..L)")
    s.add_argument("--baseline", default=None, help="external CSV with bpp,psnr_db columns to compare against")
    s.add_argument("--out", required=True, help="output CSV")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("make-corpus", help="write synthetic face-like PGM images", formatter_class=D)
    s.add_argument("--count", type=int, default=240)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--width", type=int, default=56)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_corpus)

    s = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_replay)
    return p


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def resolved_argv(parser, args) -> list[str]:
    """The command line with every default spelled out."""
    argv = [args.command]
    for action in _subparser(parser, args.command)._actions:
        if not action.option_strings or action.dest == "help":
            continue
        value = getattr(args, action.dest, None)
        if value is None:
            continue
        argv.append(action.option_strings[0])
        if isinstance(value, list):
            argv.extend(str(v) for v in value)
        else:
            argv.append(repr(value) if isinstance(value, float) else str(value))
    return argv


def _inputs(args):
    out = [getattr(args, key) for key in ("model", "input") if getattr(args, key, None)]
    out.extend(getattr(args, "images", None) or [])
    return out


def build_manifest(parser, args, outputs, seconds) -> dict:
    config = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
    return {
        "command": args.command,
        "argv": resolved_argv(parser, args),
        "config": config,
        "seed": config.get("seed"),
        "tool_version": __version__,
        "backend": backend_name,
        "inputs": [str(x) for x in _inputs(args)],
        "outputs": [str(o) for o in outputs],
        "duration_seconds": round(seconds, 3),
    }


def manifest_path(args, outputs) -> Path:
    if args.command == "make-corpus":
        return Path(args.out) / "corpus.manifest.json"
    return Path(f"{outputs[0]}.manifest.json")


def run(argv=None, write_manifest=True) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"mlrq: error: {exc}", file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    start = time.perf_counter()
    try:
        outputs = args.func(args)
        if write_manifest and args.command != "replay":
            doc = build_manifest(parser, args, outputs, time.perf_counter() - start)
            _write_text(manifest_path(args, outputs), json.dumps(doc, indent=2) + "\n")
    except OSError as exc:
        print(f"mlrq: I/O error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"mlrq: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

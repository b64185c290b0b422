"""Command-line interface: ``ssmnet {plan,verify,bench,count,run}``.

Exit codes: 0 success, 1 verification failure, 2 usage or input error.
The default seed comes from the ``CENTAURUS_SEED`` environment variable.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from fractions import Fraction

import numpy as np

from . import audio, bench, verify
from .blocks import block_expr, block_extents
from .network import (PRESETS, ConfigError, build_network, count_network, forward_offline,
                      forward_stream, parse_config, preset)
from .params import SsmBlockSpec, Variant
from .planner import PlanningError, bottleneck_branch, choose_plan

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get("CENTAURUS_SEED", "0")
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"CENTAURUS_SEED must be an integer, got {raw!r}") from None


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


# ---------------------------------------------------------------- plan

def cmd_plan(args, out) -> int:
    try:
        spec = SsmBlockSpec(args.variant, args.H, args.H_out, args.N, args.M, args.G, args.L)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    expr = block_expr(spec)
    extents = block_extents(spec, args.batch, args.L)
    try:
        plan, report = choose_plan(expr, extents, max_ndim=args.max_ndim)
    except PlanningError as exc:
        raise UsageError(str(exc)) from None
    print(f"expression: {expr}", file=out)
    print(f"extents: {' '.join(f'{k}={v}' for k, v in sorted(extents.items()))}", file=out)
    print(f"chosen plan ({plan.tag.value}):", file=out)
    for line in plan.describe(report).splitlines():
        print(f"  {line}", file=out)
    print(f"total predicted FLOPs: {report.total_flops}", file=out)
    print(f"peak intermediate elements: {report.peak_intermediate_elements} "
          f"(max ndim {report.max_intermediate_ndim})", file=out)
    if spec.variant in (Variant.BOTTLENECK, Variant.PW_BOTTLENECK):
        c = bottleneck_branch(args.batch, spec.H, spec.H_out, spec.N)
        rel = "<" if c.lhs < c.rhs else ">="
        print(f"shape branch: {c.tag.value} (1/H + 1/H_out = {c.lhs:.6g} {rel} "
              f"1/batch + 1/N = {c.rhs:.6g}), fft_early={c.fft_early}", file=out)
    return EXIT_OK


# ---------------------------------------------------------------- verify

def cmd_verify(args, out) -> int:
    results = verify.run_all(args.grid, args.seed, args.perturb_kernel)
    print(f"verify grid={args.grid} seed={args.seed}", file=out)
    for r in results:
        print(r.line(), file=out)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=out)
        return EXIT_FAIL
    print("all suites passed", file=out)
    return EXIT_OK


# ---------------------------------------------------------------- bench

def cmd_bench(args, out) -> int:
    axes = bench.AXES if args.axis == "all" else (args.axis,)
    for axis in axes:
        path = args.csv if len(axes) == 1 else _suffixed(args.csv, axis)
        rows = bench.bench_axis(axis, repeats=args.repeats, cap=args.cap, seed=args.seed,
                                timed=not args.no_time, workers=args.workers)
        try:
            bench.write_csv(path, axis, rows, args.cap)
        except OSError as exc:
            raise UsageError(f"cannot write {path}: {exc}") from None
        bad = [r.axis_value for r in rows if r.chosen_predicted_flops > r.naive_predicted_flops]
        print(f"{axis}: {len(rows)} rows -> {path}"
              + (f"; dominance violated at {bad}" if bad else ""), file=out)
        if bad:
            return EXIT_FAIL
    return EXIT_OK


def _suffixed(path, axis):
    root, ext = os.path.splitext(path)
    return f"{root}_{axis}{ext or '.csv'}"


# ---------------------------------------------------------------- count / run

def _load_config(args):
    if (args.config is None) == (args.preset is None):
        raise UsageError("give exactly one of --config or --preset")
    if args.preset is not None:
        return preset(args.preset)
    try:
        text = open(args.config, encoding="utf-8").read()
    except OSError as exc:
        raise UsageError(f"cannot read {args.config}: {exc}") from None
    try:
        return parse_config(text)
    except ConfigError as exc:
        raise UsageError("invalid config:\n  " + "\n  ".join(exc.errors)) from None


def cmd_count(args, out) -> int:
    config = _load_config(args)
    counts = count_network(config)
    if args.json:
        json.dump(counts.to_dict(), out, indent=2)
        out.write("\n")
        return EXIT_OK
    print(f"{'layer':>6} {'part':<24} {'params':>12} {'flops/step':>12} {'rate Hz':>10} "
          f"{'FLOPs/s':>14}", file=out)
    for it in counts.items:
        layer = "head" if it.layer is None else str(it.layer)
        print(f"{layer:>6} {it.part:<24} {it.params:>12} {it.flops_per_step:>12} "
              f"{it.rate_hz:>10.4g} {it.flops_per_second:>14.6g}", file=out)
    print(f"total params: {counts.total_params} ({counts.total_params / 1e6:.3f}M)", file=out)
    print(f"total FLOPs/s: {counts.flops_per_second:.6g} "
          f"({counts.flops_per_second / 1e9:.3f}G)", file=out)
    return EXIT_OK


def _required_multiple(config) -> int:
    """Smallest input-length multiple that keeps every stage integral."""
    m, rate = 1, Fraction(1)
    for layer in config.layers:
        rate *= Fraction(layer.resample.up, layer.resample.down)
        m = math.lcm(m, rate.denominator)
    return m


def cmd_run(args, out) -> int:
    config = _load_config(args)
    if config.in_channels != 1:
        raise UsageError(f"network expects {config.in_channels} input channels; audio is mono")
    try:
        rate, samples = audio.read_audio(args.input, args.format)
    except (OSError, audio.AudioFormatError) as exc:
        raise UsageError(str(exc)) from None
    if rate is not None and rate != config.sample_rate_hz:
        raise UsageError(f"sample rate {rate} Hz does not match the network's "
                         f"{config.sample_rate_hz} Hz")
    n = len(samples)
    # zero-pad the tail so every resampling stage divides evenly; causality
    # means the padding never affects the outputs that are kept
    mult = _required_multiple(config)
    padded = np.zeros(-(-n // mult) * mult if n else 0)
    padded[:n] = samples
    net = build_network(config, args.seed)
    u = padded[None, None, :]
    y = forward_offline(net, u) if args.mode == "offline" else forward_stream(net, u)
    keep = math.ceil(n * config.rate_factor())
    features = y[0, :, :keep]
    audio.write_raw(args.output, features.T)
    print(f"{args.mode}: {n} samples -> {features.shape[1]} frames x {features.shape[0]} "
          f"channels (float32, time-major) -> {args.output}", file=out)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssmnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="choose and print a contraction plan for one block")
    p.add_argument("--variant", required=True, help="|".join(v.value for v in Variant))
    p.add_argument("--H", type=_positive, required=True)
    p.add_argument("--H-out", dest="H_out", type=_positive, default=None)
    p.add_argument("--N", type=_positive, required=True)
    p.add_argument("--M", type=_positive, default=1)
    p.add_argument("--G", type=_positive, default=1)
    p.add_argument("--L", type=_positive, required=True)
    p.add_argument("--batch", type=_positive, default=1)
    p.add_argument("--max-ndim", dest="max_ndim", type=_positive, default=None)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("verify", help="run the cross-oracle suites")
    p.add_argument("--grid", choices=sorted(verify.GRIDS), default="small")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--perturb-kernel", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="sweep a bottleneck block and write a CSV")
    p.add_argument("--axis", choices=(*bench.AXES, "all"), required=True)
    p.add_argument("--csv", required=True, help="output path (suffixed per axis with 'all')")
    p.add_argument("--repeats", type=_positive, default=5)
    p.add_argument("--cap", type=_positive, default=bench.DEFAULT_CAP,
                   help="max batch*length actually executed")
    p.add_argument("--workers", type=_positive, default=1)
    p.add_argument("--no-time", action="store_true", help="skip wall-clock runs")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_bench)

    for name, func, help_text in (("count", cmd_count, "parameter and FLOP/s totals"),
                                  ("run", cmd_run, "run a network over an audio file")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.set_defaults(func=func)
        if name == "count":
            p.add_argument("--json", action="store_true")
        else:
            p.add_argument("--input", required=True)
            p.add_argument("--format", choices=("wav", "raw"), default=None)
            p.add_argument("--mode", choices=("offline", "stream"), default="offline")
            p.add_argument("--output", required=True)
            p.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if getattr(args, "seed", 0) is None:
            args.seed = _default_seed()
        return args.func(args, out)
    except UsageError as exc:
        print(f"ssmnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Bottleneck-block benchmark sweeps: predicted FLOPs and wall-clock time of
the chosen plan versus the natural left-to-right plan."""
from __future__ import annotations

import csv
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .blocks import block_expr, block_extents, forward_fft
from .params import SsmBlockSpec, init_params
from .planner import choose_plan, cost_plan, natural_plan

__all__ = ["BASELINE", "SWEEP_VALUES", "AXES", "DEFAULT_CAP", "CSV_HEADER", "BenchRow",
           "executed_dims", "bench_point", "bench_axis", "write_csv"]

BASELINE = {"batch": 256, "H": 16, "H_out": 32, "length": 2048, "N": 256, "M": 16}
SWEEP_VALUES = tuple(2 ** k for k in range(5, 12))   # 32 .. 2048
AXES = ("batch", "N", "length")
DEFAULT_CAP = 4096
CSV_HEADER = ("axis_value", "naive_predicted_flops", "chosen_predicted_flops",
              "naive_wall_ms", "chosen_wall_ms", "speedup", "chosen_tag")


@dataclass(frozen=True)
class BenchRow:
    axis_value: int
    naive_predicted_flops: int
    chosen_predicted_flops: int
    naive_wall_ms: float
    chosen_wall_ms: float
    chosen_tag: str
    run_batch: int
    run_length: int

    @property
    def speedup(self) -> float:
        """Naive over chosen wall-clock time (NaN when timing was skipped)."""
        return self.naive_wall_ms / self.chosen_wall_ms if self.chosen_wall_ms > 0 else math.nan


def _dims(axis: str, value: int) -> dict:
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}")
    dims = dict(BASELINE)
    dims[axis] = value
    return dims


def executed_dims(axis: str, value: int, cap: int = DEFAULT_CAP) -> tuple[int, int]:
    """(batch, length) actually run: whichever of batch / length is not being
    swept is reduced until batch * length <= cap (never below 1)."""
    d = _dims(axis, value)
    batch, length = d["batch"], d["length"]
    if batch * length > cap:
        if axis == "batch":
            length = max(1, cap // batch)
        else:
            batch = max(1, cap // length)
    return batch, length


def _spec(d) -> SsmBlockSpec:
    return SsmBlockSpec("bottleneck", d["H"], d["H_out"], d["N"], d["M"])


def _median_ms(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def bench_point(axis: str, value: int, repeats: int = 5, cap: int = DEFAULT_CAP,
                seed: int = 0, timed: bool = True) -> BenchRow:
    d = _dims(axis, value)
    spec = _spec(d)
    expr = block_expr(spec)
    nominal = block_extents(spec, d["batch"], d["length"])
    naive_flops = cost_plan(natural_plan(expr, nominal)).total_flops
    chosen, report = choose_plan(expr, nominal)
    batch, length = executed_dims(axis, value, cap)
    naive_ms = chosen_ms = float("nan")
    if timed:
        rng = np.random.default_rng(seed)
        params = init_params(spec, rng)
        u = rng.standard_normal((batch, spec.H, length))
        run = block_extents(spec, batch, length)
        run_naive = natural_plan(expr, run)
        run_chosen, _ = choose_plan(expr, run)
        naive_ms = _median_ms(lambda: forward_fft(spec, params, u, run_naive), repeats)
        chosen_ms = _median_ms(lambda: forward_fft(spec, params, u, run_chosen), repeats)
    return BenchRow(value, naive_flops, report.total_flops, naive_ms, chosen_ms,
                    chosen.tag.value, batch, length)


def bench_axis(axis: str, values=SWEEP_VALUES, repeats: int = 5, cap: int = DEFAULT_CAP,
               seed: int = 0, timed: bool = True, workers: int = 1) -> list[BenchRow]:
    """One row per sweep value, in ascending order of the value."""
    def one(v):
        return bench_point(axis, v, repeats, cap, seed, timed)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, values))
    else:
        rows = [one(v) for v in values]
    return sorted(rows, key=lambda r: r.axis_value)


def write_csv(path, axis: str, rows, cap: int = DEFAULT_CAP) -> None:
    base = ", ".join(f"{k}={v}" for k, v in BASELINE.items())
    with open(path, "w", newline="") as fh:
        fh.write(f"# bottleneck block sweep over {axis}; baseline {base}\n")
        fh.write(f"# predicted FLOPs at the nominal dims; wall-clock runs capped at "
                 f"batch*length <= {cap} by shrinking the non-swept one of batch/length; "
                 f"wall times are medians\n")
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow([r.axis_value, r.naive_predicted_flops, r.chosen_predicted_flops,
                             f"{r.naive_wall_ms:.3f}", f"{r.chosen_wall_ms:.3f}", f"{r.speedup:.3f}",
                             r.chosen_tag])

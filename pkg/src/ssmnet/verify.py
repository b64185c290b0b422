"""Self-check suites comparing independent evaluation paths.

Each suite returns a :class:`SuiteResult`; the CLI ``verify`` command runs
them all and exits nonzero if any fails.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import block_expr, block_extents, forward_fft, forward_naive
from .params import SsmBlockSpec, SsmParams, Variant, init_params
from .planner import (contraction_orders, enumerate_plans, is_neighbor_order,
                      order_intermediate_ndims)
from .recurrence import count_inference, measure_step_flops, run_stream

__all__ = ["SuiteResult", "random_spec", "random_params", "random_cases",
           "mode_equivalence", "plan_invariance", "lemma_neighbors", "counter_formula",
           "run_all", "GRIDS"]

GRIDS = {"small": 4, "full": 50}   # random cases per variant


@dataclass
class SuiteResult:
    name: str
    passed: bool
    cases: int
    max_deviation: float
    tolerance: float
    failure: str | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = (f"{status}  {self.name:<18} cases={self.cases:<5} "
                f"max_dev={self.max_deviation:.3e}  tol={self.tolerance:.0e}")
        if self.failure:
            text += f"\n      first failure: {self.failure}"
        return text


def random_spec(variant, rng: np.random.Generator, L_choices=(16, 64)) -> SsmBlockSpec:
    """A random block over H, H_out in 1..8, N in 1..16, M in {1,2,4}."""
    v = Variant.parse(variant)
    H = int(rng.integers(1, 9))
    J = H if v is Variant.DEPTHWISE else int(rng.integers(1, 9))
    N = int(rng.integers(1, 17))
    M = int(rng.choice([1, 2, 4])) if v is Variant.BOTTLENECK else 1
    G = 1
    if v is Variant.GROUPED:
        G = int(rng.choice([g for g in range(1, 9) if H % g == 0 and J % g == 0]))
    return SsmBlockSpec(v, H, J, N, M, G, int(rng.choice(L_choices)))


def random_params(spec: SsmBlockSpec, rng: np.random.Generator) -> SsmParams:
    """Initialization shapes with randomized step sizes and stable poles."""
    p = init_params(spec, rng)
    delta = rng.uniform(1e-3, 0.5, size=p.delta.shape)
    A = (-rng.uniform(0.05, 2.0, size=p.A.shape)
         + 1j * rng.uniform(-4 * np.pi, 4 * np.pi, size=p.A.shape))
    return SsmParams(delta, A, p.B, p.C, p.E, p.mixer)


def random_cases(per_variant: int, seed: int):
    """Deterministic (spec, params, u, case_seed) tuples over all variants."""
    for v_idx, v in enumerate(Variant):
        for k in range(per_variant):
            case_seed = seed * 1_000_003 + v_idx * 10_007 + k
            rng = np.random.default_rng(case_seed)
            spec = random_spec(v, rng)
            params = random_params(spec, rng)
            batch = int(rng.integers(1, 3))
            u = rng.standard_normal((batch, spec.H, spec.L))
            yield spec, params, u, case_seed


def _describe(spec: SsmBlockSpec, seed) -> str:
    return (f"variant={spec.variant.value} H={spec.H} H_out={spec.H_out} N={spec.N} "
            f"M={spec.M} G={spec.G} L={spec.L} seed={seed}")


def mode_equivalence(per_variant: int = 4, seed: int = 0, perturb_kernel: bool = False,
                     stream_tol: float = 1e-9, naive_tol: float = 1e-10) -> SuiteResult:
    """Recurrent, FFT and direct-convolution outputs agree for random blocks."""
    hook = None
    if perturb_kernel:
        def hook(k):
            k = k.copy()
            k.flat[0] += 1e-3
            return k
    worst, failure, n = 0.0, None, 0
    for spec, params, u, case_seed in random_cases(per_variant, seed):
        y_fft = forward_fft(spec, params, u, kernel_hook=hook)
        d_stream = float(np.abs(run_stream(spec, params, u) - y_fft).max())
        d_naive = float(np.abs(forward_naive(spec, params, u) - y_fft).max())
        worst = max(worst, d_stream, d_naive)
        n += 1
        if failure is None and (d_stream > stream_tol or d_naive > naive_tol):
            failure = f"{_describe(spec, case_seed)} stream={d_stream:.3e} naive={d_naive:.3e}"
    return SuiteResult("mode-equivalence", failure is None, n, worst, naive_tol, failure)


def plan_invariance(cases: int = 4, seed: int = 0, tol: float = 1e-10) -> SuiteResult:
    """Every feasible plan of the bottleneck expressions gives the same output."""
    worst, failure, n = 0.0, None, 0
    for k in range(cases):
        for variant in (Variant.BOTTLENECK, Variant.PW_BOTTLENECK):
            case_seed = seed * 7919 + k
            rng = np.random.default_rng(case_seed)
            spec = random_spec(variant, rng, L_choices=(16, 32))
            params = random_params(spec, rng)
            u = rng.standard_normal((2, spec.H, spec.L))
            ref = forward_naive(spec, params, u)
            extents = block_extents(spec, 2, spec.L)
            for max_ndim in (3, 5):
                for plan in enumerate_plans(block_expr(spec), extents, max_ndim):
                    d = float(np.abs(forward_fft(spec, params, u, plan) - ref).max())
                    worst = max(worst, d)
                    n += 1
                    if failure is None and d > tol:
                        failure = f"{_describe(spec, case_seed)} max_ndim={max_ndim} dev={d:.3e}"
    return SuiteResult("plan-invariance", failure is None, n, worst, tol, failure)


def lemma_neighbors() -> SuiteResult:
    """For the 4-operand bottleneck expression: an order keeps every
    intermediate within 3 axes exactly when the input only ever joins
    neighboring operands."""
    expr = block_expr(SsmBlockSpec("bottleneck", 2, 3, 4, 2))
    failure, n = None, 0
    for order in contraction_orders(len(expr.operands)):
        n += 1
        small = max(order_intermediate_ndims(expr, order)) <= 3
        if small != is_neighbor_order(expr, order) and failure is None:
            failure = f"order {[(sorted(a), sorted(b)) for a, b in order]}"
    return SuiteResult("lemma-neighbors", failure is None, n, 0.0, 0.0, failure)


def counter_formula(per_variant: int = 4, seed: int = 0) -> SuiteResult:
    """Instrumented per-step FLOPs equal the closed-form counts."""
    failure, n, worst = None, 0, 0.0
    for spec, params, _, case_seed in random_cases(per_variant, seed):
        measured = measure_step_flops(spec, params)
        formula = count_inference(spec).flops_per_step
        n += 1
        worst = max(worst, abs(measured - formula))
        if measured != formula and failure is None:
            failure = f"{_describe(spec, case_seed)} measured={measured} formula={formula}"
    return SuiteResult("counter-formula", failure is None, n, worst, 0.0, failure)


def run_all(grid: str = "small", seed: int = 0, perturb_kernel: bool = False):
    per_variant = GRIDS[grid]
    return [
        mode_equivalence(per_variant, seed, perturb_kernel),
        plan_invariance(2 if grid == "small" else 8, seed),
        lemma_neighbors(),
        counter_formula(per_variant, seed),
    ]

"""Generalized state-space model blocks as conv-einsum tensor networks.

Submodules: ``tensor`` (einsum evaluator, FFT helpers), ``params`` (block
specs, discretization, kernels), ``planner`` (contraction plans and costs),
``blocks`` (offline forward passes), ``recurrence`` (online inference and
counts), ``network`` (configs, presets, whole-network passes), ``verify``,
``bench`` and ``cli``.
"""
from .blocks import block_expr, forward_fft, forward_naive
from .params import SsmBlockSpec, SsmParams, Variant, init_params, materialize_kernel
from .planner import PathTag, choose_plan, cost_plan, enumerate_plans
from .recurrence import count_inference, run_stream

__all__ = [
    "SsmBlockSpec", "SsmParams", "Variant", "init_params", "materialize_kernel",
    "block_expr", "forward_fft", "forward_naive",
    "PathTag", "choose_plan", "cost_plan", "enumerate_plans",
    "count_inference", "run_stream",
]
__version__ = "0.1.0"

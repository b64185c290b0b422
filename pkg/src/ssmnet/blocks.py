"""SSM blocks as conv-einsum expressions, their offline forward passes, and
the auxiliary layers used to assemble networks."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .expr import ConvEinsumExpr
from .params import (SsmBlockSpec, SsmParams, Variant, check_params, discretize_B,
                     materialize_kernel)
from .planner import ContractionPlan, PlanningError, _extents_key, choose_plan, execute_plan

__all__ = [
    "block_expr",
    "block_extents",
    "block_operands",
    "squeeze_unit",
    "full_kernel",
    "forward_fft",
    "forward_naive",
    "AuxKind",
    "AuxLayer",
    "aux_forward",
    "LAYER_NORM_EPS",
]

_BOTTLENECK_LAYOUT = (("u", "B", "k", "C"), ("bif", "ni", "nf", "jn"))


def block_expr(spec: SsmBlockSpec) -> ConvEinsumExpr:
    """The conv-einsum evaluated by ``spec``'s block, after kernel generation.

    Kernel generation collapses the state axis (and the sub-state axis for
    the bottleneck), so the kernel operand carries only the indices that
    survive into the convolution.
    """
    v = spec.variant
    if v is Variant.DEPTHWISE:
        return ConvEinsumExpr(("u", "k"), ("bif", "if"), "bif", basis="inf")
    if v is Variant.DWS:
        return ConvEinsumExpr(("u", "k", "M"), ("bif", "if", "ji"), "bjf", basis="inf")
    if v is Variant.FULL:
        return ConvEinsumExpr(("u", "k"), ("bif", "jif"), "bjf", basis="jinf",
                              default_max_ndim=4)
    if v is Variant.GROUPED:
        return ConvEinsumExpr(("u", "k"), ("bgif", "gjif"), "bgjf", basis="gjinf",
                              default_max_ndim=4)
    basis = "nmf" if v is Variant.BOTTLENECK else "nf"
    return ConvEinsumExpr(*_BOTTLENECK_LAYOUT, "bjf", basis=basis)


def block_extents(spec: SsmBlockSpec, batch: int, length: int) -> dict[str, int]:
    G = spec.G
    ext = {"b": batch, "i": spec.H // G, "j": spec.H_out // G, "n": spec.N, "f": length}
    if spec.variant is Variant.GROUPED:
        ext["g"] = G
    if spec.variant is Variant.BOTTLENECK:
        ext["m"] = spec.M
    return ext


def squeeze_unit(expr: ConvEinsumExpr, extents) -> ConvEinsumExpr:
    """Drop indices of extent 1 (other than the conv index) from ``expr``.

    Operands left without any index are removed; a full block with
    ``H == H_out == 1`` squeezes to the same expression as a depthwise block
    with ``H == 1``.
    """
    f = expr.conv_index

    def sq(s):
        return "".join(i for i in s if i == f or extents[i] != 1)

    ops, subs = [], []
    for name, s in zip(expr.operands, expr.subscripts):
        if sq(s) or name in (expr.input, expr.kernel):
            ops.append(name)
            subs.append(sq(s))
    return ConvEinsumExpr(tuple(ops), tuple(subs), sq(expr.output), sq(expr.basis), f,
                          expr.input, expr.kernel, expr.default_max_ndim)


def block_operands(spec: SsmBlockSpec, params: SsmParams, u: np.ndarray) -> dict:
    """Non-kernel operands of :func:`block_expr`, keyed by operand name."""
    v = spec.variant
    if v is Variant.GROUPED:
        b, _, L = u.shape
        return {"u": u.reshape(b, spec.G, spec.H // spec.G, L)}
    values = {"u": u}
    if v is Variant.DWS:
        values["M"] = params.mixer
    if v in (Variant.BOTTLENECK, Variant.PW_BOTTLENECK):
        values["B"] = discretize_B(params.delta, params.B)
        values["C"] = params.C
    return values


def _check_input(spec: SsmBlockSpec, u) -> np.ndarray:
    u = np.asarray(u)
    if u.ndim != 3 or u.shape[1] != spec.H:
        raise ValueError(f"input must be (batch, {spec.H}, L), got {u.shape}")
    if np.iscomplexobj(u):
        raise TypeError("block input must be real")
    return u


def forward_fft(spec: SsmBlockSpec, params: SsmParams, u, plan: ContractionPlan | None = None,
                trace: list | None = None, kernel_hook=None) -> np.ndarray:
    """Offline forward pass: FFT convolution evaluated under ``plan``.

    ``u`` is (batch, H, L); returns (batch, H_out, L). Without a plan the
    cheapest one is chosen. ``kernel_hook``, if given, receives the
    generated kernel and returns the kernel actually used (a test seam).
    """
    u = _check_input(spec, u)
    check_params(spec, params)
    batch, _, L = u.shape
    if L == 0:
        return np.zeros((batch, spec.H_out, 0), dtype=u.dtype)
    expr = block_expr(spec)
    extents = block_extents(spec, batch, L)
    if plan is None:
        plan, _ = choose_plan(expr, extents, u.dtype)
    elif plan.expr != expr or plan.extents != _extents_key(extents):
        raise PlanningError("plan was built for a different expression or extents")
    kernel = materialize_kernel(spec, params, L)
    if kernel_hook is not None:
        kernel = kernel_hook(kernel)
    y = execute_plan(plan, block_operands(spec, params, u), kernel, trace)
    return y.reshape(batch, spec.H_out, L)


def full_kernel(spec: SsmBlockSpec, params: SsmParams, length: int) -> np.ndarray:
    """The (H_out, H, length) impulse-response tensor of the block."""
    k = materialize_kernel(spec, params, length)
    v, H, J = spec.variant, spec.H, spec.H_out
    if v is Variant.DEPTHWISE:
        out = np.zeros((J, H, length), dtype=k.dtype)
        out[np.arange(H), np.arange(H)] = k
        return out
    if v is Variant.DWS:
        return params.mixer[:, :, None] * k[None]
    if v is Variant.FULL:
        return k
    if v is Variant.GROUPED:
        G = spec.G
        Ig, Jg = H // G, J // G
        out = np.zeros((J, H, length), dtype=k.dtype)
        for g in range(G):
            out[g * Jg:(g + 1) * Jg, g * Ig:(g + 1) * Ig] = k[g]
        return out
    Bbar = discretize_B(params.delta, params.B)
    return np.einsum("jn,nt,ni->jit", params.C, k, Bbar)


def forward_naive(spec: SsmBlockSpec, params: SsmParams, u) -> np.ndarray:
    """Reference forward pass: build the full kernel, then convolve directly
    in the time domain, one lag at a time (O(L^2))."""
    u = _check_input(spec, u)
    batch, _, L = u.shape
    y = np.zeros((batch, spec.H_out, L))
    if L == 0:
        return y
    K = full_kernel(spec, params, L)
    for s in range(L):
        y[:, :, s:] += np.einsum("ji,bit->bjt", K[:, :, s], u[:, :, :L - s])
    return y


LAYER_NORM_EPS = 1e-5


class AuxKind(str, enum.Enum):
    LAYER_NORM = "layer_norm"
    SILU = "silu"
    AVG_POOL = "avg_pool"
    PROJECTION = "projection"
    RESIDUAL_ADD = "residual_add"
    RESIDUAL_PROJECTION = "residual_projection"


@dataclass(frozen=True)
class AuxLayer:
    """A non-SSM layer. ``weight`` is (H_out, H) for projections; ``gamma`` /
    ``beta`` are the LayerNorm affine (default identity)."""
    kind: AuxKind
    window: int = 1
    weight: np.ndarray | None = None
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    eps: float = LAYER_NORM_EPS

    def __post_init__(self):
        object.__setattr__(self, "kind", AuxKind(self.kind))
        if self.window < 1:
            raise ValueError("pool window must be >= 1")
        if self.kind in (AuxKind.PROJECTION, AuxKind.RESIDUAL_PROJECTION):
            if self.weight is None or np.ndim(self.weight) != 2:
                raise ValueError(f"{self.kind.value} needs a 2-D weight")


def aux_forward(layer: AuxLayer, x, skip=None) -> np.ndarray:
    """Apply ``layer`` to ``x`` of shape (batch, channels, L).

    Residual kinds merge ``skip`` (the block input) into ``x``.
    """
    x = np.asarray(x)
    kind = layer.kind
    if kind is AuxKind.SILU:
        return x * expit(x)
    if kind is AuxKind.LAYER_NORM:
        mean = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        y = (x - mean) / np.sqrt(var + layer.eps)
        if layer.gamma is not None:
            y = y * layer.gamma[None, :, None]
        if layer.beta is not None:
            y = y + layer.beta[None, :, None]
        return y
    if kind is AuxKind.AVG_POOL:
        b, h, L = x.shape
        w = layer.window
        if L % w:
            raise ValueError(f"length {L} is not divisible by pool window {w}")
        return x.reshape(b, h, L // w, w).mean(axis=-1)
    if kind is AuxKind.PROJECTION:
        return _project(layer.weight, x)
    if skip is None:
        raise ValueError(f"{kind.value} needs the skip input")
    skip = np.asarray(skip)
    if kind is AuxKind.RESIDUAL_PROJECTION:
        skip = _project(layer.weight, skip)
    if skip.shape != x.shape:
        raise ValueError(f"skip shape {skip.shape} does not match {x.shape}")
    return x + skip


def _project(weight, x):
    weight = np.asarray(weight)
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"projection expects {weight.shape[1]} channels, got {x.shape[1]}")
    return np.einsum("ji,bil->bjl", weight, x)

"""Online (sample-by-sample) inference with explicit complex states, and
closed-form parameter / FLOP-per-step counts for online inference."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import SsmBlockSpec, SsmParams, Variant, check_params, discrete_A, discretize_B

__all__ = [
    "StreamState",
    "StepOps",
    "OpCounter",
    "InferenceCost",
    "init_state",
    "prepare",
    "step",
    "run_stream",
    "measure_step_flops",
    "count_inference",
    "ROW_TAGS",
]


@dataclass
class StreamState:
    """Complex states of one block, ``x.shape == (batch, *spec.state_shape)``."""
    x: np.ndarray

    def copy(self) -> "StreamState":
        return StreamState(self.x.copy())


def init_state(spec: SsmBlockSpec, batch: int = 1, dtype=np.complex128) -> StreamState:
    return StreamState(np.zeros((batch,) + spec.state_shape, dtype=dtype))


@dataclass(frozen=True)
class StepOps:
    """Inference-ready tensors: discretized transition and input projection."""
    spec: SsmBlockSpec
    Abar: np.ndarray
    E: np.ndarray | None
    Bbar: np.ndarray | None
    C: np.ndarray | None
    mixer: np.ndarray | None


def prepare(spec: SsmBlockSpec, params: SsmParams) -> StepOps:
    check_params(spec, params)
    Bbar = None
    if params.B is not None:
        Bbar = discretize_B(params.delta, params.B)
    return StepOps(spec, discrete_A(spec, params), params.E, Bbar, params.C, params.mixer)


class OpCounter:
    """Scalar-operation tally with fixed unit costs: complex multiply 6,
    real-into-complex accumulate 1, real multiply-add 2."""

    COMPLEX_MULTIPLY = 6
    ACCUMULATE = 1
    REAL_MAC = 2

    def __init__(self):
        self.flops = 0

    def complex_multiply(self, n):
        self.flops += self.COMPLEX_MULTIPLY * int(n)

    def accumulate(self, n):
        self.flops += self.ACCUMULATE * int(n)

    def real_mac(self, n):
        self.flops += self.REAL_MAC * int(n)


def _matvec(W, v, counter):
    """``v @ W.T`` on (batch, k) inputs; counts one MAC per weight entry."""
    if counter is not None:
        counter.real_mac(W.size)
    return v @ W.T


def _advance(Abar, x, drive, counter):
    if counter is not None:
        counter.complex_multiply(Abar.size)
        counter.accumulate(Abar.size)
    return Abar * x + drive


def _readout(E, x, axes, counter):
    if counter is not None:
        counter.real_mac(E.size)
    return np.sum(E * x.real, axis=axes)


def _step(ops: StepOps, x: np.ndarray, u_t: np.ndarray, counter: OpCounter | None = None):
    spec = ops.spec
    v = spec.variant
    b = u_t.shape[0]
    if v in (Variant.DEPTHWISE, Variant.DWS):
        x = _advance(ops.Abar, x, u_t[:, :, None], counter)
        y = _readout(ops.E, x, -1, counter)
        if v is Variant.DWS:
            y = _matvec(ops.mixer, y, counter)
    elif v is Variant.FULL:
        x = _advance(ops.Abar, x, u_t[:, None, :, None], counter)
        y = _readout(ops.E, x, (-2, -1), counter)
    elif v is Variant.GROUPED:
        G = spec.G
        drive = u_t.reshape(b, G, 1, spec.H // G, 1)
        x = _advance(ops.Abar, x, drive, counter)
        y = _readout(ops.E, x, (-2, -1), counter).reshape(b, spec.H_out)
    elif v is Variant.PW_BOTTLENECK:
        x = _advance(ops.Abar, x, _matvec(ops.Bbar, u_t, counter), counter)
        y = _matvec(ops.C, x.real, counter)
    else:
        x = _advance(ops.Abar, x, _matvec(ops.Bbar, u_t, counter)[:, :, None], counter)
        y = _matvec(ops.C, _readout(ops.E, x, -1, counter), counter)
    return y, x


def step(spec: SsmBlockSpec, params: SsmParams | StepOps, state: StreamState, u_t):
    """Advance one sample. ``u_t`` is (H,) or (batch, H); returns ``(y_t, state')``.

    The input is added to the state before the readout, so lag zero of the
    impulse response is nonzero. Only real parts leave the block.
    """
    ops = params if isinstance(params, StepOps) else prepare(spec, params)
    u_t = np.asarray(u_t)
    single = u_t.ndim == 1
    u2 = u_t[None] if single else u_t
    if u2.shape[1] != spec.H:
        raise ValueError(f"input has {u2.shape[1]} channels, block expects {spec.H}")
    want = (u2.shape[0],) + spec.state_shape
    if state.x.shape != want:
        raise ValueError(f"state shape {state.x.shape} does not match {want}")
    y, x = _step(ops, state.x, u2)
    return (y[0] if single else y), StreamState(x)


def run_stream(spec: SsmBlockSpec, params: SsmParams, u, state: StreamState | None = None,
               return_state: bool = False):
    """Apply :func:`step` over ``u`` of shape (batch, H, L) from ``state``
    (zero by default); returns (batch, H_out, L)."""
    u = np.asarray(u)
    batch, H, L = u.shape
    ops = prepare(spec, params)
    st = init_state(spec, batch) if state is None else state
    x = st.x
    y = np.zeros((batch, spec.H_out, L))
    for t in range(L):
        y[:, :, t], x = _step(ops, x, u[:, :, t])
    if return_state:
        return y, StreamState(x)
    return y


def measure_step_flops(spec: SsmBlockSpec, params: SsmParams | None = None) -> int:
    """FLOPs of one instrumented step for a single stream."""
    if params is None:
        from .params import init_params
        params = init_params(spec, 0)
    ops = prepare(spec, params)
    counter = OpCounter()
    _step(ops, init_state(spec, 1).x, np.zeros((1, spec.H)), counter)
    return counter.flops


@dataclass(frozen=True)
class InferenceCost:
    params: int
    flops_per_step: int
    formula_tag: str

    def __add__(self, other: "InferenceCost") -> "InferenceCost":
        return InferenceCost(self.params + other.params,
                             self.flops_per_step + other.flops_per_step, "sum")


def _low_rank_sq(H, r):
    # H^2 / r with the low-rank dimension rounded up: H * ceil(H / r)
    return H * math.ceil(H / r)


def _rows():
    return {
        "depthwise": lambda H, J, N, M, G, r: (3 * H * N, 9 * H * N),
        "dws": lambda H, J, N, M, G, r: (3 * H * N + H * J, 9 * H * N + 2 * H * J),
        "pw_bottleneck": lambda H, J, N, M, G, r: (H * N + 2 * N + J * N,
                                                   2 * H * N + 7 * N + 2 * J * N),
        "bottleneck": lambda H, J, N, M, G, r: (H * N + 3 * N * M + J * N,
                                                2 * H * N + 9 * N * M + 2 * J * N),
        "full": lambda H, J, N, M, G, r: (3 * H * J * N, 9 * H * J * N),
        "grouped": lambda H, J, N, M, G, r: (3 * H * J * N // G, 9 * H * J * N // G),
        "depthwise_complex": lambda H, J, N, M, G, r: (4 * H * N, 11 * H * N),
        "dws_complex": lambda H, J, N, M, G, r: (4 * H * N + H * J, 11 * H * N + 2 * H * J),
        "pw_bottleneck_complex": lambda H, J, N, M, G, r: (2 * H * N + 2 * N + 2 * J * N,
                                                           4 * H * N + 8 * N + 4 * J * N),
        "bottleneck_complex": lambda H, J, N, M, G, r: (2 * H * N + 4 * N * M + 2 * J * N,
                                                        4 * H * N + 16 * N * M + 4 * J * N),
        "full_complex": lambda H, J, N, M, G, r: (4 * H * J * N, 11 * H * J * N),
        "s6_dws": lambda H, J, N, M, G, r: (
            4 * H * N + _low_rank_sq(H, r) + H * J,
            14 * H * N + 4 * _low_rank_sq(H, r) + 2 * H * J),
        "mamba": lambda H, J, N, M, G, r: (
            8 * H * H + 8 * H * N + 4 * _low_rank_sq(H, r),
            16 * H * H + 28 * H * N + 16 * _low_rank_sq(H, r)),
        "residual_projection": lambda H, J, N, M, G, r: (H * J, 2 * H * J),
        "residual_identity": lambda H, J, N, M, G, r: (0, J),
    }


_ROWS = _rows()
ROW_TAGS = tuple(_ROWS)


def count_inference(spec_or_row, H: int = 1, H_out: int | None = None, N: int = 1,
                    M: int = 1, G: int = 1, r: int = 16) -> InferenceCost:
    """Closed-form parameters and FLOPs per online step.

    Accepts an :class:`SsmBlockSpec` or a row tag from :data:`ROW_TAGS` with
    explicit dimensions. Step sizes are folded into the discretized system
    and are not counted; biases and norm affines are excluded.
    """
    if isinstance(spec_or_row, SsmBlockSpec):
        s = spec_or_row
        tag, H, H_out, N, M, G = s.variant.value, s.H, s.H_out, s.N, s.M, s.G
    else:
        tag = str(spec_or_row)
        if tag not in _ROWS:
            raise ValueError(f"unknown row tag {tag!r}; expected one of {', '.join(ROW_TAGS)}")
    if H_out is None:
        H_out = H
    params, flops = _ROWS[tag](H, H_out, N, M, G, r)
    return InferenceCost(int(params), int(flops), tag)

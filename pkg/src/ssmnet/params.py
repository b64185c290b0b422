"""SSM block specs, parameter containers, discretization and kernel generation."""
from __future__ import annotations

import enum
from dataclasses import dataclass, fields

import numpy as np

__all__ = [
    "Variant",
    "SsmBlockSpec",
    "SsmParams",
    "DenseSsm",
    "expand_delta",
    "zoh_discretize_A",
    "discretize_B",
    "discrete_A",
    "materialize_kernel",
    "init_params",
    "simulate",
    "absorb_feedthrough",
    "diagonalize_system",
    "DiagonalizationError",
]


class Variant(str, enum.Enum):
    DEPTHWISE = "depthwise"
    DWS = "dws"
    GROUPED = "grouped"
    PW_BOTTLENECK = "pw_bottleneck"
    BOTTLENECK = "bottleneck"
    FULL = "full"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        aliases = {"depthwise_separable": cls.DWS, "pointwise_bottleneck": cls.PW_BOTTLENECK,
                   "pw": cls.PW_BOTTLENECK, "s5": cls.PW_BOTTLENECK, "s4d": cls.DWS,
                   "neck": cls.BOTTLENECK}
        key = str(value).lower().replace("-", "_")
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown SSM variant {value!r}") from None


@dataclass(frozen=True)
class SsmBlockSpec:
    variant: Variant
    H: int
    H_out: int | None = None
    N: int = 1
    M: int = 1
    G: int = 1
    L: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.H_out is None:
            object.__setattr__(self, "H_out", self.H)
        for name in ("H", "H_out", "N", "M", "G"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.L is not None and self.L < 1:
            raise ValueError("L must be >= 1")
        v = self.variant
        if v is Variant.DEPTHWISE and self.H != self.H_out:
            raise ValueError("depthwise block requires H == H_out")
        if v is Variant.GROUPED:
            if self.H % self.G:
                raise ValueError("G must divide H")
            if self.H_out % self.G:
                raise ValueError("G must divide H_out")
        elif self.G != 1:
            raise ValueError("G must be 1 unless variant is grouped")
        if v is not Variant.BOTTLENECK and self.M != 1:
            raise ValueError("M must be 1 unless variant is bottleneck")

    @property
    def state_shape(self) -> tuple[int, ...]:
        v, H, J, N = self.variant, self.H, self.H_out, self.N
        if v in (Variant.DEPTHWISE, Variant.DWS):
            return (H, N)
        if v is Variant.FULL:
            return (J, H, N)
        if v is Variant.GROUPED:
            return (self.G, J // self.G, H // self.G, N)
        if v is Variant.PW_BOTTLENECK:
            return (N,)
        return (N, self.M)


@dataclass(frozen=True)
class SsmParams:
    """Trainable parameters of one block (shapes depend on the variant).

    ``delta`` lacks the axes it is shared over; see :func:`expand_delta`.
    """
    delta: np.ndarray
    A: np.ndarray
    B: np.ndarray | None = None
    C: np.ndarray | None = None
    E: np.ndarray | None = None
    mixer: np.ndarray | None = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if getattr(self, f.name) is not None}

    def astype(self, real_dtype) -> "SsmParams":
        cdt = np.result_type(real_dtype, np.complex64)
        out = {}
        for name, arr in self.arrays().items():
            out[name] = arr.astype(cdt if np.iscomplexobj(arr) else real_dtype)
        return SsmParams(**out)


@dataclass(frozen=True)
class DenseSsm:
    """Discrete-time dense system ``x[t] = A x[t-1] + B u[t]``, ``y[t] = C x[t] + D u[t]``."""
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        N = self.A.shape[0]
        if self.A.shape != (N, N):
            raise ValueError("A must be square")
        H = self.B.shape[1]
        J = self.C.shape[0]
        if self.B.shape != (N, H) or self.C.shape != (J, N) or self.D.shape != (J, H):
            raise ValueError("A, B, C, D are not conformable")


def expected_shapes(spec: SsmBlockSpec) -> dict[str, tuple[int, ...]]:
    v, H, J, N, M, G = spec.variant, spec.H, spec.H_out, spec.N, spec.M, spec.G
    if v in (Variant.DEPTHWISE, Variant.DWS):
        shapes = {"delta": (H, N), "A": (H, N), "E": (H, N)}
        if v is Variant.DWS:
            shapes["mixer"] = (J, H)
        return shapes
    if v is Variant.FULL:
        return {"delta": (H, N), "A": (J, H, N), "E": (J, H, N)}
    if v is Variant.GROUPED:
        return {"delta": (G, H // G, N), "A": (G, J // G, H // G, N),
                "E": (G, J // G, H // G, N)}
    if v is Variant.PW_BOTTLENECK:
        return {"delta": (N,), "A": (N,), "B": (N, H), "C": (J, N)}
    return {"delta": (N,), "A": (N, M), "E": (N, M), "B": (N, H), "C": (J, N)}


def check_params(spec: SsmBlockSpec, params: SsmParams) -> None:
    want = expected_shapes(spec)
    have = params.arrays()
    if set(have) != set(want):
        raise ValueError(f"{spec.variant.value} params need {sorted(want)}, got {sorted(have)}")
    for name, shape in want.items():
        if have[name].shape != shape:
            raise ValueError(f"{name} has shape {have[name].shape}, expected {shape}")


def expand_delta(variant: Variant, delta: np.ndarray) -> np.ndarray:
    """Insert the axes ``delta`` is shared over so it broadcasts against ``A``."""
    variant = Variant.parse(variant)
    if variant is Variant.FULL:
        return delta[None]
    if variant is Variant.GROUPED:
        return delta[:, None]
    if variant is Variant.BOTTLENECK:
        return delta[:, None]
    return delta


def _check_delta(delta):
    if np.any(np.asarray(delta) < 0):
        raise ValueError("step size delta must be nonnegative")


def zoh_discretize_A(delta, A) -> np.ndarray:
    """Elementwise ``exp(delta * A)``; ``delta`` must already broadcast against ``A``."""
    _check_delta(delta)
    return np.exp(np.asarray(delta) * np.asarray(A))


def discretize_B(delta, B) -> np.ndarray:
    """``Bbar[n, i] = delta[n] * B[n, i]`` (first-order rule used in training code)."""
    delta = np.asarray(delta)
    B = np.asarray(B)
    if delta.ndim != 1 or B.ndim != 2 or B.shape[0] != delta.shape[0]:
        raise ValueError(f"delta {delta.shape} and B {B.shape} are not (N,) and (N, H)")
    _check_delta(delta)
    return delta[:, None] * B


def discrete_A(spec: SsmBlockSpec, params: SsmParams) -> np.ndarray:
    return zoh_discretize_A(expand_delta(spec.variant, params.delta), params.A)


def _weighted_basis(dtA: np.ndarray, E: np.ndarray | None, length: int) -> np.ndarray:
    """sum_s E[..., s] * Re(exp(dtA[..., s] * tau)) for tau in [0, length).

    The basis is generated one slice of the summed axis at a time so the
    full (..., S, length) tensor never exists.
    """
    tau = np.arange(length, dtype=dtA.real.dtype)
    out = np.zeros(dtA.shape[:-1] + (length,), dtype=dtA.real.dtype)
    for s in range(dtA.shape[-1]):
        z = dtA[..., s, None]
        basis = np.exp(z.real * tau) * np.cos(z.imag * tau)
        out += basis if E is None else E[..., s, None] * basis
    return out


def materialize_kernel(spec: SsmBlockSpec, params: SsmParams, length: int) -> np.ndarray:
    """Real time-domain kernels with the state (or sub-state) axis collapsed.

    Shapes: bottleneck / pw_bottleneck ``(N, length)``; depthwise / dws
    ``(H, length)``; full ``(H_out, H, length)``; grouped
    ``(G, H_out/G, H/G, length)``.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    check_params(spec, params)
    dtA = expand_delta(spec.variant, params.delta) * params.A
    if spec.variant is Variant.PW_BOTTLENECK:
        return _weighted_basis(dtA[:, None], None, length)
    return _weighted_basis(dtA, params.E, length)


def _kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _geometric(n):
    return np.geomspace(1e-3, 1e-1, n)


def _s4d_lin(n):
    return -0.5 + 1j * np.pi * np.arange(n)


def init_params(spec: SsmBlockSpec, seed: int | np.random.Generator = 0) -> SsmParams:
    """Initial parameters: geometric step sizes in [1e-3, 1e-1] and
    ``A = -1/2 + i*pi*n`` along each variant's designated axes; projection and
    weighting tensors from a fan-in scaled Kaiming uniform."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    v, H, J, N, M, G = spec.variant, spec.H, spec.H_out, spec.N, spec.M, spec.G
    if v in (Variant.DEPTHWISE, Variant.DWS):
        delta = np.repeat(_geometric(H)[:, None], N, axis=1)
        A = np.broadcast_to(_s4d_lin(N), (H, N)).copy()
        E = _kaiming_uniform(rng, (H, N), N)
        mixer = _kaiming_uniform(rng, (J, H), H) if v is Variant.DWS else None
        return SsmParams(delta, A, E=E, mixer=mixer)
    if v is Variant.FULL:
        delta = np.repeat(_geometric(H)[:, None], N, axis=1)
        A = np.broadcast_to(_s4d_lin(N), (J, H, N)).copy()
        E = _kaiming_uniform(rng, (J, H, N), H * N)
        return SsmParams(delta, A, E=E)
    if v is Variant.GROUPED:
        Ig, Jg = H // G, J // G
        delta = np.repeat(_geometric(H).reshape(G, Ig, 1), N, axis=2)
        A = np.broadcast_to(_s4d_lin(N), (G, Jg, Ig, N)).copy()
        E = _kaiming_uniform(rng, (G, Jg, Ig, N), Ig * N)
        return SsmParams(delta, A, E=E)
    B = _kaiming_uniform(rng, (N, H), H)
    C = _kaiming_uniform(rng, (J, N), N)
    if v is Variant.PW_BOTTLENECK:
        # states in groups of 4: step size varies across groups, A within
        group = np.arange(N) // 4
        delta = _geometric(group[-1] + 1)[group]
        A = -0.5 + 1j * np.pi * (np.arange(N) % 4)
        return SsmParams(delta, A, B=B, C=C)
    delta = _geometric(N)
    A = np.broadcast_to(_s4d_lin(M), (N, M)).copy()
    E = _kaiming_uniform(rng, (N, M), M)
    return SsmParams(delta, A, B=B, C=C, E=E)


def simulate(sys: DenseSsm, u: np.ndarray) -> np.ndarray:
    """Run ``sys`` from zero state over ``u`` of shape (T, H); returns (T, H_out)."""
    x = np.zeros(sys.A.shape[0], dtype=np.result_type(sys.A, sys.B, u))
    ys = []
    for ut in u:
        x = sys.A @ x + sys.B @ ut
        ys.append(sys.C @ x + sys.D @ ut)
    return np.array(ys).reshape(len(u), sys.C.shape[0])


def absorb_feedthrough(sys: DenseSsm) -> DenseSsm:
    """Move ``D u`` into memoryless extra states that copy the input.

    The extra block is the H x H identity (the all-ones block is its H = 1
    case), so the augmented system has N + H states and zero D.
    """
    N, H = sys.B.shape
    J = sys.C.shape[0]
    dt = np.result_type(sys.A, sys.B, sys.C, sys.D)
    A = np.zeros((N + H, N + H), dtype=dt)
    A[:N, :N] = sys.A
    B = np.vstack([sys.B, np.eye(H, dtype=dt)])
    C = np.hstack([sys.C, sys.D])
    return DenseSsm(A, B, C, np.zeros((J, H), dtype=dt))


class DiagonalizationError(ValueError):
    pass


def diagonalize_system(sys: DenseSsm, max_condition: float = 1e8):
    """Return ``(lam, B', C')`` with ``C' diag(lam)^t B' == C A^t B`` for all t."""
    lam, V = np.linalg.eig(sys.A)
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > max_condition:
        raise DiagonalizationError(
            f"eigenvector matrix condition number {cond:.3g} exceeds {max_condition:.3g}"
            " (A is defective or nearly so)")
    return lam, np.linalg.solve(V, sys.B), sys.C @ V

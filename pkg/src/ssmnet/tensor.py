"""Dense tensor arithmetic: an instrumented einsum evaluator and FFT helpers.

Tensors are plain ``numpy.ndarray`` objects (row-major, explicit shape).
The einsum evaluator contracts operands one pair at a time, left to right,
and can record the exact number of scalar multiply-adds it performed.
"""
from __future__ import annotations

import math
import string
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EinsumError",
    "EinsumSpec",
    "FlopCounter",
    "flops_per_mac",
    "einsum_eval",
    "rfft",
    "irfft",
    "dft_matrix",
]

_LETTERS = set(string.ascii_lowercase)


class EinsumError(ValueError):
    """Malformed or unsupported einsum specification."""


def flops_per_mac(a_complex: bool, b_complex: bool) -> int:
    """FLOPs charged for one multiply-add given the operand kinds.

    real*real = 2, real*complex = 4, complex*complex = 8.
    """
    return {0: 2, 1: 4, 2: 8}[int(bool(a_complex)) + int(bool(b_complex))]


@dataclass
class FlopCounter:
    scalar_multiply_adds: int = 0
    flops: int = 0
    steps: list = field(default_factory=list)

    def add(self, macs: int, flops: int) -> None:
        self.scalar_multiply_adds += int(macs)
        self.flops += int(flops)
        self.steps.append((int(macs), int(flops)))


@dataclass(frozen=True)
class EinsumSpec:
    operand_subscripts: tuple[str, ...]
    output_subscripts: str
    extent_map: dict[str, int]

    def __post_init__(self):
        indices = set("".join(self.operand_subscripts))
        if len(indices | set(self.output_subscripts)) > 26:
            raise EinsumError("at most 26 distinct indices are supported")
        for subs in (*self.operand_subscripts, self.output_subscripts):
            bad = set(subs) - _LETTERS
            if bad:
                raise EinsumError(f"indices must be lowercase letters, got {sorted(bad)}")
            if len(set(subs)) != len(subs):
                raise EinsumError(
                    f"repeated index within one operand ({subs!r}) is unsupported")
        for idx in self.output_subscripts:
            if idx not in indices:
                raise EinsumError(f"output index {idx!r} does not appear in any operand")
        for idx in indices:
            if idx not in self.extent_map:
                raise EinsumError(f"index {idx!r} has no extent")

    @classmethod
    def from_equation(cls, equation: str, *shapes) -> "EinsumSpec":
        """Build a spec from ``"ij,jk->ik"`` and operand shapes.

        Raises if the same index is given two different extents.
        """
        lhs, sep, out = equation.replace(" ", "").partition("->")
        if not sep:
            raise EinsumError("equation needs an explicit '->' output")
        subs = tuple(lhs.split(","))
        if len(subs) != len(shapes):
            raise EinsumError(f"{len(subs)} operand subscripts but {len(shapes)} shapes")
        extents: dict[str, int] = {}
        for s, shape in zip(subs, shapes):
            if len(s) != len(shape):
                raise EinsumError(f"operand {s!r} has {len(shape)} axes, expected {len(s)}")
            for idx, ext in zip(s, shape):
                if extents.setdefault(idx, int(ext)) != int(ext):
                    raise EinsumError(
                        f"index {idx!r} has extent {extents[idx]} and {ext}")
        return cls(subs, out, extents)

    @property
    def equation(self) -> str:
        return ",".join(self.operand_subscripts) + "->" + self.output_subscripts

    def check_operands(self, operands) -> None:
        if len(operands) != len(self.operand_subscripts):
            raise EinsumError(
                f"expected {len(self.operand_subscripts)} operands, got {len(operands)}")
        for subs, op in zip(self.operand_subscripts, operands):
            if op.ndim != len(subs):
                raise EinsumError(f"operand {subs!r} has {op.ndim} axes")
            for idx, ext in zip(subs, op.shape):
                if ext != self.extent_map[idx]:
                    raise EinsumError(
                        f"index {idx!r}: operand {subs!r} has extent {ext}, "
                        f"spec says {self.extent_map[idx]}")


def _contract_pair(a, sa, b, sb, keep, extents, counter):
    out = "".join(i for i in dict.fromkeys(sa + sb) if i in keep)
    if counter is not None:
        macs = math.prod(extents[i] for i in set(sa) | set(sb))
        counter.add(macs, macs * flops_per_mac(np.iscomplexobj(a), np.iscomplexobj(b)))
    return np.einsum(f"{sa},{sb}->{out}", a, b, optimize=True), out


def einsum_eval(spec: EinsumSpec, operands, counter: FlopCounter | None = None) -> np.ndarray:
    """Evaluate ``spec`` by contracting operands pairwise in the given order.

    Each pairwise step keeps only indices still needed by later operands or
    the output. When ``counter`` is supplied it receives, per step, the
    product of all index extents involved in that contraction.
    """
    operands = [np.asarray(op) for op in operands]
    spec.check_operands(operands)
    subs = list(spec.operand_subscripts)
    out_set = set(spec.output_subscripts)

    acc, sacc = operands[0], subs[0]
    if len(operands) == 1:
        keep = out_set
        if set(sacc) != keep and counter is not None:
            n = math.prod(spec.extent_map[i] for i in sacc)
            counter.add(n, n * (2 if np.iscomplexobj(acc) else 1))
        reduced = "".join(i for i in sacc if i in keep)
        acc, sacc = np.einsum(f"{sacc}->{reduced}", acc), reduced
    for k in range(1, len(operands)):
        keep = out_set.union(*subs[k + 1:])
        acc, sacc = _contract_pair(acc, sacc, operands[k], subs[k], keep,
                                   spec.extent_map, counter)
    if sacc != spec.output_subscripts:
        acc = np.einsum(f"{sacc}->{spec.output_subscripts}", acc)
    return acc


def rfft(x, time_axis: int, padded_len: int) -> np.ndarray:
    """Zero-pad ``x`` to ``padded_len`` along ``time_axis`` and return the
    ``padded_len // 2 + 1`` nonnegative-frequency coefficients (unnormalized)."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        raise TypeError("rfft expects a real tensor")
    if padded_len < x.shape[time_axis]:
        raise ValueError(
            f"padded_len {padded_len} shorter than extent {x.shape[time_axis]}")
    return np.fft.rfft(x, n=padded_len, axis=time_axis)


def irfft(X, freq_axis: int, out_len: int, padded_len: int | None = None) -> np.ndarray:
    """Inverse of :func:`rfft` (scaled by 1/P), truncated to ``out_len`` samples.

    The padded length P is inferred as ``2 * (modes - 1)``; if ``padded_len``
    is given it must agree with the mode count.
    """
    X = np.asarray(X)
    modes = X.shape[freq_axis]
    P = 2 * (modes - 1)
    if modes < 2:
        raise ValueError(f"{modes} modes cannot come from an even padded length")
    if padded_len is not None and padded_len != P:
        raise ValueError(
            f"{modes} modes inconsistent with padded length {padded_len}")
    if out_len > P:
        raise ValueError(f"out_len {out_len} exceeds padded length {P}")
    y = np.fft.irfft(X, n=P, axis=freq_axis)
    return np.take(y, np.arange(out_len), axis=freq_axis)


def dft_matrix(T: int) -> np.ndarray:
    """Unnormalized T x T DFT matrix, ``W[f, t] = exp(-2j*pi*t*f/T)``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    t = np.arange(T)
    # reduce the product mod T first to keep the phase exact for large T
    return np.exp(-2j * np.pi * (np.outer(t, t) % T) / T)

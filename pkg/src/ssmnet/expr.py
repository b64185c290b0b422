"""Conv-einsum expressions: einsum plus one convolution index."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class ConvEinsumExpr:
    """An einsum whose ``conv_index`` denotes a causal convolution.

    ``operands`` names the tensors in their fixed layout order. The
    ``kernel`` operand is produced by kernel generation from an unweighted
    basis with subscripts ``basis``; indices in ``basis`` but not in the
    kernel's subscripts are collapsed during generation.
    """
    operands: tuple[str, ...]
    subscripts: tuple[str, ...]
    output: str
    basis: str
    conv_index: str = "f"
    input: str = "u"
    kernel: str = "k"
    default_max_ndim: int = 3

    def __post_init__(self):
        if len(self.operands) != len(self.subscripts):
            raise ValueError("one subscript string per operand")
        f = self.conv_index
        carriers = [name for name, s in zip(self.operands, self.subscripts) if f in s]
        if sorted(carriers) != sorted([self.input, self.kernel]) or f not in self.output:
            raise ValueError(
                f"conv index {f!r} must connect exactly the input, the kernel and the output")
        if set(self.subs_of(self.kernel)) - set(self.basis):
            raise ValueError("kernel indices must come from the basis")

    def subs_of(self, name: str) -> str:
        return self.subscripts[self.operands.index(name)]

    @property
    def time_operands(self) -> tuple[str, str]:
        return (self.input, self.kernel)

    @property
    def collapsed(self) -> str:
        kernel = self.subs_of(self.kernel)
        return "".join(i for i in self.basis if i not in kernel)

    @property
    def equation(self) -> str:
        return ",".join(self.subscripts) + "->" + self.output

    @property
    def index_order(self) -> str:
        seen = dict.fromkeys(self.output + "".join(self.subscripts) + self.basis)
        return "".join(seen)

    def __str__(self) -> str:
        return f"{self.equation}  [{', '.join(self.operands)}]"

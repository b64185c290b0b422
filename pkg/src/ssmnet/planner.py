"""Contraction planning for conv-einsum expressions.

A plan is an ordered list of steps: one kernel generation, pairwise
contractions, forward FFTs of the two time-domain operands, and a single
inverse FFT. The DFT operators are treated as costed operands, so where
an FFT sits in the plan changes the predicted cost.
"""
from __future__ import annotations

import enum
import itertools
import math
import threading
from dataclasses import dataclass, field

import numpy as np

from .expr import ConvEinsumExpr
from .tensor import EinsumSpec, FlopCounter, einsum_eval, flops_per_mac, irfft, rfft

__all__ = [
    "PathTag",
    "FuseKernelGen",
    "Fft",
    "Ifft",
    "Contract",
    "ContractionPlan",
    "StepCost",
    "CostReport",
    "PathChoice",
    "PlanningError",
    "enumerate_plans",
    "natural_plan",
    "cost_plan",
    "contract_cost",
    "choose_plan",
    "bottleneck_branch",
    "check_intermediate_dims",
    "contraction_orders",
    "order_intermediate_ndims",
    "is_neighbor_order",
    "execute_plan",
    "plan_cache",
]

MAX_OPERANDS = 8
TIME, FREQ = "time", "freq"


class PlanningError(ValueError):
    pass


class PathTag(str, enum.Enum):
    NATURAL = "NaturalOrder"
    FULL_KERNEL = "FullKernel"
    FALLBACK = "Fallback"


@dataclass(frozen=True)
class FuseKernelGen:
    out: str
    subscripts: str
    basis: str


@dataclass(frozen=True)
class Fft:
    op: str
    out: str
    subscripts: str
    pad_len: int


@dataclass(frozen=True)
class Ifft:
    op: str
    out: str
    subscripts: str
    out_len: int


@dataclass(frozen=True)
class Contract:
    op_a: str
    op_b: str
    out: str
    result_subscripts: str


@dataclass(frozen=True)
class _Node:
    subs: str
    domain: str | None      # None: carries no conv index, usable in either domain
    members: frozenset
    conv_done: bool = False

    @property
    def has_f(self) -> bool:
        return self.domain is not None


@dataclass(frozen=True)
class ContractionPlan:
    expr: ConvEinsumExpr
    extents: tuple[tuple[str, int], ...]
    steps: tuple
    tag: PathTag

    @property
    def extent_map(self) -> dict[str, int]:
        return dict(self.extents)

    @property
    def length(self) -> int:
        return self.extent_map[self.expr.conv_index]

    def describe(self, report: "CostReport | None" = None) -> str:
        lines = []
        for k, step in enumerate(self.steps):
            if isinstance(step, FuseKernelGen):
                collapsed = "".join(i for i in step.basis if i not in step.subscripts)
                text = (f"FuseKernelGen  {step.basis} -> {step.out}[{step.subscripts}]"
                        f"  (collapse {collapsed or '-'})")
            elif isinstance(step, Fft):
                text = f"Fft            {step.op} -> {step.out}[{step.subscripts}]  pad={step.pad_len}"
            elif isinstance(step, Ifft):
                text = f"Ifft           {step.op} -> {step.out}[{step.subscripts}]  len={step.out_len}"
            else:
                text = (f"Contract       {step.op_a}, {step.op_b} -> "
                        f"[{step.result_subscripts}]")
            if report is not None:
                text += f"  flops={report.per_step[k].flops}"
            lines.append(text)
        return "\n".join(lines)


def _extents_key(extents) -> tuple[tuple[str, int], ...]:
    return tuple(sorted((str(k), int(v)) for k, v in dict(extents).items()))


class _Builder:
    """Immutable search state while assembling a plan."""

    def __init__(self, expr: ConvEinsumExpr, L: int, nodes, steps, ifft_done=False):
        self.expr = expr
        self.L = L
        self.nodes = nodes
        self.steps = steps
        self.ifft_done = ifft_done

    @classmethod
    def start(cls, expr: ConvEinsumExpr, L: int) -> "_Builder":
        nodes = {}
        for pos, (name, subs) in enumerate(zip(expr.operands, expr.subscripts)):
            domain = TIME if expr.conv_index in subs else None
            nodes[name] = _Node(subs, domain, frozenset([pos]))
        step = FuseKernelGen(expr.kernel, expr.subs_of(expr.kernel), expr.basis)
        return cls(expr, L, nodes, (step,))

    def _with(self, remove, out, node, step, ifft_done=None):
        nodes = {k: v for k, v in self.nodes.items() if k not in remove}
        nodes[out] = node
        return _Builder(self.expr, self.L, nodes, self.steps + (step,),
                        self.ifft_done if ifft_done is None else ifft_done)

    def can_fft(self, name) -> bool:
        node = self.nodes[name]
        return node.domain == TIME and not node.conv_done

    def fft(self, name) -> "_Builder":
        node = self.nodes[name]
        out = f"F({name})"
        step = Fft(name, out, node.subs, 2 * self.L)
        return self._with({name}, out, _Node(node.subs, FREQ, node.members), step)

    def can_ifft(self, name) -> bool:
        node = self.nodes[name]
        return node.domain == FREQ and node.conv_done and not self.ifft_done

    def ifft(self, name) -> "_Builder":
        node = self.nodes[name]
        out = f"iF({name})"
        step = Ifft(name, out, node.subs, self.L)
        return self._with({name}, out, _Node(node.subs, TIME, node.members, True), step, True)

    def result_subs(self, a, b) -> str:
        keep = set(self.expr.output)
        for name, node in self.nodes.items():
            if name not in (a, b):
                keep |= set(node.subs)
        union = set(self.nodes[a].subs) | set(self.nodes[b].subs)
        f = self.expr.conv_index
        order = [i for i in self.expr.index_order if i != f] + [f]
        return "".join(i for i in order if i in union and i in keep)

    def can_contract(self, a, b) -> bool:
        na, nb = self.nodes[a], self.nodes[b]
        if na.has_f and nb.has_f:
            return na.domain == FREQ and nb.domain == FREQ
        return True

    def contract(self, a, b) -> "_Builder":
        na, nb = self.nodes[a], self.nodes[b]
        if min(nb.members) < min(na.members):
            a, b, na, nb = b, a, nb, na
        subs = self.result_subs(a, b)
        domain = na.domain or nb.domain
        conv_done = na.conv_done or nb.conv_done or (na.has_f and nb.has_f)
        out = f"({a}*{b})"
        node = _Node(subs, domain, na.members | nb.members, conv_done)
        return self._with({a, b}, out, node, Contract(a, b, out, subs))

    def done(self) -> bool:
        if len(self.nodes) != 1 or not self.ifft_done:
            return False
        (node,) = self.nodes.values()
        return node.domain == TIME and set(node.subs) == set(self.expr.output)

    def max_ndim(self) -> int:
        return max(len(n.subs) for n in self.nodes.values())


def _classify(expr: ConvEinsumExpr, steps) -> PathTag:
    members = {name: frozenset([pos]) for pos, name in enumerate(expr.operands)}
    in_pos = expr.operands.index(expr.input)
    partners = []
    for step in steps:
        if isinstance(step, (Fft, Ifft)):
            members[step.out] = members[step.op]
        elif isinstance(step, Contract):
            ma, mb = members[step.op_a], members[step.op_b]
            if in_pos in ma:
                partners.append((ma, mb))
            elif in_pos in mb:
                partners.append((mb, ma))
            members[step.out] = ma | mb
    if len(expr.operands) == 2:
        return PathTag.NATURAL
    if len(partners) == 1:
        return PathTag.FULL_KERNEL
    if all(_contiguous(mu | mo) for mu, mo in partners):
        return PathTag.NATURAL
    return PathTag.FALLBACK


def _contiguous(positions) -> bool:
    return max(positions) - min(positions) + 1 == len(positions)


def _make_plan(expr, extents, steps) -> ContractionPlan:
    return ContractionPlan(expr, _extents_key(extents), tuple(steps), _classify(expr, steps))


def _check_extents(expr: ConvEinsumExpr, extents) -> int:
    needed = set(expr.index_order)
    missing = needed - set(extents)
    if missing:
        raise PlanningError(f"missing extents for indices {sorted(missing)}")
    for k in needed:
        if int(extents[k]) < 1:
            raise PlanningError(f"extent of {k!r} must be positive")
    return int(extents[expr.conv_index])


def enumerate_plans(expr: ConvEinsumExpr, extents, max_ndim: int | None = None
                    ) -> list[ContractionPlan]:
    """All pairwise contraction orders with every valid FFT / iFFT placement
    whose intermediates stay within ``max_ndim`` axes."""
    n_total = len(expr.operands) + 3  # two forward DFT operands plus one inverse
    if n_total > MAX_OPERANDS:
        raise PlanningError(
            f"{len(expr.operands)} operands plus 3 DFT nodes exceeds {MAX_OPERANDS}")
    L = _check_extents(expr, extents)
    if max_ndim is None:
        max_ndim = expr.default_max_ndim
    start = _Builder.start(expr, L)
    if start.max_ndim() > max_ndim:
        return []

    found: dict[frozenset, tuple] = {}
    visited: set[frozenset] = set()

    def search(state: _Builder):
        key = frozenset(state.steps)
        if key in visited:
            return
        visited.add(key)
        if state.done():
            found.setdefault(key, state.steps)
            return
        names = sorted(state.nodes)
        for name in names:
            if state.can_fft(name):
                search(state.fft(name))
            if state.can_ifft(name):
                search(state.ifft(name))
        for a, b in itertools.combinations(names, 2):
            if state.can_contract(a, b) and len(state.result_subs(a, b)) <= max_ndim:
                search(state.contract(a, b))

    search(start)
    return [_make_plan(expr, extents, steps) for steps in found.values()]


def natural_plan(expr: ConvEinsumExpr, extents) -> ContractionPlan:
    """Baseline: FFT both time operands, contract left to right in layout
    order entirely in the frequency domain, then one inverse FFT."""
    L = _check_extents(expr, extents)
    state = _Builder.start(expr, L)
    state = state.fft(expr.input).fft(expr.kernel)
    names = {expr.input: f"F({expr.input})", expr.kernel: f"F({expr.kernel})"}
    acc = names[expr.input]
    for name in expr.operands[1:]:
        before = set(state.nodes)
        state = state.contract(acc, names.get(name, name))
        (acc,) = set(state.nodes) - (before - {acc, names.get(name, name)})
    state = state.ifft(acc)
    assert state.done()
    return _make_plan(expr, extents, state.steps)


@dataclass(frozen=True)
class StepCost:
    multiply_adds: int
    flops: int
    result_extents: tuple[int, ...]
    result_bytes: int


@dataclass(frozen=True)
class CostReport:
    per_step: tuple[StepCost, ...]
    total_flops: int
    peak_intermediate_elements: int
    max_intermediate_ndim: int

    @property
    def total_multiply_adds(self) -> int:
        return sum(s.multiply_adds for s in self.per_step)


def _itemsize(dtype, is_complex):
    real = np.dtype(dtype)
    if real.kind == "c":
        real = np.dtype(real.char.lower()) if real.char in "FD" else np.dtype(np.float64)
    return real.itemsize * (2 if is_complex else 1)


def contract_cost(subs_a: str, subs_b: str, extents, a_complex=False, b_complex=False):
    """(multiply-adds, FLOPs) of one pairwise contraction."""
    macs = math.prod(int(extents[i]) for i in set(subs_a) | set(subs_b))
    return macs, macs * flops_per_mac(a_complex, b_complex)


def fft_flops(batch_elems: int, padded_len: int) -> int:
    return int(round(5 * batch_elems * padded_len * math.log2(padded_len))) if padded_len > 1 else 0


def cost_plan(plan: ContractionPlan, dtype="float64", training: bool = False) -> CostReport:
    """Predicted cost of every step of ``plan``.

    Contractions cost the product of all involved extents in multiply-adds,
    weighted 2/4/8 FLOPs for real*real / real*complex / complex*complex.
    Forward and inverse FFTs cost ``5 P Lp log2(Lp)``. Kernel generation
    costs one multiply-add per basis element plus 4 FLOPs per exponential.
    ``training`` triples every FLOP figure (forward plus backward).
    """
    expr = plan.expr
    f = expr.conv_index
    ext = plan.extent_map
    L = ext[f]
    mult = 3 if training else 1

    def dims(subs, domain):
        return tuple((L + 1 if (i == f and domain == FREQ) else ext[i]) for i in subs)

    info = {}
    for name, subs in zip(expr.operands, expr.subscripts):
        info[name] = (subs, TIME if f in subs else None)
    per_step = []
    for step in plan.steps:
        if isinstance(step, FuseKernelGen):
            basis = math.prod(dims(step.basis, TIME))
            macs = basis if set(step.basis) - set(step.subscripts) else 0
            flops = 2 * macs + 4 * basis
            info[step.out] = (step.subscripts, TIME)
        elif isinstance(step, (Fft, Ifft)):
            subs, domain = info[step.op]
            rows = math.prod(ext[i] for i in subs if i != f)
            macs = 0
            flops = fft_flops(rows, 2 * L)
            info[step.out] = (subs, FREQ if isinstance(step, Fft) else TIME)
        else:
            sa, da = info[step.op_a]
            sb, db = info[step.op_b]
            domain = da or db
            local = dict(ext)
            if domain == FREQ:
                local[f] = L + 1
            macs, flops = contract_cost(sa, sb, local, da == FREQ, db == FREQ)
            info[step.out] = (step.result_subscripts, domain)
        subs, domain = info[step.out]
        shape = dims(subs, domain)
        nbytes = math.prod(shape) * _itemsize(dtype, domain == FREQ)
        per_step.append(StepCost(int(macs), int(flops) * mult, shape, int(nbytes)))
    return CostReport(
        per_step=tuple(per_step),
        total_flops=sum(s.flops for s in per_step),
        peak_intermediate_elements=max(math.prod(s.result_extents) for s in per_step),
        max_intermediate_ndim=max(len(s.result_extents) for s in per_step),
    )


def check_intermediate_dims(plan: ContractionPlan, extents=None) -> int:
    """Largest number of axes of any tensor the plan produces (no numerics)."""
    if extents is not None and _extents_key(extents) != plan.extents:
        raise PlanningError("plan was built for different extents")
    ndims = []
    for step in plan.steps:
        if isinstance(step, Contract):
            ndims.append(len(step.result_subscripts))
        else:
            ndims.append(len(step.subscripts))
    return max(ndims)


class _PlanCache:
    """Process-wide cache of chosen plans, safe for concurrent use."""

    def __init__(self):
        self._lock = threading.Lock()
        self._plans: dict = {}

    def get_or_create(self, key, factory):
        with self._lock:
            hit = self._plans.get(key)
        if hit is not None:
            return hit
        value = factory()
        with self._lock:
            return self._plans.setdefault(key, value)

    def clear(self):
        with self._lock:
            self._plans.clear()

    def __len__(self):
        with self._lock:
            return len(self._plans)


plan_cache = _PlanCache()


def choose_plan(expr: ConvEinsumExpr, extents, dtype="float64", max_ndim: int | None = None,
                training: bool = False) -> tuple[ContractionPlan, CostReport]:
    """Cheapest feasible plan by predicted FLOPs.

    Ties go to the smaller peak intermediate, then to enumeration order.
    """
    if max_ndim is None:
        max_ndim = expr.default_max_ndim
    key = (expr, _extents_key(extents), np.dtype(dtype).str, max_ndim, training)

    def build():
        plans = enumerate_plans(expr, extents, max_ndim)
        if not plans:
            raise PlanningError(
                f"no plan keeps intermediates within {max_ndim} axes; "
                f"try a larger max_ndim")
        costed = [(cost_plan(p, dtype, training), k, p) for k, p in enumerate(plans)]
        report, _, plan = min(
            costed, key=lambda c: (c[0].total_flops, c[0].peak_intermediate_elements, c[1]))
        return plan, report

    return plan_cache.get_or_create(key, build)


@dataclass(frozen=True)
class PathChoice:
    tag: PathTag
    fft_early: bool
    lhs: float = field(default=0.0)   # 1/H + 1/H_out
    rhs: float = field(default=0.0)   # 1/batch + 1/N

    @property
    def uses_generic_fallback(self) -> bool:
        """True when the hand-forced branch does not apply and the generic
        single-einsum evaluation runs instead."""
        return not self.fft_early


def bottleneck_branch(batch: int, H: int, H_out: int, N: int) -> PathChoice:
    """The shape-based branch for the bottleneck block.

    Natural order iff ``1/H + 1/H_out < 1/batch + 1/N`` (strict); otherwise
    the full kernel is built first. The early flag is ``N <= H`` for natural
    order (project the input before its FFT) and ``H * H_out <= N`` for the
    full kernel (FFT the smaller full kernel).
    """
    for v in (batch, H, H_out, N):
        if v < 1:
            raise ValueError("dimensions must be positive")
    lhs = 1 / H + 1 / H_out
    rhs = 1 / batch + 1 / N
    if lhs < rhs:
        return PathChoice(PathTag.NATURAL, N <= H, lhs, rhs)
    return PathChoice(PathTag.FULL_KERNEL, H * H_out <= N, lhs, rhs)


def contraction_orders(n: int):
    """Every sequence of pairwise merges of ``n`` operands.

    Yields tuples of ``(members_a, members_b)`` frozensets of operand positions.
    """
    def rec(groups, acc):
        if len(groups) == 1:
            yield tuple(acc)
            return
        for x, y in itertools.combinations(range(len(groups)), 2):
            merged = groups[x] | groups[y]
            rest = [g for k, g in enumerate(groups) if k not in (x, y)] + [merged]
            yield from rec(rest, acc + [(groups[x], groups[y])])

    yield from rec([frozenset([k]) for k in range(n)], [])


def order_intermediate_ndims(expr: ConvEinsumExpr, order) -> list[int]:
    """ndim of each intermediate produced by a pure contraction order."""
    live = {frozenset([k]): s for k, s in enumerate(expr.subscripts)}
    ndims = []
    for ma, mb in order:
        sa, sb = live.pop(ma), live.pop(mb)
        keep = set(expr.output).union(*live.values())
        subs = [i for i in dict.fromkeys(sa + sb) if i in keep]
        live[ma | mb] = "".join(subs)
        ndims.append(len(subs))
    return ndims


def is_neighbor_order(expr: ConvEinsumExpr, order) -> bool:
    """True if every contraction touching the input joins a contiguous
    block of operands in layout order."""
    pos = expr.operands.index(expr.input)
    for ma, mb in order:
        if pos in ma or pos in mb:
            if not _contiguous(ma | mb):
                return False
    return True


def execute_plan(plan: ContractionPlan, values: dict, kernel: np.ndarray,
                 trace: list | None = None) -> np.ndarray:
    """Run ``plan`` on concrete operands; returns the output in ``expr.output`` order.

    ``values`` maps the non-kernel operand names to arrays whose axes follow
    the expression's subscripts. When ``trace`` is a list, one
    :class:`FlopCounter` per step is appended (contractions are counted by
    the instrumented einsum evaluator; other steps record zero).
    """
    expr = plan.expr
    f = expr.conv_index
    L = plan.length
    env = {}
    for name, subs in zip(expr.operands, expr.subscripts):
        if name != expr.kernel:
            env[name] = (np.asarray(values[name]), subs)
    for step in plan.steps:
        counter = FlopCounter()
        if isinstance(step, FuseKernelGen):
            if kernel.shape[-1] != L:
                raise PlanningError("kernel length does not match the plan")
            env[step.out] = (kernel, step.subscripts)
        elif isinstance(step, Fft):
            x, subs = env.pop(step.op)
            env[step.out] = (rfft(x, subs.index(f), step.pad_len), subs)
        elif isinstance(step, Ifft):
            x, subs = env.pop(step.op)
            env[step.out] = (irfft(x, subs.index(f), step.out_len), subs)
        else:
            a, sa = env.pop(step.op_a)
            b, sb = env.pop(step.op_b)
            spec = EinsumSpec.from_equation(f"{sa},{sb}->{step.result_subscripts}",
                                            a.shape, b.shape)
            env[step.out] = (einsum_eval(spec, [a, b], counter), step.result_subscripts)
        if trace is not None:
            trace.append(counter)
    ((result, subs),) = env.values()
    if subs != expr.output:
        result = np.einsum(f"{subs}->{expr.output}", result)
    return result

"""Plan enumeration, costing, selection and the bottleneck feasibility results."""
import math
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssmnet.bench import AXES, BASELINE, SWEEP_VALUES
from ssmnet.blocks import block_expr, block_extents, block_operands
from ssmnet.expr import ConvEinsumExpr
from ssmnet.params import SsmBlockSpec, init_params, materialize_kernel
from ssmnet.planner import (Contract, Fft, FuseKernelGen, Ifft, PathTag, PlanningError,
                            bottleneck_branch, check_intermediate_dims, choose_plan,
                            contract_cost, contraction_orders, cost_plan, enumerate_plans,
                            execute_plan, is_neighbor_order, natural_plan,
                            order_intermediate_ndims, plan_cache)


def bottleneck(batch=2, H=3, H_out=4, N=5, M=2, L=8):
    spec = SsmBlockSpec("bottleneck", H, H_out, N, M)
    return spec, block_expr(spec), block_extents(spec, batch, L)


def contracts(plan):
    return [s for s in plan.steps if isinstance(s, Contract)]


def first_input_partner(plan):
    """Name of what the input is first contracted with (FFT wrappers stripped)."""
    for s in contracts(plan):
        names = {s.op_a.replace("F(", "").rstrip(")"), s.op_b.replace("F(", "").rstrip(")")}
        if "u" in names:
            return (names - {"u"}).pop()
    return None


class TestEnumeration:
    def test_three_axis_bound_leaves_two_patterns(self):
        _, expr, ext = bottleneck()
        plans = enumerate_plans(expr, ext, 3)
        assert {p.tag for p in plans} == {PathTag.NATURAL, PathTag.FULL_KERNEL}

    def test_looser_bound_admits_larger_intermediates(self):
        _, expr, ext = bottleneck()
        plans = enumerate_plans(expr, ext, 5)
        assert len(plans) > len(enumerate_plans(expr, ext, 3))
        dims = {check_intermediate_dims(p) for p in plans}
        assert {4, 5} <= dims
        assert any(first_input_partner(p) == "k" for p in plans)

    def test_depthwise_single_pattern(self):
        spec = SsmBlockSpec("depthwise", 4, N=3)
        plans = enumerate_plans(block_expr(spec), block_extents(spec, 2, 8))
        assert len(plans) == 1 and plans[0].tag is PathTag.NATURAL
        kinds = [type(s) for s in plans[0].steps]
        assert kinds.count(Contract) == 1 and kinds.count(Fft) == 2

    @pytest.mark.parametrize("max_ndim", [3, 4, 5])
    def test_plan_invariants(self, max_ndim):
        _, expr, ext = bottleneck()
        for plan in enumerate_plans(expr, ext, max_ndim):
            assert isinstance(plan.steps[0], FuseKernelGen)
            assert sum(isinstance(s, Ifft) for s in plan.steps) == 1
            produced, consumed = set(expr.operands), []
            domain = {name: ("time" if "f" in s else None)
                      for name, s in zip(expr.operands, expr.subscripts)}
            for s in plan.steps[1:]:
                if isinstance(s, Contract):
                    da, db = domain[s.op_a], domain[s.op_b]
                    assert not (da and db and da != db), "mixed-domain contraction"
                    domain[s.out] = da or db
                    consumed += [s.op_a, s.op_b]
                else:
                    domain[s.out] = "freq" if isinstance(s, Fft) else "time"
                    consumed.append(s.op)
                produced.add(s.out)
            assert len(consumed) == len(set(consumed))
            assert set(produced) - set(consumed) == {plan.steps[-1].out}
            last = plan.steps[-1]
            subs = last.result_subscripts if isinstance(last, Contract) else last.subscripts
            assert sorted(subs) == sorted(expr.output)
            assert check_intermediate_dims(plan) <= max_ndim

    def test_deterministic_order(self):
        _, expr, ext = bottleneck()
        a = [p.steps for p in enumerate_plans(expr, ext, 5)]
        b = [p.steps for p in enumerate_plans(expr, ext, 5)]
        assert a == b

    def test_operand_limit(self):
        names = tuple("uabcdk")
        expr = ConvEinsumExpr(names, ("bif", "i", "i", "i", "i", "if"), "bif", "if")
        with pytest.raises(PlanningError, match="exceeds"):
            enumerate_plans(expr, {"b": 1, "i": 1, "f": 2})

    def test_missing_extent(self):
        _, expr, ext = bottleneck()
        del ext["n"]
        with pytest.raises(PlanningError, match="missing"):
            enumerate_plans(expr, ext)


class TestIntermediateDims:
    def test_natural_order_stays_three_dimensional(self):
        _, expr, ext = bottleneck()
        assert check_intermediate_dims(natural_plan(expr, ext)) == 3

    def test_input_with_output_projection_first(self):
        _, expr, ext = bottleneck()
        plans = [p for p in enumerate_plans(expr, ext, 5) if first_input_partner(p) == "C"]
        assert plans and all(check_intermediate_dims(p) == 5 for p in plans)

    def test_input_with_kernel_first(self):
        _, expr, ext = bottleneck()
        plans = [p for p in enumerate_plans(expr, ext, 5) if first_input_partner(p) == "k"]
        assert plans and min(check_intermediate_dims(p) for p in plans) == 4

    def test_lemma_exhaustive(self):
        _, expr, _ = bottleneck()
        orders = list(contraction_orders(4))
        assert len(orders) == 18
        for order in orders:
            small = max(order_intermediate_ndims(expr, order)) <= 3
            assert small == is_neighbor_order(expr, order), order

    def test_pure_order_dims(self):
        _, expr, _ = bottleneck()
        first = {frozenset([0, 2]): 4, frozenset([0, 3]): 5, frozenset([0, 1]): 3}
        for order in contraction_orders(4):
            a, b = order[0]
            if frozenset(a | b) in first:
                assert order_intermediate_ndims(expr, order)[0] == first[frozenset(a | b)]


class TestCost:
    def test_matmul_count(self):
        assert contract_cost("ij", "jk", {"i": 2, "j": 2, "k": 2}) == (8, 16)

    def test_natural_order_frequency_macs(self):
        B, H, J, N, L = 3, 4, 5, 6, 16
        _, expr, ext = bottleneck(B, H, J, N, 2, L)
        report = cost_plan(natural_plan(expr, ext))
        F = L + 1
        macs = sum(c.multiply_adds for s, c in zip(natural_plan(expr, ext).steps,
                                                   report.per_step) if isinstance(s, Contract))
        assert macs == B * N * F * (H + J + 1)          # ~ BNF(H + H')

    def test_full_kernel_macs(self):
        B, H, J, N, L = 3, 4, 5, 6, 16
        _, expr, ext = bottleneck(B, H, J, N, 2, L)
        plans = [p for p in enumerate_plans(expr, ext, 3) if p.tag is PathTag.FULL_KERNEL
                 and [s.op_a for s in contracts(p)][:1] == ["B"]
                 and contracts(p)[1].op_b == "k"]
        plan = plans[0]
        report = cost_plan(plan)
        macs = sum(c.multiply_adds for s, c in zip(plan.steps, report.per_step)
                   if isinstance(s, Contract))
        assert macs == J * N * H + J * N * H * L + B * J * H * (L + 1)   # ~ HH'F(B + N)

    def test_fft_and_kernel_costs(self):
        spec = SsmBlockSpec("depthwise", 4, N=3)
        plan = enumerate_plans(block_expr(spec), block_extents(spec, 2, 8))[0]
        report = cost_plan(plan)
        steps = dict(zip(plan.steps, report.per_step))
        for s, c in steps.items():
            if isinstance(s, Fft) and s.op == "u":
                assert c.flops == round(5 * 2 * 4 * 16 * math.log2(16))
            if isinstance(s, FuseKernelGen):
                assert c.multiply_adds == 4 * 3 * 8
                assert c.flops == 2 * 96 + 4 * 96

    def test_report_invariants_and_training(self):
        _, expr, ext = bottleneck()
        for plan in enumerate_plans(expr, ext, 5):
            r = cost_plan(plan)
            assert r.total_flops == sum(c.flops for c in r.per_step)
            assert all(r.peak_intermediate_elements >= math.prod(c.result_extents)
                       for c in r.per_step)
            assert cost_plan(plan, training=True).total_flops == 3 * r.total_flops

    def test_complex_bytes(self):
        _, expr, ext = bottleneck()
        plan = natural_plan(expr, ext)
        r64, r32 = cost_plan(plan, "float64"), cost_plan(plan, "float32")
        for s, a, b in zip(plan.steps, r64.per_step, r32.per_step):
            assert a.result_bytes == 2 * b.result_bytes
            if isinstance(s, Fft):
                assert a.result_bytes == 16 * math.prod(a.result_extents)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(1, 5),
           st.integers(1, 3), st.integers(1, 9), st.integers(3, 5))
    def test_measured_macs_equal_prediction(self, B, H, J, N, M, L, max_ndim):
        spec, expr, ext = bottleneck(B, H, J, N, M, L)
        p = init_params(spec, 0)
        u = np.random.default_rng(0).standard_normal((B, H, L))
        kernel = materialize_kernel(spec, p, L)
        for plan in enumerate_plans(expr, ext, max_ndim):
            trace = []
            execute_plan(plan, block_operands(spec, p, u), kernel, trace)
            for s, c, t in zip(plan.steps, cost_plan(plan).per_step, trace):
                if isinstance(s, Contract):
                    assert t.scalar_multiply_adds == c.multiply_adds


class TestChoice:
    def test_baseline_picks_full_kernel(self):
        _, expr, ext = bottleneck(256, 16, 32, 256, 16, 2048)
        plan, report = choose_plan(expr, ext)
        assert plan.tag is PathTag.FULL_KERNEL
        assert report.total_flops < cost_plan(natural_plan(expr, ext)).total_flops

    def test_small_batch_few_states_picks_natural(self):
        _, expr, ext = bottleneck(1, 64, 64, 4, 1, 2048)
        plan, _ = choose_plan(expr, ext)
        assert plan.tag is PathTag.NATURAL

    def test_unit_depthwise(self):
        spec = SsmBlockSpec("depthwise", 1, N=1)
        plan, _ = choose_plan(block_expr(spec), block_extents(spec, 1, 16))
        assert plan.tag is PathTag.NATURAL

    def test_argmin_with_tie_breaks(self):
        _, expr, ext = bottleneck(4, 3, 5, 7, 2, 32)
        plans = enumerate_plans(expr, ext, 3)
        keys = [(cost_plan(p).total_flops, cost_plan(p).peak_intermediate_elements, k)
                for k, p in enumerate(plans)]
        chosen, _ = choose_plan(expr, ext)
        assert chosen == plans[min(keys)[2]]

    def test_too_tight_bound(self):
        _, expr, ext = bottleneck()
        with pytest.raises(PlanningError, match="larger max_ndim"):
            choose_plan(expr, ext, max_ndim=2)

    def test_cache_is_extent_exact_and_thread_safe(self):
        _, expr, _ = bottleneck()
        results = {}

        def worker(L):
            ext = block_extents(SsmBlockSpec("bottleneck", 3, 4, 5, 2), 2, L)
            results[L] = [choose_plan(expr, ext)[0] for _ in range(5)]

        threads = [threading.Thread(target=worker, args=(L,)) for L in range(4, 20)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        for L, plans in results.items():
            assert all(p.length == L and p is plans[0] for p in plans)
        assert len(plan_cache) >= 16

    @pytest.mark.parametrize("axis", AXES)
    def test_dominance_on_bench_grid(self, axis):
        for v in SWEEP_VALUES:
            d = dict(BASELINE, **{axis: v})
            _, expr, ext = bottleneck(d["batch"], d["H"], d["H_out"], d["N"], d["M"],
                                      d["length"])
            _, report = choose_plan(expr, ext)
            assert report.total_flops <= cost_plan(natural_plan(expr, ext)).total_flops

    @pytest.mark.parametrize("axis", AXES)
    def test_branch_consistency_on_bench_grid(self, axis):
        """Chosen tag equals the shape branch wherever the inequality is strict."""
        mismatches = []
        for v in SWEEP_VALUES:
            d = dict(BASELINE, **{axis: v})
            _, expr, ext = bottleneck(d["batch"], d["H"], d["H_out"], d["N"], d["M"],
                                      d["length"])
            branch = bottleneck_branch(d["batch"], d["H"], d["H_out"], d["N"])
            if branch.lhs != branch.rhs:
                tag = choose_plan(expr, ext)[0].tag
                if tag is not branch.tag:
                    mismatches.append((v, tag.value, branch.tag.value))
        assert not mismatches, f"{axis}: (value, chosen, branch) {mismatches}"

    @pytest.mark.parametrize("batch,H,J,N", [(1, 64, 64, 4), (2, 32, 32, 2), (256, 16, 32, 256),
                                             (512, 8, 8, 512), (1, 128, 64, 1)])
    def test_branch_consistency_with_clear_margin(self, batch, H, J, N):
        branch = bottleneck_branch(batch, H, J, N)
        assert max(branch.lhs, branch.rhs) >= 3 * min(branch.lhs, branch.rhs)
        _, expr, ext = bottleneck(batch, H, J, N, 4, 512)
        assert choose_plan(expr, ext)[0].tag is branch.tag


class TestBranch:
    def test_baseline(self):
        c = bottleneck_branch(256, 16, 32, 256)
        assert c.tag is PathTag.FULL_KERNEL and c.fft_early is False
        assert c.uses_generic_fallback

    def test_natural(self):
        c = bottleneck_branch(1, 64, 64, 4)
        assert c.tag is PathTag.NATURAL and c.fft_early is True

    def test_equality_boundary_takes_else_branch(self):
        c = bottleneck_branch(1, 1, 1, 1)
        assert c.lhs == c.rhs == 2
        assert c.tag is PathTag.FULL_KERNEL and c.fft_early is True

    def test_full_kernel_early_when_kernel_small(self):
        assert bottleneck_branch(64, 4, 4, 16).fft_early is True

    def test_positive_dims(self):
        with pytest.raises(ValueError):
            bottleneck_branch(0, 1, 1, 1)

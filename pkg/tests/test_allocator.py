import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eriflow import allocator as alloc
from eriflow.allocator import (MockClock, MockKernel, WorkloadConfig, combine, measure, revert, tune,
                               valley_cost)

A, B = ("A",), ("B",)


def test_combine_doubles():
    cfg = WorkloadConfig.uniform([A], 1, 16)
    new, changed = combine(cfg, A)
    assert changed and new.g[A] == 2
    assert cfg.g[A] == 1


def test_combine_at_cap():
    cfg = WorkloadConfig.uniform([A], 16, 16)
    new, changed = combine(cfg, A)
    assert not changed and new.g[A] == 16


def test_combine_clamps_to_cap():
    assert combine(WorkloadConfig({A: 6}, {A: 8}), A)[0].g[A] == 8


def test_combine_isolated():
    cfg = WorkloadConfig.uniform([A, B], 2, 16)
    new, _ = combine(cfg, A)
    assert new.g[B] == 2


def test_revert_cases():
    cfg = WorkloadConfig.uniform([A, B], 1, 16)
    grown, _ = combine(cfg, A)
    assert revert(grown, A, 1).g[A] == 1
    assert revert(grown, A, 1).g[B] == 1
    capped = WorkloadConfig.uniform([A], 16, 16)
    assert revert(combine(capped, A)[0], A, 16).g[A] == 16


def test_uniform_bad_cap():
    with pytest.raises(ValueError):
        WorkloadConfig.uniform([A], 1, 0)


def test_measure_inverse_cost_halves():
    clock = MockClock()
    kernel = MockKernel({A: lambda g: 1.0 / g}, clock)
    cfg = WorkloadConfig.uniform([A], 1, 64)
    t = []
    for _ in range(4):
        t.append(measure(A, cfg, [None], kernel, clock=clock).median)
        cfg, _ = combine(cfg, A)
    assert t == [1.0, 0.5, 0.25, 0.125]


def test_measure_reports_variance():
    clock = MockClock()
    kernel = MockKernel({A: lambda g: 1.0}, clock, noise=0.2, seed=3)
    m = measure(A, WorkloadConfig.uniform([A]), [None], kernel, repeats=5, clock=clock)
    assert len(m.samples) == 5
    assert m.variance > 0
    assert m.median == pytest.approx(sorted(m.samples)[2])


def test_measure_discards_warmup():
    clock = MockClock()
    kernel = MockKernel({A: lambda g: 1.0}, clock)
    measure(A, WorkloadConfig.uniform([A]), [None], kernel, repeats=3, clock=clock)
    assert kernel.calls == 4


def test_measure_empty_sample():
    with pytest.raises(ValueError):
        measure(A, WorkloadConfig.uniform([A]), [], lambda *a: None)


def run(costs, cap=alloc.MAX_GRANULARITY, noise=0.0):
    clock = MockClock()
    kernel = MockKernel(costs, clock, noise=noise)
    classes = list(costs)
    return tune(classes, WorkloadConfig.uniform(classes, 1, cap), {c: [None] for c in classes}, kernel, clock=clock)


def test_increasing_costs_unchanged():
    res = run({A: lambda g: g, B: lambda g: 1 + math.log2(g)})
    assert res.config.g == {A: 1, B: 1}
    assert res.accepted_steps == 0 and res.sweeps == 1


def test_decreasing_costs_reach_cap():
    res = run({A: lambda g: 1.0 / g, B: lambda g: 10.0 - math.log2(g)}, cap=64)
    assert res.config.g == {A: 64, B: 64}


def test_mixed_minima():
    res = run({A: valley_cost(4), B: valley_cost(1)})
    assert res.config.g == {A: 4, B: 1}


@pytest.mark.parametrize("g_opt", [1, 4, alloc.MAX_GRANULARITY])
def test_valley_minimum(g_opt):
    assert run({A: valley_cost(g_opt)}).config.g[A] == g_opt


def test_history_and_report():
    res = run({A: valley_cost(4)})
    rec = res.report()[0]
    assert rec["g_final"] == 4
    assert [h["g"] for h in rec["t_history"]][:4] == [1, 2, 2, 4]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 12), min_size=1, max_size=4), st.integers(1, 12), st.floats(0.0, 0.3))
def test_termination_and_monotonicity(opt_exps, cap_exp, noise):
    cap = 2 ** cap_exp
    costs = {(k,): valley_cost(2 ** e) for k, e in enumerate(opt_exps)}
    res = run(costs, cap=cap, noise=noise)
    bound = math.log2(cap) * len(costs)
    assert res.accepted_steps <= bound
    assert res.sweeps <= res.accepted_steps + 1
    for cls, st_ in res.states.items():
        acc = [t for _, t in st_.accepted]
        assert all(b <= a for a, b in zip(acc, acc[1:]))
        assert 1 <= res.config.g[cls] <= cap


def test_principle_memory_vs_compute():
    kernels = {("memory",): alloc.memory_bound_kernel(), ("compute",): alloc.compute_bound_kernel()}
    assert kernels[("memory",)].tasks == kernels[("compute",)].tasks
    res = run(kernels)
    assert res.config.g[("memory",)] > res.config.g[("compute",)]


def test_granularity_cap():
    assert alloc.granularity_cap(10) == 10
    assert alloc.granularity_cap(10 ** 6) == alloc.MAX_GRANULARITY
    assert alloc.granularity_cap(0) == 1


def test_sample_blocks_fixed():
    by_class = {A: list(range(10)), B: [7]}
    s1 = alloc.sample_blocks(by_class, 3, seed=5)
    assert s1 == alloc.sample_blocks(by_class, 3, seed=5)
    assert len(s1[A]) == 3 and s1[B] == [7]


def test_tune_blocks_on_water(water_engine):
    ctx, plans = water_engine
    res = alloc.tune_blocks(ctx, plans, np.eye(7), sample_per_class=1, repeats=1, g0=1)
    assert set(res.config.g) == set(plans)
    for cls, g in res.config.g.items():
        assert 1 <= g <= res.config.cap[cls]

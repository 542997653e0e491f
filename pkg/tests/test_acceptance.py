"""One test per acceptance criterion; each records a PASS/FAIL line.

The lines are printed as they run (visible with ``-s``) and collected in the
terminal summary under "acceptance criteria".
"""

import statistics
import time

import numpy as np

from conftest import ACCEPTANCE_LINES, random_symmetric, water_cluster_shells
from eriflow import allocator as alloc
from eriflow.blocks import build_pairs, canonical_quadruple_count, construct, fit_growth_exponent
from eriflow.boys import boys_array
from eriflow.compiler import all_classes, compile_class, derive
from eriflow.executor import DEFAULT_GRANULARITY, FockContext, build_g, compile_plans
from eriflow.molecule import load_molecule
from eriflow.scf import scf_iterate
from eriflow.validate import (ENERGY_TOLERANCE, FIXTURE_ENERGIES, PUBLISHED_ENERGIES, greedy_vs_random,
                              random_shell, suite_allocator, suite_oracle, suite_symmetry)
from test_boys import GRID_T, mp_boys


def record(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def test_criterion_1_energy_reproduction():
    limits = {"water": 10.0, "benzene": 600.0}
    rows, ok = [], True
    for name in ("water", "benzene"):
        t0 = time.perf_counter()
        res = scf_iterate(load_molecule(name))
        dt = time.perf_counter() - t0
        diff = res.energy - PUBLISHED_ENERGIES[name]
        passed = res.converged and abs(diff) < ENERGY_TOLERANCE and dt < limits[name]
        ok &= passed
        fixture = res.energy - FIXTURE_ENERGIES[name]
        rows.append(f"{name} E={res.energy:.7f} dE={diff:+.2e} ({dt:.1f}s, independent-run dE={fixture:+.1e})")
    for name in ("water10", "methanol7"):
        try:
            load_molecule(name)
            rows.append(f"{name} fixture present but not run")
        except ValueError:
            rows.append(f"{name} no geometry")
        ok = False
    record(1, "published STO-3G energies within 1e-5", ok, "; ".join(rows))


def test_criterion_2_oracle_equivalence():
    rep = suite_oracle(n_geometries=50, seed=0)
    worst = max(r["max_rel_error"] for r in rep["checks"])
    worst_ind = max(r["max_rel_error_independent"] for r in rep["checks"])
    ok = rep["passed"] and worst <= 1e-12 and rep["seconds"] < 60
    record(2, "plans match memoized recursion", ok,
           f"{len(rep['checks'])} classes, max rel {worst:.1e} (vertical-only path {worst_ind:.1e}), "
           f"{rep['seconds']:.1f}s")


def test_criterion_3_symmetry():
    rep = suite_symmetry(n_quadruples=200, seed=0)
    record(3, "8-fold permutational symmetry", rep["passed"] and rep["max_deviation"] <= 1e-10,
           f"200 quadruples, max deviation {rep['max_deviation']:.1e}")


def test_criterion_4_boys():
    m_max = 16
    F = boys_array(m_max, GRID_T)
    grid = max(abs(F[m, j] - float(mp_boys(m, T))) / float(mp_boys(m, T))
               for j, T in enumerate(GRID_T) for m in range(m_max + 1))
    e = np.exp(-GRID_T)
    down = max(float(np.max(np.abs(F[m] - (2 * GRID_T * F[m + 1] + e) / (2 * m + 1)) / F[m]))
               for m in range(m_max))
    record(4, "Boys accuracy", grid < 1e-13 and down < 1e-12,
           f"grid rel {grid:.1e} over {GRID_T.size} points x m<=16, downward recursion {down:.1e}")


def coverage_ok(shells, M):
    plan = construct(shells, M)
    seen = {}
    for blk in plan.blocks:
        for b, k in blk.quadruples():
            pb, pk = plan.store[b], plan.store[k]
            if pb.cls + pk.cls != blk.eri_class:
                return False
            key = frozenset([(pb.i, pb.j), (pk.i, pk.j)])
            seen[key] = seen.get(key, 0) + 1
    S = len(shells)
    pairs = [(i, j) for i in range(S) for j in range(i, S)]
    canonical = {frozenset([p, q]) for p in pairs for q in pairs}
    return set(seen) == canonical and all(v == 1 for v in seen.values()) \
        and sum(seen.values()) == canonical_quadruple_count(len(pairs))


def test_criterion_5_blocks():
    rng = np.random.default_rng(5)
    systems = [load_molecule("h2").shells, load_molecule("water").shells]
    systems += [[random_shell(rng) for _ in range(S)] for S in (3, 7, 10, 12)]
    cover = all(coverage_ok(sh, M) for sh in systems for M in (1, 3, 32))
    sizes = [5, 10, 20, 40]
    exponent = fit_growth_exponent(sizes, [build_pairs(water_cluster_shells(S // 5)).nbytes for S in sizes])
    record(5, "block coverage and O(S^2) pair store", cover and abs(exponent - 2.0) <= 0.2,
           f"{len(systems)} systems x 3 tile sizes exact cover={cover}, fit exponent {exponent:.3f}")


def test_criterion_6_compiler_quality():
    derive.cache_clear()
    t0 = time.perf_counter()
    plans = {cls: compile_class(cls) for cls in all_classes(2)}
    dt = time.perf_counter() - t0
    rows = greedy_vs_random(max_L=2, seeds=20)
    bad = [r["class"] for r in rows if not r["passed"]]
    total_g = sum(r["greedy"] for r in rows)
    total_r = sum(r["random_min"] for r in rows)
    record(6, "greedy op_count <= 20 random paths; compile < 10 s", not bad and dt < 10 and len(plans) == 81,
           f"81 classes compiled in {dt:.2f}s, greedy total {total_g} vs best-random total {total_r}, "
           f"violations {bad}")


def median_wall(fn, repeats=3):
    fn()
    walls = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        walls.append(time.perf_counter() - t0)
    return statistics.median(walls), walls


def test_criterion_7_allocator():
    mock = suite_allocator()
    mock_ok = all(r["passed"] for r in mock["checks"][:3])
    principle = mock["checks"][3]["passed"]

    mol = load_molecule("water4")
    bplan = construct(mol.shells)
    ctx = FockContext(mol.shells, bplan)
    plans = compile_plans(bplan.classes)
    D = random_symmetric(mol.nbasis, np.random.default_rng(7))
    untuned, u_walls = median_wall(lambda: build_g(ctx, plans, D, granularity=DEFAULT_GRANULARITY))
    res = alloc.tune_blocks(ctx, plans, D, sample_per_class=2, repeats=3, g0=DEFAULT_GRANULARITY)
    tuned, t_walls = median_wall(lambda: build_g(ctx, plans, D, granularity=res.config.g))
    noise = max(max(u_walls) - min(u_walls), max(t_walls) - min(t_walls))
    real_ok = tuned <= untuned + noise
    monotone = all(all(b[1] <= a[1] for a, b in zip(st.accepted, st.accepted[1:]))
                   for st in res.states.values())
    record(7, "allocator convergence, tuned <= untuned, monotone acceptance",
           mock_ok and principle and real_ok and monotone,
           f"mock minima g in {{1, 4, cap}} {mock_ok}, memory>compute {principle}; water4 untuned "
           f"{untuned:.2f}s tuned {tuned:.2f}s (noise {noise:.2f}s); monotone {monotone}")


def test_criterion_8_determinism():
    mol = load_molecule("water")
    bplan = construct(mol.shells, 2)
    ctx = FockContext(mol.shells, bplan)
    plans = compile_plans(bplan.classes)
    D = random_symmetric(mol.nbasis, np.random.default_rng(8))
    g = 16
    ref = build_g(ctx, plans, D, mode="deterministic", granularity=g)
    bitwise = all(np.array_equal(build_g(ctx, plans, D, mode="deterministic", threads=8, granularity=g), ref)
                  for _ in range(9))
    worst = 0.0
    for threads in (1, 2, 8):
        for _ in range(10):
            G = build_g(ctx, plans, D, mode="concurrent", threads=threads, granularity=g)
            worst = max(worst, float(np.max(np.abs(G - ref))))
    record(8, "deterministic bitwise, concurrent within 1e-10", bitwise and worst <= 1e-10,
           f"10 deterministic runs bitwise={bitwise}; concurrent threads {{1,2,8}} x 10 max diff {worst:.1e}")

"""Measurement-driven granularity tuning per ERI class.

Every class starts from a base granularity. Each sweep times a class,
doubles its granularity, times it again and keeps the change only if the
second time is lower. Sweeps repeat until none of them improves.
"""

from __future__ import annotations

import math
import random
import statistics
import time
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

MAX_GRANULARITY = 4096
DEFAULT_REPEATS = 3

ClassKey = tuple


@dataclass
class WorkloadConfig:
    """Granularity g[class] plus its cap."""

    g: dict = field(default_factory=dict)
    cap: dict = field(default_factory=dict)

    @classmethod
    def uniform(cls, classes: Iterable[ClassKey], g: int = 1,
                cap: int | Mapping[ClassKey, int] = MAX_GRANULARITY) -> "WorkloadConfig":
        classes = list(classes)
        caps = {c: (cap[c] if isinstance(cap, Mapping) else cap) for c in classes}
        for c in classes:
            if caps[c] < 1:
                raise ValueError(f"cap for {c} must be >= 1")
        return cls({c: max(1, min(g, caps[c])) for c in classes}, caps)

    def copy(self) -> "WorkloadConfig":
        return WorkloadConfig(dict(self.g), dict(self.cap))

    def __getitem__(self, cls: ClassKey) -> int:
        return self.g[cls]

    def to_json(self) -> dict:
        return {",".join(map(str, c)): g for c, g in sorted(self.g.items())}


def combine(config: WorkloadConfig, cls: ClassKey) -> tuple[WorkloadConfig, bool]:
    """Double g[cls] up to its cap. Returns (new config, changed)."""
    g, cap = config.g[cls], config.cap.get(cls, MAX_GRANULARITY)
    if g >= cap:
        return config, False
    out = config.copy()
    out.g[cls] = min(2 * g, cap)
    return out, True


def revert(config: WorkloadConfig, cls: ClassKey, previous: int) -> WorkloadConfig:
    """Put g[cls] back to ``previous``."""
    out = config.copy()
    out.g[cls] = previous
    return out


@dataclass
class Measurement:
    median: float
    variance: float
    samples: list[float]


def measure(cls: ClassKey, config: WorkloadConfig, sample: Sequence,
            execute: Callable[[ClassKey, int, Sequence], object],
            repeats: int = DEFAULT_REPEATS, warmup: bool = True,
            clock: Callable[[], float] = time.perf_counter) -> Measurement:
    """Median wall time of ``execute(cls, g, sample)`` over ``repeats`` runs.

    One warm-up run is discarded first.
    """
    if not sample:
        raise ValueError(f"empty measurement sample for class {cls}")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    g = config.g[cls]
    if warmup:
        execute(cls, g, sample)
    times = []
    for _ in range(repeats):
        t0 = clock()
        execute(cls, g, sample)
        times.append(clock() - t0)
    var = statistics.pvariance(times) if len(times) > 1 else 0.0
    return Measurement(statistics.median(times), var, times)


@dataclass
class TuningState:
    t: float | None = None
    improved: bool = False
    history: list = field(default_factory=list)  # (g, median seconds, variance)
    accepted: list = field(default_factory=list)  # (g, seconds) after each accepted step

    def to_json(self, cls) -> dict:
        return {
            "class": list(cls) if isinstance(cls, tuple) else cls,
            "g_final": self.history[-1][0] if self.history else None,
            "t_history": [{"g": g, "seconds": t, "variance": v} for g, t, v in self.history],
        }


@dataclass
class TuneResult:
    config: WorkloadConfig
    states: dict
    sweeps: int
    accepted_steps: int

    def report(self) -> list[dict]:
        out = []
        for cls, st in sorted(self.states.items()):
            rec = st.to_json(cls)
            rec["g_final"] = self.config.g[cls]
            out.append(rec)
        return out


def tune(classes: Sequence[ClassKey], config0: WorkloadConfig, samples: Mapping[ClassKey, Sequence],
         execute: Callable[[ClassKey, int, Sequence], object], repeats: int = DEFAULT_REPEATS,
         clock: Callable[[], float] = time.perf_counter, warmup: bool = True,
         max_sweeps: int | None = None) -> TuneResult:
    """Grow each class's granularity while measured time keeps dropping.

    A class already at its cap is skipped for the sweep: doubling is a no-op
    there, and timing noise alone must not count as an improvement. A step
    is kept only if it also does not exceed the class's last accepted time,
    so a lucky earlier measurement cannot be followed by a slower "win".
    """
    classes = list(classes)
    config = config0.copy()
    states = {c: TuningState() for c in classes}
    improved = True
    sweeps = accepted = 0
    while improved:
        if max_sweeps is not None and sweeps >= max_sweeps:
            break
        improved = False
        sweeps += 1
        for cls in classes:
            st = states[cls]
            previous = config.g[cls]
            if previous >= config.cap.get(cls, MAX_GRANULARITY):
                st.improved = False
                continue
            m1 = measure(cls, config, samples[cls], execute, repeats, warmup, clock)
            st.history.append((previous, m1.median, m1.variance))
            config, _ = combine(config, cls)
            m2 = measure(cls, config, samples[cls], execute, repeats, warmup, clock)
            st.history.append((config.g[cls], m2.median, m2.variance))
            best = st.accepted[-1][1] if st.accepted else float("inf")
            if m2.median < m1.median and m2.median <= best:
                improved = st.improved = True
                st.t = m2.median
                st.accepted.append((config.g[cls], m2.median))
                accepted += 1
            else:
                config = revert(config, cls, previous)
                st.improved = False
                st.t = m1.median
    return TuneResult(config, states, sweeps, accepted)


# -- cost models for tests and the standalone tuner --------------------------

class MockClock:
    """A clock that only moves when a mock kernel runs."""

    def __init__(self):
        self.now = 0.0

    def __call__(self) -> float:
        return self.now


class MockKernel:
    """Executes nothing; advances a mock clock by ``cost[cls](g)`` seconds."""

    def __init__(self, costs: Mapping[ClassKey, Callable[[int], float]], clock: MockClock | None = None,
                 noise: float = 0.0, seed: int = 0):
        self.costs = dict(costs)
        self.clock = clock or MockClock()
        self.noise = noise
        self.rng = random.Random(seed)
        self.calls = 0

    def __call__(self, cls, g, sample):
        self.calls += 1
        t = self.costs[cls](g)
        if self.noise:
            t *= 1.0 + self.rng.uniform(-self.noise, self.noise)
        self.clock.now += t


def valley_cost(g_opt: int, scale: float = 1.0) -> Callable[[int], float]:
    """Cost with a single minimum at ``g_opt`` on the doubling ladder."""
    def cost(g):
        return scale * (1.0 + abs(math.log2(g) - math.log2(g_opt)))
    return cost


@dataclass(frozen=True)
class SimulatedKernel:
    """Analytic time of one block of ``tasks`` primitive tasks on ``workers`` workers.

    A work item of g tasks streams ``shared_bytes`` once (data its tasks
    share) plus ``task_bytes`` per task, overlapped with ``task_flops`` of
    arithmetic per task. Each task keeps ``live_bytes`` of intermediates;
    beyond ``fast_bytes`` per worker they spill, and spill traffic stalls
    the arithmetic. Items are dealt round-robin, so large items idle workers.
    """

    tasks: int
    workers: int
    task_flops: float
    task_bytes: float
    shared_bytes: float
    live_bytes: float
    fast_bytes: float = 32768.0
    flops_per_s: float = 1e9
    bytes_per_s: float = 1e10
    spill_bytes_per_s: float = 1e9
    item_overhead: float = 1e-6

    def item_time(self, g: int) -> float:
        compute = g * self.task_flops / self.flops_per_s
        memory = (self.shared_bytes + g * self.task_bytes) / self.bytes_per_s
        spill = max(0.0, g * self.live_bytes - self.fast_bytes) / self.spill_bytes_per_s
        return self.item_overhead + max(compute, memory) + spill

    def __call__(self, g: int) -> float:
        items = math.ceil(self.tasks / g)
        rounds = math.ceil(items / self.workers)
        return rounds * self.item_time(g)


def memory_bound_kernel(tasks: int = 4096, workers: int = 8) -> SimulatedKernel:
    """Low arithmetic per byte, large shared loads, small live state."""
    return SimulatedKernel(tasks, workers, task_flops=50.0, task_bytes=64.0,
                           shared_bytes=65536.0, live_bytes=64.0)


def compute_bound_kernel(tasks: int = 4096, workers: int = 8) -> SimulatedKernel:
    """High arithmetic per byte, little sharing, many live intermediates."""
    return SimulatedKernel(tasks, workers, task_flops=20000.0, task_bytes=64.0,
                           shared_bytes=256.0, live_bytes=4096.0)


def granularity_cap(task_count: int, limit: int = MAX_GRANULARITY) -> int:
    return max(1, min(int(task_count), limit))


def sample_blocks(blocks_by_class: Mapping[ClassKey, Sequence], n: int, seed: int = 0) -> dict:
    """A fixed subset of at most ``n`` blocks per class, chosen once per session."""
    rng = np.random.default_rng(seed)
    out = {}
    for cls, blks in blocks_by_class.items():
        idx = np.sort(rng.choice(len(blks), size=min(n, len(blks)), replace=False))
        out[cls] = [blks[i] for i in idx]
    return out


def tune_blocks(ctx, plans, D, sample_per_class: int = 2, repeats: int = DEFAULT_REPEATS,
                g0: int | Mapping[ClassKey, int] = 64, seed: int = 0, threads: int = 1,
                mode: str = "concurrent") -> TuneResult:
    """Tune granularities by timing real Fock-build work on sampled blocks."""
    from .executor import block_task_count, build_g

    by_class = ctx.block_plan.by_class()
    samples = sample_blocks(by_class, sample_per_class, seed)
    caps = {cls: granularity_cap(max(block_task_count(b, ctx.arrays) for b in blks))
            for cls, blks in samples.items()}
    classes = sorted(samples, key=lambda c: (sum(c), c))
    config0 = WorkloadConfig(
        {c: max(1, min(g0[c] if isinstance(g0, Mapping) else g0, caps[c])) for c in classes}, caps)

    def execute(cls, g, sample):
        build_g(ctx, plans, D, mode=mode, threads=threads, granularity=g, blocks=sample)

    return tune(classes, config0, samples, execute, repeats=repeats)

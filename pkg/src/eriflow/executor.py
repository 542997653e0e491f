"""Runtime half of the pipeline: evaluate plans over blocks and build G = 2J - K.

A block's primitive tasks (one per primitive quadruple) are laid out
quadruple-major. A work item is a run of ``g`` consecutive tasks; it runs the
plan's primitive section on vectors of length ``g``, contracts by summing
per quadruple, runs the post-contraction section, and scatters into a Fock
partial. Every stage after the base integrals is linear, so a quadruple
split across two work items still sums to the right contribution.
"""

from __future__ import annotations

import math
import threading
import time
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .blocks import BlockPlan, PairStore, QuadBlock
from .boys import boys_array
from .compiler import CompilerConfig, ExecutionPlan, compile_class, emit_source
from .molecule import Shell

MODES = ("concurrent", "deterministic", "contended")
DEFAULT_GRANULARITY = 1024

_TWO_PI_2_5 = 2.0 * math.pi ** 2.5


class ExecutionError(RuntimeError):
    pass


# -- kernels -----------------------------------------------------------------

@dataclass
class Kernel:
    """A plan compiled to Python functions via its emitted source."""

    plan: ExecutionPlan
    prim: object
    post: object
    source: str

    @property
    def ncomp(self) -> int:
        return len(self.plan.outputs)


_KERNELS: dict[int, Kernel] = {}
_KERNEL_LOCK = threading.Lock()


def kernel_for(plan: ExecutionPlan) -> Kernel:
    key = id(plan)
    with _KERNEL_LOCK:
        k = _KERNELS.get(key)
        if k is None or k.plan is not plan:
            src = emit_source(plan)
            ns: dict = {}
            exec(compile(src, f"<plan {plan.cls}>", "exec"), ns)
            name = "eri_" + "".join(map(str, plan.cls))
            k = Kernel(plan, ns[name + "_prim"], ns[name + "_post"], src)
            _KERNELS[key] = k
    return k


class Binding(dict):
    """Coefficient values for a batch of primitive quadruples.

    Keys are the identifiers used by emitted kernels; values are computed on
    first access. ``base(m)`` returns the scaled [00|00]^(m).
    """

    def __init__(self, p, q, P, Q, A, B, C, D, weight, max_order):
        super().__init__()
        self.p, self.q = p, q
        self.P, self.Q = P, Q
        self.A, self.B, self.C, self.D = A, B, C, D
        pq = p + q
        self.W = (p[:, None] * P + q[:, None] * Q) / pq[:, None]
        self.rho = p * q / pq
        T = self.rho * np.sum((P - Q) ** 2, axis=1)
        pref = _TWO_PI_2_5 / (p * q * np.sqrt(pq)) * weight
        self.F = boys_array(max_order, T) * pref

    def base(self, m: int):
        return self.F[m]

    def __missing__(self, key):
        val = self._compute(key)
        self[key] = val
        return val

    def _compute(self, key):
        if key == "oo2p":
            return 0.5 / self.p
        if key == "oo2q":
            return 0.5 / self.q
        if key == "oo2pq":
            return 0.5 / (self.p + self.q)
        if key == "rho_p":
            return self.rho / self.p
        if key == "rho_q":
            return self.rho / self.q
        name, ax = key.split("_")
        i = "xyz".index(ax)
        lhs, rhs = {
            "PA": (self.P, self.A), "PB": (self.P, self.B),
            "QC": (self.Q, self.C), "QD": (self.Q, self.D),
            "WP": (self.W, self.P), "WQ": (self.W, self.Q),
            "AB": (self.A, self.B), "CD": (self.C, self.D),
        }[name]
        return lhs[:, i] - rhs[:, i]


class ContractedBinding(dict):
    """AB/CD values per contracted quadruple for the post-contraction section."""

    def __init__(self, A, B, C, D):
        super().__init__()
        for i, ax in enumerate("xyz"):
            self[f"AB_{ax}"] = A[:, i] - B[:, i]
            self[f"CD_{ax}"] = C[:, i] - D[:, i]


def evaluate_primitive(plan: ExecutionPlan, binding: Binding) -> np.ndarray:
    """Run a plan with every primitive quadruple treated as its own contraction.

    Returns shape (ncomp, batch).
    """
    k = kernel_for(plan)
    vals = k.prim(binding)
    cb = ContractedBinding(binding.A, binding.B, binding.C, binding.D)
    n = binding.p.size
    vals = [np.broadcast_to(v, (n,)) for v in vals]
    return np.array(k.post(cb, tuple(vals)))


def quartet_eri(shells: Sequence[Shell], plan: ExecutionPlan) -> np.ndarray:
    """Contracted (ab|cd) block for four arbitrary shells, shape (na, nb, nc, nd)."""
    sa, sb, sc, sd = shells
    cls = (sa.L, sb.L, sc.L, sd.L)
    if tuple(plan.cls) != cls:
        raise ExecutionError(f"plan for {plan.cls} cannot evaluate class {cls}")
    grids = np.meshgrid(*(np.arange(s.K) for s in shells), indexing="ij")
    ka, kb, kc, kd = (g.ravel() for g in grids)
    ex = [np.asarray(s.exponents, dtype=float) for s in shells]
    co = [np.asarray(s.coefficients, dtype=float) for s in shells]
    n = ka.size
    A, B, C, D = (np.broadcast_to(np.asarray(s.center, dtype=float), (n, 3)) for s in shells)
    al, be, ga, de = ex[0][ka], ex[1][kb], ex[2][kc], ex[3][kd]
    p, q = al + be, ga + de
    P = (al[:, None] * A + be[:, None] * B) / p[:, None]
    Q = (ga[:, None] * C + de[:, None] * D) / q[:, None]
    kab = np.exp(-al * be / p * np.sum((A - B) ** 2, axis=1))
    kcd = np.exp(-ga * de / q * np.sum((C - D) ** 2, axis=1))
    weight = co[0][ka] * co[1][kb] * co[2][kc] * co[3][kd] * kab * kcd
    b = Binding(p, q, P, Q, A, B, C, D, weight, plan.max_order)
    k = kernel_for(plan)
    prim = k.prim(b)
    contracted = tuple(np.array([np.sum(np.broadcast_to(v, (n,)))]) for v in prim)
    cb = ContractedBinding(A[:1], B[:1], C[:1], D[:1])
    out = np.array(k.post(cb, contracted))[:, 0]
    out = out.reshape(sa.nfunc, sb.nfunc, sc.nfunc, sd.nfunc)
    return out * np.einsum("i,j,k,l->ijkl", *(s.component_scale for s in shells))


# -- block data --------------------------------------------------------------

@dataclass
class PairArrays:
    """Flat primitive-pair arrays of a pair store, plus per-pair metadata."""

    offset: np.ndarray   # first primitive pair of each shell pair
    nprim: np.ndarray
    p: np.ndarray
    P: np.ndarray
    weight: np.ndarray   # kappa * contraction coefficients
    A: np.ndarray        # per shell pair
    B: np.ndarray
    shell_i: np.ndarray
    shell_j: np.ndarray

    @classmethod
    def from_store(cls, store: PairStore) -> "PairArrays":
        pairs = store.pairs
        nprim = np.array([pr.nprim for pr in pairs], dtype=np.intp)
        offset = np.concatenate([[0], np.cumsum(nprim)[:-1]]).astype(np.intp)
        return cls(
            offset=offset,
            nprim=nprim,
            p=np.concatenate([pr.p for pr in pairs]),
            P=np.concatenate([pr.P for pr in pairs]),
            weight=np.concatenate([pr.kappa * pr.coef for pr in pairs]),
            A=np.array([pr.A for pr in pairs]),
            B=np.array([pr.B for pr in pairs]),
            shell_i=np.array([pr.i for pr in pairs], dtype=np.intp),
            shell_j=np.array([pr.j for pr in pairs], dtype=np.intp),
        )


@dataclass
class BlockTasks:
    """Primitive tasks of one block, quadruple-major."""

    bra: np.ndarray      # global pair index per quadruple
    ket: np.ndarray
    quad: np.ndarray     # quadruple index per task
    bra_prim: np.ndarray  # global primitive-pair index per task
    ket_prim: np.ndarray

    @property
    def ntasks(self) -> int:
        return self.quad.size

    @property
    def nquads(self) -> int:
        return self.bra.size


def block_tasks(block: QuadBlock, arrays: PairArrays) -> BlockTasks:
    bi, ki = block.quad_indices()
    bra = np.asarray(block.bra.pair_indices, dtype=np.intp)[bi]
    ket = np.asarray(block.ket.pair_indices, dtype=np.intp)[ki]
    nb, nk = arrays.nprim[bra], arrays.nprim[ket]
    counts = nb * nk
    quad = np.repeat(np.arange(bra.size), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    within = np.arange(quad.size) - np.repeat(starts, counts)
    nk_t = nk[quad]
    bra_prim = arrays.offset[bra][quad] + within // nk_t
    ket_prim = arrays.offset[ket][quad] + within % nk_t
    return BlockTasks(bra, ket, quad, bra_prim, ket_prim)


def block_task_count(block: QuadBlock, arrays: PairArrays) -> int:
    bi, ki = block.quad_indices()
    bra = np.asarray(block.bra.pair_indices, dtype=np.intp)[bi]
    ket = np.asarray(block.ket.pair_indices, dtype=np.intp)[ki]
    return int(np.sum(arrays.nprim[bra] * arrays.nprim[ket]))


# -- accumulation ------------------------------------------------------------

@dataclass
class Accumulator:
    """Target matrix for Fock contributions.

    ``concurrent`` and ``deterministic`` callers hand in private partials;
    ``contended`` callers add straight into the shared matrix under a lock.
    """

    n: int
    mode: str = "concurrent"
    G: np.ndarray = field(init=False)
    lock: threading.Lock = field(init=False, repr=False, default_factory=threading.Lock)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown accumulation mode {self.mode!r}; expected one of {MODES}")
        self.G = np.zeros((self.n, self.n))

    def merge(self, partial: np.ndarray) -> None:
        with self.lock:
            self.G += partial

    def result(self) -> np.ndarray:
        """Symmetrized 2J - K."""
        return 0.5 * (self.G + self.G.T)


class FockContext:
    """Per-molecule data shared by every block evaluation."""

    def __init__(self, shells: Sequence[Shell], block_plan: BlockPlan):
        self.shells = list(shells)
        self.block_plan = block_plan
        self.arrays = PairArrays.from_store(block_plan.store)
        offs = np.cumsum([0] + [s.nfunc for s in self.shells])
        self.nbasis = int(offs[-1])
        self.shell_offset = offs[:-1].astype(np.intp)
        self.scales = [np.asarray(s.component_scale, dtype=float) for s in self.shells]
        self._tasks: dict[int, BlockTasks] = {}

    def tasks(self, block: QuadBlock) -> BlockTasks:
        key = (block.bra.index, block.ket.index)
        t = self._tasks.get(key)
        if t is None:
            t = block_tasks(block, self.arrays)
            self._tasks[key] = t
        return t

    def clear_cache(self) -> None:
        self._tasks.clear()


def _scatter(G, D, ctx: FockContext, cls, bra, ket, vals):
    """Fold contracted component blocks into G with degeneracy weights.

    ``vals`` has shape (na, nb, nc, nd, nq). Applied as in the usual
    unique-quartet Fock build: after symmetrization G = 2J - K.
    """
    arr = ctx.arrays
    si, sj = arr.shell_i[bra], arr.shell_j[bra]
    sk, sl = arr.shell_i[ket], arr.shell_j[ket]
    deg = np.where(si == sj, 1.0, 2.0) * np.where(sk == sl, 1.0, 2.0) * np.where(bra == ket, 1.0, 2.0)
    na, nb, nc, nd = (len(ctx.scales[s]) for s in (si[0], sj[0], sk[0], sl[0]))
    v = vals * deg
    v = np.moveaxis(v, -1, 0)  # (nq, na, nb, nc, nd)
    fa = ctx.shell_offset[si][:, None] + np.arange(na)
    fb = ctx.shell_offset[sj][:, None] + np.arange(nb)
    fc = ctx.shell_offset[sk][:, None] + np.arange(nc)
    fd = ctx.shell_offset[sl][:, None] + np.arange(nd)

    def dsub(x, y):
        return D[x[:, :, None], y[:, None, :]]

    def add(x, y, val):
        np.add.at(G, (x[:, :, None], y[:, None, :]), val)

    add(fa, fb, np.einsum("qabcd,qcd->qab", v, dsub(fc, fd)))
    add(fc, fd, np.einsum("qabcd,qab->qcd", v, dsub(fa, fb)))
    add(fa, fc, -0.25 * np.einsum("qabcd,qbd->qac", v, dsub(fb, fd)))
    add(fb, fd, -0.25 * np.einsum("qabcd,qac->qbd", v, dsub(fa, fc)))
    add(fa, fd, -0.25 * np.einsum("qabcd,qbc->qad", v, dsub(fb, fc)))
    add(fb, fc, -0.25 * np.einsum("qabcd,qad->qbc", v, dsub(fa, fd)))


def eval_chunk(ctx: FockContext, block: QuadBlock, kernel: Kernel, D: np.ndarray,
               G: np.ndarray, start: int, stop: int) -> None:
    """Evaluate tasks [start, stop) of a block and scatter into ``G``."""
    t = ctx.tasks(block)
    arr = ctx.arrays
    quad = t.quad[start:stop]
    bp, kp = t.bra_prim[start:stop], t.ket_prim[start:stop]
    q0, q1 = int(quad[0]), int(quad[-1]) + 1
    bra, ket = t.bra[q0:q1], t.ket[q0:q1]
    local = quad - q0
    n = quad.size
    b_of = bra[local]
    k_of = ket[local]
    binding = Binding(arr.p[bp], arr.p[kp], arr.P[bp], arr.P[kp],
                      arr.A[b_of], arr.B[b_of], arr.A[k_of], arr.B[k_of],
                      arr.weight[bp] * arr.weight[kp], kernel.plan.max_order)
    prim = kernel.prim(binding)
    nq = q1 - q0
    contracted = tuple(np.bincount(local, weights=np.broadcast_to(v, (n,)), minlength=nq) for v in prim)
    cb = ContractedBinding(arr.A[bra], arr.B[bra], arr.A[ket], arr.B[ket])
    out = np.array(kernel.post(cb, contracted))  # (ncomp, nq)
    si, sj, sk, sl = arr.shell_i[bra[0]], arr.shell_j[bra[0]], arr.shell_i[ket[0]], arr.shell_j[ket[0]]
    sc = [ctx.scales[s] for s in (si, sj, sk, sl)]
    shape = tuple(len(s) for s in sc)
    vals = out.reshape(shape + (nq,)) * np.einsum("i,j,k,l->ijkl", *sc)[..., None]
    _scatter(G, D, ctx, kernel.plan.cls, bra, ket, vals)


def eval_block(block: QuadBlock, plan: ExecutionPlan, D: np.ndarray, acc: Accumulator,
               ctx: FockContext, granularity: int = DEFAULT_GRANULARITY) -> None:
    """Evaluate every quadruple of ``block`` and add its contribution to ``acc``."""
    if tuple(plan.cls) != block.eri_class:
        raise ExecutionError(f"plan for class {plan.cls} given a block of class {block.eri_class}")
    kernel = kernel_for(plan)
    n = ctx.tasks(block).ntasks
    partial = np.zeros_like(acc.G)
    for start in range(0, n, granularity):
        eval_chunk(ctx, block, kernel, D, partial, start, min(start + granularity, n))
    acc.merge(partial)


# -- Fock build --------------------------------------------------------------

def work_items(ctx: FockContext, blocks: Iterable[QuadBlock],
               granularity: int | Mapping[tuple, int]) -> list[tuple[QuadBlock, int, int]]:
    items = []
    for blk in blocks:
        g = granularity.get(blk.eri_class, DEFAULT_GRANULARITY) if isinstance(granularity, Mapping) else granularity
        if g < 1:
            raise ValueError(f"granularity must be >= 1, got {g}")
        n = ctx.tasks(blk).ntasks
        items.extend((blk, s, min(s + g, n)) for s in range(0, n, g))
    return items


def build_g(ctx: FockContext, plans: Mapping[tuple, ExecutionPlan], D: np.ndarray,
            mode: str = "concurrent", threads: int = 1,
            granularity: int | Mapping[tuple, int] = DEFAULT_GRANULARITY,
            blocks: Sequence[QuadBlock] | None = None,
            timings: dict | None = None) -> np.ndarray:
    """Two-electron part G = 2J - K of the closed-shell Fock matrix.

    ``mode``:
      * ``concurrent``: each worker owns a private partial, merged at the end;
      * ``deterministic``: work items are evaluated in order into one matrix;
      * ``contended``: every work item adds into one shared matrix under a lock.

    ``timings``, when given, collects per-class seconds and block counts.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if threads < 1:
        raise ValueError("threads must be >= 1")
    D = np.asarray(D, dtype=float)
    if D.shape != (ctx.nbasis, ctx.nbasis):
        raise ValueError(f"density has shape {D.shape}, expected {(ctx.nbasis, ctx.nbasis)}")
    blocks = ctx.block_plan.blocks if blocks is None else blocks
    for blk in blocks:
        if blk.eri_class not in plans:
            raise ExecutionError(f"no plan for class {blk.eri_class}")
    kernels = {cls: kernel_for(plans[cls]) for cls in {b.eri_class for b in blocks}}
    items = work_items(ctx, blocks, granularity)
    acc = Accumulator(ctx.nbasis, mode)

    def run(item, G):
        blk, s, e = item
        t0 = time.perf_counter()
        eval_chunk(ctx, blk, kernels[blk.eri_class], D, G, s, e)
        if timings is not None:
            dt = time.perf_counter() - t0
            with acc.lock:
                rec = timings.setdefault(blk.eri_class, {"seconds": 0.0, "items": 0, "tasks": 0})
                rec["seconds"] += dt
                rec["items"] += 1
                rec["tasks"] += e - s

    if mode == "deterministic" or threads == 1 and mode != "contended":
        for item in items:
            run(item, acc.G)
    elif mode == "concurrent":
        local = threading.local()
        partials = []

        def worker(item):
            G = getattr(local, "G", None)
            if G is None:
                G = local.G = np.zeros_like(acc.G)
                with acc.lock:
                    partials.append(G)
            run(item, G)

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(worker, items))
        for G in partials:
            acc.G += G
    else:
        def worker(item):
            part = np.zeros_like(acc.G)
            run(item, part)
            acc.merge(part)

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(worker, items))
    return acc.result()


def compile_plans(classes: Iterable[tuple], config: CompilerConfig = CompilerConfig()) -> dict:
    return {tuple(c): compile_class(c, config) for c in classes}


def benchmark(ctx: FockContext, plans, D, threads: int = 1, mode: str = "concurrent",
              granularity: int | Mapping[tuple, int] = DEFAULT_GRANULARITY) -> dict:
    """Per-class wall time, block counts and an op-rate estimate for one build."""
    timings: dict = {}
    t0 = time.perf_counter()
    build_g(ctx, plans, D, mode=mode, threads=threads, granularity=granularity, timings=timings)
    wall = time.perf_counter() - t0
    blocks = ctx.block_plan.by_class()
    classes = []
    for cls, rec in sorted(timings.items()):
        ops = plans[cls].op_count * rec["tasks"]
        classes.append({
            "class": list(cls),
            "blocks": len(blocks.get(cls, [])),
            "tasks": rec["tasks"],
            "seconds": rec["seconds"],
            "gflops_estimate": ops / rec["seconds"] / 1e9 if rec["seconds"] > 0 else 0.0,
        })
    return {"threads": threads, "mode": mode, "wall_seconds": wall, "classes": classes}

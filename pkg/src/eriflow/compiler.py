"""Recurrence compiler: ERI class -> straight-line execution plan.

An intermediate integral [ab|cd]^(m) is a node. A node is reduced at one of
four positions (the a, b, c or d slot) along one Cartesian direction:

* slot a / slot c: Obara-Saika vertical recurrence (VRR) on the bra / ket,
  with coupling terms to every other slot;
* slot b / slot d: horizontal recurrence (HRR), moving one quantum from b
  to a (d to c) at the cost of an AB (CD) term.

The greedy search takes one recurrence step at a time: it picks the
position (slot and direction) minimizing ``(new - reused) + lam * momentum``
and applies it to every pending node with a quantum there. The resulting DAG is emitted
base-case first as a list of ``target <- sum(factor * coeff * source)``
instructions. HRR nodes that no VRR node depends on run after contraction,
once per contracted quadruple instead of once per primitive.
"""

from __future__ import annotations

import heapq
import json
import random
import time
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from functools import lru_cache

from .molecule import cartesian_components

Node = tuple  # flat (ax, ay, az, bx, by, bz, cx, cy, cz, dx, dy, dz, m)
Term = tuple  # (factor: int, kinds: tuple[str, ...], source)

AXES = "xyz"
SLOTS = "abcd"
M_INDEX = 12

ONE_2P, ONE_2Q, RHO_P, RHO_Q, ONE_2PQ = "1/2p", "1/2q", "rho/p", "rho/q", "1/2(p+q)"
COEFFICIENT_KINDS = tuple(
    f"{v}_{ax}" for v in ("PA", "PB", "WP", "WQ", "QC", "QD", "AB", "CD") for ax in AXES
) + (ONE_2P, ONE_2Q, RHO_P, RHO_Q, ONE_2PQ)

_PA = tuple((f"PA_{ax}",) for ax in AXES)
_WP = tuple((f"WP_{ax}",) for ax in AXES)
_QC = tuple((f"QC_{ax}",) for ax in AXES)
_WQ = tuple((f"WQ_{ax}",) for ax in AXES)
_AB = tuple((f"AB_{ax}",) for ax in AXES)
_CD = tuple((f"CD_{ax}",) for ax in AXES)
_O2P, _O2P_RP, _O2Q, _O2Q_RQ, _O2PQ = (ONE_2P,), (ONE_2P, RHO_P), (ONE_2Q,), (ONE_2Q, RHO_Q), (ONE_2PQ,)


class CompileError(RuntimeError):
    pass


def make_node(a, b, c, d, m: int = 0) -> Node:
    return (*a, *b, *c, *d, m)


def split_node(node: Node) -> tuple:
    return node[0:3], node[3:6], node[6:9], node[9:12], node[12]


def _add(node: Node, k: int, v: int) -> Node:
    return node[:k] + (node[k] + v,) + node[k + 1:]


def _add2(node: Node, k: int, v: int, j: int, w: int) -> Node:
    out = list(node)
    out[k] += v
    out[j] += w
    return tuple(out)


def node_key(node: Node) -> str:
    a, b, c, d, m = split_node(node)
    return "[" + "".join(map(str, a)) + "," + "".join(map(str, b)) + "|" + \
        "".join(map(str, c)) + "," + "".join(map(str, d)) + f"]^{m}"


def is_base(node: Node) -> bool:
    return not any(node[:12])


def _slot_momentum(node: Node, slot: int) -> int:
    k = 3 * slot
    return node[k] + node[k + 1] + node[k + 2]


def _priority(node: Node) -> tuple[int, int]:
    # every derivation strictly lowers this key, so a descending sort is topological
    lb = node[3] + node[4] + node[5] + node[9] + node[10] + node[11]
    return (sum(node[:12]), lb)


@lru_cache(maxsize=1 << 18)
def derive(node: Node, slot: int, i: int) -> tuple[Term, ...]:
    """Terms of the recurrence reducing ``node`` at (slot, direction i)."""
    k = 3 * slot + i
    if node[k] == 0:
        raise CompileError(f"cannot reduce {node_key(node)} at {SLOTS[slot]}{AXES[i]}")
    if slot == 1:   # HRR bra
        return ((1, (), _add2(node, k, -1, i, 1)), (1, _AB[i], _add(node, k, -1)))
    if slot == 3:   # HRR ket
        return ((1, (), _add2(node, k, -1, 6 + i, 1)), (1, _CD[i], _add(node, k, -1)))
    low = _add(node, k, -1)
    up = _add(low, M_INDEX, 1)
    if slot == 0:
        terms = [(1, _PA[i], low), (1, _WP[i], up)]
        own, same, same_r, cross = (i, 3 + i), _O2P, _O2P_RP, (6 + i, 9 + i)
    else:
        terms = [(1, _QC[i], low), (1, _WQ[i], up)]
        own, same, same_r, cross = (6 + i, 9 + i), _O2Q, _O2Q_RQ, (i, 3 + i)
    for j in own:
        n = low[j]
        if n:
            terms.append((n, same, _add(low, j, -1)))
            terms.append((-n, same_r, _add(up, j, -1)))
    for j in cross:
        n = low[j]
        if n:
            terms.append((n, _O2PQ, _add(up, j, -1)))
    return tuple(terms)


@dataclass(frozen=True, eq=False)
class Position:
    """One recurrence step: a slot and direction applied to every pending
    node that has a quantum there.

    ``new`` counts sources not generated yet that still need a recurrence
    of their own (base integrals come straight from the Boys function);
    ``reused`` counts sources already generated; ``momentum`` is the summed
    momentum of the reduced slot over the affected nodes.
    """

    slot: int
    direction: int
    reused: int
    new: int
    momentum: int
    derivations: tuple = field(repr=False, default=())  # ((node, terms), ...)

    def cost(self, lam: float) -> float:
        return (self.new - self.reused) + lam * self.momentum

    @property
    def label(self) -> str:
        return SLOTS[self.slot] + AXES[self.direction]


def find_optimal_position(positions: Sequence[Position], lam: float) -> Position:
    """Lowest-cost position; ties keep the first in iteration order."""
    if not positions:
        raise ValueError("no positions to choose from")
    best, best_cost = None, float("inf")
    for pos in positions:
        c = pos.cost(lam)
        if c < best_cost:
            best, best_cost = pos, c
    return best


def make_position(slot: int, i: int, nodes: Iterable[Node], generated: set | dict) -> Position:
    k = 3 * slot + i
    derivs = []
    sources = set()
    momentum = 0
    for node in nodes:
        if node[k] == 0:
            continue
        terms = derive(node, slot, i)
        derivs.append((node, terms))
        sources.update(t[2] for t in terms)
        momentum += _slot_momentum(node, slot)
    r = sum(1 for s in sources if s in generated)
    n = sum(1 for s in sources if s not in generated and not is_base(s))
    return Position(slot, i, r, n, momentum, tuple(derivs))


# horizontal slots first, so a tie between moving and removing a quantum
# keeps the cheaper horizontal step
SLOT_ORDER = (1, 3, 0, 2)


def candidate_positions(pending: Iterable[Node], generated: set | dict) -> list[Position]:
    """Every (slot, direction) that reduces at least one pending node,
    in ``SLOT_ORDER`` then x, y, z."""
    pending = sorted(pending, key=_priority, reverse=True)
    out = []
    for slot in SLOT_ORDER:
        for i in range(3):
            pos = make_position(slot, i, pending, generated)
            if pos.derivations:
                out.append(pos)
    return out


@dataclass(frozen=True)
class CompilerConfig:
    lam: float = 1.0
    tie_break: str = "first"
    seed: int | None = None  # set: choose a valid position per node uniformly at random

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.tie_break != "first":
            raise ValueError(f"unknown tie-break rule {self.tie_break!r}")


def class_targets(cls: Sequence[int]) -> list[Node]:
    La, Lb, Lc, Ld = cls
    return [
        make_node(a, b, c, d, 0)
        for a in cartesian_components(La)
        for b in cartesian_components(Lb)
        for c in cartesian_components(Lc)
        for d in cartesian_components(Ld)
    ]


@dataclass
class SearchResult:
    cls: tuple[int, int, int, int]
    order: list[Node]                       # consumers before sources, targets first
    derivations: dict[Node, tuple[Term, ...]]
    choices: dict[Node, Position]
    reuse_count: int
    lam: float = 1.0
    steps: list[Position] = field(default_factory=list)


def _topological(nodes: Iterable[Node]) -> list[Node]:
    # every recurrence strictly lowers (L_total, L_b + L_d), so a stable
    # descending sort puts each consumer ahead of its sources
    return sorted(nodes, key=_priority, reverse=True)


def _greedy(targets, lam):
    generated: dict[Node, None] = dict.fromkeys(targets)
    pending = {t for t in targets if not is_base(t)}
    derivations, choices, steps = {}, {}, []
    reuse = 0
    while pending:
        pos = find_optimal_position(candidate_positions(pending, generated), lam)
        steps.append(pos)
        reuse += pos.reused
        for node, terms in pos.derivations:
            pending.discard(node)
            derivations[node] = terms
            choices[node] = pos
            for _, _, src in terms:
                if src not in generated:
                    generated[src] = None
                    if not is_base(src):
                        pending.add(src)
    return list(generated), derivations, choices, reuse, steps


def _random(targets, rng):
    generated: dict[Node, None] = dict.fromkeys(targets)
    stack = [t for t in targets if not is_base(t)]
    derivations, choices = {}, {}
    reuse = 0
    while stack:
        node = stack.pop()
        slot, i = rng.choice([(k // 3, k % 3) for k in range(12) if node[k]])
        pos = make_position(slot, i, (node,), generated)
        (_, terms), = pos.derivations
        derivations[node] = terms
        choices[node] = pos
        reuse += pos.reused
        for _, _, src in terms:
            if src not in generated:
                generated[src] = None
                if not is_base(src):
                    stack.append(src)
    return list(generated), derivations, choices, reuse, []


def search_path(cls: Sequence[int], config: CompilerConfig = CompilerConfig()) -> SearchResult:
    """Reduce a class to base integrals one recurrence step at a time."""
    cls = tuple(int(v) for v in cls)
    if len(cls) != 4 or any(v < 0 for v in cls):
        raise ValueError(f"invalid ERI class {cls}")
    targets = class_targets(cls)
    if config.seed is None:
        nodes, derivations, choices, reuse, steps = _greedy(targets, config.lam)
    else:
        nodes, derivations, choices, reuse, steps = _random(targets, random.Random(config.seed))
    return SearchResult(cls, _topological(nodes), derivations, choices, reuse, float(config.lam), steps)


@dataclass
class RecurrenceDAG:
    cls: tuple[int, int, int, int]
    nodes: list[Node]
    edges: list[tuple[Node, Node, int, tuple[str, ...]]]  # (child, parent, factor, kinds)
    targets: list[Node]
    search: SearchResult

    def parents(self, node: Node) -> list[Node]:
        return [src for _, _, src in self.search.derivations.get(node, ())]

    @property
    def base_nodes(self) -> list[Node]:
        return [n for n in self.nodes if is_base(n)]


def build_dag(cls: Sequence[int], config: CompilerConfig = CompilerConfig(),
              search: SearchResult | None = None) -> RecurrenceDAG:
    search = search or search_path(cls, config)
    edges = [(node, src, f, kinds) for node, terms in search.derivations.items() for f, kinds, src in terms]
    return RecurrenceDAG(search.cls, list(search.order), edges, class_targets(search.cls), search)


@dataclass(frozen=True)
class Instruction:
    """``target <- sum(factor * prod(kinds) * regs[source])``, or a base case.

    A base instruction has ``base_order = m`` and no terms.
    """

    target: int
    terms: tuple[tuple[int, tuple[str, ...], int], ...] = ()
    base_order: int | None = None

    @property
    def ops(self) -> int:
        return 1 if self.base_order is not None else len(self.terms)


@dataclass(frozen=True)
class ExecutionPlan:
    cls: tuple[int, int, int, int]
    primitive: tuple[Instruction, ...]
    contraction: tuple[tuple[int, int], ...]  # (primitive register, contracted register)
    contracted: tuple[Instruction, ...]
    outputs: tuple[int, ...]                  # contracted register per target component
    primitive_slots: int
    contracted_slots: int
    max_order: int
    node_count: int
    reuse_count: int
    lam: float

    @property
    def slot_count(self) -> int:
        return self.primitive_slots + self.contracted_slots

    @property
    def op_count(self) -> int:
        return sum(ins.ops for ins in self.primitive) + sum(ins.ops for ins in self.contracted)

    @property
    def instructions(self) -> tuple[Instruction, ...]:
        return self.primitive + self.contracted

    def to_json(self) -> str:
        def enc(ins):
            return [ins.target, ins.base_order, [[f, list(k), s] for f, k, s in ins.terms]]
        return json.dumps({
            "class": list(self.cls),
            "lambda": self.lam,
            "primitive": [enc(i) for i in self.primitive],
            "contraction": [list(x) for x in self.contraction],
            "contracted": [enc(i) for i in self.contracted],
            "outputs": list(self.outputs),
            "slots": [self.primitive_slots, self.contracted_slots],
            "max_order": self.max_order,
        }, separators=(",", ":"))


class _Registers:
    """Linear-scan allocation: lowest free register, freed after last use."""

    def __init__(self):
        self.free: list[int] = []
        self.count = 0
        self.where: dict[Node, int] = {}

    def get(self, node: Node) -> int:
        return self.where[node]

    def allocate(self, node: Node) -> int:
        if self.free:
            r = heapq.heappop(self.free)
        else:
            r = self.count
            self.count += 1
        self.where[node] = r
        return r

    def release(self, node: Node) -> None:
        heapq.heappush(self.free, self.where.pop(node))


def generate_plan(dag: RecurrenceDAG, path: Sequence[Node] | None = None) -> ExecutionPlan:
    """Emit instructions from the base cases up to the targets."""
    path = list(dag.search.order if path is None else path)
    known = set(dag.nodes)
    for node in path:
        if node not in known:
            raise CompileError(f"path node {node_key(node)} is not in the DAG")
    derivations = dag.search.derivations
    emit_order = path[::-1]
    targets = dag.targets
    target_set = set(targets)

    consumers: dict[Node, set[Node]] = {n: set() for n in path}
    for node, terms in derivations.items():
        for _, _, src in terms:
            consumers[src].add(node)

    # HRR nodes whose consumers are all post-contraction run post-contraction too
    contracted: set[Node] = set()
    for node in path:
        choice = dag.search.choices.get(node)
        if choice is not None and choice.slot in (1, 3) and all(c in contracted for c in consumers[node]):
            contracted.add(node)
    primitive_nodes = [n for n in emit_order if n not in contracted]
    boundary = [n for n in primitive_nodes if n in target_set or any(c in contracted for c in consumers[n])]
    boundary_set = set(boundary)

    def last_uses(nodes):
        last = {}
        for k, node in enumerate(nodes):
            for _, _, src in derivations.get(node, ()):
                last[src] = k
        return last

    # primitive section
    regs = _Registers()
    last = last_uses(primitive_nodes)
    prim_ins = []
    for k, node in enumerate(primitive_nodes):
        if is_base(node):
            ins = Instruction(-1, (), node[M_INDEX])
        else:
            ins = Instruction(-1, tuple((f, kinds, regs.get(src)) for f, kinds, src in derivations[node]))
        for src in {t[2] for t in derivations.get(node, ())}:
            if last.get(src) == k and src not in boundary_set:
                regs.release(src)
        target = regs.allocate(node)
        prim_ins.append(Instruction(target, ins.terms, ins.base_order))
        if last.get(node) is None and node not in boundary_set:
            regs.release(node)  # dead value; cannot happen for a well-formed DAG
    prim_where = dict(regs.where)

    # contraction + contracted section
    cregs = _Registers()
    contraction = []
    contracted_nodes = [n for n in emit_order if n in contracted]
    last = last_uses(contracted_nodes)
    for node in boundary:
        contraction.append((prim_where[node], cregs.allocate(node)))
    keep = target_set
    con_ins = []
    for k, node in enumerate(contracted_nodes):
        terms = tuple((f, kinds, cregs.get(src)) for f, kinds, src in derivations[node])
        for src in {t[2] for t in derivations[node]}:
            if last.get(src) == k and src not in keep:
                cregs.release(src)
        con_ins.append(Instruction(cregs.allocate(node), terms))
    outputs = tuple(cregs.get(t) for t in targets)

    max_order = max((n[M_INDEX] for n in path), default=0)
    return ExecutionPlan(
        cls=dag.cls,
        primitive=tuple(prim_ins),
        contraction=tuple(contraction),
        contracted=tuple(con_ins),
        outputs=outputs,
        primitive_slots=regs.count,
        contracted_slots=cregs.count,
        max_order=max_order,
        node_count=len(dag.nodes),
        reuse_count=dag.search.reuse_count,
        lam=dag.search.lam,
    )


def compile_class(cls: Sequence[int], config: CompilerConfig = CompilerConfig()) -> ExecutionPlan:
    return generate_plan(build_dag(cls, config))


def compile_classes(classes: Iterable[Sequence[int]], config: CompilerConfig = CompilerConfig()) -> dict:
    return {tuple(c): compile_class(c, config) for c in classes}


def all_classes(max_L: int) -> list[tuple[int, int, int, int]]:
    r = range(max_L + 1)
    return [(a, b, c, d) for a in r for b in r for c in r for d in r]


def plan_stats(plan: ExecutionPlan) -> dict:
    return {
        "op_count": plan.op_count,
        "slot_count": plan.slot_count,
        "node_count": plan.node_count,
        "reuse_count": plan.reuse_count,
    }


def compile_report(cls: Sequence[int], config: CompilerConfig = CompilerConfig()) -> tuple[ExecutionPlan, dict]:
    t0 = time.perf_counter()
    plan = compile_class(cls, config)
    ms = (time.perf_counter() - t0) * 1e3
    report = {"class": list(plan.cls), "lambda": config.lam, **plan_stats(plan), "compile_ms": ms}
    return plan, report


# -- source emission ---------------------------------------------------------

_IDENT = {ONE_2P: "oo2p", ONE_2Q: "oo2q", RHO_P: "rho_p", RHO_Q: "rho_q", ONE_2PQ: "oo2pq"}


def _ident(kind: str) -> str:
    return _IDENT.get(kind, kind)


def _expr(terms, reg_prefix: str) -> str:
    parts = []
    for f, kinds, src in terms:
        factors = [_ident(k) for k in kinds] + [f"{reg_prefix}{src}"]
        if abs(f) != 1:
            factors.insert(0, str(abs(f)))
        body = "*".join(factors)
        if not parts:
            parts.append(("-" if f < 0 else "") + body)
        else:
            parts.append((" - " if f < 0 else " + ") + body)
    return "".join(parts)


def emit_source(plan: ExecutionPlan) -> str:
    """Equivalent Python source: ``prim(k)`` for one primitive chunk, ``post(k, c)`` after contraction.

    ``k`` maps coefficient identifiers (``PA_x``, ``oo2p``, ...) to values and
    provides ``base(m)``.
    """
    name = "eri_" + "".join(map(str, plan.cls))
    used = sorted({k for ins in plan.instructions for _, kinds, _ in ins.terms for k in kinds})
    lines = [f"def {name}_prim(k):"]
    for kind in used:
        if not kind.startswith(("AB_", "CD_")):
            lines.append(f"    {_ident(kind)} = k[{_ident(kind)!r}]")
    for kind in used:
        if kind.startswith(("AB_", "CD_")):
            lines.append(f"    {kind} = k[{kind!r}]")
    for ins in plan.primitive:
        if ins.base_order is not None:
            lines.append(f"    r{ins.target} = k.base({ins.base_order})")
        else:
            lines.append(f"    r{ins.target} = {_expr(ins.terms, 'r')}")
    lines.append("    return (" + ", ".join(f"r{p}" for p, _ in plan.contraction) + ",)")
    lines.append("")
    lines.append("")
    lines.append(f"def {name}_post(k, contracted):")
    for kind in used:
        if kind.startswith(("AB_", "CD_")):
            lines.append(f"    {kind} = k[{kind!r}]")
    lines.append("    (" + ", ".join(f"c{c}" for _, c in plan.contraction) + ",) = contracted")
    for ins in plan.contracted:
        lines.append(f"    c{ins.target} = {_expr(ins.terms, 'c')}")
    lines.append("    return (" + ", ".join(f"c{o}" for o in plan.outputs) + ",)")
    return "\n".join(lines) + "\n"


def search_op_count(result: SearchResult) -> int:
    """op_count of the plan a search result would generate, without emitting it."""
    return sum(len(t) for t in result.derivations.values()) + sum(1 for n in result.order if is_base(n))

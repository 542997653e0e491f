"""Shell pairs, class-homogeneous pair tiles and quadruple blocks.

Only the O(S^2) pair store is materialized. Quadruples are never stored:
a :class:`QuadBlock` is a (bra tile, ket tile) reference and enumerates its
quadruples on demand.
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from itertools import groupby

import numpy as np

from .molecule import Shell

DEFAULT_TILE_SIZE = 32
DEFAULT_SCREEN_THRESHOLD = 1e-14


@dataclass(frozen=True, eq=False)
class ShellPair:
    """Precomputed primitive-pair data for shells ``i <= j``.

    Arrays run over the K_i * K_j primitive pairs, bra primitive major.
    """

    i: int
    j: int
    cls: tuple[int, int]
    A: np.ndarray
    B: np.ndarray
    p: np.ndarray      # alpha + beta
    P: np.ndarray      # (n, 3) product centers
    kappa: np.ndarray  # exp(-alpha beta |A-B|^2 / p)
    coef: np.ndarray   # D_ak * D_bl

    @property
    def nprim(self) -> int:
        return self.p.size

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in (self.A, self.B, self.p, self.P, self.kappa, self.coef))


def make_pair(shells: Sequence[Shell], i: int, j: int) -> ShellPair:
    a, b = shells[i], shells[j]
    A = np.asarray(a.center, dtype=float)
    B = np.asarray(b.center, dtype=float)
    alpha = np.repeat(np.asarray(a.exponents), b.K)
    beta = np.tile(np.asarray(b.exponents), a.K)
    p = alpha + beta
    P = (alpha[:, None] * A + beta[:, None] * B) / p[:, None]
    ab2 = float(np.dot(A - B, A - B))
    kappa = np.exp(-alpha * beta * ab2 / p)
    coef = np.repeat(np.asarray(a.coefficients), b.K) * np.tile(np.asarray(b.coefficients), a.K)
    return ShellPair(i, j, (a.L, b.L), A, B, p, P, kappa, coef)


def pair_sort_key(pair: ShellPair) -> tuple[int, int, int]:
    return (sum(pair.cls), pair.cls[0], pair.cls[1])


@dataclass
class PairStore:
    """All shell pairs of a basis, sorted by class."""

    pairs: list[ShellPair]
    nshells: int

    @property
    def nbytes(self) -> int:
        return sum(pr.nbytes for pr in self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, k: int) -> ShellPair:
        return self.pairs[k]


def build_pairs(shells: Sequence[Shell], screen_threshold: float | None = None) -> PairStore:
    """Every ``i <= j`` shell pair, stably sorted ascending by (L_i+L_j, L_i, L_j).

    With ``screen_threshold`` set, pairs whose largest |coef * kappa| falls
    below it are dropped. Screening is off by default.
    """
    if not shells:
        raise ValueError("no shells")
    pairs = [make_pair(shells, i, j) for i in range(len(shells)) for j in range(i, len(shells))]
    if screen_threshold is not None:
        pairs = [pr for pr in pairs if np.max(np.abs(pr.coef * pr.kappa)) >= screen_threshold]
    pairs.sort(key=pair_sort_key)
    return PairStore(pairs, len(shells))


@dataclass(frozen=True)
class PairTile:
    index: int
    cls: tuple[int, int]
    pair_indices: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.pair_indices)


def tile_pairs(store: PairStore | Sequence[ShellPair], M: int = DEFAULT_TILE_SIZE) -> list[PairTile]:
    """Chunk consecutive same-class pairs into tiles of at most ``M``."""
    if M < 1:
        raise ValueError(f"tile size must be >= 1, got {M}")
    pairs = store.pairs if isinstance(store, PairStore) else list(store)
    tiles: list[PairTile] = []
    for cls, group in groupby(range(len(pairs)), key=lambda k: pairs[k].cls):
        idx = list(group)
        for start in range(0, len(idx), M):
            tiles.append(PairTile(len(tiles), cls, tuple(idx[start:start + M])))
    return tiles


@dataclass(frozen=True)
class QuadBlock:
    """Quadruples formed by permuting a bra tile against a ket tile.

    For a diagonal block (same tile on both sides) only the canonical
    triangle ``bra pair <= ket pair`` is covered.
    """

    bra: PairTile
    ket: PairTile

    @property
    def eri_class(self) -> tuple[int, int, int, int]:
        return self.bra.cls + self.ket.cls

    @property
    def diagonal(self) -> bool:
        return self.bra.index == self.ket.index

    def quad_indices(self) -> tuple[np.ndarray, np.ndarray]:
        """Tile-local (bra position, ket position) arrays of covered quadruples."""
        nb, nk = len(self.bra), len(self.ket)
        if self.diagonal:
            bi, ki = np.triu_indices(nb)
        else:
            bi, ki = np.divmod(np.arange(nb * nk), nk)
        return bi.astype(np.intp), ki.astype(np.intp)

    @property
    def size(self) -> int:
        nb, nk = len(self.bra), len(self.ket)
        return nb * (nb + 1) // 2 if self.diagonal else nb * nk

    def quadruples(self) -> Iterator[tuple[int, int]]:
        """Global (bra pair, ket pair) indices."""
        bi, ki = self.quad_indices()
        for b, k in zip(bi, ki):
            yield self.bra.pair_indices[b], self.ket.pair_indices[k]


def make_blocks(tiles: Sequence[PairTile]) -> Iterator[QuadBlock]:
    """Stream blocks for every tile pair ``t_i <= t_j``."""
    for a in range(len(tiles)):
        for b in range(a, len(tiles)):
            yield QuadBlock(tiles[a], tiles[b])


@dataclass
class BlockPlan:
    """Pair store, tiles and a grouping of blocks by ERI class."""

    store: PairStore
    tiles: list[PairTile]
    blocks: list[QuadBlock] = field(default_factory=list)

    @property
    def classes(self) -> list[tuple[int, int, int, int]]:
        return sorted({blk.eri_class for blk in self.blocks}, key=lambda c: (sum(c), c))

    def by_class(self) -> dict[tuple[int, int, int, int], list[QuadBlock]]:
        out: dict[tuple[int, int, int, int], list[QuadBlock]] = {}
        for blk in self.blocks:
            out.setdefault(blk.eri_class, []).append(blk)
        return out


def construct(shells: Sequence[Shell], M: int = DEFAULT_TILE_SIZE,
              screen_threshold: float | None = None) -> BlockPlan:
    store = build_pairs(shells, screen_threshold)
    tiles = tile_pairs(store, M)
    return BlockPlan(store, tiles, list(make_blocks(tiles)))


def fit_growth_exponent(sizes: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of log(values) against log(sizes)."""
    x = np.log(np.asarray(sizes, dtype=float))
    y = np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def canonical_quadruple_count(npairs: int) -> int:
    return math.comb(npairs + 1, 2)

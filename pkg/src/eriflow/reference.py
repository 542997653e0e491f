"""Slow, direct reference evaluations used to check the compiled pipeline.

:class:`OSRecursion` is plain Obara-Saika: every slot (a, b, c and d) is
reduced by its own vertical relation, always at the first nonzero slot and
Cartesian component. It never uses the horizontal relation, so it shares no
derivation path with compiled plans. :class:`ChosenPathRecursion` follows a
given path instead, to separate compilation errors from the rounding
behaviour of a path.
"""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from .boys import boys_array
from .molecule import Molecule, Shell

_TWO_PI_2_5 = 2.0 * math.pi ** 2.5


class PrimitiveGeometry:
    """Geometry-dependent scalars for a batch of primitive quadruples."""

    def __init__(self, alpha, beta, gamma, delta, A, B, C, D, max_order: int):
        alpha, beta, gamma, delta = (np.asarray(x, dtype=float) for x in (alpha, beta, gamma, delta))
        A, B, C, D = (np.broadcast_to(np.asarray(x, dtype=float), alpha.shape + (3,)) for x in (A, B, C, D))
        p = alpha + beta
        q = gamma + delta
        P = (alpha[..., None] * A + beta[..., None] * B) / p[..., None]
        Q = (gamma[..., None] * C + delta[..., None] * D) / q[..., None]
        W = (p[..., None] * P + q[..., None] * Q) / (p + q)[..., None]
        rho = p * q / (p + q)
        kab = np.exp(-alpha * beta / p * np.sum((A - B) ** 2, axis=-1))
        kcd = np.exp(-gamma * delta / q * np.sum((C - D) ** 2, axis=-1))
        T = rho * np.sum((P - Q) ** 2, axis=-1)
        pref = _TWO_PI_2_5 / (p * q * np.sqrt(p + q)) * (kab * kcd)
        self.F = boys_array(max_order, T) * pref
        self.PA = np.moveaxis(P - A, -1, 0)
        self.PB = np.moveaxis(P - B, -1, 0)
        self.QC = np.moveaxis(Q - C, -1, 0)
        self.QD = np.moveaxis(Q - D, -1, 0)
        self.WP = np.moveaxis(W - P, -1, 0)
        self.WQ = np.moveaxis(W - Q, -1, 0)
        self.AB = np.moveaxis(A - B, -1, 0)
        self.CD = np.moveaxis(C - D, -1, 0)
        self.o2p = 0.5 / p
        self.o2q = 0.5 / q
        self.o2pq = 0.5 / (p + q)
        self.rp = rho / p
        self.rq = rho / q


def _dec(v, i):
    return v[:i] + (v[i] - 1,) + v[i + 1:]


class OSRecursion:
    """Memoized [ab|cd]^(m) over a batch of primitive quadruples."""

    horizontal: frozenset = frozenset()

    def __init__(self, geom: PrimitiveGeometry):
        self.g = geom
        self.memo: dict = {}

    def _hrr(self, slot, i, a, b, c, d, m):
        # (a, b + 1_i) = (a + 1_i, b) + AB_i (a, b), and likewise on the ket
        quad = [a, b, c, d]
        low = list(quad)
        low[slot] = _dec(quad[slot], i)
        up = list(low)
        up[slot - 1] = quad[slot - 1][:i] + (quad[slot - 1][i] + 1,) + quad[slot - 1][i + 1:]
        dist = (self.g.AB if slot == 1 else self.g.CD)[i]
        return self(*up, m) + dist * self(*low, m)

    def __call__(self, a, b, c, d, m=0):
        key = (a, b, c, d, m)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        val = self._eval(a, b, c, d, m)
        self.memo[key] = val
        return val

    def position(self, a, b, c, d, m):
        """First nonzero slot and component, or None for a base integral."""
        for slot, v in enumerate((a, b, c, d)):
            for i in range(3):
                if v[i]:
                    return slot, i
        return None

    def _eval(self, a, b, c, d, m):
        g = self.g
        pos = self.position(a, b, c, d, m)
        if pos is None:
            return g.F[m]
        slot, i = pos
        if slot in self.horizontal:
            return self._hrr(slot, i, a, b, c, d, m)
        quad = [a, b, c, d]
        quad[slot] = _dec(quad[slot], i)
        r = self
        bra = slot < 2
        if bra:
            pre = (g.PA if slot == 0 else g.PB)[i]
            val = pre * r(*quad, m) + g.WP[i] * r(*quad, m + 1)
            same_o2, same_r, cross = g.o2p, g.rp, g.o2pq
        else:
            pre = (g.QC if slot == 2 else g.QD)[i]
            val = pre * r(*quad, m) + g.WQ[i] * r(*quad, m + 1)
            same_o2, same_r, cross = g.o2q, g.rq, g.o2pq
        own = (0, 1) if bra else (2, 3)
        other = (2, 3) if bra else (0, 1)
        # one addition per term, in the order the relation is written
        for s in own:
            n = quad[s][i]
            if n:
                low = list(quad)
                low[s] = _dec(quad[s], i)
                val = val + n * same_o2 * r(*low, m)
                val = val - n * same_o2 * same_r * r(*low, m + 1)
        for s in other:
            n = quad[s][i]
            if n:
                low = list(quad)
                low[s] = _dec(quad[s], i)
                val = val + n * cross * r(*low, m + 1)
        return val


class ChosenPathRecursion(OSRecursion):
    """Memoized recursion that reduces each integral where ``choices`` says.

    ``choices`` maps (a, b, c, d, m) to (slot, direction). Slots b and d are
    reduced horizontally, a and c vertically, so this evaluates the same
    recurrences as a compiled plan without sharing its code.
    """

    horizontal = frozenset((1, 3))

    def __init__(self, geom: PrimitiveGeometry, choices: dict):
        super().__init__(geom)
        self.choices = choices

    def position(self, a, b, c, d, m):
        if not any(a + b + c + d):
            return None
        return self.choices[(a, b, c, d, m)]


def primitive_eri_tensor(cls: Sequence[int], geom: PrimitiveGeometry, rec: OSRecursion | None = None) -> np.ndarray:
    """All Cartesian components of one class, shape (ncomp..., batch)."""
    from .molecule import cartesian_components

    comps = [cartesian_components(L) for L in cls]
    rec = rec or OSRecursion(geom)
    out = np.array([
        [[[rec(a, b, c, d) for d in comps[3]] for c in comps[2]] for b in comps[1]] for a in comps[0]
    ])
    return out


def contracted_eri(shells: Sequence[Shell]) -> np.ndarray:
    """Contracted (ab|cd) block for four shells, shape (na, nb, nc, nd)."""
    sa, sb, sc, sd = shells
    grids = np.meshgrid(*(np.arange(s.K) for s in shells), indexing="ij")
    k, l, m, n = (g.ravel() for g in grids)
    ex = [np.asarray(s.exponents) for s in shells]
    co = [np.asarray(s.coefficients) for s in shells]
    geom = PrimitiveGeometry(ex[0][k], ex[1][l], ex[2][m], ex[3][n],
                             sa.center, sb.center, sc.center, sd.center,
                             sa.L + sb.L + sc.L + sd.L)
    weights = co[0][k] * co[1][l] * co[2][m] * co[3][n]
    prim = primitive_eri_tensor((sa.L, sb.L, sc.L, sd.L), geom)
    val = prim @ weights
    scales = [s.component_scale for s in shells]
    return val * np.einsum("i,j,k,l->ijkl", *scales)


def dense_eri(molecule: Molecule) -> np.ndarray:
    """Full (N, N, N, N) ERI tensor, no symmetry used."""
    shells = molecule.shells
    off = molecule.shell_offsets()
    N = molecule.nbasis
    eri = np.zeros((N, N, N, N))
    S = len(shells)
    for i in range(S):
        for j in range(S):
            for k in range(S):
                for l in range(S):
                    blk = contracted_eri((shells[i], shells[j], shells[k], shells[l]))
                    eri[off[i]:off[i] + shells[i].nfunc, off[j]:off[j] + shells[j].nfunc,
                        off[k]:off[k] + shells[k].nfunc, off[l]:off[l] + shells[l].nfunc] = blk
    return eri


def dense_g(eri: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Closed-shell two-electron matrix 2J - K for D = C_occ C_occ^T."""
    J = np.einsum("ijkl,kl->ij", eri, D)
    K = np.einsum("ikjl,kl->ij", eri, D)
    return 2.0 * J - K


def ssss_closed_form(alpha, beta, gamma, delta, A, B, C, D) -> float:
    """Unnormalized [ss|ss] from the Gaussian product theorem and F_0 in erf form."""
    from math import erf, exp, pi, sqrt

    A, B, C, D = (np.asarray(x, dtype=float) for x in (A, B, C, D))
    p, q = alpha + beta, gamma + delta
    P = (alpha * A + beta * B) / p
    Q = (gamma * C + delta * D) / q
    rho = p * q / (p + q)
    T = rho * float(np.dot(P - Q, P - Q))
    F0 = 1.0 if T == 0 else 0.5 * sqrt(pi / T) * erf(sqrt(T))
    kab = exp(-alpha * beta / p * float(np.dot(A - B, A - B)))
    kcd = exp(-gamma * delta / q * float(np.dot(C - D, C - D)))
    return 2 * pi ** 2.5 / (p * q * sqrt(p + q)) * kab * kcd * F0

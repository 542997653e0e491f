"""One-electron integrals: overlap S, kinetic T and nuclear attraction V."""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np

from .boys import boys_array
from .molecule import Molecule, Shell


def _prim_pairs(a: Shell, b: Shell):
    al = np.repeat(np.asarray(a.exponents, dtype=float), b.K)
    be = np.tile(np.asarray(b.exponents, dtype=float), a.K)
    coef = np.repeat(np.asarray(a.coefficients, dtype=float), b.K) * np.tile(np.asarray(b.coefficients, dtype=float), a.K)
    A = np.asarray(a.center, dtype=float)
    B = np.asarray(b.center, dtype=float)
    p = al + be
    P = (al[:, None] * A + be[:, None] * B) / p[:, None]
    return al, be, coef, A, B, p, P


def _overlap_1d(imax: int, jmax: int, p, PA, PB, AB2, mu):
    """E[i][j] per primitive pair for one axis, i <= imax, j <= jmax."""
    E = np.zeros((imax + 1, jmax + 1, p.size))
    E[0, 0] = np.sqrt(math.pi / p) * np.exp(-mu * AB2)
    o2p = 0.5 / p
    for i in range(imax + 1):
        for j in range(jmax + 1):
            if i == 0 and j == 0:
                continue
            if i > 0:
                v = PA * E[i - 1, j]
                if i > 1:
                    v = v + (i - 1) * o2p * E[i - 2, j]
                if j > 0:
                    v = v + j * o2p * E[i - 1, j - 1]
            else:
                v = PB * E[i, j - 1]
                if j > 1:
                    v = v + (j - 1) * o2p * E[i, j - 2]
            E[i, j] = v
    return E


def shell_overlap_kinetic(a: Shell, b: Shell) -> tuple[np.ndarray, np.ndarray]:
    al, be, coef, A, B, p, P = _prim_pairs(a, b)
    mu = al * be / p
    S1, T1 = [], []
    for x in range(3):
        E = _overlap_1d(a.L, b.L + 2, p, P[:, x] - A[x], P[:, x] - B[x], (A[x] - B[x]) ** 2, mu)
        # -1/2 d^2/dx^2 acting on the ket
        K = np.zeros((a.L + 1, b.L + 1, p.size))
        for j in range(b.L + 1):
            v = -2.0 * be * (2 * j + 1) * E[:, j] + 4.0 * be ** 2 * E[:, j + 2]
            if j > 1:
                v = v + j * (j - 1) * E[:, j - 2]
            K[:, j] = -0.5 * v
        S1.append(E[:, : b.L + 1])
        T1.append(K)
    ca, cb = a.components, b.components
    S = np.zeros((len(ca), len(cb)))
    T = np.zeros((len(ca), len(cb)))
    for u, (ax, ay, az) in enumerate(ca):
        for v, (bx, by, bz) in enumerate(cb):
            sx, sy, sz = S1[0][ax, bx], S1[1][ay, by], S1[2][az, bz]
            tx, ty, tz = T1[0][ax, bx], T1[1][ay, by], T1[2][az, bz]
            S[u, v] = np.dot(coef, sx * sy * sz)
            T[u, v] = np.dot(coef, tx * sy * sz + sx * ty * sz + sx * sy * tz)
    scale = np.outer(a.component_scale, b.component_scale)
    return S * scale, T * scale


def shell_nuclear(a: Shell, b: Shell, centers: np.ndarray, charges: np.ndarray) -> np.ndarray:
    """sum_C -Z_C (a| 1/|r - C| |b) for one shell pair."""
    al, be, coef, A, B, p, P = _prim_pairs(a, b)
    mu = al * be / p
    AB = A - B
    PC = P[:, None, :] - centers[None, :, :]           # (np, nc, 3)
    PA = (P - A)[:, None, :]
    T = p[:, None] * np.sum(PC ** 2, axis=-1)
    Ltot = a.L + b.L
    base = (2.0 * math.pi / p * np.exp(-mu * float(AB @ AB)))[:, None] * boys_array(Ltot, T)  # (m, np, nc)
    o2p = (0.5 / p)[:, None]
    memo: dict = {}

    # vertical recursion on the bra, ket kept at zero
    def vrr(av, m):
        key = (av, m)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if av == (0, 0, 0):
            val = base[m]
        else:
            i = next(k for k in range(3) if av[k])
            low = av[:i] + (av[i] - 1,) + av[i + 1:]
            val = PA[..., i] * vrr(low, m) - PC[..., i] * vrr(low, m + 1)
            if low[i]:
                low2 = low[:i] + (low[i] - 1,) + low[i + 1:]
                val = val + low[i] * o2p * (vrr(low2, m) - vrr(low2, m + 1))
        memo[key] = val
        return val

    hmemo: dict = {}

    # horizontal transfer onto the ket
    def hrr(av, bv):
        key = (av, bv)
        hit = hmemo.get(key)
        if hit is not None:
            return hit
        if bv == (0, 0, 0):
            val = vrr(av, 0)
        else:
            i = next(k for k in range(3) if bv[k])
            blow = bv[:i] + (bv[i] - 1,) + bv[i + 1:]
            aup = av[:i] + (av[i] + 1,) + av[i + 1:]
            val = hrr(aup, blow) + AB[i] * hrr(av, blow)
        hmemo[key] = val
        return val

    out = np.zeros((a.nfunc, b.nfunc))
    for u, ac in enumerate(a.components):
        for v, bc in enumerate(b.components):
            out[u, v] = -np.einsum("n,nc,c->", coef, hrr(tuple(ac), tuple(bc)), charges)
    return out * np.outer(a.component_scale, b.component_scale)


def one_electron(molecule: Molecule) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Overlap, kinetic and nuclear-attraction matrices."""
    shells: Sequence[Shell] = molecule.shells
    off = molecule.shell_offsets()
    N = molecule.nbasis
    S = np.zeros((N, N))
    T = np.zeros((N, N))
    V = np.zeros((N, N))
    centers = molecule.coordinates()
    charges = molecule.charges()
    for i, a in enumerate(shells):
        for j in range(i, len(shells)):
            b = shells[j]
            si = slice(off[i], off[i] + a.nfunc)
            sj = slice(off[j], off[j] + b.nfunc)
            s, t = shell_overlap_kinetic(a, b)
            v = shell_nuclear(a, b, centers, charges)
            S[si, sj], T[si, sj], V[si, sj] = s, t, v
            S[sj, si], T[sj, si], V[sj, si] = s.T, t.T, v.T
    return S, T, V

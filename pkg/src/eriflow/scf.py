"""Closed-shell restricted Hartree-Fock."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .allocator import tune_blocks
from .blocks import DEFAULT_TILE_SIZE, construct
from .compiler import CompilerConfig
from .executor import DEFAULT_GRANULARITY, FockContext, build_g, compile_plans
from .molecule import Molecule
from .oneint import one_electron

LINEAR_DEPENDENCE_TOL = 1e-10


class ScfError(RuntimeError):
    pass


class LinearDependenceError(ScfError):
    pass


def orthogonalizer(S: np.ndarray, tol: float = LINEAR_DEPENDENCE_TOL) -> np.ndarray:
    """Symmetric orthogonalizer X = S^(-1/2)."""
    S = np.asarray(S, dtype=float)
    w, U = np.linalg.eigh(S)
    if w.min() < tol:
        raise LinearDependenceError(f"overlap eigenvalue {w.min():.3e} below {tol:g}")
    return (U / np.sqrt(w)) @ U.T


def density_from_mos(C: np.ndarray, n_occ: int) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    if n_occ > C.shape[1]:
        raise ValueError(f"{n_occ} occupied orbitals requested from {C.shape[1]}")
    Cocc = C[:, :n_occ]
    return Cocc @ Cocc.T


def solve_fock(F: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    eps, Cp = np.linalg.eigh(X.T @ F @ X)
    return eps, X @ Cp


@dataclass
class ScfOptions:
    conv: float = 1e-6          # max |D_new - D_old|
    max_iter: int = 99
    damping: float = 0.0        # fraction of the old density kept
    diis: bool = True
    diis_depth: int = 6
    threads: int = 1
    mode: str = "concurrent"
    tile_size: int = DEFAULT_TILE_SIZE
    screen_threshold: float | None = None
    lam: float = 1.0
    granularity: int = DEFAULT_GRANULARITY
    tune: bool = False
    tune_sample: int = 2
    tune_repeats: int = 3

    def __post_init__(self):
        if self.conv <= 0:
            raise ValueError("conv must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must be in [0, 1)")
        if self.diis_depth < 2:
            raise ValueError("diis_depth must be >= 2")


@dataclass
class ScfResult:
    energy: float
    iterations: int
    converged: bool
    energies: list[float]
    density_changes: list[float]
    D: np.ndarray = field(repr=False)
    C: np.ndarray = field(repr=False)
    orbital_energies: np.ndarray = field(repr=False)
    F: np.ndarray = field(repr=False)
    S: np.ndarray = field(repr=False)
    nuclear_repulsion: float = 0.0
    timing: dict = field(default_factory=dict)
    granularity: dict | int = DEFAULT_GRANULARITY

    def to_json(self) -> dict:
        g = self.granularity
        return {
            "energy_hartree": self.energy,
            "iterations": self.iterations,
            "converged": self.converged,
            "per_iteration_energies": self.energies,
            "density_changes": self.density_changes,
            "nuclear_repulsion": self.nuclear_repulsion,
            "granularity": {",".join(map(str, c)): v for c, v in g.items()} if isinstance(g, dict) else g,
            "timing": self.timing,
        }


class Diis:
    """Pulay extrapolation of Fock matrices on the orthogonal-basis commutator."""

    def __init__(self, depth: int = 6):
        self.depth = depth
        self.focks: list[np.ndarray] = []
        self.errors: list[np.ndarray] = []

    def push(self, F, D, S, X) -> float:
        err = X.T @ (F @ D @ S - S @ D @ F) @ X
        self.focks.append(F)
        self.errors.append(err)
        if len(self.focks) > self.depth:
            self.focks.pop(0)
            self.errors.pop(0)
        return float(np.max(np.abs(err)))

    def extrapolate(self) -> np.ndarray:
        n = len(self.focks)
        if n < 2:
            return self.focks[-1]
        B = -np.ones((n + 1, n + 1))
        B[n, n] = 0.0
        for i in range(n):
            for j in range(i + 1):
                B[i, j] = B[j, i] = np.vdot(self.errors[i], self.errors[j])
        rhs = np.zeros(n + 1)
        rhs[n] = -1.0
        try:
            c = np.linalg.solve(B, rhs)[:n]
        except np.linalg.LinAlgError:
            return self.focks[-1]
        return sum(ci * Fi for ci, Fi in zip(c, self.focks))


def scf_iterate(molecule: Molecule, options: ScfOptions = ScfOptions()) -> ScfResult:
    """Run the SCF loop from a core-Hamiltonian guess.

    Reaching ``max_iter`` is reported through ``converged``, not raised.
    """
    timing: dict = {}
    t0 = time.perf_counter()
    n_occ = molecule.n_occupied
    S, T, V = one_electron(molecule)
    H = T + V
    X = orthogonalizer(S)
    timing["one_electron_s"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    bplan = construct(molecule.shells, options.tile_size, options.screen_threshold)
    ctx = FockContext(molecule.shells, bplan)
    plans = compile_plans(bplan.classes, CompilerConfig(lam=options.lam))
    timing["setup_s"] = time.perf_counter() - t1

    eps, C = solve_fock(H, X)
    D = density_from_mos(C, n_occ)
    e_nuc = molecule.nuclear_repulsion()

    granularity: dict | int = options.granularity
    if options.tune:
        t2 = time.perf_counter()
        res = tune_blocks(ctx, plans, D, options.tune_sample, options.tune_repeats,
                          g0=options.granularity, threads=options.threads, mode=options.mode)
        granularity = dict(res.config.g)
        timing["tune_s"] = time.perf_counter() - t2

    diis = Diis(options.diis_depth) if options.diis else None
    energies, changes = [], []
    converged = False
    fock_time = 0.0
    F = H
    it = 0
    for it in range(1, options.max_iter + 1):
        t3 = time.perf_counter()
        G = build_g(ctx, plans, D, mode=options.mode, threads=options.threads, granularity=granularity)
        fock_time += time.perf_counter() - t3
        F = H + G
        E = float(np.sum(D * (H + F))) + e_nuc
        if not np.isfinite(E):
            raise ScfError(f"SCF diverged at iteration {it}")
        energies.append(E)
        F_use = F
        if diis is not None:
            diis.push(F, D, S, X)
            F_use = diis.extrapolate()
        eps, C = solve_fock(F_use, X)
        D_new = density_from_mos(C, n_occ)
        if options.damping:
            D_new = (1.0 - options.damping) * D_new + options.damping * D
        delta = float(np.max(np.abs(D_new - D)))
        changes.append(delta)
        D = D_new
        if delta < options.conv:
            converged = True
            break

    # energy of the final density with a fresh Fock build
    G = build_g(ctx, plans, D, mode=options.mode, threads=options.threads, granularity=granularity)
    F = H + G
    E = float(np.sum(D * (H + F))) + e_nuc
    if not np.isfinite(E):
        raise ScfError("SCF diverged")
    timing["fock_s"] = fock_time
    timing["total_s"] = time.perf_counter() - t0
    return ScfResult(E, it, converged, energies, changes, D, C, eps, F, S, e_nuc, timing, granularity)

"""Molecular geometry, basis-set tables and the shell model.

Coordinates are stored in Bohr. XYZ input is read in Angstrom and converted
with :data:`ANGSTROM_TO_BOHR`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

ANGSTROM_TO_BOHR = 1.8897259886

ELEMENTS = (
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr",
)
ATOMIC_NUMBER = {sym: z for z, sym in enumerate(ELEMENTS, start=1)}


class InputError(ValueError):
    """Malformed geometry or basis input."""


@dataclass(frozen=True)
class Atom:
    element: str
    atomic_number: int
    position: tuple[float, float, float]  # Bohr

    def __post_init__(self):
        if ATOMIC_NUMBER.get(self.element) != self.atomic_number:
            raise InputError(f"atomic number {self.atomic_number} does not match {self.element!r}")
        if not all(math.isfinite(c) for c in self.position):
            raise InputError(f"non-finite position for {self.element}")


def cartesian_components(L: int) -> list[tuple[int, int, int]]:
    """Cartesian momentum vectors of a shell, descending on a_x then a_y."""
    return [(L - i, i - j, j) for i in range(L + 1) for j in range(i + 1)]


def ncart(L: int) -> int:
    return (L + 1) * (L + 2) // 2


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


@dataclass(frozen=True)
class Shell:
    """Contracted Cartesian Gaussian shell.

    ``coefficients`` already include the primitive normalization for the
    axis-aligned component (L, 0, 0) and the contraction renormalization, so
    a contracted integral is simply the coefficient-weighted sum of primitive
    integrals. Components other than (L, 0, 0) need the extra factor in
    :attr:`component_scale` to be unit-normalized (only matters for L >= 2).
    """

    center: tuple[float, float, float]
    L: int
    exponents: tuple[float, ...]
    coefficients: tuple[float, ...]
    atom_index: int = -1

    def __post_init__(self):
        if self.L < 0:
            raise InputError("negative angular momentum")
        if len(self.exponents) < 1 or len(self.exponents) != len(self.coefficients):
            raise InputError("exponents and coefficients must be non-empty and of equal length")
        if any(not a > 0 for a in self.exponents):
            raise InputError("exponents must be strictly positive")

    @property
    def K(self) -> int:
        return len(self.exponents)

    @property
    def nfunc(self) -> int:
        return ncart(self.L)

    @property
    def components(self) -> list[tuple[int, int, int]]:
        return cartesian_components(self.L)

    @property
    def component_scale(self) -> np.ndarray:
        L = self.L
        num = _double_factorial(2 * L - 1)
        return np.array([
            math.sqrt(num / (_double_factorial(2 * x - 1) * _double_factorial(2 * y - 1) * _double_factorial(2 * z - 1)))
            for x, y, z in self.components
        ])

    def self_overlap(self) -> float:
        """Contracted self-overlap of the (L, 0, 0) component."""
        a = np.asarray(self.exponents)
        d = np.asarray(self.coefficients)
        p = a[:, None] + a[None, :]
        L = self.L
        s = (math.pi / p) ** 1.5 * _double_factorial(2 * L - 1) / (2 * p) ** L
        return float(d @ s @ d)


def normalize_shell(L: int, exponents, coefficients) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Fold primitive norms into the coefficients and renormalize the contraction."""
    a = np.asarray(exponents, dtype=float)
    c = np.asarray(coefficients, dtype=float)
    norm = (2 * a / math.pi) ** 0.75 * (4 * a) ** (L / 2) / math.sqrt(_double_factorial(2 * L - 1))
    d = c * norm
    p = a[:, None] + a[None, :]
    s = (math.pi / p) ** 1.5 * _double_factorial(2 * L - 1) / (2 * p) ** L
    d = d / math.sqrt(d @ s @ d)
    return tuple(a.tolist()), tuple(d.tolist())


@dataclass(frozen=True)
class BasisFunction:
    shell_index: int
    momentum: tuple[int, int, int]


@dataclass(frozen=True)
class Molecule:
    atoms: tuple[Atom, ...]
    shells: tuple[Shell, ...] = ()
    charge: int = 0
    multiplicity: int = 1
    comment: str = ""

    @property
    def n_electrons(self) -> int:
        return sum(a.atomic_number for a in self.atoms) - self.charge

    @property
    def n_occupied(self) -> int:
        n = self.n_electrons
        if n % 2 or self.multiplicity != 1:
            raise InputError(f"closed-shell restricted HF needs an even electron count, got {n}")
        return n // 2

    @property
    def nbasis(self) -> int:
        return sum(s.nfunc for s in self.shells)

    def coordinates(self) -> np.ndarray:
        return np.array([a.position for a in self.atoms], dtype=float)

    def charges(self) -> np.ndarray:
        return np.array([a.atomic_number for a in self.atoms], dtype=float)

    def nuclear_repulsion(self) -> float:
        R = self.coordinates()
        Z = self.charges()
        e = 0.0
        for i in range(len(Z)):
            for j in range(i):
                e += Z[i] * Z[j] / float(np.linalg.norm(R[i] - R[j]))
        return e

    def shell_offsets(self) -> np.ndarray:
        """Index of the first basis function of each shell."""
        sizes = [s.nfunc for s in self.shells]
        return np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int) if sizes else np.zeros(0, int)

    def transformed(self, rotation: np.ndarray, shift=(0.0, 0.0, 0.0)) -> Molecule:
        """Rigidly move the atoms and drop attached shells (re-attach afterwards)."""
        R = self.coordinates() @ np.asarray(rotation).T + np.asarray(shift)
        atoms = tuple(replace(a, position=tuple(map(float, r))) for a, r in zip(self.atoms, R))
        return replace(self, atoms=atoms, shells=())


def parse_xyz(text: str, charge: int = 0, multiplicity: int = 1) -> Molecule:
    """Parse XYZ text (Angstrom) into a :class:`Molecule` without shells."""
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise InputError("line 1: missing atom count")
    try:
        count = int(lines[0].split()[0])
    except ValueError:
        raise InputError(f"line 1: atom count is not an integer: {lines[0]!r}") from None
    comment = lines[1].strip() if len(lines) > 1 else ""
    atoms = []
    for lineno, line in enumerate(lines[2:], start=3):
        fields = line.split()
        if not fields:
            continue
        if len(fields) < 4:
            raise InputError(f"line {lineno}: expected 'symbol x y z', got {line!r}")
        sym = fields[0].capitalize()
        if sym not in ATOMIC_NUMBER:
            raise InputError(f"line {lineno}: unknown element {fields[0]!r}")
        try:
            xyz = tuple(float(v) * ANGSTROM_TO_BOHR for v in fields[1:4])
        except ValueError:
            raise InputError(f"line {lineno}: malformed coordinate in {line!r}") from None
        if not all(math.isfinite(v) for v in xyz):
            raise InputError(f"line {lineno}: non-finite coordinate")
        atoms.append(Atom(sym, ATOMIC_NUMBER[sym], xyz))
    if len(atoms) != count:
        raise InputError(f"declared {count} atoms, found {len(atoms)}")
    return Molecule(tuple(atoms), charge=charge, multiplicity=multiplicity, comment=comment)


def to_xyz(molecule: Molecule) -> str:
    out = [str(len(molecule.atoms)), molecule.comment]
    for a in molecule.atoms:
        x, y, z = (c / ANGSTROM_TO_BOHR for c in a.position)
        out.append(f"{a.element} {x!r} {y!r} {z!r}")
    return "\n".join(out) + "\n"


@dataclass
class BasisSet:
    """Element -> list of (L, exponents, raw coefficients)."""

    name: str
    elements: dict[str, list[tuple[int, tuple[float, ...], tuple[float, ...]]]] = field(default_factory=dict)


def parse_basis(text: str, name: str = "custom") -> BasisSet:
    """Parse the ``L K`` record format (see ``data/sto-3g.basis``)."""
    basis = BasisSet(name)
    rows = [(n, ln.split("#", 1)[0].strip()) for n, ln in enumerate(text.splitlines(), start=1)]
    rows = [(n, ln) for n, ln in rows if ln]
    i = 0
    while i < len(rows):
        n, ln = rows[i]
        sym = ln.capitalize()
        if sym not in ATOMIC_NUMBER:
            raise InputError(f"basis line {n}: expected element symbol, got {ln!r}")
        shells = []
        i += 1
        while i < len(rows) and rows[i][1].lower() != "end":
            n, ln = rows[i]
            try:
                L, K = (int(v) for v in ln.split())
            except ValueError:
                raise InputError(f"basis line {n}: expected 'L K' header, got {ln!r}") from None
            if K < 1 or L < 0:
                raise InputError(f"basis line {n}: invalid shell header {ln!r}")
            exps, coefs = [], []
            for n2, row in rows[i + 1:i + 1 + K]:
                try:
                    e, c = (float(v) for v in row.split())
                except ValueError:
                    raise InputError(f"basis line {n2}: expected 'exponent coefficient', got {row!r}") from None
                exps.append(e)
                coefs.append(c)
            if len(exps) != K:
                raise InputError(f"basis line {n}: shell declares {K} primitives, found {len(exps)}")
            shells.append((L, tuple(exps), tuple(coefs)))
            i += 1 + K
        if i >= len(rows):
            raise InputError(f"basis record for {sym} is not closed by 'end'")
        basis.elements[sym] = shells
        i += 1
    return basis


def load_basis(name: str = "sto-3g") -> BasisSet:
    """Load a bundled basis by name, or a basis file by path."""
    path = Path(name)
    if path.suffix == ".basis" and path.exists():
        return parse_basis(path.read_text(), name=path.stem)
    res = resources.files("eriflow") / "data" / f"{name.lower()}.basis"
    if not res.is_file():
        raise InputError(f"unknown basis set {name!r}")
    return parse_basis(res.read_text(), name=name.lower())


def attach_basis(molecule: Molecule, basis: BasisSet) -> Molecule:
    shells = []
    for idx, atom in enumerate(molecule.atoms):
        if atom.element not in basis.elements:
            raise InputError(f"basis {basis.name!r} has no entry for {atom.element}")
        for L, exps, coefs in basis.elements[atom.element]:
            a, d = normalize_shell(L, exps, coefs)
            shells.append(Shell(atom.position, L, a, d, idx))
    return replace(molecule, shells=tuple(shells))


def expand_functions(molecule: Molecule) -> list[BasisFunction]:
    return [BasisFunction(i, comp) for i, sh in enumerate(molecule.shells) for comp in sh.components]


def fixture_path(name: str) -> Path:
    """Path of a bundled geometry, e.g. ``fixture_path("water")``."""
    return Path(str(resources.files("eriflow") / "data" / f"{name}.xyz"))


def load_molecule(path_or_name: str, basis: str = "sto-3g", charge: int = 0) -> Molecule:
    """Read an XYZ file (or bundled fixture name) and attach a basis."""
    path = Path(path_or_name)
    if not path.exists():
        path = fixture_path(path_or_name)
        if not path.exists():
            raise InputError(f"no such geometry: {path_or_name}")
    mol = parse_xyz(path.read_text(encoding="utf-8"), charge=charge)
    return attach_basis(mol, load_basis(basis))

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eriflow.molecule import (ANGSTROM_TO_BOHR, ELEMENTS, InputError, Shell, attach_basis,
                              cartesian_components, expand_functions, load_basis, load_molecule,
                              normalize_shell, parse_basis, parse_xyz, to_xyz)

WATER_XYZ = "3\nwater\nO 0 0 0.1173\nH 0 0.7572 -0.4692\nH 0 -0.7572 -0.4692"


def test_parse_water():
    mol = parse_xyz(WATER_XYZ)
    assert len(mol.atoms) == 3
    assert mol.atoms[0].element == "O"
    assert mol.atoms[0].position[2] == pytest.approx(0.1173 * 1.8897259886, abs=1e-12)
    assert mol.comment == "water"


def test_single_hydrogen():
    mol = parse_xyz("1\n\nH 0 0 0")
    assert len(mol.atoms) == 1
    assert mol.atoms[0].position == (0.0, 0.0, 0.0)


def test_count_mismatch():
    with pytest.raises(InputError, match="declared 2 atoms, found 1"):
        parse_xyz("2\n\nH 0 0 0")


@pytest.mark.parametrize("text", ["", "x\n\nH 0 0 0", "1\n\nXx 0 0 0", "1\n\nH 0 0", "1\n\nH 0 0 zz",
                                  "1\n\nH 0 0 nan"])
def test_malformed_xyz(text):
    with pytest.raises(InputError):
        parse_xyz(text)


def test_hydrogen_sto3g():
    mol = attach_basis(parse_xyz("1\n\nH 0 0 0"), load_basis("sto-3g"))
    assert len(mol.shells) == 1
    assert mol.shells[0].L == 0 and mol.shells[0].K == 3


def test_water_shells():
    mol = load_molecule("water")
    assert sorted(s.L for s in mol.shells) == [0, 0, 0, 0, 1]
    assert mol.nbasis == 7
    assert len(expand_functions(mol)) == 7


def test_missing_element():
    basis = parse_basis("H\n0 1\n1.0 1.0\nend\n")
    with pytest.raises(InputError, match="He"):
        attach_basis(parse_xyz("1\n\nHe 0 0 0"), basis)


def test_component_order():
    assert cartesian_components(1) == [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    assert len(cartesian_components(2)) == 6
    assert cartesian_components(2)[:3] == [(2, 0, 0), (1, 1, 0), (1, 0, 1)]


@pytest.mark.parametrize("text", ["H\n0 2\n1.0 1.0\nend\n", "H\n0 1\n1.0 1.0\n", "Q\nend\n", "H\nx y\nend\n"])
def test_malformed_basis(text):
    with pytest.raises(InputError):
        parse_basis(text)


def test_invalid_shell():
    with pytest.raises(InputError):
        Shell((0, 0, 0), 0, (-1.0,), (1.0,))
    with pytest.raises(InputError):
        Shell((0, 0, 0), 0, (1.0, 2.0), (1.0,))


@pytest.mark.parametrize("L", [0, 1, 2])
def test_normalized_contraction(L):
    a, d = normalize_shell(L, (3.0, 0.7, 0.15), (0.2, 0.5, 0.4))
    assert Shell((0, 0, 0), L, a, d).self_overlap() == pytest.approx(1.0, abs=1e-14)


def test_component_scale_d():
    sh = Shell((0, 0, 0), 2, (1.0,), (1.0,))
    # xx-type components unit, xy-type need sqrt(3)
    np.testing.assert_allclose(sh.component_scale, [1, math.sqrt(3), math.sqrt(3), 1, math.sqrt(3), 1])


def test_nuclear_repulsion_h2():
    mol = parse_xyz("2\n\nH 0 0 0\nH 0 0 0.74")
    assert mol.nuclear_repulsion() == pytest.approx(1 / (0.74 * ANGSTROM_TO_BOHR))


def test_open_shell_rejected():
    mol = parse_xyz("1\n\nH 0 0 0")
    with pytest.raises(InputError):
        mol.n_occupied


coord = st.floats(-20, 20, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(ELEMENTS[:18]), coord, coord, coord), min_size=1, max_size=6))
def test_xyz_round_trip(atoms):
    text = f"{len(atoms)}\nround trip\n" + "\n".join(f"{e} {x!r} {y!r} {z!r}" for e, x, y, z in atoms)
    mol = parse_xyz(text)
    again = parse_xyz(to_xyz(mol))
    assert [a.element for a in again.atoms] == [a.element for a in mol.atoms]
    np.testing.assert_allclose(again.coordinates(), mol.coordinates(), rtol=1e-12, atol=1e-12)

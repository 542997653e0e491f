import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from eriflow import scf as scf_mod
from eriflow.molecule import attach_basis, load_basis, load_molecule
from eriflow.oneint import one_electron
from eriflow.scf import (Diis, LinearDependenceError, ScfError, ScfOptions, density_from_mos,
                         orthogonalizer, scf_iterate)
from eriflow.validate import FIXTURE_ENERGIES


def test_orthogonalizer_identity():
    np.testing.assert_allclose(orthogonalizer(np.eye(4)), np.eye(4), atol=1e-15)


def test_orthogonalizer_scalar():
    np.testing.assert_allclose(orthogonalizer(4 * np.eye(3)), 0.5 * np.eye(3), atol=1e-15)


def test_orthogonalizer_random_spd(rng):
    M = rng.standard_normal((7, 7))
    S = M @ M.T + 0.5 * np.eye(7)
    X = orthogonalizer(S)
    assert np.max(np.abs(X.T @ S @ X - np.eye(7))) < 1e-10


def test_linear_dependence():
    v = np.array([1.0, 1.0, 0.0])
    S = np.outer(v, v) + np.diag([0.0, 0.0, 1.0])
    with pytest.raises(LinearDependenceError):
        orthogonalizer(S)


def test_density_examples():
    assert not np.any(density_from_mos(np.eye(3), 0))
    np.testing.assert_array_equal(density_from_mos(np.array([[1.0]]), 1), [[1.0]])
    with pytest.raises(ValueError):
        density_from_mos(np.eye(2), 3)


def test_one_electron_symmetric(water):
    S, T, V = one_electron(water)
    for M in (S, T, V):
        assert np.max(np.abs(M - M.T)) < 1e-10
    np.testing.assert_allclose(np.diag(S), 1.0, atol=1e-10)


@pytest.mark.parametrize("bad", [dict(conv=0), dict(max_iter=0), dict(damping=1.0), dict(diis_depth=1)])
def test_bad_options(bad):
    with pytest.raises(ValueError):
        ScfOptions(**bad)


def test_h2():
    res = scf_iterate(load_molecule("h2"))
    assert res.converged
    assert res.energy == pytest.approx(-1.1167, abs=1e-3)
    assert res.energy == pytest.approx(FIXTURE_ENERGIES["h2"], abs=1e-8)


@pytest.fixture(scope="module")
def water_result():
    return scf_iterate(load_molecule("water"))


def test_water_fixture_energy(water_result):
    assert water_result.converged
    assert abs(water_result.energy - FIXTURE_ENERGIES["water"]) < 1e-8


def test_water_electron_count(water_result):
    assert np.trace(water_result.D @ water_result.S) == pytest.approx(5.0, abs=1e-10)


def test_water_idempotent(water_result):
    D, S = water_result.D, water_result.S
    assert np.max(np.abs(D @ S @ D - D)) < 1e-6


def test_diis_matches_bare_iteration(water_result):
    bare = scf_iterate(load_molecule("water"), ScfOptions(diis=False, conv=1e-8))
    assert bare.converged
    assert abs(bare.energy - water_result.energy) < 1e-8


def test_rotational_invariance(water_result):
    mol = load_molecule("water")
    R = Rotation.from_euler("zyx", [0.7, -1.1, 2.3]).as_matrix()
    moved = attach_basis(mol.transformed(R, shift=(0.3, -1.2, 2.0)), load_basis("sto-3g"))
    assert abs(scf_iterate(moved).energy - water_result.energy) < 1e-8


def assert_monotone_after_third(energies):
    tail = energies[2:]
    assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))


def test_damping_monotone_water():
    res = scf_iterate(load_molecule("water"), ScfOptions(damping=0.3, diis=False))
    assert res.converged
    assert_monotone_after_third(res.energies)


@pytest.mark.slow
def test_damping_monotone_benzene():
    res = scf_iterate(load_molecule("benzene"), ScfOptions(damping=0.3, diis=False))
    assert res.converged
    assert_monotone_after_third(res.energies)


def test_max_iter_not_converged():
    res = scf_iterate(load_molecule("water"), ScfOptions(max_iter=2, diis=False))
    assert not res.converged
    assert res.iterations == 2
    assert len(res.energies) == 2


def test_nan_raises(monkeypatch):
    def broken(ctx, plans, D, **kw):
        return np.full_like(D, np.nan)
    monkeypatch.setattr(scf_mod, "build_g", broken)
    with pytest.raises(ScfError):
        scf_iterate(load_molecule("h2"))


def test_json_report(water_result):
    rec = water_result.to_json()
    assert rec["energy_hartree"] == water_result.energy
    assert rec["iterations"] == len(rec["per_iteration_energies"])


def test_diis_single_entry_passthrough(rng):
    d = Diis(3)
    F = rng.standard_normal((3, 3))
    d.push(F, np.eye(3), np.eye(3), np.eye(3))
    assert d.extrapolate() is F


def test_tuned_scf_same_energy(water_result):
    res = scf_iterate(load_molecule("water"), ScfOptions(tune=True, tune_repeats=1, tune_sample=1))
    assert isinstance(res.granularity, dict)
    assert abs(res.energy - water_result.energy) < 1e-10

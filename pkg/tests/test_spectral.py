import math

import numpy as np
import pytest

from src.errors import ConfigError, EigensolverFailure, GapClosed, ProjectorsTooFar, WindowTruncation
from src.lattice import KGrid, make_lattice
from src.models import ExplicitFamily, SchrodingerPW, assemble_fiber, make_basis, make_explicit, make_potential
from src.spectral import (BandWindow, bands_to_frame, complement_family, fix_gauge, materialize, nagy_transport,
                          projector_distance, projector_family, solve_bands, solve_path, solve_point,
                          transport_step, verify_gap)

from tests.conftest import mathieu


@pytest.fixture
def free_bands(free_1d):
    grid = KGrid(lattice=free_1d.lattice, shape=(8,))
    return solve_bands(free_1d, grid, 3)


def _rotation(theta):
    return np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])


def test_free_particle_oracle(free_bands):
    origin = free_bands.grid.flat_index((0,))
    assert np.allclose(free_bands.energies[origin], [0.0, 2 * math.pi ** 2, 2 * math.pi ** 2], atol=1e-12)


def test_solve_is_deterministic_and_worker_independent():
    model = mathieu(0.4)
    grid = KGrid(lattice=model.lattice, shape=(16,))
    first = solve_bands(model, grid, 3)
    second = solve_bands(model, grid, 3, workers=2)
    assert np.array_equal(first.energies, second.energies)
    assert np.array_equal(first.vectors, second.vectors)


def test_gauge_rule_makes_largest_component_real_positive():
    rng = np.random.default_rng(5)
    matrix = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    energies, vectors = np.linalg.eigh(matrix + matrix.conj().T)
    fixed = fix_gauge(energies, vectors * np.exp(1j * rng.uniform(0, 2 * np.pi, size=5)))
    pivots = np.argmax(np.abs(fixed), axis=0)
    values = fixed[pivots, np.arange(5)]
    assert np.allclose(values.imag, 0.0)
    assert np.all(values.real > 0)


def test_gauge_rule_fixes_degenerate_clusters():
    energies = np.array([1.0, 1.0])
    rotation = _rotation(0.3) * np.exp(0.7j)
    assert np.allclose(fix_gauge(energies, rotation), fix_gauge(energies, np.eye(2)))


def test_gap_closes_at_zone_boundary(free_bands):
    with pytest.raises(GapClosed) as excinfo:
        verify_gap(free_bands, BandWindow(first=0, count=1))
    assert excinfo.value.details["index"] == (-4,)
    assert excinfo.value.details["k"][0] == pytest.approx(-math.pi)
    assert excinfo.value.exit_code == 3


def test_gap_closes_for_middle_band(free_bands):
    with pytest.raises(GapClosed) as excinfo:
        verify_gap(free_bands, BandWindow(first=1, count=1))
    assert excinfo.value.details["value"] <= 1e-8


def test_window_needs_a_band_above(free_bands):
    with pytest.raises(WindowTruncation):
        verify_gap(free_bands, BandWindow(first=1, count=2))


def test_window_validation():
    with pytest.raises(ConfigError, match="window.count"):
        BandWindow(first=0, count=0)


def test_mathieu_pair_window_has_small_gap():
    model = mathieu(0.05)
    grid = KGrid(lattice=model.lattice, shape=(32,))
    gap = verify_gap(solve_bands(model, grid, 3), BandWindow(first=0, count=2))
    assert 1e-3 < gap < 0.05


def test_projector_family_columns_are_orthonormal():
    model = mathieu(1.0)
    grid = KGrid(lattice=model.lattice, shape=(8,))
    family = projector_family(solve_bands(model, grid, 3), BandWindow(first=0, count=2))
    assert family.rank == 2
    for p in range(grid.size):
        assert np.allclose(family.columns[p].conj().T @ family.columns[p], np.eye(2), atol=1e-12)
        projector = family.materialize(p)
        assert np.allclose(projector @ projector, projector, atol=1e-12)


def test_neighbor_across_boundary_spans_the_shifted_eigenspace():
    model = mathieu(1.0, cutoff=72.0)
    grid = KGrid(lattice=model.lattice, shape=(8,))
    family = projector_family(solve_bands(model, grid, 2), BandWindow(first=0, count=1))
    last = grid.flat_index((3,))
    wrapped = family.neighbor(last, 0, 1)
    _, direct = solve_point(model, grid.k_point((4,)), 0, 0)
    assert projector_distance(wrapped, direct) <= 1e-8


def test_complement_needs_full_solve():
    model = mathieu(1.0)
    grid = KGrid(lattice=model.lattice, shape=(4,))
    bands = solve_bands(model, grid, 3)
    with pytest.raises(ConfigError):
        complement_family(bands, BandWindow(first=0, count=1))
    full = solve_bands(model, grid, model.dim)
    complement = complement_family(full, BandWindow(first=0, count=1))
    assert complement.rank == model.dim - 1
    assert complement.complement


def test_projector_distance_matches_dense_norm():
    rng = np.random.default_rng(6)
    a, _ = np.linalg.qr(rng.normal(size=(6, 2)) + 1j * rng.normal(size=(6, 2)))
    b, _ = np.linalg.qr(a + 0.2 * rng.normal(size=(6, 2)))
    dense = np.linalg.norm(materialize(a) - materialize(b), 2)
    assert projector_distance(a, b) == pytest.approx(dense, abs=1e-12)


def test_nagy_unitary_intertwines_projectors():
    rng = np.random.default_rng(7)
    a, _ = np.linalg.qr(rng.normal(size=(5, 2)) + 1j * rng.normal(size=(5, 2)))
    b, _ = np.linalg.qr(a + 0.1 * (rng.normal(size=(5, 2)) + 1j * rng.normal(size=(5, 2))))
    unitary = nagy_transport(materialize(a), materialize(b))
    assert np.allclose(unitary.conj().T @ unitary, np.eye(5), atol=1e-12)
    assert np.linalg.norm(unitary @ materialize(a) @ unitary.conj().T - materialize(b), 2) <= 1e-11
    assert np.allclose(transport_step(a, b), unitary @ a, atol=1e-10)


def test_nagy_refuses_far_projectors():
    p_from = np.diag([1.0, 0.0])
    p_to = np.diag([0.0, 1.0])
    with pytest.raises(ProjectorsTooFar) as excinfo:
        nagy_transport(p_from, p_to)
    assert excinfo.value.details["refine_by"] >= 2
    with pytest.raises(ProjectorsTooFar):
        transport_step(np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]]))


def test_nagy_transport_along_rotation_family():
    model = make_explicit(make_lattice([[1.0]]), "rotation", {"amplitude": 0.5})
    ks = np.linspace(0.0, math.pi / 2, 65)
    projectors = []
    for k in ks:
        _, vectors = np.linalg.eigh(assemble_fiber(model, [k]))
        projectors.append(materialize(vectors[:, :1]))
    total = np.eye(2)
    for p_from, p_to in zip(projectors[:-1], projectors[1:]):
        step = nagy_transport(p_from, p_to)
        assert np.linalg.norm(step @ p_from @ step.conj().T - p_to, 2) <= 1e-11
        total = step @ total
    assert np.allclose(total, _rotation(0.5 * math.sin(math.pi / 2)), atol=1e-8)


def test_eigensolver_failure_reports_k():
    broken = ExplicitFamily(lattice=make_lattice([[1.0]]), dim_h=2, matrix_fn=lambda k: np.full((2, 2), np.nan))
    with pytest.raises(EigensolverFailure) as excinfo:
        solve_point(broken, [0.25], 0, 1, index=3)
    assert excinfo.value.details["index"] == 3


def test_bands_table_and_path(free_1d, free_bands):
    table = bands_to_frame(free_bands)
    assert list(table.columns) == ["k1", "E0", "E1", "E2"]
    assert len(table) == 8
    path = solve_path(free_1d, np.array([[0.0], [math.pi]]), 2)
    assert path.shape == (2, 2)
    assert path[1, 0] == pytest.approx(path[1, 1])


def test_weak_mathieu_gap_is_twice_the_coupling():
    model = mathieu(0.05)
    grid = KGrid(lattice=model.lattice, shape=(32,))
    gap = verify_gap(solve_bands(model, grid, 2), BandWindow(first=0, count=1))
    assert gap == pytest.approx(0.1, rel=0.1)


def test_free_square_lattice_corner_is_fourfold():
    lattice = make_lattice([[1.0, 0.0], [0.0, 1.0]])
    model = SchrodingerPW(basis=make_basis(lattice, 50.0), potential=make_potential([], 2))
    energies, _ = solve_point(model, [math.pi, math.pi], 0, 4)
    assert np.allclose(energies[:4], math.pi ** 2, atol=1e-10)
    assert energies[4] > math.pi ** 2 + 1.0


def test_projector_distance_vanishes_for_a_change_of_basis():
    rng = np.random.default_rng(8)
    a, _ = np.linalg.qr(rng.normal(size=(7, 3)) + 1j * rng.normal(size=(7, 3)))
    unitary, _ = np.linalg.qr(rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)))
    assert projector_distance(a, a @ unitary) <= 1e-13


def test_nagy_transport_between_zero_projectors_is_identity():
    zero = np.zeros((3, 3))
    assert np.allclose(nagy_transport(zero, zero), np.eye(3), atol=1e-14)
    assert transport_step(np.zeros((3, 0)), np.zeros((3, 0))).shape == (3, 0)

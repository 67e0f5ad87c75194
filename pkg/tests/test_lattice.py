import math

import numpy as np
import pytest

from src.errors import ConfigError, SingularGenerators
from src.lattice import KGrid, fractional_cells, make_lattice, reduce_to_domain, straight_path


def test_dual_generators_satisfy_duality():
    lattice = make_lattice([[1.0, 0.3], [0.2, 2.0]])
    product = lattice.generators @ lattice.dual_generators.T
    assert np.allclose(product, 2 * math.pi * np.eye(2), atol=1e-12)
    assert lattice.duality_residual <= 1e-12


def test_unit_square_has_2pi_dual():
    lattice = make_lattice([[1.0, 0.0], [0.0, 1.0]])
    assert np.allclose(lattice.dual_generators, 2 * math.pi * np.eye(2))
    assert lattice.cell_volume == pytest.approx(1.0)
    assert lattice.dual_cell_volume == pytest.approx(4 * math.pi ** 2)


def test_scalar_generator_for_one_dimension():
    lattice = make_lattice(2.0)
    assert lattice.dim == 1
    assert lattice.dual_generators[0, 0] == pytest.approx(math.pi)


def test_singular_generators_rejected():
    with pytest.raises(SingularGenerators) as excinfo:
        make_lattice([[1.0, 2.0], [2.0, 4.0]])
    assert excinfo.value.exit_code == 1


def test_wrong_shape_is_config_error():
    with pytest.raises(ConfigError, match="lattice.generators"):
        make_lattice([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def test_reduce_to_domain_half_open_box():
    lattice = make_lattice([[1.0]])
    alpha, reduced = reduce_to_domain([2.3], lattice)
    assert alpha == (2,)
    assert reduced[0] == pytest.approx(0.3)
    alpha, reduced = reduce_to_domain([0.5], lattice)
    assert alpha == (1,)
    assert reduced[0] == pytest.approx(-0.5)
    alpha, reduced = reduce_to_domain([-0.5], lattice)
    assert alpha == (0,)
    assert reduced[0] == pytest.approx(-0.5)


def test_reduce_to_domain_snaps_boundary_noise():
    lattice = make_lattice([[1.0]])
    alpha, reduced = reduce_to_domain([0.5 - 1e-14], lattice)
    assert alpha == (1,)
    assert reduced[0] == pytest.approx(-0.5)


def test_fractional_cells_match_reduction():
    values = np.array([[-1.5], [-0.49], [0.49], [0.5], [1.2]])
    assert fractional_cells(values).ravel().tolist() == [-1, 0, 0, 1, 1]


def test_grid_rejects_odd_sizes():
    lattice = make_lattice([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ConfigError, match=r"grid.shape\[1\]"):
        KGrid(lattice=lattice, shape=(4, 5))


def test_grid_points_are_centered():
    lattice = make_lattice([[1.0]])
    grid = KGrid(lattice=lattice, shape=(4,))
    assert grid.indices.ravel().tolist() == [-2, -1, 0, 1]
    assert np.allclose(grid.points.ravel(), 2 * math.pi * np.array([-0.5, -0.25, 0.0, 0.25]))


def test_wrap_returns_stored_index_and_wrap_count():
    lattice = make_lattice([[1.0, 0.0], [0.0, 1.0]])
    grid = KGrid(lattice=lattice, shape=(4, 6))
    stored, wraps = grid.wrap((2, -4))
    assert stored == (-2, 2)
    assert wraps == (1, -1)
    assert np.allclose(grid.k_point((2, -4)), grid.k_point(stored) + lattice.dual_vector(wraps))


def test_flat_and_multi_index_round_trip():
    lattice = make_lattice([[1.0, 0.0], [0.0, 1.0]])
    grid = KGrid(lattice=lattice, shape=(4, 6))
    for flat in range(grid.size):
        assert grid.flat_index(grid.multi_index(flat)) == flat


def test_negation_maps_k_to_minus_k_modulo_dual_lattice():
    lattice = make_lattice([[1.0, 0.0], [0.0, 2.0]])
    grid = KGrid(lattice=lattice, shape=(4, 4))
    for flat in range(grid.size):
        difference = grid.points[flat] + grid.points[grid.negate(flat)]
        coords = np.linalg.solve(lattice.dual_generators.T, difference)
        assert np.allclose(coords, np.round(coords), atol=1e-12)
    assert grid.negate(grid.flat_index((0, 0))) == grid.flat_index((0, 0))


def test_neighbor_across_boundary_reports_wrap():
    lattice = make_lattice([[1.0]])
    grid = KGrid(lattice=lattice, shape=(4,))
    flat, wraps = grid.neighbor(grid.flat_index((1,)), 0, 1)
    assert grid.multi_index(flat) == (-2,)
    assert wraps == (1,)


def test_line_order():
    lattice = make_lattice([[1.0]])
    grid = KGrid(lattice=lattice, shape=(6,))
    assert grid.line_order(0) == [0, 1, 2, -3, -2, -1]


def test_straight_path_endpoints():
    lattice = make_lattice([[1.0, 0.0], [0.0, 1.0]])
    path = straight_path(lattice, [0.0, 0.0], [0.5, 0.5], 5)
    assert path.shape == (5, 2)
    assert np.allclose(path[-1], [math.pi, math.pi])


def test_straight_path_checks_dimension():
    lattice = make_lattice([[1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ConfigError, match="options.path"):
        straight_path(lattice, [0.0], [0.5, 0.5], 5)

import dataclasses
import math

import numpy as np
import pytest
from scipy.linalg import expm
from scipy.stats import unitary_group

from src.errors import DimensionMismatch, NoSpectralGap
from src.frames import (Frame, Obstruction, build_intertwiner, construct_frame, equivariance_defect,
                        holonomy_mismatch, orthonormality_defect, random_gauge, smoothness_bound, span_defect,
                        unitary_log)
from src.geometry import wilson_loop_phases
from src.lattice import KGrid, make_lattice
from src.models import make_explicit
from src.spectral import BandWindow, complement_family, projector_family, solve_bands

from tests.conftest import family_for, mathieu, qwz_family


@pytest.fixture
def pair_family():
    return family_for(mathieu(0.05), (32,), 0, 2)


def test_unitary_log_of_diagonal_unitary():
    unitary = np.diag(np.exp([0.3j, -0.5j]))
    assert np.allclose(unitary_log(unitary), np.diag([0.3j, -0.5j]), atol=1e-12)


def test_unitary_log_keeps_phases_near_pi_together():
    unitary = np.diag(np.exp([1j * (math.pi - 0.1), -1j * (math.pi - 0.1)]))
    generator = unitary_log(unitary)
    assert np.allclose(expm(generator), unitary, atol=1e-12)
    phases = np.sort(np.diag(generator).imag)
    assert phases[1] - phases[0] == pytest.approx(0.2, abs=1e-10)


def test_unitary_log_of_random_unitary():
    unitary = unitary_group.rvs(4, random_state=11)
    generator = unitary_log(unitary)
    assert np.allclose(generator, -generator.conj().T, atol=1e-12)
    assert np.allclose(expm(generator), unitary, atol=1e-10)


def test_unitary_log_refuses_equidistributed_phases():
    with pytest.raises(NoSpectralGap):
        unitary_log(np.diag([1.0, -1.0]).astype(complex))
    single = unitary_log(np.array([[-1.0 + 0j]]))
    assert abs(single[0, 0].imag) == pytest.approx(math.pi)


def test_frame_contract_for_two_band_window(pair_family):
    frame = construct_frame(pair_family)
    assert isinstance(frame, Frame)
    assert frame.rank == 2
    assert orthonormality_defect(frame) <= 1e-10
    assert span_defect(frame, pair_family) <= 1e-10
    assert equivariance_defect(frame) <= 1e-9
    residuals = frame.residuals()
    assert set(residuals) == {"orthonormality", "equivariance", "smoothness", "span"}


def test_frame_is_worker_independent(pair_family):
    first = construct_frame(pair_family)
    second = construct_frame(pair_family, workers=2)
    assert np.array_equal(first.columns, second.columns)


def test_uncorrected_frame_keeps_the_holonomy(pair_family):
    raw = construct_frame(pair_family, correct=False)
    assert equivariance_defect(raw) == pytest.approx(holonomy_mismatch(raw), abs=1e-10)
    corrected = construct_frame(pair_family)
    assert equivariance_defect(corrected) <= 1e-9


def test_holonomy_matches_wilson_loop(pair_family):
    raw = construct_frame(pair_family, correct=False)
    starts, ends = raw.closures[0]
    holonomy = starts[0].conj().T @ ends[0]
    _, phases = wilson_loop_phases(pair_family, 0)
    assert np.allclose(np.poly(np.exp(1j * phases[0])), np.poly(np.linalg.eigvals(holonomy)), atol=1e-10)


def test_two_dimensional_frame_smoothness_is_stable(square_potential_2d):
    bounds = []
    for size in (16, 32):
        family = family_for(square_potential_2d, (size, size), 0, 1)
        frame = construct_frame(family)
        assert isinstance(frame, Frame)
        assert span_defect(frame, family) <= 1e-10
        assert equivariance_defect(frame) <= 1e-9
        bounds.append(smoothness_bound(frame))
    assert bounds[1] <= 1.5 * bounds[0]
    assert bounds[0] <= 1.5 * bounds[1]


def test_chern_band_is_obstructed():
    result = construct_frame(qwz_family(1.0))
    assert isinstance(result, Obstruction)
    assert result.chern_report.pairs[0].chern == -1
    assert "(1,2)" in result.message


def test_constant_family_gives_constant_frame():
    model = make_explicit(make_lattice([[1.0, 0.0], [0.0, 1.0]]), "constant")
    frame = construct_frame(family_for(model, (8, 8), 0, 1, solved=2))
    assert np.allclose(frame.columns, frame.columns[0])
    assert smoothness_bound(frame) == pytest.approx(0.0, abs=1e-12)
    assert holonomy_mismatch(frame) <= 1e-12


def test_rotated_frame_keeps_the_contract(pair_family):
    frame = construct_frame(pair_family)
    rotated = frame.rotated(unitary_group.rvs(2, random_state=3))
    assert orthonormality_defect(rotated) <= 1e-10
    assert span_defect(rotated, pair_family) <= 1e-10
    assert equivariance_defect(rotated) <= 1e-9


def test_random_gauge_breaks_smoothness():
    family = family_for(mathieu(1.0), (32,), 0, 1)
    frame = construct_frame(family)
    control = random_gauge(frame, seed=7)
    assert span_defect(control, family) <= 1e-10
    assert orthonormality_defect(control) <= 1e-10
    assert smoothness_bound(control) > 2.0 * smoothness_bound(frame)
    assert np.array_equal(random_gauge(frame, seed=7).columns, control.columns)


def test_equivariance_is_measured_from_the_columns(pair_family):
    raw = construct_frame(pair_family, correct=False)
    bare = Frame.from_columns(raw.grid, raw.columns, raw.action, pair_family)
    assert bare.closures == {}
    assert holonomy_mismatch(raw) > 0.5
    assert equivariance_defect(bare) == pytest.approx(holonomy_mismatch(raw), abs=1e-10)
    corrected = construct_frame(pair_family)
    assert equivariance_defect(Frame.from_columns(corrected.grid, corrected.columns, corrected.action)) <= 1e-9


def test_random_gauge_breaks_the_seam():
    frame = construct_frame(qwz_family(3.0, size=16))
    assert equivariance_defect(frame) <= 1e-9
    assert equivariance_defect(random_gauge(frame, seed=3)) > 0.5


@pytest.mark.parametrize("u", [-3.0, -1.0, 1.0, 3.0])
def test_qwz_frame_exists_exactly_when_the_band_is_trivial(u):
    result = construct_frame(qwz_family(u, size=16))
    if abs(u) > 2.0:
        assert isinstance(result, Frame)
        assert equivariance_defect(result) <= 1e-9
    else:
        assert isinstance(result, Obstruction)
        assert abs(result.chern_report.pairs[0].chern) == 1


def test_pair_frame_smoothness_is_stable_under_refinement():
    bounds = []
    for size in (512, 1024):
        family = family_for(mathieu(0.05), (size,), 0, 2)
        frame = construct_frame(family)
        assert span_defect(frame, family) <= 1e-10
        assert equivariance_defect(frame) <= 1e-9
        bounds.append(smoothness_bound(frame))
    assert bounds[1] <= 1.5 * bounds[0]
    assert bounds[0] <= 1.5 * bounds[1]


def test_smoothing_a_smooth_frame_changes_nothing():
    family = family_for(mathieu(1.0), (32,), 0, 1)
    frame = construct_frame(family)
    again = construct_frame(dataclasses.replace(family, columns=frame.columns))
    assert np.allclose(again.columns, frame.columns, atol=1e-10)


@pytest.fixture
def mathieu_split():
    model = mathieu(1.0)
    grid = KGrid(lattice=model.lattice, shape=(32,))
    full = solve_bands(model, grid, model.dim)
    window = BandWindow(first=0, count=1)
    return projector_family(full, window), complement_family(full, window)


def test_intertwiner_conjugates_to_origin(mathieu_split):
    family_p, family_q = mathieu_split
    frame_p = construct_frame(family_p)
    frame_q = construct_frame(family_q)
    intertwiner = build_intertwiner(frame_p, frame_q)
    assert intertwiner.unitaries.shape == (32, 11, 11)
    assert intertwiner.intertwining_residual <= 1e-9
    assert intertwiner.equivariance_defect <= 1e-8
    assert intertwiner.unitarity_defect <= 1e-10


def test_intertwiner_needs_complementary_ranks(mathieu_split):
    frame_p = construct_frame(mathieu_split[0])
    with pytest.raises(DimensionMismatch):
        build_intertwiner(frame_p, frame_p)

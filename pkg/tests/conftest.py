import json
import math
import os
import sys

import pytest

# Add the project root directory to the Python path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.lattice import KGrid, make_lattice
from src.models import SchrodingerPW, make_basis, make_explicit, make_potential
from src.spectral import BandWindow, projector_family, solve_bands

TWO_PI = 2.0 * math.pi
CONFIG_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'configs'))


def mathieu(v: float, cutoff: float = 12.5, period: float = TWO_PI) -> SchrodingerPW:
    """1D model with V(x) = 2 v cos(2 pi x / period)."""
    lattice = make_lattice([[period]])
    return SchrodingerPW(basis=make_basis(lattice, cutoff), potential=make_potential([([1], v), ([-1], v)], 1))


def family_for(model, shape, first: int, count: int, solved: int | None = None):
    grid = KGrid(lattice=model.lattice, shape=tuple(shape))
    solved = solved if solved is not None else min(first + count + 1, model.dim)
    bands = solve_bands(model, grid, solved)
    return projector_family(bands, BandWindow(first=first, count=count))


def qwz_family(u: float, size: int = 32):
    model = make_explicit(make_lattice([[1.0, 0.0], [0.0, 1.0]]), "qwz", {"u": u})
    return family_for(model, (size, size), 0, 1, solved=2)


@pytest.fixture
def unit_lattice_1d():
    return make_lattice([[1.0]])


@pytest.fixture
def free_1d():
    """V = 0 with gamma = 1, cutoff keeping m in {-1, 0, 1}."""
    lattice = make_lattice([[1.0]])
    return SchrodingerPW(basis=make_basis(lattice, 20.0), potential=make_potential([], 1))


@pytest.fixture
def mathieu_model():
    return mathieu


@pytest.fixture
def square_potential_2d():
    """Time-reversal symmetric 2D family with V(+-e1) = V(+-e2) = 1 on the unit square lattice."""
    lattice = make_lattice([[1.0, 0.0], [0.0, 1.0]])
    entries = [([1, 0], 1.0), ([-1, 0], 1.0), ([0, 1], 1.0), ([0, -1], 1.0)]
    return SchrodingerPW(basis=make_basis(lattice, 850.0), potential=make_potential(entries, 2))


@pytest.fixture
def write_config(tmp_path):
    """Writes a config dict (or a named file from configs/ with overrides) and returns its path."""
    def _write(data=None, name=None, **overrides):
        if name is not None:
            with open(os.path.join(CONFIG_DIR, name), encoding="utf-8") as handle:
                data = json.load(handle)
        data = {**data, **overrides}
        if "output" not in overrides:
            data["output"] = str(tmp_path / "runs")
        path = tmp_path / f"config_{len(list(tmp_path.glob('config_*.json')))}.json"
        path.write_text(json.dumps(data), encoding="utf-8")
        return path
    return _write

"""
Funciones de Wannier a partir de marcos y los diagnósticos de localización.

Una columna del marco se lee como la función periódica
phi(k, y) = sum_G c_G(k) e^{i G.y} / sqrt(|Y|) y se resintetiza como
w(x) = (1 / N_k) sum_k e^{i k.x} phi(k, [x]) sobre una grilla en espacio real
de ``cells`` celdas por eje con ``resolution`` puntos por celda.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from src.errors import ConfigError, NotApplicable
from src.lattice import Lattice, fractional_cells, reduce_to_domain
from src.models import SchrodingerPW

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class WannierFunction:
    lattice: Lattice
    band_index: int
    cells: int
    resolution: int
    fractional: np.ndarray
    samples: np.ndarray
    norm: float

    @property
    def positions(self) -> np.ndarray:
        return self.lattice.to_cartesian(self.fractional)


@dataclass
class DecayProfile:
    peak_cell: tuple[int, ...]
    distances: np.ndarray
    shell_maxima: np.ndarray
    envelope: np.ndarray
    slope: float


def _plane_wave_model(frame) -> SchrodingerPW:
    model = frame.family.model if frame.family is not None else None
    if not isinstance(model, SchrodingerPW):
        variant = getattr(model, "variant", "unknown")
        raise NotApplicable(f"la síntesis de Wannier necesita un modelo escalar de ondas planas, se recibió la variante '{variant}'",
                            variant=variant)
    return model


def sample_grid(lattice: Lattice, cells: int, resolution: int) -> np.ndarray:
    """Coordenadas fraccionarias -R/2 + i/r, i = 0 .. R r - 1 en cada eje (orden C)"""
    axis = -cells / 2.0 + np.arange(cells * resolution) / resolution
    mesh = np.meshgrid(*([axis] * lattice.dim), indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, lattice.dim)


def _periodic_part(model: SchrodingerPW, fractional: np.ndarray) -> np.ndarray:
    """e^{i G.[x]} / sqrt(|Y|) para cada muestra y onda plana"""
    lattice = model.lattice
    remainder = fractional - fractional_cells(fractional)
    reduced = lattice.to_cartesian(remainder)
    return np.exp(1j * reduced @ model.basis.g_vectors.T) / np.sqrt(lattice.cell_volume)


def _k_term(k: np.ndarray, columns: np.ndarray, positions: np.ndarray, periodic: np.ndarray) -> np.ndarray:
    return np.exp(1j * positions @ k)[:, None] * (periodic @ columns)


def wannier_from_frame(frame, cells: int, resolution: int, workers: int = 1) -> list[WannierFunction]:
    """
    Una función de Wannier por columna del marco.

    Raises:
        NotApplicable: el marco no viene de un modelo escalar de ondas planas.
        ConfigError: cells o resolution menores que 1.
    """
    model = _plane_wave_model(frame)
    if cells < 1 or resolution < 1:
        raise ConfigError(f"cells y resolution deben ser >= 1, se recibió {cells} y {resolution}",
                          location="options.wannier")
    lattice = model.lattice
    grid = frame.grid
    fractional = sample_grid(lattice, cells, resolution)
    positions = lattice.to_cartesian(fractional)
    periodic = _periodic_part(model, fractional)
    logger.info(f"Síntesis de Wannier: {frame.rank} funciones, {len(positions)} muestras, {grid.size} puntos k")
    terms = Parallel(n_jobs=workers, prefer="threads")(
        delayed(_k_term)(grid.points[p], frame.columns[p], positions, periodic) for p in range(grid.size)
    )
    total = np.zeros((len(positions), frame.rank), dtype=complex)
    for term in terms:
        total += term
    total /= grid.size
    weight = lattice.cell_volume / resolution ** lattice.dim
    functions = []
    for a in range(frame.rank):
        norm = float(np.sum(np.abs(total[:, a]) ** 2) * weight)
        if abs(norm - 1.0) > 0.02:
            logger.warning(f"La función de Wannier {a} tiene norma discreta {norm:.4f}; agrandar cells o resolution")
        functions.append(WannierFunction(lattice=lattice, band_index=a, cells=cells, resolution=resolution,
                                         fractional=fractional, samples=total[:, a].copy(), norm=norm))
    return functions


def evaluate_bloch(frame, a: int, index, x_samples) -> np.ndarray:
    """psi(k, x) = e^{i k.x} phi_a(k, [x]) en el punto de grilla con ``index`` centrado (posiblemente sin reducir)"""
    model = _plane_wave_model(frame)
    lattice = model.lattice
    x_samples = np.atleast_2d(np.asarray(x_samples, dtype=float))
    k = frame.grid.k_point(index)
    coefficients = frame.columns_at(index)[:, a]
    values = np.empty(len(x_samples), dtype=complex)
    for i, x in enumerate(x_samples):
        _, reduced = reduce_to_domain(x, lattice)
        periodic = np.exp(1j * model.basis.g_vectors @ reduced) @ coefficients / np.sqrt(lattice.cell_volume)
        values[i] = np.exp(1j * k @ x) * periodic
    return values


def decay_profile(w: WannierFunction) -> DecayProfile:
    """
    Máximos de |w| por capa según la distancia de Chebyshev en celdas desde la
    celda del pico, la envolvente no creciente y su pendiente logarítmica por
    celda ajustada por mínimos cuadrados.
    """
    if w.cells < 3:
        raise ConfigError(f"el perfil de decaimiento necesita al menos 3 celdas, se recibió {w.cells}", location="options.wannier.cells")
    magnitude = np.abs(w.samples)
    cells = fractional_cells(w.fractional)
    peak = cells[int(np.argmax(magnitude))]
    distance = np.max(np.abs(cells - peak[None, :]), axis=1)
    distances = np.arange(int(distance.max()) + 1)
    shell_maxima = np.array([magnitude[distance == D].max() for D in distances])
    envelope = np.maximum.accumulate(shell_maxima[::-1])[::-1]
    usable = envelope > 0
    slope = float(np.polyfit(distances[usable], np.log(envelope[usable]), 1)[0]) if usable.sum() >= 2 else 0.0
    logger.info(f"Perfil de decaimiento de la banda {w.band_index}: celda del pico {peak.tolist()}, pendiente {slope:.3f} por celda")
    return DecayProfile(peak_cell=tuple(int(c) for c in peak), distances=distances, shell_maxima=shell_maxima,
                        envelope=envelope, slope=slope)


def centre_cell(w: WannierFunction) -> tuple[int, ...]:
    peak = fractional_cells(w.fractional[int(np.argmax(np.abs(w.samples)))])
    return tuple(int(c) for c in np.atleast_1d(peak))


def wannier_to_frame(w: WannierFunction) -> pd.DataFrame:
    positions = w.positions
    data = {f"x{j + 1}": positions[:, j] for j in range(w.lattice.dim)}
    data["re"] = w.samples.real
    data["im"] = w.samples.imag
    return pd.DataFrame(data)


def decay_to_dict(profile: DecayProfile) -> dict:
    return {
        "peak_cell": list(profile.peak_cell),
        "distances": profile.distances.tolist(),
        "shell_maxima": profile.shell_maxima.tolist(),
        "envelope": profile.envelope.tolist(),
        "slope": profile.slope,
    }

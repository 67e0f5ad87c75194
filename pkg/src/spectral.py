"""
Autovalores sobre grillas en k, ventanas de bandas y chequeo de gaps, familias
de proyectores y el transporte de Nagy entre proyectores cercanos.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.linalg import LinAlgError, eigh, polar

from src.errors import ConfigError, EigensolverFailure, GapClosed, ProjectorsTooFar, WindowTruncation
from src.lattice import KGrid
from src.models import ExplicitFamily, ModelSpec, ShiftAction, assemble_fiber, shift_action

logger = logging.getLogger(__name__)

GAP_TOLERANCE = 1e-8
DEGENERACY_TOLERANCE = 1e-9
NAGY_THRESHOLD = 0.99
# Norma residual mínima para que un vector coordenado genere un vector de base de un cluster degenerado
GAUGE_PICK_TOLERANCE = 1e-3


@dataclass(frozen=True)
class BandWindow:
    first: int
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError(f"window.count debe ser >= 1, se recibió {self.count}", location="window.count")
        if self.first < 0:
            raise ConfigError(f"window.first debe ser >= 0, se recibió {self.first}", location="window.first")

    @property
    def stop(self) -> int:
        return self.first + self.count


@dataclass(eq=False)
class BandStructure:
    """Autopares más bajos por punto de grilla; la columna j guarda la banda cruda ``offset + j``"""

    grid: KGrid
    model: ModelSpec
    energies: np.ndarray
    vectors: np.ndarray
    offset: int = 0

    @property
    def count(self) -> int:
        return self.energies.shape[1]


def _coordinate_basis(span: np.ndarray) -> np.ndarray:
    """Base ortonormal de span(span) armada con vectores coordenados proyectados, en orden de índice"""
    rank = span.shape[1]
    picked: list[np.ndarray] = []
    for i in range(span.shape[0]):
        candidate = span @ np.conj(span[i])
        for _ in range(2):
            for vector in picked:
                candidate = candidate - vector * (np.conj(vector) @ candidate)
        norm = np.linalg.norm(candidate)
        if norm > GAUGE_PICK_TOLERANCE:
            picked.append(candidate / norm)
            if len(picked) == rank:
                break
    return np.column_stack(picked)


def fix_gauge(energies: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """
    Gauge determinista de autovectores: cada cluster degenerado se reconstruye
    desde vectores coordenados en orden de índice y después cada columna se rota
    para que su componente de mayor módulo sea real positiva.
    """
    vectors = np.array(vectors, dtype=complex)
    count = len(energies)
    start = 0
    while start < count:
        stop = start + 1
        while stop < count and energies[stop] - energies[stop - 1] < DEGENERACY_TOLERANCE * max(1.0, abs(energies[stop - 1])):
            stop += 1
        if stop - start > 1:
            vectors[:, start:stop] = _coordinate_basis(vectors[:, start:stop])
        start = stop
    pivots = np.argmax(np.abs(vectors), axis=0)
    phases = vectors[pivots, np.arange(count)]
    return vectors * (np.abs(phases) / phases)[None, :]


def solve_point(model: ModelSpec, k, lo: int, hi: int, index=None) -> tuple[np.ndarray, np.ndarray]:
    """Autopares lo..hi (inclusive, ascendentes) de H(k) en el gauge determinista"""
    try:
        hamiltonian = assemble_fiber(model, k)
        if lo == 0 and hi == hamiltonian.shape[0] - 1:
            energies, vectors = eigh(hamiltonian)
        else:
            energies, vectors = eigh(hamiltonian, subset_by_index=[lo, hi])
    except (LinAlgError, ValueError) as e:
        raise EigensolverFailure(f"falló el cálculo de autovalores en k={np.round(k, 12).tolist()}: {e}",
                                 k=np.asarray(k), index=index) from e
    return energies, fix_gauge(energies, vectors)


def solve_bands(model: ModelSpec, grid: KGrid, count: int, workers: int = 1, offset: int = 0) -> BandStructure:
    """
    Autopares offset .. offset + count - 1 en cada punto de la grilla.

    Args:
        workers: cantidad de threads de joblib; los resultados se reordenan por índice de grilla.
    """
    if count < 1 or offset + count > model.dim:
        raise ConfigError(f"no se pueden resolver las bandas {offset}..{offset + count - 1} de una fibra de dimensión {model.dim}",
                          location="options.count")
    logger.info(f"Resolviendo {count} bandas en una grilla {grid.shape} (dim={model.dim}, workers={workers})")
    results = Parallel(n_jobs=workers, prefer="threads")(
        delayed(solve_point)(model, grid.points[p], offset, offset + count - 1, p) for p in range(grid.size)
    )
    energies = np.array([r[0] for r in results])
    vectors = np.array([r[1] for r in results])
    return BandStructure(grid=grid, model=model, energies=energies, vectors=vectors, offset=offset)


def solve_path(model: ModelSpec, kpoints: np.ndarray, count: int) -> np.ndarray:
    """Energías de las ``count`` bandas más bajas sobre una lista arbitraria de vectores k"""
    return np.array([solve_point(model, k, 0, count - 1, i)[0] for i, k in enumerate(kpoints)])


def verify_gap(bands: BandStructure, window: BandWindow) -> float:
    """
    Distancia mínima entre la ventana y las bandas vecinas sobre la grilla.

    Raises:
        WindowTruncation: la ventana necesita bandas que no se resolvieron.
        GapClosed: el gap es a lo sumo GAP_TOLERANCE en algún punto.
    """
    if window.stop > bands.count:
        raise WindowTruncation(f"la ventana {window.first}..{window.stop - 1} excede las {bands.count} bandas resueltas",
                               window=[window.first, window.count], solved=bands.count)
    top_of_space = bands.offset + bands.count == bands.model.dim and isinstance(bands.model, ExplicitFamily)
    if window.stop == bands.count and not top_of_space:
        raise WindowTruncation("la ventana llega al tope de las bandas resueltas; resolver al menos una banda más",
                               window=[window.first, window.count], solved=bands.count)
    energies = bands.energies
    gaps = np.full(bands.grid.size, np.inf)
    if window.first > 0:
        gaps = np.minimum(gaps, energies[:, window.first] - energies[:, window.first - 1])
    if window.stop < bands.count:
        gaps = np.minimum(gaps, energies[:, window.stop] - energies[:, window.stop - 1])
    worst = int(np.argmin(gaps))
    gap = float(gaps[worst])
    if gap <= GAP_TOLERANCE:
        k = bands.grid.points[worst]
        raise GapClosed(f"gap {gap:.3e} en k={np.round(k, 12).tolist()}", k=k,
                        index=bands.grid.multi_index(worst), value=gap)
    logger.info(f"Gap de la ventana ({window.first}, {window.count}): {gap:.6g}")
    return gap


@dataclass(eq=False)
class ProjectorFamily:
    """Columnas ortonormales Phi(k) con P(k) = Phi(k) Phi(k)^dagger en cada punto de la grilla"""

    grid: KGrid
    window: BandWindow
    columns: np.ndarray
    gap: float
    action: ShiftAction = field(default_factory=ShiftAction)
    model: ModelSpec | None = None
    complement: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return self.columns.shape[2]

    @property
    def dim(self) -> int:
        return self.columns.shape[1]

    def columns_at(self, index) -> np.ndarray:
        """Columnas en un multi-índice centrado, posiblemente sin reducir, llevadas por la acción de corrimiento"""
        stored, wraps = self.grid.wrap(index)
        return self.action.wrap(self.columns[self.grid.flat_index(stored)], wraps)

    def neighbor(self, flat: int, axis: int, step: int = 1) -> np.ndarray:
        index = np.array(self.grid.indices[flat])
        index[axis] += step
        return self.columns_at(index)

    def materialize(self, flat: int) -> np.ndarray:
        return materialize(self.columns[flat])


def projector_family(bands: BandStructure, window: BandWindow) -> ProjectorFamily:
    gap = verify_gap(bands, window)
    columns = bands.vectors[:, :, window.first:window.stop]
    return ProjectorFamily(grid=bands.grid, window=window, columns=columns, gap=gap,
                           action=shift_action(bands.model), model=bands.model)


def complement_family(bands: BandStructure, window: BandWindow) -> ProjectorFamily:
    """Familia de Q(k) = 1 - P(k) a partir de una resolución completa"""
    if bands.offset != 0 or bands.count != bands.model.dim:
        raise ConfigError("la familia complemento necesita todas las bandas resueltas", location="options.intertwiner")
    keep = [j for j in range(bands.count) if not window.first <= j < window.stop]
    gap = verify_gap(bands, window) if window.stop < bands.count else float("inf")
    return ProjectorFamily(grid=bands.grid, window=window, columns=bands.vectors[:, :, keep], gap=gap,
                           action=shift_action(bands.model), model=bands.model, complement=True)


def materialize(columns: np.ndarray) -> np.ndarray:
    return columns @ columns.conj().T


def projector_distance(columns_a: np.ndarray, columns_b: np.ndarray) -> float:
    """Norma de operador de P_a - P_b para columnas ortonormales, desde el residuo de proyectar una sobre la otra"""
    if columns_a.shape[1] != columns_b.shape[1]:
        return float(np.linalg.norm(materialize(columns_a) - materialize(columns_b), 2))
    if columns_a.shape[1] == 0:
        return 0.0
    # ||(1 - P_b) P_a|| coincide con ||P_a - P_b|| si los rangos son iguales
    residual = columns_a - columns_b @ (columns_b.conj().T @ columns_a)
    return float(np.linalg.norm(residual, 2))


def _refinement(distance: float) -> int:
    return max(2, math.ceil(distance / 0.5))


def nagy_transport(p_from: np.ndarray, p_to: np.ndarray) -> np.ndarray:
    """
    Unitario W con W P_from W^dagger = P_to:
    W = (1 - (P_to - P_from)^2)^(-1/2) [P_to P_from + (1 - P_to)(1 - P_from)].

    Raises:
        ProjectorsTooFar: ||P_to - P_from|| >= NAGY_THRESHOLD.
    """
    p_from = np.asarray(p_from, dtype=complex)
    p_to = np.asarray(p_to, dtype=complex)
    difference = p_to - p_from
    distance = float(np.linalg.norm(difference, 2)) if difference.size else 0.0
    if distance >= NAGY_THRESHOLD:
        raise ProjectorsTooFar(f"la distancia entre proyectores {distance:.4f} supera {NAGY_THRESHOLD}",
                               distance=distance, refine_by=_refinement(distance))
    identity = np.eye(p_from.shape[0])
    weights, vectors = eigh(identity - difference @ difference)
    inverse_root = (vectors / np.sqrt(weights)[None, :]) @ vectors.conj().T
    return inverse_root @ (p_to @ p_from + (identity - p_to) @ (identity - p_from))


def transport_step(frame: np.ndarray, target: np.ndarray, segment=None) -> np.ndarray:
    """
    Transporte de Nagy de un marco ortonormal sobre el span de ``target``, es
    decir W Phi = Psi polar(Psi^dagger Phi); el factor polar también reortonormaliza.
    """
    if frame.shape[1] == 0:
        return target[:, :0]
    distance = projector_distance(frame, target)
    if distance >= NAGY_THRESHOLD:
        raise ProjectorsTooFar(f"la distancia entre proyectores {distance:.4f} supera {NAGY_THRESHOLD} en el segmento {segment}",
                               distance=distance, segment=segment, refine_by=_refinement(distance))
    unitary, _ = polar(target.conj().T @ frame)
    return target @ unitary


def bands_to_frame(bands: BandStructure, labels=None) -> pd.DataFrame:
    """Una fila por punto de grilla: componentes de k y después energías"""
    dim = bands.grid.dim
    labels = list(labels) if labels is not None else [bands.offset + j for j in range(bands.count)]
    data = {f"k{j + 1}": bands.grid.points[:, j] for j in range(dim)}
    for column, label in enumerate(labels):
        data[f"E{label}"] = bands.energies[:, column]
    return pd.DataFrame(data)

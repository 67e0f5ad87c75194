"""
Piezas propias de Dirac: el antiunitario T = -i (1 (x) alpha_1 alpha_3) C, el
etiquetado entero de bandas de un espectro no acotado inferiormente, el
apareamiento de Kramers y las familias de proyectores de pares de bandas de
Bloch-Dirac.

Con las matrices alpha en bloques de Pauli usadas acá, T al cuadrado da -1
(alpha_1 y alpha_3 son reales y anticonmutan). El apareamiento de Kramers sale
del producto de T con la reflexión G -> -G, que conmuta con H_D(k) cuando
V(-G) = V(G).
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from src.errors import ConfigError, SymmetryViolation, WindowTruncation, WrongSpinDimension
from src.lattice import KGrid
from src.models import ALPHA, DiracPW, PlaneWaveBasis, Potential, assemble_fiber, conjugate, shift_action
from src.spectral import (BandStructure, BandWindow, ProjectorFamily, projector_distance, projector_family,
                          solve_bands, solve_point)

logger = logging.getLogger(__name__)

T_SPINOR = -1j * ALPHA[0] @ ALPHA[2]
REFLECTION_TOLERANCE = 1e-13
KRAMERS_TOLERANCE = 1e-8


def _require_dirac_basis(basis: PlaneWaveBasis):
    if basis.spin_components != 4:
        raise WrongSpinDimension(f"T actúa sobre spinores de 4 componentes, la base tiene {basis.spin_components}",
                                 spin_components=basis.spin_components)


def time_reversal_T(basis: PlaneWaveBasis, coefficients: np.ndarray) -> np.ndarray:
    """Aplica T por columnas: conjugación en espacio de posiciones y después -i alpha_1 alpha_3 en cada spinor"""
    _require_dirac_basis(basis)
    conjugated = conjugate(basis, coefficients)
    blocks = conjugated.reshape((basis.size, 4) + conjugated.shape[1:])
    return np.einsum("ab,gb...->ga...", T_SPINOR, blocks).reshape(conjugated.shape)


def time_reversal_matrix(basis: PlaneWaveBasis) -> np.ndarray:
    """Unitario U con T v = U conj(v)"""
    _require_dirac_basis(basis)
    return time_reversal_T(basis, np.eye(basis.dim, dtype=complex))


def t_squared_check(basis: PlaneWaveBasis, seed: int = 0) -> dict:
    """Signo s con T^2 = s y el residuo ||T^2 v - s v|| sobre un vector aleatorio"""
    rng = np.random.default_rng(seed)
    vector = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    twice = time_reversal_T(basis, time_reversal_T(basis, vector))
    sign = -1 if np.linalg.norm(twice + vector) < np.linalg.norm(twice - vector) else 1
    return {"t_squared": sign, "defect": float(np.linalg.norm(twice - sign * vector))}


def commutation_defect(model: DiracPW, k) -> float:
    """||H_D(k) T - T H_D(-k)|| como norma de operador de H(k) U - U conj(H(-k))"""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    unitary = time_reversal_matrix(model.basis)
    return float(np.linalg.norm(assemble_fiber(model, k) @ unitary
                                - unitary @ np.conj(assemble_fiber(model, -k)), 2))


def parity_check(potential: Potential, tol: float = REFLECTION_TOLERANCE):
    """Lanza SymmetryViolation salvo que V(-G) = V(G) para cada coeficiente"""
    for m, value in potential.coefficients.items():
        partner = potential.value(tuple(-c for c in m))
        if abs(partner - value) > tol:
            raise SymmetryViolation(f"el potencial no es simétrico ante reflexión: V({list(m)}) = {value}, "
                                    f"V({[-c for c in m]}) = {partner}", m=list(m), value=value, partner=partner)


@dataclass(eq=False)
class DiracLabelling:
    """
    Bandas con etiquetas -count .. count - 1; la etiqueta 0 es el menor autovalor
    positivo en k = 0 y está en la columna ``index_offset``. ``raw_offset`` es el
    índice de autovalor de la columna 0 en el espectro truncado.
    """

    bands: BandStructure
    index_offset: int
    raw_offset: int
    tracking_defect: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def labels(self) -> list[int]:
        return [j - self.index_offset for j in range(self.bands.count)]

    def column(self, label: int) -> int:
        return label + self.index_offset


def _block(energies: np.ndarray, start: int, stop: int, tol: float) -> tuple[int, int]:
    """Extiende [start, stop) sobre los autovalores degenerados con sus extremos"""
    while start > 0 and energies[start] - energies[start - 1] <= tol:
        start -= 1
    while stop < len(energies) and energies[stop] - energies[stop - 1] <= tol:
        stop += 1
    return start, stop


def _tracking_defect(bands: BandStructure, tol: float = KRAMERS_TOLERANCE) -> float:
    """
    Mayor seno del ángulo entre un cluster interior en k y las mismas columnas
    en cada vecino de la grilla, extendidas ahí a sus compañeros degenerados.
    Los clusters que tocan algún extremo de la ventana se saltean, de los dos lados.
    """
    grid = bands.grid
    count = bands.count
    action = shift_action(bands.model)
    defect = 0.0
    for p in range(grid.size):
        for start, stop in _clusters(bands.energies[p], tol):
            if start == 0 or stop == count:
                continue
            cluster = bands.vectors[p][:, start:stop]
            for axis in range(grid.dim):
                for step in (1, -1):
                    neighbour, wraps = grid.neighbor(p, axis, step)
                    lo, hi = _block(bands.energies[neighbour], start, stop, tol)
                    if lo == 0 or hi == count:
                        continue
                    block = action.wrap(bands.vectors[neighbour][:, lo:hi], wraps)
                    residual = cluster - block @ (block.conj().T @ cluster)
                    defect = max(defect, float(np.linalg.norm(residual, 2)))
    return defect


def dirac_labelling(model: DiracPW, grid: KGrid, count: int, workers: int = 1) -> DiracLabelling:
    """
    Se queda con los 2 * count autovalores alrededor de cero en cada punto de la
    grilla, anclados en k = 0 en el menor autovalor positivo.

    Raises:
        WindowTruncation: la ventana llega al menor o al mayor autovalor del truncamiento.
    """
    if not isinstance(model, DiracPW):
        raise ConfigError(f"el etiquetado necesita un modelo de Dirac, se recibió '{model.variant}'", location="model.variant")
    if count < 1:
        raise ConfigError(f"el semiancho del etiquetado debe ser >= 1, se recibió {count}", location="window.count")
    energies, _ = solve_point(model, np.zeros(grid.dim), 0, model.dim - 1)
    anchor = int(np.sum(energies <= 0.0))
    lo, hi = anchor - count, anchor + count - 1
    if lo <= 0 or hi >= model.dim - 1:
        raise WindowTruncation(f"las etiquetas {-count}..{count - 1} llegan al borde del espectro truncado "
                               f"(crudo {lo}..{hi} de {model.dim}); subir el cutoff",
                               raw_window=[lo, hi], dim=model.dim)
    bands = solve_bands(model, grid, 2 * count, workers=workers, offset=lo)
    tracking = _tracking_defect(bands)
    logger.info(f"Etiquetado de Dirac: índice crudo de anclaje {anchor}, E_0(0) = {energies[anchor]:.6g}, "
                f"defecto de seguimiento {tracking:.2e}")
    return DiracLabelling(bands=bands, index_offset=count, raw_offset=lo, tracking_defect=tracking)


def labelling_periodicity_defect(labelling: DiracLabelling, workers: int = 1) -> float:
    """max |E_n(k + gamma*_j) - E_n(k)| sobre puntos de grilla y ejes, con los mismos índices crudos"""
    bands = labelling.bands
    grid = bands.grid
    lo, hi = labelling.raw_offset, labelling.raw_offset + bands.count - 1
    tasks = [(p, axis) for p in range(grid.size) for axis in range(grid.dim)]
    shifted = Parallel(n_jobs=workers, prefer="threads")(
        delayed(solve_point)(bands.model, grid.points[p] + grid.lattice.dual_generators[axis], lo, hi, p)
        for p, axis in tasks
    )
    return max(float(np.max(np.abs(result[0] - bands.energies[p]))) for (p, _), result in zip(tasks, shifted))


def _clusters(energies: np.ndarray, tol: float) -> list[tuple[int, int]]:
    clusters, start = [], 0
    for j in range(1, len(energies) + 1):
        if j == len(energies) or energies[j] - energies[j - 1] > tol:
            clusters.append((start, j))
            start = j
    return clusters


def kramers_check(model: DiracPW, grid: KGrid, count: int, tol: float = KRAMERS_TOLERANCE,
                  workers: int = 1) -> dict:
    """
    Apareamiento de los autovalores etiquetados en cada punto de la grilla.

    Raises:
        SymmetryViolation: el potencial no es simétrico ante reflexión.
    """
    parity_check(model.potential)
    labelling = dirac_labelling(model, grid, count, workers)
    bands = labelling.bands
    first_pair = labelling.raw_offset % 2
    pairing = 0.0
    odd_clusters = []
    for p in range(grid.size):
        energies = bands.energies[p]
        for j in range(first_pair, bands.count - 1, 2):
            pairing = max(pairing, float(energies[j + 1] - energies[j]))
        for start, stop in _clusters(energies, tol):
            if start == 0 or stop == bands.count:
                continue
            if (stop - start) % 2:
                odd_clusters.append({"k": grid.points[p].tolist(), "labels": [start - labelling.index_offset,
                                                                             stop - 1 - labelling.index_offset],
                                     "energies": energies[start:stop].tolist()})
    logger.info(f"Chequeo de Kramers en {grid.size} puntos: defecto de apareamiento {pairing:.2e}, "
                f"{len(odd_clusters)} clusters impares")
    return {
        "pairing_defect": pairing,
        "tolerance": tol,
        "paired": pairing <= tol and not odd_clusters,
        "odd_clusters": odd_clusters,
        "points": grid.size,
        "labels": [labelling.labels[0], labelling.labels[-1]],
        "tracking_defect": labelling.tracking_defect,
    }


def t_symmetry_defect(family: ProjectorFamily) -> float:
    """max_k ||P(-k) - T P(k) T^-1||; -k se resuelve directamente cuando no es un punto guardado"""
    model, grid = family.model, family.grid
    basis = model.basis
    lo = family.diagnostics["raw_offset"] + family.window.first
    hi = lo + family.rank - 1
    defect = 0.0
    for p in range(grid.size):
        index = -np.array(grid.indices[p])
        stored, wraps = grid.wrap(index)
        if any(wraps):
            _, opposite = solve_point(model, -grid.points[p], lo, hi, p)
        else:
            opposite = family.columns[grid.flat_index(stored)]
        defect = max(defect, projector_distance(opposite, time_reversal_T(basis, family.columns[p])))
    return defect


def dirac_projector_family(model: DiracPW, grid: KGrid, window: BandWindow | tuple[int, int],
                           workers: int = 1) -> ProjectorFamily:
    """
    Familia de proyectores de las bandas etiquetadas ``first .. first + count - 1``
    (son etiquetas: 0 es la banda positiva más baja y se admiten etiquetas negativas).
    """
    first, count = (window.first, window.count) if isinstance(window, BandWindow) else window
    if count < 1:
        raise ConfigError(f"window.count debe ser >= 1, se recibió {count}", location="window.count")
    half_width = max(abs(first), abs(first + count)) + 1
    labelling = dirac_labelling(model, grid, half_width, workers)
    symmetric = model.potential.is_reflection_symmetric(REFLECTION_TOLERANCE)
    if symmetric and count % 2:
        logger.warning(f"Una ventana impar de {count} bandas con simetría de reflexión parte un par de Kramers")
    family = projector_family(labelling.bands, BandWindow(first=labelling.column(first), count=count))
    family.diagnostics["labels"] = [first, first + count - 1]
    family.diagnostics["raw_offset"] = labelling.raw_offset
    family.diagnostics["tracking_defect"] = labelling.tracking_defect
    family.diagnostics["t_symmetry_defect"] = t_symmetry_defect(family)
    logger.info(f"Familia de Dirac con etiquetas {first}..{first + count - 1}: gap {family.gap:.6g}, "
                f"defecto de simetría T {family.diagnostics['t_symmetry_defect']:.2e}")
    return family

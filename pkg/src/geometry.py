"""
Conexión de Berry, curvatura Omega_ij = Tr(P [d_i P, d_j P]), números de Chern
sobre los 2-ciclos coordenados y los chequeos de inversión temporal.

La curvatura solo necesita solapamientos m x m: Tr(P_a P_b P_c) = tr(O_ab O_bc O_ca)
con O_ab = Phi_a^dagger Phi_b, así que nunca se materializa un proyector.
Las derivadas se toman sobre el vector unitario de gamma*_j con el paso de
grilla |gamma*_j| / N_j.

Orientación: Theta_{j,l} (j < l) se orienta con (e_j, e_l) y
c_jl = (i / 2 pi) * integral de Omega_jl. La forma por plaquetas del mismo
número es -(1 / 2 pi) sum Arg det(O_ab O_bc O_cd O_da) con a -> b sobre e_j.
Con esta convención la banda inferior de qwz en u = 1 tiene c = -1.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.linalg import polar

from src.errors import ConfigError, FrameNotOrthonormal, PlaquetteSingular
from src.lattice import KGrid
from src.spectral import ProjectorFamily, projector_distance

logger = logging.getLogger(__name__)

STENCILS = {
    2: {-1: -0.5, 1: 0.5},
    4: {-2: 1.0 / 12.0, -1: -2.0 / 3.0, 1: 2.0 / 3.0, 2: -1.0 / 12.0},
}
SINGULAR_OVERLAP = 1e-10
INTEGER_ACCEPTANCE = 0.01
FRAME_TOLERANCE = 1e-8


def _stencil(order: int) -> dict:
    if order not in STENCILS:
        raise ConfigError(f"el orden del stencil debe ser 2 o 4, se recibió {order}", location="options.stencil_order")
    return STENCILS[order]


@dataclass
class BerryConnectionSample:
    index: int
    components: np.ndarray
    antihermitian_defect: float


@dataclass(eq=False)
class CurvatureField:
    grid: KGrid
    omega: np.ndarray


@dataclass
class ChernPair:
    j: int
    l: int
    chern: int
    plaquette_sum: float
    riemann: float

    @property
    def defect(self) -> float:
        return abs(self.plaquette_sum - self.chern)


@dataclass
class ChernReport:
    pairs: list[ChernPair] = field(default_factory=list)
    timereversal_defect: float = 0.0

    def nonzero(self) -> list[ChernPair]:
        return [pair for pair in self.pairs if abs(pair.chern) >= 1]

    def to_dict(self) -> dict:
        return {
            "pairs": [{"j": p.j + 1, "l": p.l + 1, "chern": p.chern, "plaquette_sum": p.plaquette_sum,
                       "riemann": p.riemann, "defect": p.defect} for p in self.pairs],
            "timereversal_defect": self.timereversal_defect,
        }


def _frame_columns(frame) -> np.ndarray:
    return frame.columns if hasattr(frame, "columns") else np.asarray(frame)


def berry_connection(family: ProjectorFamily, frame, stencil_order: int = 2) -> list[BerryConnectionSample]:
    """
    A_i(k) = Phi(k)^dagger d_i Phi(k) por diferencias centradas; los vecinos
    cruzan el borde de la zona con la acción de corrimiento de la familia.

    Raises:
        FrameNotOrthonormal: columnas no ortonormales o que no generan Ran P(k).
    """
    columns = _frame_columns(frame)
    stencil = _stencil(stencil_order)
    grid = family.grid
    identity = np.eye(columns.shape[2])
    for p in range(grid.size):
        error = np.max(np.abs(columns[p].conj().T @ columns[p] - identity))
        if error > FRAME_TOLERANCE:
            raise FrameNotOrthonormal(f"columnas del marco no ortonormales en {grid.multi_index(p)} ({error:.2e})",
                                      index=grid.multi_index(p), defect=error)
        distance = projector_distance(columns[p], family.columns[p])
        if distance > FRAME_TOLERANCE:
            raise FrameNotOrthonormal(f"el marco no genera Ran P en {grid.multi_index(p)} ({distance:.2e})",
                                      index=grid.multi_index(p), defect=distance)
    samples = []
    for p in range(grid.size):
        components = np.empty((grid.dim, columns.shape[2], columns.shape[2]), dtype=complex)
        defect = 0.0
        for axis in range(grid.dim):
            derivative = np.zeros_like(columns[p])
            for step, weight in stencil.items():
                index = np.array(grid.indices[p])
                index[axis] += step
                stored, wraps = grid.wrap(index)
                derivative = derivative + weight * family.action.wrap(columns[grid.flat_index(stored)], wraps)
            raw = columns[p].conj().T @ derivative / grid.steps[axis]
            defect = max(defect, float(np.linalg.norm(raw + raw.conj().T, 2)) / 2.0)
            components[axis] = (raw - raw.conj().T) / 2.0
        samples.append(BerryConnectionSample(index=p, components=components, antihermitian_defect=defect))
    worst = max((s.antihermitian_defect for s in samples), default=0.0)
    logger.info(f"Conexión de Berry en {grid.size} puntos, defecto antihermítico descartado {worst:.2e}")
    return samples


def _curvature_at(family: ProjectorFamily, p: int, stencil: dict, pairs) -> dict:
    center = family.columns[p]
    grid = family.grid
    overlaps = {}
    neighbours = {}
    for axis in {a for pair in pairs for a in pair}:
        for step in stencil:
            columns = family.neighbor(p, axis, step)
            neighbours[(axis, step)] = columns
            overlaps[(axis, step)] = center.conj().T @ columns
    values = {}
    for i, j in pairs:
        total = 0.0
        for s, weight_s in stencil.items():
            for t, weight_t in stencil.items():
                middle = neighbours[(i, s)].conj().T @ neighbours[(j, t)]
                trace = np.trace(overlaps[(i, s)] @ middle @ overlaps[(j, t)].conj().T)
                total += weight_s * weight_t * trace.imag
        values[(i, j)] = 2j * total / (grid.steps[i] * grid.steps[j])
    return values


def curvature(family: ProjectorFamily, stencil_order: int = 2, workers: int = 1) -> CurvatureField:
    """Campo de curvatura libre de gauge a partir de solapamientos de proyectores"""
    stencil = _stencil(stencil_order)
    grid = family.grid
    pairs = [(i, j) for i in range(grid.dim) for j in range(i + 1, grid.dim)]
    omega = np.zeros((grid.size, grid.dim, grid.dim), dtype=complex)
    if pairs:
        results = Parallel(n_jobs=workers, prefer="threads")(
            delayed(_curvature_at)(family, p, stencil, pairs) for p in range(grid.size)
        )
        for p, values in enumerate(results):
            for (i, j), value in values.items():
                omega[p, i, j] = value
                omega[p, j, i] = -value
    return CurvatureField(grid=grid, omega=omega)


def trace_curvature(samples: list[BerryConnectionSample], grid: KGrid, stencil_order: int = 2) -> np.ndarray:
    """tr(omega_A)_ij = d_i tr A_j - d_j tr A_i; el término del conmutador tiene traza nula"""
    stencil = _stencil(stencil_order)
    traces = np.array([[np.trace(sample.components[axis]) for axis in range(grid.dim)] for sample in samples])
    result = np.zeros((grid.size, grid.dim, grid.dim), dtype=complex)
    for p in range(grid.size):
        derivatives = np.zeros((grid.dim, grid.dim), dtype=complex)
        for i in range(grid.dim):
            for step, weight in stencil.items():
                neighbour, _ = grid.neighbor(p, i, step)
                derivatives[i] += weight * traces[neighbour] / grid.steps[i]
        result[p] = derivatives - derivatives.T
    return result


def _plaquette_sum(family: ProjectorFamily, j: int, l: int) -> float:
    grid = family.grid
    total = 0.0
    for nj in range(-grid.shape[j] // 2, grid.shape[j] // 2):
        for nl in range(-grid.shape[l] // 2, grid.shape[l] // 2):
            corner = np.zeros(grid.dim, dtype=int)
            corner[j], corner[l] = nj, nl
            loop = [corner.copy() for _ in range(4)]
            loop[1][j] += 1
            loop[2][j] += 1
            loop[2][l] += 1
            loop[3][l] += 1
            columns = [family.columns_at(index) for index in loop]
            product = np.eye(family.rank, dtype=complex)
            for a in range(4):
                overlap = columns[a].conj().T @ columns[(a + 1) % 4]
                determinant = np.linalg.det(overlap)
                if abs(determinant) < SINGULAR_OVERLAP:
                    raise PlaquetteSingular(f"solapamiento singular (|det|={abs(determinant):.2e}) en la plaqueta "
                                            f"{corner.tolist()} del ciclo ({j + 1},{l + 1}); refinar la grilla",
                                            corner=corner, cycle=[j + 1, l + 1], determinant=abs(determinant))
                product = product @ overlap
            total += float(np.angle(np.linalg.det(product)))
    return -total / (2.0 * math.pi)


def chern_numbers(family: ProjectorFamily, stencil_order: int = 2, field: CurvatureField | None = None,
                  workers: int = 1) -> ChernReport:
    """Número de Chern por plaquetas y estimación de Riemann en cada ciclo Theta_{j,l} (otros índices en 0)"""
    grid = family.grid
    if grid.dim < 2:
        return ChernReport()
    if field is None:
        field = curvature(family, stencil_order, workers)
    report = ChernReport(timereversal_defect=timereversal_defect(field))
    for j in range(grid.dim):
        for l in range(j + 1, grid.dim):
            plaquette_sum = _plaquette_sum(family, j, l)
            chern = int(round(plaquette_sum))
            if abs(plaquette_sum - chern) > INTEGER_ACCEPTANCE:
                raise PlaquetteSingular(f"la suma de plaquetas {plaquette_sum:.4f} en el ciclo ({j + 1},{l + 1}) "
                                        f"no está a menos de {INTEGER_ACCEPTANCE} de un entero",
                                        cycle=[j + 1, l + 1], plaquette_sum=plaquette_sum)
            on_cycle = np.all(np.delete(grid.indices, [j, l], axis=1) == 0, axis=1)
            integral = np.sum(field.omega[on_cycle, j, l]) * grid.steps[j] * grid.steps[l]
            riemann = float((1j * integral / (2.0 * math.pi)).real)
            report.pairs.append(ChernPair(j=j, l=l, chern=chern, plaquette_sum=plaquette_sum, riemann=riemann))
            logger.info(f"Ciclo ({j + 1},{l + 1}): chern={chern} plaquetas={plaquette_sum:.6f} riemann={riemann:.6f}")
    return report


def timereversal_defect(field: CurvatureField) -> float:
    """max_k max_ij |Omega_ij(-k) + Omega_ij(k)|."""
    if field.grid.dim < 2:
        return 0.0
    return float(np.max(np.abs(field.omega[field.grid.negation] + field.omega)))


def wilson_loop_phases(family: ProjectorFamily, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Autofases del producto unitarizado de solapamientos alrededor del ciclo del
    eje, para cada punto transversal de la grilla (índice centrado 0 en ``axis``).

    Returns:
        (índices planos transversales, fases ordenadas de menor a mayor por fila).
    """
    grid = family.grid
    size = grid.shape[axis]
    starts = np.flatnonzero(grid.indices[:, axis] == 0)
    rows = []
    for flat in starts:
        index = np.array(grid.indices[flat])
        holonomy = np.eye(family.rank, dtype=complex)
        previous = family.columns[flat]
        for t in range(1, size + 1):
            index[axis] = t
            current = family.columns_at(index)
            unitary, _ = polar(current.conj().T @ previous)
            holonomy = unitary @ holonomy
            previous = current
        rows.append(np.sort(np.angle(np.linalg.eigvals(holonomy))))
    return starts, np.array(rows)


def curvature_to_frame(field: CurvatureField) -> pd.DataFrame:
    """Filas (componentes de k, i, j, Im Omega_ij) con i < j, ejes desde 1"""
    grid = field.grid
    records = []
    for p in range(grid.size):
        for i in range(grid.dim):
            for j in range(i + 1, grid.dim):
                row = {f"k{a + 1}": grid.points[p, a] for a in range(grid.dim)}
                row.update({"i": i + 1, "j": j + 1, "im_omega": field.omega[p, i, j].imag})
                records.append(row)
    columns = [f"k{a + 1}" for a in range(grid.dim)] + ["i", "j", "im_omega"]
    return pd.DataFrame.from_records(records, columns=columns)

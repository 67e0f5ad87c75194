"""
Marcos suaves tau-equivariantes para una familia de proyectores.

La construcción es inductiva sobre los ejes de la grilla. Partiendo del gauge
del eigensolver en k = 0, los marcos se transportan en paralelo (pasos de Nagy)
alrededor del ciclo de cada eje desde cada punto de la cara ya construida; la
holonomía M = Phi_start^dagger Phi_closure se reparte después sobre el ciclo
multiplicando a derecha por exp(-(t / N) log M). En caras de dimensión >= 1 la
rama del logaritmo se sigue de forma continua sobre la cara y tiene que cerrar
en cada arista; si no, se lanza BranchNotClosed.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import expm, polar, schur
from scipy.optimize import linear_sum_assignment

from src.errors import BranchNotClosed, DimensionMismatch, NoSpectralGap, NotApplicable
from src.geometry import ChernReport, chern_numbers
from src.lattice import KGrid
from src.models import ShiftAction
from src.spectral import ProjectorFamily, materialize, projector_distance, transport_step

logger = logging.getLogger(__name__)

EQUIDISTRIBUTION_TOLERANCE = 1e-12
BRANCH_TOLERANCE = 1e-8
UNITARITY_TOLERANCE = 1e-10


@dataclass(eq=False)
class Frame:
    """
    Columnas ortonormales por punto de grilla. ``closures[axis]`` guarda, para
    cada línea transportada sobre ese eje, las columnas de partida y las que
    alcanza la construcción tras un ciclo completo (expresadas en el punto de partida).
    """

    grid: KGrid
    action: ShiftAction
    columns: np.ndarray
    closures: dict = field(default_factory=dict)
    branch_defect: float = 0.0
    family: ProjectorFamily | None = None

    @classmethod
    def from_columns(cls, grid: KGrid, columns: np.ndarray, action: ShiftAction | None = None,
                     family: ProjectorFamily | None = None) -> "Frame":
        return cls(grid=grid, action=action or ShiftAction(), columns=np.asarray(columns, dtype=complex),
                   family=family)

    @property
    def rank(self) -> int:
        return self.columns.shape[2]

    def columns_at(self, index) -> np.ndarray:
        stored, wraps = self.grid.wrap(index)
        return self.action.wrap(self.columns[self.grid.flat_index(stored)], wraps)

    def rotated(self, unitary: np.ndarray) -> "Frame":
        """El mismo marco con cada bloque de columnas multiplicado a derecha por un unitario constante"""
        closures = {axis: (starts @ unitary, ends @ unitary) for axis, (starts, ends) in self.closures.items()}
        return Frame(grid=self.grid, action=self.action, columns=self.columns @ unitary, closures=closures,
                     branch_defect=self.branch_defect, family=self.family)

    def residuals(self) -> dict:
        residuals = {
            "orthonormality": orthonormality_defect(self),
            "equivariance": equivariance_defect(self),
            "smoothness": smoothness_bound(self),
        }
        if self.family is not None:
            residuals["span"] = span_defect(self, self.family)
        return residuals


@dataclass
class Obstruction:
    chern_report: ChernReport
    message: str


@dataclass
class LineTransport:
    axis: int
    flats: list[int]
    frames: np.ndarray
    closure: np.ndarray


@dataclass
class LogBranch:
    vectors: np.ndarray
    phases: np.ndarray

    @property
    def generator(self) -> np.ndarray:
        generator = (self.vectors * (1j * self.phases)[None, :]) @ self.vectors.conj().T
        return (generator - generator.conj().T) / 2.0


# Logaritmos

def _eigensystem(unitary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    defect = float(np.linalg.norm(unitary.conj().T @ unitary - np.eye(unitary.shape[0]), 2)) if unitary.size else 0.0
    if defect > UNITARITY_TOLERANCE:
        logger.warning(f"La holonomía se aparta de la unitariedad en {defect:.2e}; se usa su factor polar")
        unitary, _ = polar(unitary)
    triangular, vectors = schur(unitary, output="complex")
    return np.angle(np.diag(triangular)), vectors


def _principal_branch(unitary: np.ndarray) -> LogBranch:
    angles, vectors = _eigensystem(unitary)
    size = len(angles)
    if size == 0:
        return LogBranch(vectors=vectors, phases=angles)
    ordered = np.sort(angles)
    gaps = np.diff(np.append(ordered, ordered[0] + 2.0 * math.pi))
    if size >= 2 and np.all(np.abs(gaps - 2.0 * math.pi / size) <= EQUIDISTRIBUTION_TOLERANCE):
        raise NoSpectralGap(f"las autofases de la holonomía {size}x{size} están equidistribuidas; "
                            f"refinar la grilla para moverlas", phases=ordered)
    cut = int(np.flatnonzero(gaps >= gaps.max() - EQUIDISTRIBUTION_TOLERANCE)[0])
    middle = ordered[cut] + gaps[cut] / 2.0
    lower = middle - 2.0 * math.pi
    phases = lower + np.mod(angles - lower, 2.0 * math.pi)
    return LogBranch(vectors=vectors, phases=phases)


def unitary_log(unitary: np.ndarray) -> np.ndarray:
    """
    L antihermítico con exp(L) = M, con las autofases tomadas en la ventana de
    2 pi cuyo corte cae en el medio del mayor hueco entre autofases (en caso de
    empate gana el hueco con menor ángulo inicial).

    Raises:
        NoSpectralGap: m >= 2 y las autofases están equidistribuidas.
    """
    return _principal_branch(np.asarray(unitary, dtype=complex)).generator


def _continue_branch(previous: LogBranch, unitary: np.ndarray) -> LogBranch:
    """Logaritmo de ``unitary`` en la rama más cercana a ``previous`` (asignación de autovectores por máximo solapamiento)"""
    angles, vectors = _eigensystem(unitary)
    weights = np.abs(previous.vectors.conj().T @ vectors) ** 2
    rows, cols = linear_sum_assignment(weights, maximize=True)
    phases = np.empty_like(angles)
    for row, col in zip(rows, cols):
        turns = np.round((previous.phases[row] - angles[col]) / (2.0 * math.pi))
        phases[col] = angles[col] + 2.0 * math.pi * turns
    return LogBranch(vectors=vectors, phases=phases)


# Transporte

def transport_along(targets, start: np.ndarray) -> list[np.ndarray]:
    """Marcos obtenidos con pasos de Nagy sucesivos desde ``start`` por cada bloque de columnas destino"""
    frames = [np.array(start, dtype=complex)]
    for segment, target in enumerate(targets):
        frames.append(transport_step(frames[-1], target, segment=segment))
    return frames


def transport_line(family: ProjectorFamily, axis: int, start_frame: np.ndarray, fixed_transverse_index) -> LineTransport:
    """
    Transporta ``start_frame`` (dado en el índice centrado 0 de ``axis``, los
    otros índices de ``fixed_transverse_index``) una vuelta alrededor del ciclo.

    Devuelve los marcos en orden de recorrido 0, 1, ..., N/2 - 1, -N/2, ..., -1
    en la representación guardada y el cierre llevado de vuelta al punto de partida.
    """
    grid = family.grid
    index = np.array(fixed_transverse_index, dtype=int)
    size = grid.shape[axis]
    targets = []
    for t in range(1, size + 1):
        index[axis] = t
        targets.append(family.columns_at(index))
    frames = transport_along(targets, start_frame)
    flats, stored_frames = [], []
    for t in range(size):
        index[axis] = t
        stored, wraps = grid.wrap(index)
        flats.append(grid.flat_index(stored))
        stored_frames.append(family.action.unwrap(frames[t], wraps))
    index[axis] = size
    _, wraps = grid.wrap(index)
    closure = family.action.unwrap(frames[size], wraps)
    return LineTransport(axis=axis, flats=flats, frames=np.array(stored_frames), closure=closure)


def _face_logs(grid: KGrid, axis: int, face: list[int], holonomies: list[np.ndarray]) -> tuple[list[np.ndarray], float]:
    """Logaritmos seguidos de las holonomías sobre la cara generada por los ejes < ``axis``"""
    if axis == 0:
        return [unitary_log(holonomies[0])], 0.0
    shape = np.array(grid.shape[:axis])
    positions = {tuple(np.mod(grid.indices[flat][:axis], shape)): i for i, flat in enumerate(face)}
    branches: dict = {}
    for position in sorted(positions, key=lambda t: tuple(reversed(t))):
        unitary = holonomies[positions[position]]
        moved = [b for b in range(axis) if position[b] > 0]
        if not moved:
            branches[position] = _principal_branch(unitary)
            continue
        previous = list(position)
        previous[moved[-1]] -= 1
        branches[position] = _continue_branch(branches[tuple(previous)], unitary)
    defect = 0.0
    for position, branch in branches.items():
        for b in range(axis):
            neighbour = list(position)
            neighbour[b] = (neighbour[b] + 1) % shape[b]
            neighbour = tuple(neighbour)
            continued = _continue_branch(branch, holonomies[positions[neighbour]])
            mismatch = float(np.linalg.norm(continued.generator - branches[neighbour].generator, 2))
            if mismatch > BRANCH_TOLERANCE:
                raise BranchNotClosed(f"el logaritmo de la holonomía sobre el eje {axis + 1} no cierra a través del eje de cara "
                                      f"{b + 1} (diferencia {mismatch:.3e}); refinar la grilla",
                                      axis=axis + 1, face_axis=b + 1, position=position, mismatch=mismatch)
            defect = max(defect, mismatch)
    return [branches[position].generator for position in sorted(positions, key=positions.get)], defect


def construct_frame(family: ProjectorFamily, correct: bool = True, workers: int = 1,
                    stencil_order: int = 2) -> "Frame | Obstruction":
    """
    Construye un marco suave y equivariante, o devuelve una Obstruction cuando
    algún número de Chern es no nulo.

    Args:
        correct: repartir las holonomías; con False devuelve el marco transportado crudo.
    """
    grid = family.grid
    if grid.dim > 3:
        raise NotApplicable(f"la construcción de marcos soporta d <= 3, se recibió d={grid.dim}")
    if grid.dim >= 2:
        report = chern_numbers(family, stencil_order, workers=workers)
        nonzero = report.nonzero()
        if nonzero:
            cycles = ", ".join(f"({p.j + 1},{p.l + 1}): {p.chern}" for p in nonzero)
            logger.warning(f"Construcción del marco obstruida, números de Chern no nulos {cycles}")
            return Obstruction(chern_report=report, message=f"números de Chern no nulos en los ciclos {cycles}")
    columns = np.zeros_like(family.columns)
    origin = grid.flat_index((0,) * grid.dim)
    columns[origin] = family.columns[origin]
    face = [origin]
    closures = {}
    branch_defect = 0.0
    for axis in range(grid.dim):
        size = grid.shape[axis]
        lines = Parallel(n_jobs=workers, prefer="threads")(
            delayed(transport_line)(family, axis, columns[flat], grid.indices[flat]) for flat in face
        )
        holonomies = [columns[flat].conj().T @ line.closure for flat, line in zip(face, lines)]
        worst = max((float(np.linalg.norm(h - np.eye(family.rank), 2)) for h in holonomies), default=0.0)
        logger.info(f"Eje {axis + 1}: {len(face)} líneas, max ||M - 1|| = {worst:.3e}")
        if correct:
            logs, defect = _face_logs(grid, axis, face, holonomies)
            branch_defect = max(branch_defect, defect)
        else:
            logs = [np.zeros((family.rank, family.rank), dtype=complex) for _ in face]
        starts, ends, next_face = [], [], []
        for flat, line, generator in zip(face, lines, logs):
            starts.append(np.array(columns[flat]))
            for t, target in enumerate(line.flats):
                columns[target] = line.frames[t] @ expm(-(t / size) * generator)
            ends.append(line.closure @ expm(-generator))
            next_face.extend(line.flats)
        closures[axis] = (np.array(starts), np.array(ends))
        face = next_face
    frame = Frame(grid=grid, action=family.action, columns=columns, closures=closures,
                  branch_defect=branch_defect, family=family)
    logger.info(f"Marco construido: defecto de equivariancia {equivariance_defect(frame):.3e}")
    return frame


# Residuos

def orthonormality_defect(frame: Frame) -> float:
    identity = np.eye(frame.rank)
    return max((float(np.linalg.norm(block.conj().T @ block - identity, 2)) for block in frame.columns), default=0.0)


def span_defect(frame: Frame, family: ProjectorFamily) -> float:
    return max(projector_distance(frame.columns[p], family.columns[p]) for p in range(frame.grid.size))


def _seam_pairs(frame: Frame):
    """
    Para cada línea que recorre la construcción (índice 0 en el eje y en todos
    los ejes posteriores) devuelve las columnas predichas un paso después del
    final de la línea y las columnas guardadas llevadas ahí por la acción de
    corrimiento. La predicción mueve las últimas columnas al span siguiente y
    mantiene la tasa de rotación del último paso.
    """
    grid = frame.grid
    for axis in range(grid.dim):
        size = grid.shape[axis]
        for flat in range(grid.size):
            index = np.array(grid.indices[flat])
            if np.any(index[axis:] != 0):
                continue
            points = []
            for t in (size - 2, size - 1, size):
                unwrapped = index.copy()
                unwrapped[axis] = t
                points.append(frame.columns_at(unwrapped))
            before, last, wrapped = points
            if frame.rank == 0:
                yield last, wrapped
                continue
            rate, _ = polar(last.conj().T @ before)
            yield transport_step(last, wrapped, segment=(axis, flat)) @ rate.conj().T, wrapped


def equivariance_defect(frame: Frame) -> float:
    """
    Mayor distancia entre las columnas guardadas del otro lado del borde y la
    continuación suave de la línea que llega a él. El marco sin corregir da
    ||M - 1||; un marco con fases aleatorias independientes da O(1).
    """
    return max((float(np.linalg.norm(predicted - wrapped, 2)) for predicted, wrapped in _seam_pairs(frame)),
               default=0.0)


def holonomy_mismatch(frame: Frame) -> float:
    """max ||M - 1|| con M = start^dagger closure sobre todos los ciclos registrados"""
    identity = np.eye(frame.rank)
    mismatch = 0.0
    for starts, ends in frame.closures.values():
        for start, end in zip(starts, ends):
            mismatch = max(mismatch, float(np.linalg.norm(start.conj().T @ end - identity, 2)))
    return mismatch


def smoothness_bound(frame: Frame) -> float:
    """máximo sobre las aristas de la grilla de ||Phi(k + delta) - Phi(k)|| / |delta|"""
    grid = frame.grid
    bound = 0.0
    for p in range(grid.size):
        for axis in range(grid.dim):
            index = np.array(grid.indices[p])
            index[axis] += 1
            step = float(np.linalg.norm(frame.columns_at(index) - frame.columns[p], 2))
            bound = max(bound, step / grid.steps[axis])
    return bound


def random_gauge(frame: Frame, seed: int) -> Frame:
    """Marco de control: cada punto k multiplicado por una fase aleatoria independiente"""
    rng = np.random.default_rng(seed)
    phases = np.exp(2j * np.pi * rng.random(frame.grid.size))
    return Frame.from_columns(frame.grid, frame.columns * phases[:, None, None], frame.action, frame.family)


# Intertwiner

@dataclass(eq=False)
class Intertwiner:
    grid: KGrid
    unitaries: np.ndarray
    intertwining_residual: float
    equivariance_defect: float
    unitarity_defect: float


def build_intertwiner(frame_p: Frame, frame_q: Frame) -> Intertwiner:
    """
    U(k) = W(k) + Y(k) con W(k) = sum_a |phi_a(k)><phi_a(0)| e Y armado igual a
    partir del marco complemento, de modo que U(k)^dagger P(k) U(k) = P(0).

    Raises:
        DimensionMismatch: los dos rangos no suman la dimensión de la fibra.
    """
    dim = frame_p.columns.shape[1]
    if frame_q.columns.shape[1] != dim or frame_p.rank + frame_q.rank != dim:
        raise DimensionMismatch(f"los rangos {frame_p.rank} + {frame_q.rank} no completan la dimensión {dim}",
                                rank_p=frame_p.rank, rank_q=frame_q.rank, dim=dim)
    grid = frame_p.grid
    origin = grid.flat_index((0,) * grid.dim)
    phi0, xi0 = frame_p.columns[origin], frame_q.columns[origin]
    unitaries = (np.einsum("pda,ea->pde", frame_p.columns, phi0.conj())
                 + np.einsum("pda,ea->pde", frame_q.columns, xi0.conj()))
    projector0 = materialize(phi0)
    reference = frame_p.family.columns if frame_p.family is not None else frame_p.columns
    residual = 0.0
    unitarity = 0.0
    identity = np.eye(dim)
    for p in range(grid.size):
        u = unitaries[p]
        residual = max(residual, float(np.linalg.norm(u.conj().T @ materialize(reference[p]) @ u - projector0, 2)))
        unitarity = max(unitarity, float(np.linalg.norm(u.conj().T @ u - identity, 2)))
    defect = 0.0
    for (pred_p, wrap_p), (pred_q, wrap_q) in zip(_seam_pairs(frame_p), _seam_pairs(frame_q)):
        predicted = pred_p @ phi0.conj().T + pred_q @ xi0.conj().T
        wrapped = wrap_p @ phi0.conj().T + wrap_q @ xi0.conj().T
        defect = max(defect, float(np.linalg.norm(predicted - wrapped, 2)))
    logger.info(f"Intertwiner: residuo de U^dagger P U {residual:.3e}, defecto de equivariancia {defect:.3e}")
    return Intertwiner(grid=grid, unitaries=unitaries, intertwining_residual=residual,
                       equivariance_defect=defect, unitarity_defect=unitarity)

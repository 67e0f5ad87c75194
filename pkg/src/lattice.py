"""
Geometría de la red y de la red dual, más las grillas periódicas en k sobre
las que trabajan los demás módulos.

Las grillas se indexan con enteros centrados n_j en {-N_j/2, ..., N_j/2 - 1};
el vector k de un punto es sum_j (n_j / N_j) * dual_generators[j]. Los índices
planos siguen orden C sobre los índices desplazados n_j + N_j/2.
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from src.errors import ConfigError, SingularGenerators

logger = logging.getLogger(__name__)

DETERMINANT_TOLERANCE = 1e-12
DUALITY_TOLERANCE = 1e-12
# Coordenadas fraccionarias así de cerca de un semientero se ajustan a él
BOUNDARY_SNAP = 1e-12


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Lattice:
    """Generadores gamma_j (filas) y generadores duales gamma*_j (filas)"""

    generators: np.ndarray
    dual_generators: np.ndarray
    duality_residual: float = 0.0

    @property
    def dim(self) -> int:
        return self.generators.shape[0]

    @cached_property
    def cell_volume(self) -> float:
        return float(abs(np.linalg.det(self.generators)))

    @cached_property
    def dual_cell_volume(self) -> float:
        return float(abs(np.linalg.det(self.dual_generators)))

    @cached_property
    def dual_lengths(self) -> np.ndarray:
        return _frozen(np.linalg.norm(self.dual_generators, axis=1))

    def to_cartesian(self, fractional) -> np.ndarray:
        return np.asarray(fractional, dtype=float) @ self.generators

    def dual_vector(self, coords) -> np.ndarray:
        """Forma cartesiana del vector de la red dual con coordenadas enteras ``coords``"""
        return np.asarray(coords, dtype=float) @ self.dual_generators


def make_lattice(generators) -> Lattice:
    """
    Construye una red a partir de d vectores generadores.

    Args:
        generators: d vectores de largo d (por filas), d en {1, 2, 3}. Para
            d = 1 se acepta un escalar.

    Raises:
        ConfigError: forma incorrecta.
        SingularGenerators: |det| por debajo de DETERMINANT_TOLERANCE.
    """
    matrix = np.atleast_2d(np.asarray(generators, dtype=float))
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] not in (1, 2, 3):
        raise ConfigError(f"se esperaban d vectores de largo d con d en 1..3, se recibió forma {matrix.shape}",
                          location="lattice.generators")
    determinant = np.linalg.det(matrix)
    if abs(determinant) < DETERMINANT_TOLERANCE:
        raise SingularGenerators(f"el determinante de los generadores {determinant:.3e} es singular",
                                 determinant=float(determinant), location="lattice.generators")
    dual = 2.0 * np.pi * np.linalg.inv(matrix).T
    residual = float(np.max(np.abs(matrix @ dual.T - 2.0 * np.pi * np.eye(matrix.shape[0]))))
    if residual > DUALITY_TOLERANCE * max(1.0, float(np.max(np.abs(dual)))):
        logger.warning(f"Los generadores duales resuelven el sistema de dualidad solo hasta {residual:.2e}")
    logger.debug(f"Red d={matrix.shape[0]} |Y|={abs(determinant):.6g} residuo={residual:.2e}")
    return Lattice(generators=_frozen(matrix), dual_generators=_frozen(dual), duality_residual=residual)


def _snap_half_integers(fractional: np.ndarray) -> np.ndarray:
    halves = np.round(fractional * 2.0) / 2.0
    return np.where(np.abs(fractional - halves) < BOUNDARY_SNAP, halves, fractional)


def reduce_to_domain(x, lattice: Lattice) -> tuple[tuple[int, ...], np.ndarray]:
    """
    Separa x = sum_j alpha_j gamma_j + [x] con las coordenadas fraccionarias
    de [x] en la caja semiabierta [-1/2, 1/2).

    Returns:
        (alpha, [x]) con alpha una tupla de enteros y [x] un vector cartesiano.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    fractional = _snap_half_integers(np.linalg.solve(lattice.generators.T, x))
    alpha = np.floor(fractional + 0.5)
    remainder = fractional - alpha
    return tuple(int(a) for a in alpha), lattice.to_cartesian(remainder)


def fractional_cells(fractional: np.ndarray) -> np.ndarray:
    """Índice de celda floor(s + 1/2) de coordenadas fraccionarias, con la misma regla de borde"""
    return np.floor(_snap_half_integers(np.asarray(fractional, dtype=float)) + 0.5).astype(int)


@dataclass(frozen=True, eq=False)
class KGrid:
    lattice: Lattice
    shape: tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        if len(shape) != self.lattice.dim:
            raise ConfigError(f"la grilla tiene {len(shape)} ejes pero la red tiene dimensión {self.lattice.dim}",
                              location="grid.shape")
        for axis, size in enumerate(shape):
            if size <= 0 or size % 2:
                raise ConfigError(f"el tamaño de grilla {size} debe ser positivo y par", location=f"grid.shape[{axis}]")
        object.__setattr__(self, "shape", shape)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def _half(self) -> np.ndarray:
        return np.array(self.shape) // 2

    @cached_property
    def indices(self) -> np.ndarray:
        """Índices enteros centrados de cada punto guardado, forma (size, d), en orden plano"""
        offsets = np.indices(self.shape).reshape(self.dim, -1).T
        return _frozen(offsets - self._half)

    @cached_property
    def points(self) -> np.ndarray:
        return _frozen((self.indices / np.array(self.shape)) @ self.lattice.dual_generators)

    @cached_property
    def steps(self) -> np.ndarray:
        """Largo de un paso de grilla en cada eje"""
        return _frozen(self.lattice.dual_lengths / np.array(self.shape))

    def k_point(self, index) -> np.ndarray:
        """Vector k de un multi-índice centrado (posiblemente sin reducir)"""
        return (np.asarray(index, dtype=float) / np.array(self.shape)) @ self.lattice.dual_generators

    def wrap(self, index) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """
        Reduce un multi-índice centrado al rango guardado.

        Returns:
            (stored, wraps) con k(index) = k(stored) + sum_j wraps_j * gamma*_j.
        """
        index = np.asarray(index, dtype=int)
        shape = np.array(self.shape)
        stored = np.mod(index + self._half, shape) - self._half
        wraps = (index - stored) // shape
        return tuple(int(n) for n in stored), tuple(int(w) for w in wraps)

    def flat_index(self, index) -> int:
        stored, _ = self.wrap(index)
        return int(np.ravel_multi_index(tuple(np.array(stored) + self._half), self.shape))

    def multi_index(self, flat: int) -> tuple[int, ...]:
        return tuple(int(n) for n in self.indices[flat])

    def negate(self, flat: int) -> int:
        """Índice plano del representante guardado de -k"""
        return self.flat_index(-self.indices[flat])

    @cached_property
    def negation(self) -> np.ndarray:
        return _frozen(np.array([self.negate(p) for p in range(self.size)]))

    def neighbor(self, flat: int, axis: int, step: int = 1) -> tuple[int, tuple[int, ...]]:
        """Índice plano y vector de vueltas del punto a ``step`` celdas sobre ``axis``"""
        index = np.array(self.indices[flat])
        index[axis] += step
        stored, wraps = self.wrap(index)
        return self.flat_index(stored), wraps

    def line_order(self, axis: int) -> list[int]:
        """Orden de recorrido 0, 1, ..., N/2 - 1, -N/2, ..., -1 de los índices centrados de un eje"""
        size = self.shape[axis]
        return [t if t < size // 2 else t - size for t in range(size)]


def straight_path(lattice: Lattice, start, stop, points: int) -> np.ndarray:
    """Vectores k cartesianos sobre el segmento entre dos puntos dados en coordenadas reducidas"""
    start = np.atleast_1d(np.asarray(start, dtype=float))
    stop = np.atleast_1d(np.asarray(stop, dtype=float))
    if start.shape != (lattice.dim,) or stop.shape != (lattice.dim,):
        raise ConfigError(f"los extremos del camino deben tener {lattice.dim} componentes", location="options.path")
    fractions = np.linspace(0.0, 1.0, int(points))
    reduced = start[None, :] + fractions[:, None] * (stop - start)[None, :]
    return reduced @ lattice.dual_generators

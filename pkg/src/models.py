"""
Operadores de fibra H(k) como matrices hermíticas finitas.

Los modelos de ondas planas viven en la base truncada {G en Gamma* : |G|^2 / 2 <= E_c}
(orden lexicográfico por coordenadas enteras m, con el índice de spinor más
rápido en Dirac). Las familias explícitas son matrices chicas dependientes de k,
registradas por nombre, sobre las que los corrimientos de red actúan trivialmente.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Union

import numpy as np

from src.errors import ConfigError, NotApplicable, ShiftLeavesBasis
from src.lattice import Lattice

logger = logging.getLogger(__name__)

REALITY_TOLERANCE = 1e-14

SIGMA = np.array([
    [[0, 1], [1, 0]],
    [[0, -1j], [1j, 0]],
    [[1, 0], [0, -1]],
], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)
ZERO_2 = np.zeros((2, 2), dtype=complex)

ALPHA = np.array([np.block([[ZERO_2, s], [s, ZERO_2]]) for s in SIGMA])
BETA = np.block([[IDENTITY_2, ZERO_2], [ZERO_2, -IDENTITY_2]])


def _check_clifford():
    for i in range(3):
        for j in range(3):
            anticommutator = ALPHA[i] @ ALPHA[j] + ALPHA[j] @ ALPHA[i]
            if np.any(anticommutator != 2 * (i == j) * np.eye(4)):
                raise RuntimeError(f"alpha_{i + 1}, alpha_{j + 1} violan las relaciones de Clifford")
        if np.any(ALPHA[i] @ BETA + BETA @ ALPHA[i] != 0):
            raise RuntimeError(f"alpha_{i + 1} no anticonmuta con beta")
    if np.any(BETA @ BETA != np.eye(4)):
        raise RuntimeError("beta al cuadrado no da la identidad")


_check_clifford()


# Basis

@dataclass(frozen=True, eq=False)
class PlaneWaveBasis:
    lattice: Lattice
    cutoff: float
    coords: np.ndarray
    spin_components: int = 1
    _line_cache: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        """Cantidad de ondas planas N_G"""
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.size * self.spin_components

    @cached_property
    def g_vectors(self) -> np.ndarray:
        return self.coords @ self.lattice.dual_generators

    @cached_property
    def _lookup(self) -> dict:
        return {tuple(int(c) for c in m): i for i, m in enumerate(self.coords)}

    def index_of(self, m) -> int | None:
        return self._lookup.get(tuple(int(c) for c in np.atleast_1d(m)))

    @cached_property
    def negation(self) -> np.ndarray:
        """Índice de onda plana de -G para cada G"""
        return np.array([self._lookup[tuple(int(-c) for c in m)] for m in self.coords])

    def expand(self, plane_wave_indices: np.ndarray) -> np.ndarray:
        """Lleva un mapa sobre índices de ondas planas a índices de componentes (spinor más rápido)"""
        s = self.spin_components
        plane_wave_indices = np.asarray(plane_wave_indices)
        return (plane_wave_indices[:, None] * s + np.arange(s)[None, :]).reshape(-1)

    def line_source(self, axis: int, steps: int) -> np.ndarray:
        """
        Índice de origen para un corrimiento cíclico de ``steps`` sobre ``axis``
        dentro de cada línea de la base (coordenadas fijas en los otros ejes).
        """
        key = (axis, steps)
        if key not in self._line_cache:
            source = np.empty(self.size, dtype=int)
            others = np.delete(self.coords, axis, axis=1)
            lines: dict = {}
            for i, rest in enumerate(map(tuple, others)):
                lines.setdefault(rest, []).append(i)
            for members in lines.values():
                members = sorted(members, key=lambda i: self.coords[i, axis])
                length = len(members)
                for position, target in enumerate(members):
                    source[target] = members[(position - steps) % length]
            self._line_cache[key] = source
        return self._line_cache[key]


def make_basis(lattice: Lattice, cutoff: float, spin_components: int = 1) -> PlaneWaveBasis:
    if cutoff <= 0:
        raise ConfigError(f"el cutoff debe ser positivo, se recibió {cutoff}", location="model.cutoff")
    radius = np.sqrt(2.0 * cutoff)
    to_coords = np.linalg.inv(lattice.dual_generators)
    bounds = np.ceil(radius * np.linalg.norm(to_coords, axis=0)).astype(int)
    ranges = [np.arange(-b, b + 1) for b in bounds]
    candidates = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, lattice.dim)
    energies = 0.5 * np.sum((candidates @ lattice.dual_generators) ** 2, axis=1)
    coords = candidates[energies <= cutoff * (1.0 + 1e-12)]
    logger.info(f"Base de ondas planas: cutoff={cutoff} N_G={coords.shape[0]} spin={spin_components}")
    return PlaneWaveBasis(lattice=lattice, cutoff=float(cutoff), coords=coords, spin_components=spin_components)


def interior_mask(basis: PlaneWaveBasis, radius: float) -> np.ndarray:
    """Máscara de componentes de la subbase |G| <= sqrt(2 E_c) - radius"""
    keep = np.linalg.norm(basis.g_vectors, axis=1) <= np.sqrt(2.0 * basis.cutoff) - radius + 1e-12
    return np.repeat(keep, basis.spin_components)


# Potential

@dataclass(frozen=True, eq=False)
class Potential:
    """Coeficientes de Fourier dispersos V(G(m)) indexados por coordenadas duales enteras"""

    coefficients: dict

    def value(self, m) -> complex:
        return self.coefficients.get(tuple(int(c) for c in m), 0.0)

    def support_radius(self, lattice: Lattice) -> float:
        if not self.coefficients:
            return 0.0
        return float(max(np.linalg.norm(lattice.dual_vector(m)) for m in self.coefficients))

    def is_reflection_symmetric(self, tol: float) -> bool:
        return all(abs(self.value([-c for c in m]) - v) <= tol for m, v in self.coefficients.items())


def make_potential(entries, dim: int) -> Potential:
    """
    Construye un potencial a partir de pares (m, valor) o registros {"m", "re", "im"}.

    Raises:
        ConfigError: largo de coordenadas incorrecto o V(-G) != conj V(G).
    """
    coefficients, positions = {}, {}
    for position, entry in enumerate(entries):
        if isinstance(entry, dict):
            m, value = entry["m"], complex(entry.get("re", 0.0), entry.get("im", 0.0))
        else:
            m, value = entry
        m = tuple(int(c) for c in np.atleast_1d(m))
        if len(m) != dim:
            raise ConfigError(f"el índice de coeficiente {m} tiene {len(m)} componentes, la red tiene {dim}",
                              location=f"model.potential[{position}]")
        if value != 0:
            coefficients[m] = coefficients.get(m, 0.0) + complex(value)
            positions.setdefault(m, position)
    potential = Potential(coefficients=coefficients)
    for m, value in coefficients.items():
        partner = potential.value(tuple(-c for c in m))
        if abs(partner - np.conj(value)) > REALITY_TOLERANCE:
            # se reporta la última de las dos entradas, la que rompe el par
            position = max(positions[m], positions.get(tuple(-c for c in m), positions[m]))
            raise ConfigError(f"realidad violada: V({m}) = {value} pero V(-m) = {partner}",
                              location=f"model.potential[{position}]")
    return potential


# Models

@dataclass(frozen=True, eq=False)
class SchrodingerPW:
    basis: PlaneWaveBasis
    potential: Potential
    kinetic_prefactor: float = 0.5

    variant = "schrodinger"

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def lattice(self) -> Lattice:
        return self.basis.lattice

    @cached_property
    def potential_matrix(self) -> np.ndarray:
        return _potential_matrix(self.basis, self.potential)


@dataclass(frozen=True, eq=False)
class DiracPW:
    basis: PlaneWaveBasis
    potential: Potential
    mass: float = 1.0

    variant = "dirac"

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def lattice(self) -> Lattice:
        return self.basis.lattice

    @cached_property
    def potential_matrix(self) -> np.ndarray:
        return np.kron(_potential_matrix(self.basis, self.potential), np.eye(4))


@dataclass(frozen=True, eq=False)
class ExplicitFamily:
    lattice: Lattice
    dim_h: int
    matrix_fn: Callable[[np.ndarray], np.ndarray]
    name: str = "explicit"
    params: dict = field(default_factory=dict)

    variant = "explicit"

    @property
    def dim(self) -> int:
        return self.dim_h


ModelSpec = Union[SchrodingerPW, DiracPW, ExplicitFamily]


def _potential_matrix(basis: PlaneWaveBasis, potential: Potential) -> np.ndarray:
    matrix = np.zeros((basis.size, basis.size), dtype=complex)
    for m, value in potential.coefficients.items():
        for row, coords in enumerate(basis.coords):
            column = basis.index_of(coords - np.array(m))
            if column is not None:
                matrix[row, column] += value
    return matrix


def assemble_fiber(model: ModelSpec, k) -> np.ndarray:
    """H(k) para cualquier modelo; k es un vector cartesiano arbitrario"""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if isinstance(model, ExplicitFamily):
        return np.asarray(model.matrix_fn(k), dtype=complex)
    momenta = k[None, :] + model.basis.g_vectors
    if isinstance(model, SchrodingerPW):
        kinetic = model.kinetic_prefactor * np.sum(momenta ** 2, axis=1)
        return np.diag(kinetic).astype(complex) + model.potential_matrix
    dim = model.lattice.dim
    blocks = np.einsum("gj,jab->gab", momenta, ALPHA[:dim]) + model.mass * BETA[None, :, :]
    size = model.basis.size
    hamiltonian = np.zeros((size, 4, size, 4), dtype=complex)
    diagonal = np.arange(size)
    hamiltonian[diagonal, :, diagonal, :] = blocks
    return hamiltonian.reshape(4 * size, 4 * size) + model.potential_matrix


# Acciones de corrimiento y conjugación

def tau_shift(basis: PlaneWaveBasis, lam, coefficients: np.ndarray) -> np.ndarray:
    """
    Multiplicación por e^{i y.lambda}: la salida en G es la entrada en G - lambda.

    Raises:
        ShiftLeavesBasis: un coeficiente no nulo caería fuera del truncamiento.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=int))
    coefficients = np.asarray(coefficients)
    source = np.array([basis.index_of(m - lam) if basis.index_of(m - lam) is not None else -1
                       for m in basis.coords])
    lost = np.setdiff1d(np.arange(basis.size), source[source >= 0])
    occupied = np.abs(coefficients.reshape(basis.size, -1)).max(axis=1) > 0
    if np.any(occupied[lost]):
        raise ShiftLeavesBasis(f"el corrimiento {lam.tolist()} saca ondas planas ocupadas fuera del cutoff",
                               shift=lam, coordinates=basis.coords[lost[occupied[lost]]])
    result = np.zeros_like(coefficients)
    inside = np.flatnonzero(source >= 0)
    result[basis.expand(inside)] = coefficients[basis.expand(source[inside])]
    return result


def periodic_shift(basis: PlaneWaveBasis, axis: int, steps: int, vectors: np.ndarray) -> np.ndarray:
    """
    Versión cíclica de tau_shift sobre un eje dual: los coeficientes se mueven
    ``steps`` lugares dentro de cada línea de la base y reingresan por el otro
    extremo. Es una permutación, coincide con tau_shift en vectores que quedan
    dentro de la base y se usa en cada vuelta por el borde de la zona.
    """
    if steps == 0:
        return np.asarray(vectors)
    source = basis.expand(basis.line_source(axis, steps))
    return np.asarray(vectors)[source]


def conjugate(basis: PlaneWaveBasis, coefficients: np.ndarray) -> np.ndarray:
    """Conjugación compleja en espacio de posiciones: la salida en G es conj(entrada en -G)"""
    return np.conj(np.asarray(coefficients)[basis.expand(basis.negation)])


def covariance_defect(model: ModelSpec, k, lam) -> float:
    """
    Norma de operador de H(k + lambda) - tau(lambda)^-1 H(k) tau(lambda) sobre
    las ondas planas G con G + lambda todavía dentro de la base.
    """
    if isinstance(model, ExplicitFamily):
        raise NotApplicable(f"la familia explícita '{model.name}' tiene la identidad como acción de corrimiento")
    basis = model.basis
    lam = np.atleast_1d(np.asarray(lam, dtype=int))
    rows, partners = [], []
    for i, m in enumerate(basis.coords):
        j = basis.index_of(m + lam)
        if j is not None:
            rows.append(i)
            partners.append(j)
    rows = basis.expand(np.array(rows, dtype=int))
    partners = basis.expand(np.array(partners, dtype=int))
    k = np.atleast_1d(np.asarray(k, dtype=float))
    shifted = assemble_fiber(model, k + basis.lattice.dual_vector(lam))[np.ix_(rows, rows)]
    conjugated = assemble_fiber(model, k)[np.ix_(partners, partners)]
    return float(np.linalg.norm(shifted - conjugated, 2))


@dataclass(frozen=True, eq=False)
class ShiftAction:
    """Cómo se llevan las columnas guardadas en k a k + sum_j w_j gamma*_j"""

    basis: PlaneWaveBasis | None = None

    @property
    def is_identity(self) -> bool:
        return self.basis is None

    def wrap(self, vectors: np.ndarray, wraps) -> np.ndarray:
        if self.basis is None:
            return vectors
        for axis, count in enumerate(wraps):
            if count:
                vectors = periodic_shift(self.basis, axis, -count, vectors)
        return vectors

    def unwrap(self, vectors: np.ndarray, wraps) -> np.ndarray:
        if self.basis is None:
            return vectors
        for axis in reversed(range(len(wraps))):
            if wraps[axis]:
                vectors = periodic_shift(self.basis, axis, wraps[axis], vectors)
        return vectors


def shift_action(model: ModelSpec) -> ShiftAction:
    if isinstance(model, ExplicitFamily):
        return ShiftAction()
    return ShiftAction(basis=model.basis)


def fingerprint(model: ModelSpec) -> str:
    """sha256 estable de la descripción del modelo"""
    if isinstance(model, ExplicitFamily):
        description = {"variant": "explicit", "family": model.name, "params": model.params,
                       "generators": model.lattice.generators.tolist()}
    else:
        description = {
            "variant": model.variant,
            "generators": model.lattice.generators.tolist(),
            "cutoff": model.basis.cutoff,
            "potential": sorted([list(m), value.real, value.imag]
                                for m, value in model.potential.coefficients.items()),
        }
        if isinstance(model, SchrodingerPW):
            description["kinetic_prefactor"] = model.kinetic_prefactor
        else:
            description["mass"] = model.mass
    encoded = json.dumps(description, sort_keys=True).encode("utf-8")
    return hashlib.sha256(encoded).hexdigest()


# Registro de familias explícitas

FAMILIES: dict[str, Callable[..., tuple[int, Callable]]] = {}


def register_family(name: str):
    def decorator(factory):
        FAMILIES[name] = factory
        return factory
    return decorator


@register_family("qwz")
def _qwz(u: float = 1.0):
    """Aislante de Chern de dos bandas sobre el toro cuadrado unitario"""
    def matrix(k):
        k1, k2 = k[0], k[1]
        return np.sin(k1) * SIGMA[0] + np.sin(k2) * SIGMA[1] + (u + np.cos(k1) + np.cos(k2)) * SIGMA[2]
    return 2, matrix


@register_family("constant")
def _constant(energies=(-1.0, 1.0)):
    diagonal = np.diag(np.asarray(energies, dtype=float)).astype(complex)
    return len(energies), lambda k: diagonal.copy()


@register_family("rotation")
def _rotation(amplitude: float = 0.5):
    """Familia real 2x2 R(theta) diag(-1, 1) R(theta)^T con theta = amplitude * sin(k_1)"""
    def matrix(k):
        theta = amplitude * np.sin(k[0])
        rotation = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        return (rotation @ np.diag([-1.0, 1.0]) @ rotation.T).astype(complex)
    return 2, matrix


def make_explicit(lattice: Lattice, name: str, params: dict | None = None) -> ExplicitFamily:
    if name not in FAMILIES:
        raise ConfigError(f"familia explícita desconocida '{name}', conocidas: {sorted(FAMILIES)}", location="model.family")
    params = dict(params or {})
    try:
        dim_h, matrix_fn = FAMILIES[name](**params)
    except TypeError as e:
        raise ConfigError(f"parámetros inválidos para la familia '{name}': {e}", location="model.params") from e
    if name == "qwz" and lattice.dim != 2:
        raise ConfigError("la familia 'qwz' necesita una red bidimensional", location="lattice.generators")
    return ExplicitFamily(lattice=lattice, dim_h=dim_h, matrix_fn=matrix_fn, name=name, params=params)

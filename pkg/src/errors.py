"""
Jerarquía de errores compartida por la librería y el runner de línea de comandos.

Cada error lleva un ``code`` legible por máquina y el ``exit_code`` del proceso
que usa el runner, más ``details`` libres que terminan en el JSON escrito en
la salida de error.
"""

import numpy as np


def to_jsonable(value):
    """Convierte escalares/arrays de numpy y tuplas a tipos JSON planos"""
    if isinstance(value, dict):
        return {str(key): to_jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": float(value.real), "im": float(value.imag)}
    return value


class BlochFramesError(Exception):
    code = "blochframes_error"
    exit_code = 3

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details

    def payload(self) -> dict:
        return {"error": self.code, "message": str(self), "details": to_jsonable(self.details)}


# Configuración y precondiciones (exit 1)

class ConfigError(BlochFramesError, ValueError):
    code = "config_error"
    exit_code = 1

    def __init__(self, message: str, location: str = "", **details):
        if location:
            message = f"{location}: {message}"
        super().__init__(message, location=location, **details)


class SingularGenerators(BlochFramesError):
    code = "singular_generators"
    exit_code = 1


class ShiftLeavesBasis(BlochFramesError):
    code = "shift_leaves_basis"
    exit_code = 1


class NotApplicable(BlochFramesError):
    code = "not_applicable"
    exit_code = 1


class FrameNotOrthonormal(BlochFramesError):
    code = "frame_not_orthonormal"
    exit_code = 1


class DimensionMismatch(BlochFramesError):
    code = "dimension_mismatch"
    exit_code = 1


class WrongSpinDimension(BlochFramesError):
    code = "wrong_spin_dimension"
    exit_code = 1


class SymmetryViolation(BlochFramesError):
    code = "symmetry_violation"
    exit_code = 1


# Fallas numéricas (exit 3)

class NumericalFailure(BlochFramesError):
    code = "numerical_failure"
    exit_code = 3


class EigensolverFailure(NumericalFailure):
    code = "eigensolver_failure"


class GapClosed(NumericalFailure):
    code = "gap_closed"


class ProjectorsTooFar(NumericalFailure):
    code = "projectors_too_far"


class PlaquetteSingular(NumericalFailure):
    code = "plaquette_singular"


class NoSpectralGap(NumericalFailure):
    code = "no_spectral_gap"


class BranchNotClosed(NoSpectralGap):
    """El logaritmo seguido de una holonomía no volvió a su rama de partida"""

    code = "branch_not_closed"


class WindowTruncation(NumericalFailure):
    code = "window_truncation"


# Topología (exit 2)

class ObstructionError(BlochFramesError):
    """Lo lanza el runner cuando la construcción del marco devuelve una Obstruction"""

    code = "obstruction"
    exit_code = 2

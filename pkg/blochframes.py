#!/usr/bin/env python3
# blochframes.py
# Ejecuta un pipeline (bandas, curvatura, números de Chern, marcos, funciones de Wannier) a partir de una configuración JSON

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from src.artifacts import RunArtifacts, config_hash
from src.config import RunSetup, load_config
from src.database import init_db, make_session_factory, record_run
from src.dirac import (commutation_defect, dirac_labelling, dirac_projector_family, kramers_check,
                       t_squared_check)
from src.errors import BlochFramesError, ConfigError, NotApplicable, ObstructionError
from src.frames import (Obstruction, build_intertwiner, construct_frame, holonomy_mismatch, random_gauge)
from src.geometry import chern_numbers, curvature, curvature_to_frame, timereversal_defect, wilson_loop_phases
from src.lattice import straight_path
from src.models import ExplicitFamily, covariance_defect, fingerprint
from src.spectral import (BandWindow, bands_to_frame, complement_family, projector_family, solve_bands,
                          solve_path, verify_gap)
from src.wannier import centre_cell, decay_profile, decay_to_dict, wannier_from_frame, wannier_to_frame

logger = logging.getLogger(__name__)

COMMANDS = ("bands", "gap", "curvature", "chern", "symmetry", "frame", "intertwiner", "wannier", "kramers", "paths")
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
DEFAULT_DIRAC_HALF_WIDTH = 2
STATUS = {0: "ok", 1: "config_error", 2: "obstruction", 3: "numerical_failure"}


def parse_args(argv=None):
    """Parsea los argumentos de línea de comandos"""
    parser = argparse.ArgumentParser(description='Bloch bands, Chern numbers and smooth equivariant frames')
    parser.add_argument('command', choices=COMMANDS, help='Pipeline a ejecutar')
    parser.add_argument('--config', required=True, help='Configuración JSON de la corrida')
    parser.add_argument('--out', default=None, help='Directorio de salida (reemplaza "output" de la configuración)')
    parser.add_argument('--workers', type=int, default=1, help='Hilos de trabajo para el cálculo por punto k. Por defecto: 1')
    parser.add_argument('--seed', type=int, default=None, help='Reemplaza "seed" de la configuración')
    parser.add_argument('--verbose', action='store_true', help='Logging en nivel DEBUG')
    return parser.parse_args(argv)


def configure_logging(run_dir: Path | None, verbose: bool) -> list[logging.Handler]:
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        handlers.insert(0, logging.FileHandler(run_dir / 'blochframes.log'))
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, handlers=handlers,
                        force=True)
    return handlers


# Piezas compartidas

def _window(setup: RunSetup) -> tuple[int, int]:
    if setup.window is None:
        raise ConfigError("este comando necesita una ventana de bandas", location="window")
    return setup.window


def _solve(setup: RunSetup, workers: int, count: int | None = None):
    """Bandas de un modelo escalar o explícito, una más de las que pide la ventana salvo que se indique ``count``"""
    model = setup.model
    if count is None:
        count = setup.options.get("count")
    if count is None:
        first, size = _window(setup)
        count = min(first + size + 1, model.dim)
    return solve_bands(model, setup.grid, count, workers=workers)


def _family(setup: RunSetup, workers: int):
    first, count = _window(setup)
    if setup.model.variant == "dirac":
        return dirac_projector_family(setup.model, setup.grid, (first, count), workers=workers)
    return projector_family(_solve(setup, workers), BandWindow(first=first, count=count))


def _frame_or_obstruction(family, setup: RunSetup, artifacts: RunArtifacts, workers: int):
    result = construct_frame(family, correct=setup.options["correct"], workers=workers,
                             stencil_order=setup.options["stencil_order"])
    if isinstance(result, Obstruction):
        report = result.chern_report.to_dict()
        artifacts.write_json("chern.json", report)
        raise ObstructionError(result.message, report=report)
    return result


# Comandos

def cmd_bands(setup: RunSetup, artifacts: RunArtifacts, workers: int) -> dict:
    if setup.model.variant == "dirac":
        half_width = setup.options.get("count", DEFAULT_DIRAC_HALF_WIDTH)
        labelling = dirac_labelling(setup.model, setup.grid, half_width, workers)
        artifacts.write_csv("bands.csv", bands_to_frame(labelling.bands, labelling.labels))
        return {"bands": labelling.bands.count, "tracking_defect": labelling.tracking_defect}
    count = setup.options.get("count")
    if count is None:
        count = min(setup.window[0] + setup.window[1] + 1, setup.model.dim) if setup.window else min(4, setup.model.dim)
    bands = _solve(setup, workers, count)
    artifacts.write_csv("bands.csv", bands_to_frame(bands))
    return {"bands": bands.count}


def cmd_gap(setup: RunSetup, artifacts: RunArtifacts, workers: int) -> dict:
    first, count = _window(setup)
    if setup.model.variant == "dirac":
        gap = _family(setup, workers).gap
    else:
        gap = verify_gap(_solve(setup, workers), BandWindow(first=first, count=count))
    report = {"window": {"first": first, "count": count}, "gap": gap}
    artifacts.write_json("gap.json", report)
    return report


def cmd_curvature(setup: RunSetup, artifacts: RunArtifacts, workers: int) -> dict:
    family = _family(setup, workers)
    field = curvature(family, setup.options["stencil_order"], workers)
    artifacts.write_csv("curvature.csv", curvature_to_frame(field))
    summary = {"timereversal_defect": timereversal_defect(field),
               "max_abs_omega": float(np.max(np.abs(field.omega))) if field.omega.size else 0.0}
    artifacts.write_json("curvature.json", summary)
    return summary


def cmd_chern(setup: RunSetup, artifacts: RunArtifacts, workers: int) -> dict:
    family = _family(setup, workers)
    report = chern_numbers(family, setup.options["stencil_order"], workers=workers).to_dict()
    artifacts.write_json("chern.json", report)
    return report


def cmd_symmetry(setup: RunSetup, artifacts: RunArtifacts, workers: int) -> dict:
    family = _family(setup, workers)
    field = curvature(family, setup.options["stencil_order"], workers)
    report = {"timereversal_defect": timereversal_defect(field), "wilson_loops": {}}
    for axis in range(setup.grid.dim):
        starts, phases = wilson_loop_phases(family, axis)
        report["wilson_loops"][str(axis + 1)] = {
            "transverse_points": setup.grid.indices[starts].tolist(),
            "phases": phases.tolist(),
        }
    model = setup.model
    if not isinstance(model, ExplicitFamily):
        report["covariance_defect"] = max(covariance_defect(model, setup.grid.points[0], np.eye(setup.grid.dim, dtype=int)[j])
                                          for j in range(setup.grid.dim))
    if model.variant == "dirac":
        report["t_squared"] = t_squared_check(model.basis, setup.seed)
        report["commutation_defect"] = max(commutation_defect(model, k) for k in setup.grid.points)
        report["t_symmetry_defect"] = family.diagnostics["t_symmetry_defect"]
    artifacts.write_json("symmetry.json", report)
    return {"timereversal_defect": report["timereversal_defect"]}


def cmd_frame(setup: RunSetup, artifacts: RunArtifacts, workers: int) -> dict:
    family = _family(setup, workers)
    frame = _frame_or_obstruction(family, setup, artifacts, workers)
    report = {"residuals": frame.residuals(), "holonomy_mismatch": holonomy_mismatch(frame),
              "corrected": setup.options["correct"], "rank": frame.rank, "gap": family.gap}
    artifacts.write_json("frame.json", report)
    if setup.options["save_blocks"]:
        artifacts.save_blocks("frame", frame.columns, {"grid": list(setup.grid.shape), "window": list(setup.window),
                                                       "model": fingerprint(setup.model),
                                                       "residuals": report["residuals"]})
    return report["residuals"]


def cmd_intertwiner(setup: RunSetup, artifacts: RunArtifacts, workers: int) -> dict:
    if setup.model.variant == "dirac":
        raise NotApplicable("el entrelazador necesita el espectro completo, que una truncación de Dirac no etiqueta",
                            variant="dirac")
    first, count = _window(setup)
    window = BandWindow(first=first, count=count)
    bands = solve_bands(setup.model, setup.grid, setup.model.dim, workers=workers)
    frame_p = _frame_or_obstruction(projector_family(bands, window), setup, artifacts, workers)
    frame_q = _frame_or_obstruction(complement_family(bands, window), setup, artifacts, workers)
    intertwiner = build_intertwiner(frame_p, frame_q)
    report = {"intertwining_residual": intertwiner.intertwining_residual,
              "equivariance_defect": intertwiner.equivariance_defect,
              "unitarity_defect": intertwiner.unitarity_defect, "dim": setup.model.dim}
    artifacts.write_json("intertwiner.json", report)
    if setup.options["save_blocks"]:
        artifacts.save_blocks("intertwiner", intertwiner.unitaries, {"grid": list(setup.grid.shape),
                                                                     "window": [first, count],
                                                                     "model": fingerprint(setup.model)})
    return report


def cmd_wannier(setup: RunSetup, artifacts: RunArtifacts, workers: int) -> dict:
    first, _ = _window(setup)
    family = _family(setup, workers)
    frame = _frame_or_obstruction(family, setup, artifacts, workers)
    cells, resolution = setup.options["cells"], setup.options["resolution"]
    report = {}
    for w in wannier_from_frame(frame, cells, resolution, workers):
        label = first + w.band_index
        artifacts.write_csv(f"wannier_band{label}.csv", wannier_to_frame(w))
        report[str(label)] = {"norm": w.norm, "centre_cell": list(centre_cell(w)), "decay": decay_to_dict(decay_profile(w))}
    if setup.options["random_gauge"]:
        for w in wannier_from_frame(random_gauge(frame, setup.seed), cells, resolution, workers):
            report[str(first + w.band_index)]["control"] = decay_to_dict(decay_profile(w))
    artifacts.write_json("wannier_decay.json", report)
    return {label: entry["decay"]["slope"] for label, entry in report.items()}


def cmd_kramers(setup: RunSetup, artifacts: RunArtifacts, workers: int) -> dict:
    if setup.model.variant != "dirac":
        raise ConfigError("kramers necesita un modelo de Dirac", location="model.variant")
    half_width = setup.options.get("count", DEFAULT_DIRAC_HALF_WIDTH)
    report = kramers_check(setup.model, setup.grid, half_width, setup.options["kramers_tolerance"], workers)
    report["t_squared"] = t_squared_check(setup.model.basis, setup.seed)
    report["commutation_defect"] = commutation_defect(setup.model, setup.grid.points[0])
    artifacts.write_json("kramers.json", report)
    return {"pairing_defect": report["pairing_defect"], "paired": report["paired"]}


def cmd_paths(setup: RunSetup, artifacts: RunArtifacts, workers: int) -> dict:
    path = setup.options.get("path")
    if path is None:
        raise ConfigError("paths necesita un punto inicial y uno final", location="options.path")
    points = path.get("points", 64)
    kpoints = straight_path(setup.lattice, path["start"], path["stop"], points)
    if setup.model.variant == "dirac":
        raise NotApplicable("los caminos rectos se muestrean para modelos escalares y explícitos", variant="dirac")
    count = setup.options.get("count", min(4, setup.model.dim))
    energies = solve_path(setup.model, kpoints, count)
    data = {"s": np.linspace(0.0, 1.0, points)}
    data.update({f"k{j + 1}": kpoints[:, j] for j in range(setup.lattice.dim)})
    data.update({f"E{n}": energies[:, n] for n in range(count)})
    artifacts.write_csv("path.csv", pd.DataFrame(data))
    return {"points": points, "bands": count}


HANDLERS = {
    "bands": cmd_bands, "gap": cmd_gap, "curvature": cmd_curvature, "chern": cmd_chern,
    "symmetry": cmd_symmetry, "frame": cmd_frame, "intertwiner": cmd_intertwiner, "wannier": cmd_wannier,
    "kramers": cmd_kramers, "paths": cmd_paths,
}


def _emit_error(error: BlochFramesError):
    sys.stderr.write(json.dumps(error.payload(), sort_keys=True) + "\n")


def _ledger(out_base: Path, command: str, artifacts: RunArtifacts, setup: RunSetup, exit_code: int,
            error: BlochFramesError | None, elapsed: float):
    engine, session_factory = make_session_factory(f"sqlite:///{out_base / 'runs.db'}")
    init_db(engine)
    with session_factory() as session:
        record_run(session, command=command, run_dir=str(artifacts.run_dir), config_hash=config_hash(setup.config),
                   status=STATUS[exit_code], exit_code=exit_code, artifacts=artifacts.entries,
                   model_fingerprint=fingerprint(setup.model), seed=setup.seed,
                   error_code=error.code if error else None, message=str(error) if error else None,
                   elapsed_seconds=elapsed)
    engine.dispose()


def run(command: str, config_path, out=None, workers: int = 1, seed: int | None = None, verbose: bool = False) -> int:
    """Ejecuta un comando y devuelve el código de salida del proceso (0 ok, 1 configuración, 2 obstrucción, 3 numérico)"""
    started = time.perf_counter()
    try:
        setup = load_config(config_path)
    except BlochFramesError as e:
        configure_logging(None, verbose)
        logger.error(f"Configuración {config_path} rechazada: {e}")
        _emit_error(e)
        return e.exit_code
    if seed is not None:
        setup.seed = seed
    out_base = Path(out or setup.output)
    run_dir = out_base / f"{command}-{config_hash(setup.config)[:12]}-seed{setup.seed}"
    handlers = configure_logging(run_dir, verbose)
    artifacts = RunArtifacts(run_dir)
    loaded = time.perf_counter()
    error, exit_code = None, 0
    logger.info(f"Ejecutando '{command}' sobre el modelo {setup.model.variant}, grilla {setup.grid.shape}, workers={workers}")
    try:
        summary = HANDLERS[command](setup, artifacts, workers)
        logger.info(f"'{command}' terminó: {summary}")
    except BlochFramesError as e:
        error, exit_code = e, e.exit_code
        logger.error(f"'{command}' falló ({e.code}): {e}")
    except Exception as e:
        error = BlochFramesError(f"{type(e).__name__} inesperado: {e}")
        exit_code = error.exit_code
        logger.exception(f"'{command}' falló de forma inesperada")
    finished = time.perf_counter()
    timings = {"load_seconds": loaded - started, "compute_seconds": finished - loaded, "total_seconds": finished - started}
    artifacts.write_manifest(command, setup.config, setup.seed, timings, STATUS[exit_code])
    _ledger(out_base, command, artifacts, setup, exit_code, error, finished - started)
    if error is not None:
        _emit_error(error)
    for handler in handlers:
        logging.getLogger().removeHandler(handler)
        handler.close()
    return exit_code


def main(argv=None) -> int:
    args = parse_args(argv)
    return run(args.command, args.config, out=args.out, workers=args.workers, seed=args.seed, verbose=args.verbose)


if __name__ == "__main__":
    sys.exit(main())

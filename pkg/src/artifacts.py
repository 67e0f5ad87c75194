"""Directorios de corrida, archivos de artefactos y el manifiesto de cada corrida."""

import hashlib
import json
import logging
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
import scipy

from src import __version__
from src.errors import to_jsonable

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.12e"


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()


def dumps(data) -> str:
    return json.dumps(to_jsonable(data), indent=2, sort_keys=True) + "\n"


@dataclass
class ArtifactEntry:
    name: str
    kind: str
    sha256: str
    size: int


@dataclass
class RunArtifacts:
    """Escribe artefactos en ``run_dir`` y los recuerda para el manifiesto"""

    run_dir: Path
    entries: list[ArtifactEntry] = field(default_factory=list)

    def __post_init__(self):
        self.run_dir = Path(self.run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)

    def _record(self, path: Path, kind: str) -> Path:
        entry = ArtifactEntry(name=path.name, kind=kind, sha256=sha256_file(path), size=path.stat().st_size)
        self.entries = [e for e in self.entries if e.name != entry.name] + [entry]
        logger.info(f"Artefacto {kind} escrito en {path}")
        return path

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.run_dir / name
        frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
        return self._record(path, "csv")

    def write_json(self, name: str, data) -> Path:
        path = self.run_dir / name
        path.write_text(dumps(data), encoding="utf-8")
        return self._record(path, "json")

    def save_blocks(self, name: str, array: np.ndarray, header: dict) -> tuple[Path, Path]:
        """Bloque crudo ``{name}.npy`` más un encabezado ``{name}_blocks.json`` que lo describe"""
        block = self.run_dir / f"{name}.npy"
        np.save(block, np.ascontiguousarray(array), allow_pickle=False)
        self._record(block, "npy")
        meta = self.write_json(f"{name}_blocks.json", {**header, "shape": list(array.shape), "dtype": str(array.dtype)})
        return block, meta

    def write_manifest(self, command: str, config: dict, seed: int, timings: dict, status: str) -> Path:
        manifest = {
            "command": command,
            "status": status,
            "config_hash": config_hash(config),
            "seed": seed,
            "created_utc": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
            "versions": {
                "blochframes": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "pandas": pd.__version__,
            },
            "timings": timings,
            "artifacts": [{"name": e.name, "kind": e.kind, "sha256": e.sha256, "size": e.size}
                          for e in sorted(self.entries, key=lambda e: e.name)],
        }
        path = self.run_dir / "manifest.json"
        path.write_text(dumps(manifest), encoding="utf-8")
        return path

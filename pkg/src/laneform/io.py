"""CSV/JSON artifact writers.

Floats are printed with 17 significant digits so that a value round-trips
exactly.  CSVs carry no wall-clock data, so identical runs produce
identical files; timing lives only in the run manifest.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import Grid, State


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def run_id_for(payload: dict) -> str:
    """Content hash of the resolved run description (config, command, seed)."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class ArtifactWriter:
    """Writes files under one output directory and keeps the inventory."""

    def __init__(self, out_dir: str | Path, run_id: str):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.run_id = run_id
        self.files: list[str] = []

    def _track(self, path: Path) -> None:
        rel = str(path.relative_to(self.out_dir))
        if rel not in self.files:
            self.files.append(rel)

    def write_json(self, name: str, payload: dict) -> Path:
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        body = dict(payload)
        body.setdefault("run_id", self.run_id)
        path.write_text(json.dumps(body, indent=2, sort_keys=True, default=_json_default) + "\n")
        self._track(path)
        return path

    def write_csv(
        self, name: str, header: Sequence[str], rows: Iterable[Sequence], sidecar: dict | None = None
    ) -> Path:
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
        self._track(path)
        self.write_json(name[: -len(".csv")] + ".json" if name.endswith(".csv") else name + ".json",
                        dict(sidecar or {}, file=name))
        return path

    def write_snapshot(
        self, name: str, state: State, grid: Grid, sidecar: dict, with_rho: bool = True
    ) -> Path:
        X, Y = grid.mesh()
        I, J = np.meshgrid(np.arange(grid.Nx), np.arange(grid.Ny), indexing="ij")
        cols = [I, J, X, Y, state.r, state.b] + ([state.rho] if with_rho else [])
        header = ["i", "j", "x", "y", "r", "b"] + (["rho"] if with_rho else [])
        rows = zip(*(c.ravel() for c in cols))
        return self.write_csv(name, header, rows, sidecar)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def read_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Column-wise float arrays from a CSV written by ``ArtifactWriter``."""
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float, ndmin=1)
    return {name: np.atleast_1d(data[name]) for name in data.dtype.names}

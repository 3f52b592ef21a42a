"""Snapshot and time-series files.

Formats:
- fields_{step:08}.vtk: legacy ASCII unstructured grid with point scalars phi, psi, mu, q
- phi_{step:08}.pgm / psi_{step:08}.pgm: binary 8-bit grayscale on the nodal grid, top row = largest y
- nodes_{step:08}.csv: columns x,y,phi,psi,mu,z,q
- timeseries.csv: one row per completed step

Floats are written with 17 significant digits, so files are bitwise reproducible and
read back to the same doubles.
"""

import csv
import logging
import os
import re
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import meshio
import numpy as np

from diagnostics import ROW_FIELDS, TimeSeriesRow
from errors import InvalidMesh, InvalidParams, OutputError
from fem_mesh import Mesh, build_mesh
from vi_solver import State

logger = logging.getLogger(__name__)

SNAPSHOT_FORMATS = ("vtk", "pgm", "csv")
NODE_COLUMNS = ("x", "y", "phi", "psi", "mu", "z", "q")
TIMESERIES_FILE = "timeseries.csv"
VTK_CELL_TRIANGLE = 5

# Value ranges mapped onto gray levels 0..255
PGM_RANGES = {"phi": (-1.0, 1.0), "psi": (0.0, 1.0)}

_STEP_PATTERN = re.compile(r"_(\d{8})\.\w+$")


def _fmt(value) -> str:
    return format(float(value), ".17g")


def _ensure_dir(out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputError(out_dir, e) from e
    return out_dir


# ------------- Writers -------------
def write_vtk(path, state: State, mesh: Mesh) -> Path:
    """Writes the fields of a state as a legacy VTK unstructured grid."""
    path = Path(path)
    lines = [
        "# vtk DataFile Version 3.0",
        f"phase field step {state.step} time {_fmt(state.time)}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_nodes} double",
    ]
    lines.extend(f"{_fmt(x)} {_fmt(y)} 0" for x, y in mesh.nodes)
    lines.append(f"CELLS {mesh.n_elements} {4 * mesh.n_elements}")
    lines.extend(f"3 {a} {b} {c}" for a, b, c in mesh.elements)
    lines.append(f"CELL_TYPES {mesh.n_elements}")
    lines.extend([str(VTK_CELL_TRIANGLE)] * mesh.n_elements)
    lines.append(f"POINT_DATA {mesh.n_nodes}")
    for name, values in (("phi", state.phi), ("psi", state.psi), ("mu", state.w), ("q", state.q)):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(v) for v in values)
    try:
        with open(path, "w", encoding="ascii", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
    except OSError as e:
        raise OutputError(path, e) from e
    return path


def pgm_levels(values: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Maps [lo, hi] onto gray levels 0..255, rounding half up and clipping outside values."""
    scaled = (np.asarray(values, dtype=np.float64) - lo) / (hi - lo) * 255.0
    return np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)


def write_pgm(path, values: np.ndarray, mesh: Mesh, lo: float, hi: float) -> Path:
    """Writes a nodal field as a binary (P5) grayscale image of the nodal grid."""
    path = Path(path)
    image = pgm_levels(values, lo, hi).reshape(mesh.grid_shape)[::-1]
    rows, cols = image.shape
    try:
        with open(path, "wb") as f:
            f.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
            f.write(np.ascontiguousarray(image).tobytes())
    except OSError as e:
        raise OutputError(path, e) from e
    return path


def write_nodal_csv(path, state: State, mesh: Mesh) -> Path:
    """Writes raw nodal values, one row per node."""
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(NODE_COLUMNS)
            for j in range(mesh.n_nodes):
                writer.writerow(
                    [
                        _fmt(mesh.nodes[j, 0]),
                        _fmt(mesh.nodes[j, 1]),
                        _fmt(state.phi[j]),
                        _fmt(state.psi[j]),
                        _fmt(state.w[j]),
                        _fmt(state.z[j]),
                        _fmt(state.q[j]),
                    ]
                )
    except OSError as e:
        raise OutputError(path, e) from e
    return path


def write_snapshot(state: State, mesh: Mesh, formats: Iterable[str], out_dir) -> List[Path]:
    """Writes one snapshot in each requested format; returns the written paths."""
    out_dir = _ensure_dir(out_dir)
    step = state.step
    written: List[Path] = []
    for fmt in formats:
        if fmt == "vtk":
            written.append(write_vtk(out_dir / f"fields_{step:08}.vtk", state, mesh))
        elif fmt == "pgm":
            for name, (lo, hi) in PGM_RANGES.items():
                written.append(write_pgm(out_dir / f"{name}_{step:08}.pgm", getattr(state, name), mesh, lo, hi))
        elif fmt == "csv":
            written.append(write_nodal_csv(out_dir / f"nodes_{step:08}.csv", state, mesh))
        else:
            raise InvalidParams(f"unknown snapshot format {fmt!r}; expected one of {SNAPSHOT_FORMATS}")
    logger.debug(f"snapshot step {step}: {len(written)} files")
    return written


def write_timeseries(rows: Sequence[TimeSeriesRow], out_dir) -> Path:
    """Writes timeseries.csv with one row per completed step."""
    if not rows:
        raise ValueError("timeseries needs at least one row")
    path = _ensure_dir(out_dir) / TIMESERIES_FILE
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(ROW_FIELDS)
            for row in rows:
                writer.writerow([v if isinstance(v, int) else _fmt(v) for v in row.values()])
    except OSError as e:
        raise OutputError(path, e) from e
    logger.info(f"wrote {len(rows)} rows to {path}")
    return path


# ------------- Readers -------------
@dataclass(frozen=True)
class Snapshot:
    """Nodal fields read back from a snapshot file."""

    mesh: Mesh
    fields: Dict[str, np.ndarray]
    step: Optional[int] = None


def _mesh_for(points: np.ndarray, path: Path) -> Mesh:
    side = int(round(np.sqrt(len(points))))
    if side * side != len(points) or side < 3:
        raise InvalidMesh(f"{path}: {len(points)} nodes do not form a square grid")
    mesh = build_mesh(side - 1)
    if not np.allclose(points[:, :2], mesh.nodes, rtol=0.0, atol=1e-12):
        raise InvalidMesh(f"{path}: node coordinates do not match the uniform mesh")
    return mesh


def read_snapshot(path) -> Snapshot:
    """Reads a nodal CSV or VTK snapshot written by write_snapshot."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"snapshot not found: {path}")
    match = _STEP_PATTERN.search(path.name)
    step = int(match.group(1)) if match else None
    suffix = path.suffix.lower()
    if suffix == ".csv":
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            missing = set(NODE_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing columns {sorted(missing)}")
            records = list(reader)
        columns = {name: np.array([float(r[name]) for r in records]) for name in NODE_COLUMNS}
        points = np.column_stack([columns["x"], columns["y"]])
        fields = {name: columns[name] for name in NODE_COLUMNS[2:]}
    elif suffix == ".vtk":
        try:
            data = meshio.read(path)
        except (meshio.ReadError, ValueError, KeyError, IndexError) as e:
            raise ValueError(f"{path}: unreadable VTK snapshot ({e})") from e
        points = np.asarray(data.points, dtype=np.float64)
        fields = {name: np.asarray(values, dtype=np.float64).ravel() for name, values in data.point_data.items()}
    else:
        raise ValueError(f"unsupported snapshot format: {path.suffix}")
    return Snapshot(mesh=_mesh_for(points, path), fields=fields, step=step)


# ------------- Background writer -------------
class SnapshotWriter:
    """Writes snapshots on a bounded pool of worker threads.

    At most max_workers snapshots are queued or in flight; submit blocks beyond that.
    States must be frozen before submission.
    """

    def __init__(self, mesh: Mesh, formats: Sequence[str], out_dir, max_workers: Optional[int] = None):
        if max_workers is None:
            max_workers = int(os.getenv("CHSH_THREADS", "1"))
        if max_workers < 1:
            raise InvalidParams(f"CHSH_THREADS must be >= 1, got {max_workers}")
        self._mesh = mesh
        self._formats = tuple(formats)
        self._out_dir = Path(out_dir)
        self._max = max_workers
        self._semaphore = threading.Semaphore(max_workers)
        self._executor = ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="snapshot")
        self._futures: List[Future] = []

    @property
    def max_workers(self) -> int:
        return self._max

    def submit(self, state: State) -> None:
        """Queues a snapshot of a completed state."""
        if not self._formats:
            return
        self._semaphore.acquire()
        try:
            future = self._executor.submit(write_snapshot, state, self._mesh, self._formats, self._out_dir)
        except Exception:
            self._semaphore.release()
            raise
        future.add_done_callback(lambda _: self._semaphore.release())
        self._futures.append(future)

    def flush(self) -> List[Path]:
        """Waits for all queued snapshots; raises the first write failure."""
        written: List[Path] = []
        first_error: Optional[BaseException] = None
        for future in self._futures:
            try:
                written.extend(future.result())
            except Exception as e:
                if first_error is None:
                    first_error = e
        self._futures.clear()
        if first_error is not None:
            logger.error(f"snapshot writing failed: {first_error}")
            raise first_error
        return written

    def close(self) -> List[Path]:
        try:
            return self.flush()
        finally:
            self._executor.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if exc_type is None:
            self.close()
        else:
            self._executor.shutdown(wait=True)
        return False

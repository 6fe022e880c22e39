"""
Result files: time series CSV, per-field snapshots (CSV or legacy VTK) and
rate tables. Floats are written with 17 significant digits so every value
survives a text round trip.
"""
import csv
import math
from pathlib import Path
from typing import IO, Iterable, List, Tuple, Union

import numpy as np

from .conv_harness import RATE_HEADER, RateTable
from .diagnostics import SERIES_HEADER, SeriesRecord
from .exceptions import OutputError
from .sav_stepper import State

PathLike = Union[str, Path]

# Legacy VTK cell type ids by simplex dimension
VTK_CELL_TYPES = {1: 3, 2: 5, 3: 10}
SNAPSHOT_AXES = ('x', 'y', 'z')


def format_float(value: float) -> str:
    if isinstance(value, (int, np.integer)):
        return str(value)
    if math.isnan(value):
        return 'nan'
    return '%.17g' % value


def _open_for_writing(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        return path.open('w', encoding='utf-8', newline='')
    except OSError as exc:
        raise OutputError(f"cannot open for writing: {exc}", str(path)) from exc


def write_series(records: Iterable[SeriesRecord], path: PathLike) -> Path:
    """Diagnostics time series, one row per record"""
    path = Path(path)
    try:
        with _open_for_writing(path) as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(SERIES_HEADER)
            for record in records:
                writer.writerow([format_float(value) for value in record.as_row()])
    except OSError as exc:
        raise OutputError(f"write failed: {exc}", str(path)) from exc
    return path


def snapshot_fields(state: State) -> List[Tuple[str, np.ndarray]]:
    fields = [('u', state.U), ('n', state.N), ('mu', state.MU), ('sigma', state.SIGMA)]
    return [(name, function.coefficients) for name, function in fields if function is not None]


def write_snapshot(state: State, path: PathLike) -> List[Path]:
    """One CSV per field, rows 'x[,y[,z]],value' ordered by degree of freedom

    ``path`` is a stem; the field name is appended (``step_000010`` gives
    ``step_000010_u.csv``, ``step_000010_n.csv``, ...).
    """
    stem = Path(path)
    space = state.U.space
    axes = SNAPSHOT_AXES[:space.mesh.dim]
    written = []
    for name, values in snapshot_fields(state):
        target = stem.with_name(f"{stem.name}_{name}.csv")
        try:
            with _open_for_writing(target) as handle:
                writer = csv.writer(handle, lineterminator='\n')
                writer.writerow(axes + ('value',))
                for point, value in zip(space.dof_points, values):
                    writer.writerow([format_float(c) for c in point] + [format_float(value)])
        except OSError as exc:
            raise OutputError(f"write failed: {exc}", str(target)) from exc
        written.append(target)
    return written


def read_snapshot(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    """Points and values of one snapshot CSV"""
    path = Path(path)
    try:
        with path.open('r', encoding='utf-8', newline='') as handle:
            rows = list(csv.reader(handle))
    except OSError as exc:
        raise OutputError(f"cannot read snapshot: {exc}", str(path)) from exc
    body = np.array([[float(cell) for cell in row] for row in rows[1:]], dtype=float)
    if body.size == 0:
        return np.empty((0, len(rows[0]) - 1)), np.empty(0)
    return body[:, :-1], body[:, -1]


def write_vtk(state: State, path: PathLike) -> Path:
    """Legacy ASCII unstructured grid with vertex values of every field"""
    path = Path(path)
    mesh = state.U.mesh
    points = np.zeros((mesh.num_nodes, 3))
    points[:, :mesh.dim] = mesh.nodes
    nverts = mesh.dim + 1
    try:
        with _open_for_writing(path) as handle:
            handle.write('# vtk DataFile Version 3.0\n')
            handle.write(f'tumour growth step {state.k} t={format_float(state.t)}\n')
            handle.write('ASCII\nDATASET UNSTRUCTURED_GRID\n')
            handle.write(f'POINTS {mesh.num_nodes} double\n')
            for point in points:
                handle.write(' '.join(format_float(c) for c in point) + '\n')
            handle.write(f'CELLS {mesh.num_elements} {mesh.num_elements * (nverts + 1)}\n')
            for element in mesh.elements:
                handle.write(f'{nverts} ' + ' '.join(str(v) for v in element) + '\n')
            handle.write(f'CELL_TYPES {mesh.num_elements}\n')
            handle.write(f'{VTK_CELL_TYPES[mesh.dim]}\n' * mesh.num_elements)
            handle.write(f'POINT_DATA {mesh.num_nodes}\n')
            for name, values in snapshot_fields(state):
                handle.write(f'SCALARS {name} double 1\nLOOKUP_TABLE default\n')
                # Vertex dofs come first for both element degrees
                for value in values[:mesh.num_nodes]:
                    handle.write(format_float(value) + '\n')
    except OSError as exc:
        raise OutputError(f"write failed: {exc}", str(path)) from exc
    return path


def write_rate_table(table: RateTable, target: Union[PathLike, IO[str]]) -> None:
    """Rate table CSV to a path or an open text stream"""
    if hasattr(target, 'write'):
        _write_rate_rows(table, target)
        return
    path = Path(target)
    try:
        with _open_for_writing(path) as handle:
            _write_rate_rows(table, handle)
    except OSError as exc:
        raise OutputError(f"write failed: {exc}", str(path)) from exc


def _write_rate_rows(table: RateTable, handle: IO[str]) -> None:
    writer = csv.writer(handle, lineterminator='\n')
    writer.writerow(RATE_HEADER)
    for row in table.rows():
        writer.writerow([format_float(value) if isinstance(value, (float, np.floating)) else value
                         for value in row])

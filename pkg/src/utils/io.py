"""
Result serialization - Grid CSVs, JSON reports and run manifests

All files are written atomically (temporary file in the target directory,
then os.replace). Floats in CSVs carry 17 significant digits.
"""

import hashlib
import json
import logging
import os
import tempfile
import time
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src import __version__
from src.geometry.grid import DiskGrid

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.16e'


def _atomic_write(path: str, write) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp_', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            write(f)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def grid_frame(grid: DiskGrid, columns: Dict[str, np.ndarray]) -> pd.DataFrame:
    """
    DataFrame with re_w, im_w and the named columns

    Complex columns are split into re_<name> and im_<name>.
    """
    if grid.size == 0:
        raise ValueError("Cannot emit an empty grid")
    data = {'re_w': grid.points.real, 'im_w': grid.points.imag}
    for name, values in columns.items():
        values = np.asarray(values)
        if values.shape != (grid.size,):
            raise ValueError(f"Column '{name}' has shape {values.shape}, expected ({grid.size},)")
        if np.iscomplexobj(values):
            data[f"re_{name}"] = values.real
            data[f"im_{name}"] = values.imag
        else:
            data[name] = values
    return pd.DataFrame(data)


def field_columns(field: Any) -> Dict[str, np.ndarray]:
    """
    Named columns of a grid field

    Curvature fields give k (or k<i><j> for matrix fields), Chern fields
    c1..cn, theta fields ratio and form, Psi checks phi and residual.
    """
    if hasattr(field, 'coefficients'):
        return {f"c{m}": field.coefficients[:, m] for m in range(1, field.coefficients.shape[1])}
    if hasattr(field, 'ratio_values'):
        columns = {'ratio': field.ratio_values}
        if field.form_values is not None:
            columns['form'] = np.asarray(field.form_values, dtype=complex)
        return columns
    if hasattr(field, 'residual_values'):
        return {'phi': field.phi_values, 'residual': field.residual_values}
    values = np.asarray(field.values)
    if values.ndim == 1:
        return {'k': values}
    n = values.shape[-1]
    return {f"k{i + 1}{j + 1}": values[:, i, j] for i in range(n) for j in range(n)}


def emit_grid(field: Any, path: str, columns: Optional[Dict[str, np.ndarray]] = None) -> str:
    """
    Write a grid field as CSV

    Args:
        field: Object with a .grid (CurvatureField, ChernField, ThetaField, PsiCheck)
        path: Output path
        columns: Explicit columns instead of the field's own

    Returns:
        The written path
    """
    if columns is None:
        columns = field_columns(field)
    frame = grid_frame(field.grid, columns)
    _atomic_write(path, lambda f: frame.to_csv(f, index=False, float_format=FLOAT_FORMAT))
    logger.info(f"Wrote {len(frame)} rows x {len(frame.columns)} columns to {path}")
    return path


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and complex numbers for json.dump"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return {'re': float(value.real), 'im': float(value.imag)}
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def emit_report(report: Dict[str, Any], path: str) -> str:
    """Write a JSON report (sorted keys, indent 2)"""
    payload = to_jsonable(report)
    _atomic_write(path, lambda f: f.write(json.dumps(payload, indent=2, sort_keys=True) + '\n'))
    logger.info(f"Wrote report to {path}")
    return path


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(output_path: str) -> str:
    return f"{output_path}.manifest.json"


def write_manifest(
    output_path: str,
    argv: Sequence[str],
    spec_digests: List[str],
    grid: Optional[DiskGrid],
    tolerances: Dict[str, float],
    started: float,
    outputs: Optional[List[str]] = None
) -> str:
    """
    Write the run manifest sidecar of an output file

    Args:
        output_path: Primary output (the sidecar is <output>.manifest.json)
        argv: Command line (without the program name)
        spec_digests: SHA-256 of every input spec
        grid: Grid used, if any
        tolerances: Tolerances in effect
        started: time.time() at command start
        outputs: Files to digest (defaults to the primary output)

    Returns:
        Manifest path
    """
    outputs = outputs or [output_path]
    manifest = {
        'argv': list(argv),
        'spec_sha256': spec_digests,
        'grid': grid.describe() if grid is not None else None,
        'tolerances': tolerances,
        'version': __version__,
        'wall_clock_seconds': round(time.time() - started, 3),
        'outputs': {os.path.basename(p): file_digest(p) for p in outputs},
    }
    return emit_report(manifest, manifest_path(output_path))


def load_manifest(path: str) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)

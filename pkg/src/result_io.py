"""
Result files: atomic CSV/JSON writers, dataset reader, and the documented
column/JSON schema.
"""
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from src import __version__
from src.dynamics import RECORD_COLUMNS, MeasurementSet

logger = logging.getLogger(__name__)

UNITS = 'dimensionless (energy unit Omega_1, time Omega_1 t)'
SCHEMA_PATH = Path(__file__).parent / 'schemas' / 'result.schema.json'

BRANCH_COLUMNS = ['re_0', 'im_0', 're_1', 'im_1', 're_2', 'im_2']

CSV_COLUMNS: Dict[str, List[str]] = {
    'spectrum': ['gamma'] + BRANCH_COLUMNS + ['ep_flag'],
    'arcs': ['w', 'gamma', 'arc', 'order', 'value_re', 'value_im', 'locator_residual'],
    'nexus': ['w', 'gamma', 'order', 'value_re', 'value_im', 'locator_residual'],
    'perturb': ['theta'] + BRANCH_COLUMNS,
    'berry': ['branch_id', 'cycles_to_closure', 'phase', 'phase_over_pi', 'loop_radius', 'n_samples'],
    'evolve': ['t', 'N', 'N1', 'N2', 'N3'],
    'snapshot': ['gamma', 'N_t0'],
    'dataset': list(RECORD_COLUMNS),
    'fit': ['t', 'observable', 'mean', 'std', 'model'],
    'alpha': ['gamma', 'alpha'],
}

PathLike = Union[str, Path]


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.', suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def to_jsonable(value: Any) -> Any:
    """Complex → [re, im]; numpy scalars/arrays → Python; non-finite floats → None."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (complex, np.complexfloating)):
        return [to_jsonable(float(value.real)), to_jsonable(float(value.imag))]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(path: PathLike, payload: Dict[str, Any]) -> Path:
    """Write a JSON document with sorted keys, atomically."""
    path = Path(path)
    text = json.dumps(to_jsonable(payload), indent=2, sort_keys=True) + '\n'
    _atomic_write_text(path, text)
    logger.info("Wrote %s", path)
    return path


def write_csv(path: PathLike, frame: pd.DataFrame, digits: int = 17) -> Path:
    """Write a CSV table with `digits` significant digits, atomically."""
    path = Path(path)
    text = frame.to_csv(index=False, float_format=f'%.{digits}g', lineterminator='\n')
    _atomic_write_text(path, text)
    logger.info("Wrote %s", path)
    return path


def read_table(path: PathLike) -> pd.DataFrame:
    """Read a CSV table written by write_csv, floats bit-exact."""
    return pd.read_csv(path, float_precision='round_trip')


def result_document(command: str, parameters: Dict[str, Any], results: Dict[str, Any],
                    tables: List[str], flagged: bool = False, error: Optional[str] = None,
                    seed: Optional[int] = None) -> Dict[str, Any]:
    """Envelope shared by every JSON output."""
    return {
        'command': command,
        'version': __version__,
        'units': UNITS,
        'parameters': parameters,
        'flagged': flagged,
        'error': error,
        'results': results,
        'tables': tables,
        'seed': seed,
    }


def load_schema() -> Dict[str, Any]:
    with open(SCHEMA_PATH, 'r') as f:
        return json.load(f)


def validate_document(document: Dict[str, Any]) -> List[str]:
    """
    Check a result document against the shipped schema's required keys and
    top-level types.

    Returns:
        List of problems, empty when the document conforms
    """
    schema = load_schema()
    type_map = {
        'string': (str,), 'boolean': (bool,), 'object': (dict,), 'array': (list,),
        'integer': (int,), 'number': (int, float), 'null': (type(None),),
    }
    problems = []
    for key in schema['required']:
        if key not in document:
            problems.append(f"missing key '{key}'")
    for key, spec in schema['properties'].items():
        if key not in document:
            continue
        allowed = spec['type'] if isinstance(spec['type'], list) else [spec['type']]
        python_types = tuple(t for name in allowed for t in type_map[name])
        if not isinstance(document[key], python_types):
            problems.append(f"key '{key}' should be {allowed}")
    return problems


def schema_text() -> str:
    """Human-readable CSV column list followed by the JSON schema."""
    lines = ['CSV tables (header row always present, 17 significant digits):']
    for name, columns in CSV_COLUMNS.items():
        lines.append(f'  {name}: {", ".join(columns)}')
    lines.append('')
    lines.append('JSON result schema:')
    lines.append(json.dumps(load_schema(), indent=2, sort_keys=True))
    return '\n'.join(lines)


def branches_frame(first_column: str, grid: np.ndarray, branches: np.ndarray) -> pd.DataFrame:
    """Table with a grid column then re/im of each of three branches."""
    data = {first_column: np.asarray(grid, dtype=float)}
    for k in range(3):
        data[f're_{k}'] = branches[k].real
        data[f'im_{k}'] = branches[k].imag
    return pd.DataFrame(data)


def write_dataset(path: PathLike, dataset: MeasurementSet, digits: int = 17) -> Path:
    """
    Write a dataset as `<path>` CSV plus a `<stem>.json` sidecar holding w,
    nominal_gamma and provenance.

    Returns:
        Path of the CSV file
    """
    path = Path(path)
    if path.suffix != '.csv':
        path = path.with_suffix('.csv')
    write_csv(path, dataset.records[RECORD_COLUMNS], digits=digits)
    sidecar = {
        'w': dataset.w,
        'nominal_gamma': dataset.nominal_gamma,
        'provenance': dataset.provenance,
        'units': UNITS,
    }
    write_json(path.with_suffix('.json'), sidecar)
    return path


def read_dataset(path: PathLike, w: Optional[float] = None,
                 nominal_gamma: Optional[float] = None) -> MeasurementSet:
    """
    Read a dataset CSV (and its sidecar JSON when present).

    Args:
        path: CSV file
        w: Overrides the sidecar value
        nominal_gamma: Overrides the sidecar value

    Returns:
        MeasurementSet

    Raises:
        FileNotFoundError: CSV missing
        ValueError: Columns missing or values invalid
    """
    path = Path(path)
    records = read_table(path)
    missing = [c for c in RECORD_COLUMNS if c not in records.columns]
    if missing:
        raise ValueError(f"dataset {path} lacks columns {missing}")
    records = records[RECORD_COLUMNS].copy()
    records['observable'] = records['observable'].astype(str)
    if (records['repetitions'] < 1).any():
        raise ValueError(f"dataset {path} has records with repetitions < 1")
    if records[['t', 'mean', 'std']].isna().any().any():
        raise ValueError(f"dataset {path} has missing numeric values")

    sidecar: Dict[str, Any] = {}
    sidecar_path = path.with_suffix('.json')
    if sidecar_path.exists():
        with open(sidecar_path, 'r') as f:
            sidecar = json.load(f)

    w_value = w if w is not None else sidecar.get('w')
    nominal = nominal_gamma if nominal_gamma is not None else sidecar.get('nominal_gamma')
    if w_value is None or nominal is None:
        raise ValueError(f"dataset {path} needs w and nominal_gamma (sidecar or arguments)")
    return MeasurementSet(
        w=float(w_value),
        nominal_gamma=float(nominal),
        records=records,
        provenance=sidecar.get('provenance', {}),
    )

"""CSV/JSON reading and writing with seed and config-hash headers."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from importlib import resources
from pathlib import Path

import numpy as np

from .design import DesignError, GroupSpec


class InputError(ValueError):
    """Unreadable or malformed input file."""


def software_version() -> str:
    from . import __version__
    return __version__


def canonical_json(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config) -> str:
    """First 16 hex digits of the SHA-256 of the canonical JSON form."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def to_jsonable(obj):
    """Plain JSON types; non-finite floats become ``None``."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def header(seed: int, chash: str) -> dict:
    return {"software": "sparseproj", "version": software_version(), "seed": int(seed), "config_hash": chash}


def _header_comment(seed: int, chash: str) -> str:
    h = header(seed, chash)
    return f"# {h['software']} {h['version']} seed={h['seed']} config_hash={h['config_hash']}\n"


def write_csv(path, columns: list[str], rows, seed: int, chash: str) -> Path:
    """CSV with a leading ``#`` comment carrying the seed and config hash."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(_header_comment(seed, chash))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else "nan"
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_json(path, obj: dict, seed: int, chash: str) -> Path:
    """JSON object whose ``_header`` member carries the seed and config hash."""
    path = Path(path)
    out = {"_header": header(seed, chash), **to_jsonable(obj)}
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise InputError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def read_matrix_csv(path) -> tuple[np.ndarray, list[str] | None]:
    """Numeric CSV; ``#`` lines are skipped and a non-numeric first row is a header.

    Errors name the 1-based file line and column of the offending cell.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise InputError(f"{path}: file not found") from None
    rows, names, width = [], None, None
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or (row[0].lstrip().startswith("#")) or all(not c.strip() for c in row):
            continue
        if names is None and not rows and not _numeric_row(row):
            names = [c.strip() for c in row]
            width = len(row)
            continue
        if width is None:
            width = len(row)
        if len(row) != width:
            raise InputError(f"{path}: line {lineno} has {len(row)} fields, expected {width}")
        vals = []
        for col, cell in enumerate(row, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise InputError(f"{path}: line {lineno}, column {col}: cannot parse {cell.strip()!r} as a number") from None
            if not math.isfinite(v):
                raise InputError(f"{path}: line {lineno}, column {col}: non-finite value {cell.strip()!r}")
            vals.append(v)
        rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return np.array(rows, dtype=float), names


def _numeric_row(row) -> bool:
    try:
        [float(c) for c in row]
    except ValueError:
        return False
    return True


def read_vector_csv(path) -> np.ndarray:
    """A single numeric column (or a single row)."""
    M, _ = read_matrix_csv(path)
    if M.shape[1] == 1:
        return M[:, 0]
    if M.shape[0] == 1:
        return M[0]
    raise InputError(f"{path}: expected one column, found {M.shape[1]}")


def read_groups_json(path) -> GroupSpec:
    """Group file: a list (or ``{"groups": [...]}``) of ``{name, start, end}``, 1-based inclusive."""
    data = read_json(path)
    items = data.get("groups") if isinstance(data, dict) else data
    if not isinstance(items, list) or not items:
        raise InputError(f"{path}: expected a non-empty list of groups")
    ranges, names = [], []
    for i, g in enumerate(items, start=1):
        if not isinstance(g, dict) or "start" not in g or "end" not in g:
            raise InputError(f"{path}: group entry {i} needs 'start' and 'end'")
        try:
            ranges.append((int(g["start"]), int(g["end"])))
        except (TypeError, ValueError):
            raise InputError(f"{path}: group entry {i}: start/end must be integers") from None
        names.append(str(g.get("name", f"g{i}")))
    try:
        return GroupSpec.from_ranges(ranges, names)
    except DesignError as exc:
        raise InputError(f"{path}: {exc}") from None


def write_groups_json(path, groups: GroupSpec) -> Path:
    path = Path(path)
    items = [{"name": nm, "start": int(a) + 1, "end": int(b)}
             for nm, a, b in zip(groups.names, groups.starts, groups.ends)]
    path.write_text(json.dumps(items, indent=2) + "\n")
    return path


def write_matrix_csv(path, M, names=None) -> Path:
    """Plain numeric CSV without provenance header (used for input fixtures)."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if names:
            w.writerow(names)
        for row in M:
            w.writerow([repr(float(v)) for v in row])
    return path


def bundled(name: str) -> Path:
    """Path of a bundled data file, e.g. ``bundled("toy_X.csv")``."""
    p = resources.files("sparseproj") / "data" / name
    if not p.is_file():
        raise InputError(f"no bundled data file {name!r}")
    return Path(str(p))

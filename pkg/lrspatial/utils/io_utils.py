import json
import os
import re
import tempfile
from pathlib import Path
from typing import Any, Union

import numpy as np
import pandas as pd

from lrspatial.errors import ParseError

PathLike = Union[str, Path]


def _atomic_target(path: PathLike):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    return path, Path(tmp)


def write_text_atomic(path: PathLike, text: str) -> Path:
    """Write ``text`` to a temp file next to ``path`` and rename it into
    place, so readers never observe a partial file."""
    path, tmp = _atomic_target(path)
    try:
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
    return path


def write_json_atomic(path: PathLike, payload: Any) -> Path:
    return write_text_atomic(path, json.dumps(payload, indent=2, sort_keys=False) + "\n")


def write_csv_atomic(path: PathLike, frame: pd.DataFrame) -> Path:
    # Fixed float format keeps repeated runs byte-identical.
    return write_text_atomic(
        path, frame.to_csv(index=False, float_format="%.10g", lineterminator="\n")
    )


_ID_COLUMNS = {"id", "unit", "unit_id", "fid"}
_LINE_PATTERN = re.compile(r"line (\d+)")


def read_numeric_csv(path: PathLike) -> pd.DataFrame:
    """Read a CSV of named numeric columns; an optional leading unit-id
    column is dropped.

    Malformed rows and non-numeric cells raise ``ParseError`` naming the
    line (header is line 1) and, for cells, the column.
    """
    try:
        frame = pd.read_csv(path)
    except pd.errors.ParserError as e:
        match = _LINE_PATTERN.search(str(e))
        raise ParseError(f"{path}: {e}", int(match.group(1)) if match else None) from e
    except pd.errors.EmptyDataError as e:
        raise ParseError(f"{path}: file is empty.") from e
    if frame.shape[1] and str(frame.columns[0]).strip().lower() in _ID_COLUMNS:
        frame = frame.iloc[:, 1:]
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy() & frame.notna().to_numpy()
    missing = frame.isna().to_numpy()
    for mask, problem in ((bad, "non-numeric value"), (missing, "missing value")):
        if mask.any():
            row, col = np.argwhere(mask)[0]
            raise ParseError(
                f"{path}: {problem} in column '{frame.columns[col]}'.", int(row) + 2
            )
    return numeric.astype(float)

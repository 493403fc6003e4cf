"""CSV ingestion and reference-measure construction for the command line."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np

from .problem import ProblemError

REFERENCE_KINDS = ("uniform-cube", "standard-gaussian")
GENERATOR = "numpy.random.default_rng (PCG64)"


def _read_table(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    if not path.is_file():
        raise ProblemError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if not rows:
        raise ProblemError(f"{path} is empty")
    return [c.strip() for c in rows[0]], rows[1:]


def _columns(path, header, body, names: Sequence[str]) -> np.ndarray:
    idx = []
    for name in names:
        if name not in header:
            raise ProblemError(f"{path}: missing column {name!r} (have {header})")
        idx.append(header.index(name))
    out = np.empty((len(body), len(idx)))
    for r, row in enumerate(body):
        for k, (name, c) in enumerate(zip(names, idx)):
            # row numbers are 1-based data rows, the header is row 0
            cell = row[c].strip() if c < len(row) else ""
            try:
                out[r, k] = float(cell)
            except ValueError:
                raise ProblemError(
                    f"{path}: non-numeric value {cell!r} at row {r + 1}, column {name!r}"
                ) from None
            if not np.isfinite(out[r, k]):
                raise ProblemError(f"{path}: non-finite value at row {r + 1}, column {name!r}")
    return out


def ingest_csv(path, x_cols: Sequence[str], y_cols: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Read covariate and response columns from a headed, comma-separated file.

    Covariates are centered to mean zero under the uniform weights ``1/n``.

    Raises:
        ProblemError: on a missing column, a non-numeric cell (row and column
            are named), fewer than two rows, or a singular covariate block.
    """
    if not x_cols or not y_cols:
        raise ProblemError("at least one covariate and one response column are required")
    header, body = _read_table(path)
    if len(body) < 2:
        raise ProblemError(f"{path}: need at least 2 data rows, found {len(body)}")
    X = _columns(path, header, body, x_cols)
    Y = _columns(path, header, body, y_cols)
    X = X - X.mean(axis=0)
    sigma = X.T @ X / X.shape[0]
    if np.linalg.eigvalsh(sigma)[0] <= 1e-10 * np.trace(sigma):
        raise ProblemError(f"{path}: covariate columns {list(x_cols)} have a singular second moment")
    return X, Y


def make_reference(source: str, m: int, d_y: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference atoms ``U`` (m, d_y) with uniform weights.

    ``source`` is ``"uniform-cube"`` (uniform on ``[0, 1]^d_y``),
    ``"standard-gaussian"``, or the path of a headed CSV whose columns are the
    ``d_y`` coordinates; ``m`` is ignored for files.
    """
    if source in REFERENCE_KINDS:
        if m < 1:
            raise ProblemError(f"m must be >= 1, got {m}")
        rng = np.random.default_rng(seed)
        if source == "uniform-cube":
            U = rng.random((m, d_y))
        else:
            U = rng.standard_normal((m, d_y))
    else:
        header, body = _read_table(source)
        if len(header) != d_y:
            raise ProblemError(f"{source}: reference file has {len(header)} columns, responses have {d_y}")
        if not body:
            raise ProblemError(f"{source}: reference file has no rows")
        U = _columns(source, header, body, header)
    return U, np.full(U.shape[0], 1.0 / U.shape[0])

"""Solver configuration and the per-iteration trace shared by both solvers."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Optional, Union

import numpy as np

from .problem import DiscreteProblem, Potentials, coupling, dual_objective, residuals

Auto = str  # the literal "auto"


class Mode(str, enum.Enum):
    VANILLA = "vanilla"
    MODIFIED = "modified"


@dataclass(frozen=True)
class SolverConfig:
    """Outer-loop settings.

    ``eta`` and ``radius`` accept ``"auto"``: the radius then defaults to the
    optimal-potential bound on ``||g||`` and the step size to ``epsilon``.
    """

    epsilon: Optional[float] = None
    eta: Union[float, Auto] = "auto"
    radius: Union[float, Auto] = "auto"
    max_iters: int = 1000
    tol: float = 1e-9
    mode: Mode = Mode.MODIFIED
    naive_exp: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        for name in ("eta", "radius"):
            val = getattr(self, name)
            if isinstance(val, str):
                if val != "auto":
                    raise ValueError(f"{name} must be 'auto' or a positive number, got {val!r}")
            elif not val > 0:
                raise ValueError(f"{name} must be positive, got {val}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class TraceRow:
    t: int
    dual: float
    row_res: float
    col_res: float
    mi_res: float
    f_sup: float
    g_sup: float
    h_sup: float
    g_displacement: Optional[float] = None
    gap: Optional[float] = None


@dataclass
class IterateTrace:
    header: dict[str, Any] = field(default_factory=dict)
    rows: list[TraceRow] = field(default_factory=list)
    converged: bool = False

    @property
    def duals(self) -> np.ndarray:
        return np.array([r.dual for r in self.rows])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def set_reference(self, value: float) -> None:
        """Fill the ``gap`` column against a reference dual value."""
        for r in self.rows:
            r.gap = value - r.dual

    def to_dict(self) -> dict[str, Any]:
        return {
            "header": _jsonable(self.header),
            "rows": [_jsonable(asdict(r)) for r in self.rows],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=True)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "IterateTrace":
        rows = [TraceRow(**row) for row in data["rows"]]
        header = dict(data["header"])
        return cls(header=header, rows=rows, converged=bool(header.get("converged", False)))

    @classmethod
    def loads(cls, text: str) -> "IterateTrace":
        return cls.from_dict(json.loads(text))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, enum.Enum):
        return obj.value
    return obj


def make_row(t: int, p: Potentials, prob: DiscreteProblem, g_displacement=None) -> TraceRow:
    res = residuals(coupling(p, prob), prob)
    f_sup, g_sup, h_sup = p.sup_norms()
    return TraceRow(
        t=t,
        dual=dual_objective(p, prob),
        row_res=res.row,
        col_res=res.col,
        mi_res=res.mean_independence,
        f_sup=f_sup,
        g_sup=g_sup,
        h_sup=h_sup,
        g_displacement=g_displacement,
    )


def has_converged(prev: TraceRow, row: TraceRow, tol: float, epsilon: float) -> bool:
    """All residuals below ``tol`` and the dual increase at most ``tol * epsilon``."""
    small = max(row.row_res, row.col_res, row.mi_res) <= tol
    return small and abs(row.dual - prev.dual) <= tol * epsilon and math.isfinite(row.dual)

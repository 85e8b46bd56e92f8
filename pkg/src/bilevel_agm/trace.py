"""Per-iteration trace records shared by all solvers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np


@dataclass
class TraceRecord:
    """One row of a solver run: iterate index, wall time, objective values,
    gaps against ground truth when known, and the step bookkeeping."""

    k: int
    wall_s: float
    f_val: float
    g_val: float
    a_k: float
    A_k: float
    f_gap: Optional[float] = None
    abs_f_gap: Optional[float] = None
    g_gap: Optional[float] = None
    aux_g: Optional[float] = None


@dataclass
class IterateTrace:
    """A full run: the final iterate plus one record per iteration.

    ``cuts`` holds the halfspaces encountered at each step when the solver
    was asked to record them; ``iterates`` the raw x_k when requested.
    """

    solver: str
    records: List[TraceRecord] = field(default_factory=list)
    x_final: Optional[np.ndarray] = None
    cuts: Optional[list] = None
    iterates: Optional[List[np.ndarray]] = None

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    def column(self, name: str) -> np.ndarray:
        vals = [getattr(r, name) for r in self.records]
        return np.array([np.nan if v is None else v for v in vals], dtype=float)

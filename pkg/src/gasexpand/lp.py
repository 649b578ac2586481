"""Bounded-variable LP core backed by the HiGHS dual simplex.

Columns are scaled by caller-supplied factors and every row is normalised by
its largest coefficient before it reaches HiGHS; all values crossing this
module's boundary are in original units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import highspy
import numpy as np

INF = math.inf
FEAS_TOL = 1e-7
_STATUS = highspy.HighsModelStatus


class LPError(RuntimeError):
    """Numerical failure inside the LP engine (distinct from infeasibility)."""


@dataclass
class LinearProgram:
    """``min c.x`` s.t. ``row_lo <= A x <= row_hi``, ``col_lo <= x <= col_hi``.

    ``rows`` holds one ``(indices, values)`` pair per row.  ``col_scale``
    multiplies scaled columns back to original units.
    """

    cost: np.ndarray
    col_lo: np.ndarray
    col_hi: np.ndarray
    rows: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    row_lo: list[float] = field(default_factory=list)
    row_hi: list[float] = field(default_factory=list)
    col_scale: np.ndarray | None = None
    basis: object | None = None

    def __post_init__(self) -> None:
        self.cost = np.asarray(self.cost, dtype=float)
        self.col_lo = np.asarray(self.col_lo, dtype=float)
        self.col_hi = np.asarray(self.col_hi, dtype=float)
        n = len(self.cost)
        if self.col_lo.shape != (n,) or self.col_hi.shape != (n,):
            raise ValueError("column bound arrays must match the cost vector")
        if len(self.rows) != len(self.row_lo) or len(self.rows) != len(self.row_hi):
            raise ValueError("row data lengths disagree")
        if np.any(np.isnan(self.col_lo)) or np.any(np.isnan(self.col_hi)):
            raise ValueError("NaN column bound")
        if self.col_scale is None:
            self.col_scale = np.ones(n)
        self.col_scale = np.asarray(self.col_scale, dtype=float)
        if self.col_scale.shape != (n,) or np.any(self.col_scale <= 0):
            raise ValueError("column scales must be positive")

    @property
    def num_cols(self) -> int:
        return len(self.cost)

    def add_row(self, indices: Sequence[int], values: Sequence[float], lo: float, hi: float) -> None:
        self.rows.append((np.asarray(indices, dtype=np.int32), np.asarray(values, dtype=float)))
        self.row_lo.append(float(lo))
        self.row_hi.append(float(hi))

    def dense(self) -> np.ndarray:
        a = np.zeros((len(self.rows), self.num_cols))
        for k, (idx, val) in enumerate(self.rows):
            np.add.at(a[k], idx, val)
        return a


@dataclass
class LPResult:
    status: str  # optimal | infeasible | unbounded
    x: np.ndarray | None = None
    row_dual: np.ndarray | None = None
    objective: float = math.nan
    iterations: int = 0
    basis: object | None = None
    certificate: np.ndarray | None = None
    primal_residual: float = 0.0


def _hinf(x: float) -> float:
    if x == INF:
        return highspy.kHighsInf
    if x == -INF:
        return -highspy.kHighsInf
    return x


class LPWorkspace:
    """A persistent HiGHS model for repeated bound changes and row additions."""

    def __init__(self, lp: LinearProgram) -> None:
        self.scale = lp.col_scale.copy()
        self.n = lp.num_cols
        self._cost_scale = max(1.0, float(np.max(np.abs(lp.cost * self.scale), initial=0.0)))
        self._row_scale: list[float] = []
        self._rows: list[tuple[np.ndarray, np.ndarray]] = []
        self._row_lo: list[float] = []
        self._row_hi: list[float] = []
        self.lo = lp.col_lo.copy()
        self.hi = lp.col_hi.copy()
        self.highs = highspy.Highs()
        h = self.highs
        h.setOptionValue("output_flag", False)
        h.setOptionValue("presolve", "off")
        h.setOptionValue("threads", 1)
        h.setOptionValue("primal_feasibility_tolerance", FEAS_TOL)
        h.setOptionValue("dual_feasibility_tolerance", FEAS_TOL)
        model = highspy.HighsLp()
        model.num_col_ = self.n
        model.num_row_ = 0
        model.col_cost_ = lp.cost * self.scale / self._cost_scale
        model.col_lower_ = [_hinf(v) for v in lp.col_lo / self.scale]
        model.col_upper_ = [_hinf(v) for v in lp.col_hi / self.scale]
        h.passModel(model)
        self.add_rows(lp.rows, lp.row_lo, lp.row_hi)
        if lp.basis is not None:
            h.setBasis(lp.basis)

    @property
    def num_rows(self) -> int:
        return len(self._rows)

    def add_rows(self, rows, lo: Sequence[float], hi: Sequence[float]) -> None:
        if not rows:
            return
        starts, index, value, lows, highs = [], [], [], [], []
        nnz = 0
        for (idx, val), l, u in zip(rows, lo, hi):
            idx = np.asarray(idx, dtype=np.int32)
            val = np.asarray(val, dtype=float) * self.scale[idx]
            big = float(np.max(np.abs(val), initial=0.0))
            if big == 0.0:
                raise ValueError("empty LP row")
            r = 1.0 / big
            self._row_scale.append(r)
            self._rows.append((idx, val * r))
            self._row_lo.append(l * r)
            self._row_hi.append(u * r)
            starts.append(nnz)
            index.append(idx)
            value.append(val * r)
            lows.append(_hinf(l * r))
            highs.append(_hinf(u * r))
            nnz += len(idx)
        self.highs.addRows(
            len(starts),
            np.array(lows),
            np.array(highs),
            nnz,
            np.array(starts, dtype=np.int32),
            np.concatenate(index).astype(np.int32),
            np.concatenate(value),
        )

    def add_row(self, indices, values, lo: float, hi: float) -> None:
        self.add_rows([(indices, values)], [lo], [hi])

    def set_bounds(self, cols: Sequence[int], lo: Sequence[float], hi: Sequence[float]) -> None:
        cols = np.asarray(cols, dtype=np.int32)
        if len(cols) == 0:
            return
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        self.lo[cols] = lo
        self.hi[cols] = hi
        s = self.scale[cols]
        self.highs.changeColsBounds(
            len(cols), cols, np.array([_hinf(v) for v in lo / s]), np.array([_hinf(v) for v in hi / s])
        )

    def _residual(self, xs: np.ndarray) -> float:
        worst = 0.0
        los = self.lo / self.scale
        his = self.hi / self.scale
        worst = max(worst, float(np.max(np.maximum(los - xs, 0.0), initial=0.0)))
        worst = max(worst, float(np.max(np.maximum(xs - his, 0.0), initial=0.0)))
        for (idx, val), l, u in zip(self._rows, self._row_lo, self._row_hi):
            a = float(np.dot(val, xs[idx]))
            worst = max(worst, l - a, a - u)
        return worst

    def solve(self) -> LPResult:
        h = self.highs
        h.run()
        status = h.getModelStatus()
        info = h.getInfo()
        iters = int(info.simplex_iteration_count)
        if status == _STATUS.kUnboundedOrInfeasible:
            # ambiguous verdict: clear the basis and re-run from scratch
            h.clearSolver()
            h.run()
            status = h.getModelStatus()
            iters += int(h.getInfo().simplex_iteration_count)
        if status == _STATUS.kInfeasible:
            cert = None
            _, has_ray, ray = h.getDualRay()
            if has_ray:
                cert = np.asarray(ray, dtype=float) * np.asarray(self._row_scale)
            return LPResult("infeasible", iterations=iters, certificate=cert)
        if status == _STATUS.kUnbounded:
            return LPResult("unbounded", iterations=iters)
        if status != _STATUS.kOptimal:
            raise LPError(f"LP engine returned {h.modelStatusToString(status)}")
        sol = h.getSolution()
        xs = np.asarray(sol.col_value, dtype=float)
        resid = self._residual(xs)
        if resid > 100 * FEAS_TOL:
            raise LPError(f"LP solution residual {resid:.3g} after scaling")
        x = xs * self.scale
        x = np.minimum(np.maximum(x, self.lo), self.hi)
        dual = np.asarray(sol.row_dual, dtype=float) * np.asarray(self._row_scale) * self._cost_scale
        objective = float(info.objective_function_value) * self._cost_scale
        return LPResult("optimal", x, dual, objective, iters, h.getBasis(), primal_residual=resid)


def lp_solve(lp: LinearProgram) -> LPResult:
    """Solve ``lp`` once from scratch (or from ``lp.basis`` when given)."""
    return LPWorkspace(lp).solve()

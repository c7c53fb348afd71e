"""Sparse linear-program container and solver.

Solving is delegated to HiGHS through :func:`scipy.optimize.linprog`; this
module owns the container, the status contract and the post-solve
feasibility check.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from evmpc.errors import InvalidProblemError

FEAS_TOL = 1e-7


class LpStatus(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ERROR = "error"


@dataclass
class LpProblem:
    """min c @ x  s.t.  A_eq x = b_eq,  A_le x <= b_le,  lower <= x <= upper.

    Constraint matrices are scipy sparse matrices (any format; stored as CSR).
    """

    c: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    a_eq: sp.csr_matrix
    b_eq: np.ndarray
    a_le: sp.csr_matrix
    b_le: np.ndarray
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.size
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.b_le = np.asarray(self.b_le, dtype=float).reshape(-1)
        self.a_eq = _as_csr(self.a_eq, self.b_eq.size, n)
        self.a_le = _as_csr(self.a_le, self.b_le.size, n)
        self.validate()

    @property
    def n_vars(self) -> int:
        return self.c.size

    def validate(self) -> None:
        n = self.n_vars
        if self.lower.shape != (n,) or self.upper.shape != (n,):
            raise InvalidProblemError("bound vectors must match the number of variables")
        if self.a_eq.shape != (self.b_eq.size, n):
            raise InvalidProblemError(
                f"A_eq has shape {self.a_eq.shape}, expected ({self.b_eq.size}, {n})")
        if self.a_le.shape != (self.b_le.size, n):
            raise InvalidProblemError(
                f"A_le has shape {self.a_le.shape}, expected ({self.b_le.size}, {n})")
        if self.names and len(self.names) != n:
            raise InvalidProblemError("names must have one entry per variable")
        if np.any(self.lower > self.upper):
            bad = int(np.flatnonzero(self.lower > self.upper)[0])
            raise InvalidProblemError(f"lower > upper for variable {self._name(bad)}")
        for label, arr in (("c", self.c), ("b_eq", self.b_eq), ("b_le", self.b_le),
                           ("A_eq", self.a_eq.data), ("A_le", self.a_le.data)):
            if not np.all(np.isfinite(arr)):
                raise InvalidProblemError(f"{label} contains non-finite values")
        if np.any(np.isnan(self.lower)) or np.any(np.isnan(self.upper)):
            raise InvalidProblemError("bounds contain NaN")

    def _name(self, j: int) -> str:
        return self.names[j] if self.names else f"x{j}"

    def max_violation(self, x: np.ndarray) -> float:
        """Largest constraint violation, each row scaled by its largest coefficient."""
        viol = [0.0]
        viol.append(float(np.max(self.lower - x, initial=0.0)))
        viol.append(float(np.max(x - self.upper, initial=0.0)))
        if self.b_eq.size:
            r = np.abs(self.a_eq @ x - self.b_eq) / _row_scale(self.a_eq)
            viol.append(float(r.max()))
        if self.b_le.size:
            r = (self.a_le @ x - self.b_le) / _row_scale(self.a_le)
            viol.append(float(r.max()))
        return max(viol)

    def to_lp_text(self) -> str:
        """Render in CPLEX LP format for inspection with external tools."""
        out = io.StringIO()
        names = [_lp_ident(self._name(j)) for j in range(self.n_vars)]

        def expr(coefs, cols):
            parts = []
            for a, j in zip(coefs, cols):
                sign = "-" if a < 0 else "+"
                parts.append(f"{sign} {abs(a):.17g} {names[j]}")
            text = " ".join(parts) or "0 " + (names[0] if names else "")
            return text[2:] if text.startswith("+ ") else text

        out.write("\\ evmpc LP dump\nMinimize\n obj: ")
        nz = np.flatnonzero(self.c)
        out.write(expr(self.c[nz], nz) + "\nSubject To\n")
        for label, mat, rhs, sense in (("e", self.a_eq, self.b_eq, "="),
                                       ("c", self.a_le, self.b_le, "<=")):
            for i in range(mat.shape[0]):
                row = mat.getrow(i)
                out.write(f" {label}{i}: {expr(row.data, row.indices)} {sense} {rhs[i]:.17g}\n")
        out.write("Bounds\n")
        for j in range(self.n_vars):
            lo, hi = self.lower[j], self.upper[j]
            lo_s = "-inf" if np.isneginf(lo) else f"{lo:.17g}"
            hi_s = "+inf" if np.isposinf(hi) else f"{hi:.17g}"
            out.write(f" {lo_s} <= {names[j]} <= {hi_s}\n")
        out.write("End\n")
        return out.getvalue()


def _lp_ident(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "_." else "_" for ch in name)


def _as_csr(mat, n_rows: int, n_cols: int) -> sp.csr_matrix:
    if mat is None:
        return sp.csr_matrix((n_rows, n_cols))
    return sp.csr_matrix(mat)


def _row_scale(mat: sp.csr_matrix) -> np.ndarray:
    return np.maximum(abs(mat).max(axis=1).toarray().ravel(), 1.0)


@dataclass
class LpSolution:
    status: LpStatus
    x: np.ndarray | None
    objective: float | None
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status is LpStatus.OPTIMAL


_STATUS = {0: LpStatus.OPTIMAL, 2: LpStatus.INFEASIBLE, 3: LpStatus.UNBOUNDED}


def solve(problem: LpProblem) -> LpSolution:
    """Solve with HiGHS dual simplex. Non-optimal outcomes are reported, never hidden."""
    problem.validate()
    if problem.n_vars == 0:
        if problem.b_eq.size and np.any(problem.b_eq != 0) or np.any(problem.b_le < 0):
            return LpSolution(LpStatus.INFEASIBLE, None, None, "empty problem with violated rows")
        return LpSolution(LpStatus.OPTIMAL, np.zeros(0), 0.0)
    res = linprog(
        problem.c,
        A_ub=problem.a_le if problem.b_le.size else None,
        b_ub=problem.b_le if problem.b_le.size else None,
        A_eq=problem.a_eq if problem.b_eq.size else None,
        b_eq=problem.b_eq if problem.b_eq.size else None,
        bounds=np.column_stack([problem.lower, problem.upper]),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-9,
                 "dual_feasibility_tolerance": 1e-9},
    )
    status = _STATUS.get(res.status, LpStatus.ERROR)
    if status is not LpStatus.OPTIMAL:
        return LpSolution(status, None, None, res.message)
    x = np.asarray(res.x, dtype=float)
    viol = problem.max_violation(x)
    if viol > FEAS_TOL:
        return LpSolution(LpStatus.ERROR, x, float(res.fun),
                          f"solver reported optimal but max violation is {viol:.3e}")
    return LpSolution(LpStatus.OPTIMAL, x, float(problem.c @ x), res.message)


class LpBuilder:
    """Incremental assembly of an :class:`LpProblem` from variable blocks and triplet rows."""

    def __init__(self):
        self.c: list[float] = []
        self.lower: list[float] = []
        self.upper: list[float] = []
        self.names: list[str] = []
        self._eq = ([], [], [])
        self._le = ([], [], [])
        self.b_eq: list[float] = []
        self.b_le: list[float] = []

    @property
    def n_vars(self) -> int:
        return len(self.c)

    def add_vars(self, count: int, name: str, lower=0.0, upper=np.inf, cost=0.0) -> np.ndarray:
        """Append ``count`` variables; returns their column indices."""
        start = self.n_vars
        self.c.extend(np.broadcast_to(np.asarray(cost, dtype=float), (count,)).tolist())
        self.lower.extend(np.broadcast_to(np.asarray(lower, dtype=float), (count,)).tolist())
        self.upper.extend(np.broadcast_to(np.asarray(upper, dtype=float), (count,)).tolist())
        if count == 1:
            self.names.append(name)
        else:
            self.names.extend(f"{name}[{k}]" for k in range(count))
        return np.arange(start, start + count)

    def add_var(self, name: str, lower=0.0, upper=np.inf, cost=0.0) -> int:
        return int(self.add_vars(1, name, lower, upper, cost)[0])

    def _add_row(self, store, rhs_list, cols, coefs, rhs) -> int:
        row = len(rhs_list)
        cols = np.atleast_1d(np.asarray(cols, dtype=int))
        coefs = np.broadcast_to(np.asarray(coefs, dtype=float), cols.shape)
        store[0].extend([row] * cols.size)
        store[1].extend(cols.tolist())
        store[2].extend(coefs.tolist())
        rhs_list.append(float(rhs))
        return row

    def _add_rows(self, store, rhs_list, cols, coefs, rhs) -> None:
        cols = np.asarray(cols, dtype=int)
        if cols.ndim == 1:
            cols = cols[:, None]
        m, k = cols.shape
        coefs = np.broadcast_to(np.asarray(coefs, dtype=float), (m, k))
        first = len(rhs_list)
        store[0].extend(np.repeat(np.arange(first, first + m), k).tolist())
        store[1].extend(cols.ravel().tolist())
        store[2].extend(coefs.ravel().tolist())
        rhs_list.extend(np.broadcast_to(np.asarray(rhs, dtype=float), (m,)).tolist())

    def add_le_rows(self, cols, coefs, rhs) -> None:
        """Append one ``<=`` row per row of the 2-D ``cols`` array."""
        self._add_rows(self._le, self.b_le, cols, coefs, rhs)

    def add_eq_rows(self, cols, coefs, rhs) -> None:
        self._add_rows(self._eq, self.b_eq, cols, coefs, rhs)

    def add_eq(self, cols, coefs, rhs) -> int:
        return self._add_row(self._eq, self.b_eq, cols, coefs, rhs)

    def add_le(self, cols, coefs, rhs) -> int:
        return self._add_row(self._le, self.b_le, cols, coefs, rhs)

    def add_ge(self, cols, coefs, rhs) -> int:
        return self.add_le(cols, -np.asarray(coefs, dtype=float), -rhs)

    def build(self) -> LpProblem:
        n = self.n_vars

        def mat(store, m):
            return sp.csr_matrix((store[2], (store[0], store[1])), shape=(m, n))

        return LpProblem(
            c=np.array(self.c), lower=np.array(self.lower), upper=np.array(self.upper),
            a_eq=mat(self._eq, len(self.b_eq)), b_eq=np.array(self.b_eq),
            a_le=mat(self._le, len(self.b_le)), b_le=np.array(self.b_le),
            names=list(self.names),
        )

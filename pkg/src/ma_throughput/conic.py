"""Small convex-program container solved with the Clarabel interior-point solver.

Only the constraint shapes the position and beamforming subproblems need:

* ``AffineCon``:    expr >= 0   (or == 0)
* ``QuadCon``:      expr >= sum_m w_m * aff_m**2            (w_m >= 0)
* ``ExpCon``:       expr >= scale * exp(arg)                (scale > 0)
* ``LogCon``:       expr <= scale * log(arg) + offset       (scale > 0)

Hermitian blocks are always constrained positive semidefinite. Affine
expressions may reference them through ``Re tr(M @ W)`` terms. Objectives are
maximized.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class SubproblemError(RuntimeError):
    """A subproblem could not be solved; ``trace`` holds the objective history."""

    def __init__(self, msg: str, trace=None):
        super().__init__(msg)
        self.trace = list(trace or [])


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INACCURATE = "inaccurate"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITER = "max_iter"
    ERROR = "error"


@dataclass
class Affine:
    coef: dict[str, float] = field(default_factory=dict)
    const: float = 0.0
    trace: dict[str, np.ndarray] = field(default_factory=dict)

    def evaluate(self, values: dict) -> float:
        out = self.const + sum(c * float(values[n]) for n, c in self.coef.items())
        for name, m in self.trace.items():
            out += float(np.real(np.trace(m @ values[name])))
        return out

    def variables(self) -> set[str]:
        return set(self.coef) | set(self.trace)


def aff(const: float = 0.0, **coef: float) -> Affine:
    return Affine(dict(coef), float(const))


@dataclass
class AffineCon:
    expr: Affine
    equality: bool = False
    name: str = ""


@dataclass
class QuadCon:
    expr: Affine
    squares: list[tuple[float, Affine]]
    name: str = ""


@dataclass
class ExpCon:
    expr: Affine
    scale: float
    arg: Affine
    name: str = ""


@dataclass
class LogCon:
    expr: Affine
    scale: float
    arg: Affine
    offset: float = 0.0
    name: str = ""


@dataclass
class ScalarVar:
    name: str
    lb: float = -math.inf
    ub: float = math.inf


@dataclass
class HermitianBlock:
    name: str
    size: int


@dataclass
class ConvexProgram:
    scalars: list[ScalarVar] = field(default_factory=list)
    blocks: list[HermitianBlock] = field(default_factory=list)
    objective: Affine = field(default_factory=Affine)
    constraints: list = field(default_factory=list)
    tol: float = 1e-8
    max_iter: int = 10_000

    def add_scalar(self, name: str, lb: float = -math.inf, ub: float = math.inf) -> str:
        self.scalars.append(ScalarVar(name, lb, ub))
        return name

    def add_block(self, name: str, size: int) -> str:
        self.blocks.append(HermitianBlock(name, size))
        return name

    def add(self, con) -> None:
        self.constraints.append(con)

    def validate(self) -> None:
        declared = {v.name for v in self.scalars} | {b.name for b in self.blocks}
        if len(declared) != len(self.scalars) + len(self.blocks):
            raise ValueError("duplicate variable names")
        exprs = [self.objective]
        for con in self.constraints:
            exprs.append(con.expr)
            if isinstance(con, QuadCon):
                if any(w < 0 for w, _ in con.squares):
                    raise ValueError(f"quadratic constraint {con.name!r} is not convex")
                exprs.extend(a for _, a in con.squares)
            elif isinstance(con, (ExpCon, LogCon)):
                if con.scale <= 0:
                    raise ValueError(f"constraint {con.name!r} needs a positive scale")
                exprs.append(con.arg)
        for e in exprs:
            missing = e.variables() - declared
            if missing:
                raise ValueError(f"undeclared variables {sorted(missing)}")


@dataclass
class Solution:
    values: dict
    status: Status
    max_residual: float
    objective: float
    solve_time: float = 0.0
    solver_status: str = ""

    @property
    def ok(self) -> bool:
        return self.status == Status.OPTIMAL


def _rel(violation: float, *scales: float) -> float:
    return max(0.0, violation) / max(1.0, *(abs(s) for s in scales))


def constraint_residual(con, values: dict) -> float:
    """Scaled violation ``max(0, rhs - lhs) / max(1, |lhs|, |rhs|)``."""
    lhs = con.expr.evaluate(values)
    if isinstance(con, AffineCon):
        return abs(lhs) / max(1.0, abs(con.expr.const)) if con.equality else _rel(-lhs, con.expr.const)
    if isinstance(con, QuadCon):
        rhs = sum(w * a.evaluate(values) ** 2 for w, a in con.squares)
        return _rel(rhs - lhs, lhs, rhs)
    if isinstance(con, ExpCon):
        z = con.arg.evaluate(values)
        rhs = con.scale * math.exp(min(z, 700.0))
        return _rel(rhs - lhs, lhs, rhs)
    if isinstance(con, LogCon):
        z = con.arg.evaluate(values)
        if z <= 0:
            return math.inf
        rhs = con.scale * math.log(z) + con.offset
        return _rel(lhs - rhs, lhs, rhs)
    raise TypeError(type(con))


def residuals(p: ConvexProgram, values: dict) -> dict[str, float]:
    out: dict[str, float] = {}
    for v in p.scalars:
        x = float(values[v.name])
        out[f"bound:{v.name}"] = max(_rel(v.lb - x, x, v.lb) if v.lb > -math.inf else 0.0,
                                     _rel(x - v.ub, x, v.ub) if v.ub < math.inf else 0.0)
    for b in p.blocks:
        w = values[b.name]
        herm = np.abs(w - w.conj().T).max() if w.size else 0.0
        lam_min = float(np.linalg.eigvalsh(0.5 * (w + w.conj().T)).min())
        out[f"psd:{b.name}"] = max(_rel(-lam_min, np.abs(w).max()), herm)
    for i, con in enumerate(p.constraints):
        out[con.name or f"c{i}"] = constraint_residual(con, values)
    return out


def max_residual(p: ConvexProgram, values: dict) -> float:
    return max(residuals(p, values).values(), default=0.0)


class _Layout:
    """Column layout of the real decision vector.

    A Hermitian block of size n takes n*n columns: the real diagonal, then
    the real and imaginary parts of the strict upper triangle.
    """

    def __init__(self, p: ConvexProgram):
        self.col: dict[str, int] = {}
        self.block: dict[str, tuple[int, int]] = {}
        n = 0
        for v in p.scalars:
            self.col[v.name] = n
            n += 1
        for b in p.blocks:
            self.block[b.name] = (n, b.size)
            n += b.size * b.size
        self.size = n

    def upper(self, size: int):
        return np.triu_indices(size, k=1)

    def row(self, a: Affine) -> np.ndarray:
        """Coefficients of ``a`` over the decision vector."""
        out = np.zeros(self.size)
        for name, c in a.coef.items():
            out[self.col[name]] += c
        for name, m in a.trace.items():
            start, size = self.block[name]
            m = np.asarray(m, complex)
            iu, ju = self.upper(size)
            npair = iu.size
            out[start:start + size] += np.real(np.diag(m))
            out[start + size:start + size + npair] += np.real(m[iu, ju] + m[ju, iu])
            out[start + size + npair:start + size + 2 * npair] += np.imag(m[iu, ju] - m[ju, iu])
        return out

    def unpack(self, z: np.ndarray, name: str) -> np.ndarray:
        start, size = self.block[name]
        iu, ju = self.upper(size)
        npair = iu.size
        w = np.diag(z[start:start + size]).astype(complex)
        vals = z[start + size:start + size + npair] + 1j * z[start + size + npair:start + size + 2 * npair]
        w[iu, ju] = vals
        w[ju, iu] = vals.conj()
        return w

    def psd_rows(self, name: str) -> np.ndarray:
        """Map to the scaled upper triangle of the real 2n embedding
        [[Re W, -Im W], [Im W, Re W]] (column-major, off-diagonals times sqrt 2)."""
        start, size = self.block[name]
        iu, ju = self.upper(size)
        npair = iu.size
        pair = {(int(i), int(j)): k for k, (i, j) in enumerate(zip(iu, ju))}

        def re(i, j):
            if i == j:
                return {start + i: 1.0}
            i, j = min(i, j), max(i, j)
            return {start + size + pair[(i, j)]: 1.0}

        def im(i, j):
            if i == j:
                return {}
            if i < j:
                return {start + size + npair + pair[(i, j)]: 1.0}
            return {start + size + npair + pair[(j, i)]: -1.0}

        m = 2 * size
        rows = []
        for j in range(m):
            for i in range(j + 1):
                if i < size and j < size:
                    entry = re(i, j)
                elif i >= size and j >= size:
                    entry = re(i - size, j - size)
                else:   # i < size <= j: top-right block is -Im W
                    entry = {k: -c for k, c in im(i, j - size).items()}
                r = np.zeros(self.size)
                scale = 1.0 if i == j else math.sqrt(2.0)
                for k, c in entry.items():
                    r[k] += scale * c
                rows.append(r)
        return np.array(rows)


def _cone_data(p: ConvexProgram, lay: _Layout):
    """Rows of A z + s = b grouped by cone, in clarabel's form."""
    zero_a, zero_b, nn_a, nn_b = [], [], [], []
    socs, exps = [], []

    def nonneg(row, const):           # row.z + const >= 0
        nn_a.append(-row)
        nn_b.append(const)

    for v in p.scalars:
        e = np.zeros(lay.size)
        e[lay.col[v.name]] = 1.0
        if v.lb > -math.inf:
            nonneg(e, -v.lb)
        if v.ub < math.inf:
            nonneg(-e, v.ub)
    for con in p.constraints:
        row, const = lay.row(con.expr), con.expr.const
        if isinstance(con, AffineCon):
            if con.equality:
                zero_a.append(-row)
                zero_b.append(const)
            else:
                nonneg(row, const)
        elif isinstance(con, QuadCon):
            terms = [(w, a) for w, a in con.squares if w > 0]
            if not terms:
                nonneg(row, const)
                continue
            # expr >= sum |u|^2  <=>  ||(expr - 1, 2u)|| <= expr + 1
            rows = [(row, const + 1.0), (row, const - 1.0)]
            rows += [(2.0 * math.sqrt(w) * lay.row(a), 2.0 * math.sqrt(w) * a.const) for w, a in terms]
            socs.append(rows)
        elif isinstance(con, ExpCon):
            arg = con.arg
            exps.append([(lay.row(arg), arg.const + math.log(con.scale)),
                         (np.zeros(lay.size), 1.0), (row, const)])
        elif isinstance(con, LogCon):
            arg = con.arg
            exps.append([(row / con.scale, (const - con.offset) / con.scale),
                         (np.zeros(lay.size), 1.0), (lay.row(arg), arg.const)])
        else:
            raise TypeError(type(con))
    a_rows, b_vals, cones = [], [], []
    if zero_a:
        a_rows += zero_a
        b_vals += zero_b
        cones.append(clarabel.ZeroConeT(len(zero_a)))
    if nn_a:
        a_rows += nn_a
        b_vals += nn_b
        cones.append(clarabel.NonnegativeConeT(len(nn_a)))
    for rows in socs:
        for r, c in rows:
            a_rows.append(-r)
            b_vals.append(c)
        cones.append(clarabel.SecondOrderConeT(len(rows)))
    for rows in exps:
        for r, c in rows:
            a_rows.append(-r)
            b_vals.append(c)
        cones.append(clarabel.ExponentialConeT())
    for b in p.blocks:
        rows = lay.psd_rows(b.name)
        a_rows.extend(-rows)
        b_vals.extend([0.0] * len(rows))
        cones.append(clarabel.PSDTriangleConeT(2 * b.size))
    a = sp.csc_matrix(np.array(a_rows).reshape(len(a_rows), lay.size))
    return a, np.array(b_vals, float), cones


_STATUS = {
    "Solved": Status.OPTIMAL,
    "AlmostSolved": Status.INACCURATE,
    "PrimalInfeasible": Status.INFEASIBLE,
    "AlmostPrimalInfeasible": Status.INFEASIBLE,
    "DualInfeasible": Status.UNBOUNDED,
    "AlmostDualInfeasible": Status.UNBOUNDED,
    "MaxIterations": Status.MAX_ITER,
    "MaxTime": Status.MAX_ITER,
}


def solve(p: ConvexProgram, tol: float | None = None, conservative: bool = False) -> Solution:
    """Solve ``p``; residuals are recomputed from the returned point.

    A solver-reported optimum whose recomputed residual exceeds the tolerance
    is downgraded to ``INACCURATE``.  ``conservative`` trades speed for
    robustness (more regularization, shorter interior-point steps), which
    helps when the default run stalls short of full accuracy.
    """
    p.validate()
    tol = p.tol if tol is None else tol
    lay = _Layout(p)
    a, b, cones = _cone_data(p, lay)
    q = -lay.row(p.objective)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = p.max_iter
    inner = 0.1 * tol
    settings.tol_feas = settings.tol_gap_abs = settings.tol_gap_rel = inner
    if conservative:
        settings.static_regularization_constant = 1e-7
        settings.max_step_fraction = 0.95
    t0 = time.perf_counter()
    try:
        raw = clarabel.DefaultSolver(sp.csc_matrix((lay.size, lay.size)), q, a, b, cones,
                                     settings).solve()
    except (ValueError, RuntimeError) as exc:
        log.debug("solver error: %s", exc)
        return Solution({}, Status.ERROR, math.inf, math.nan, time.perf_counter() - t0, str(exc))
    elapsed = time.perf_counter() - t0
    name = str(raw.status)
    status = _STATUS.get(name, Status.ERROR)
    if status not in (Status.OPTIMAL, Status.INACCURATE):
        return Solution({}, status, math.inf, math.nan, elapsed, name)
    z = np.asarray(raw.x, float)
    values: dict = {v.name: float(z[lay.col[v.name]]) for v in p.scalars}
    for blk in p.blocks:
        values[blk.name] = lay.unpack(z, blk.name)
    res = max_residual(p, values)
    if status == Status.OPTIMAL and res > tol:
        status = Status.INACCURATE
    return Solution(values, status, res, p.objective.evaluate(values), elapsed, name)


def _usable(sol: Solution, tol: float) -> bool:
    return sol.ok or (sol.status == Status.INACCURATE and sol.max_residual <= 10.0 * tol)


def solve_checked(p: ConvexProgram, trace=()) -> Solution:
    """Solve, retrying once at 10x the tolerance; raise with ``trace`` on failure.

    The retry also switches the solver to its conservative settings.  A
    solution the solver flags as inexact is accepted when its recomputed
    residual is within 10x the tolerance.
    """
    sol = solve(p)
    if _usable(sol, p.tol):
        return sol
    log.debug("retrying subproblem after status %s", sol.status.value)
    retry = solve(p, tol=10.0 * p.tol, conservative=True)
    if _usable(retry, 10.0 * p.tol):
        return retry
    raise SubproblemError(f"subproblem {retry.status.value} (first attempt {sol.status.value})", trace)

"""Thin, swappable interface to conic optimizers.

A :class:`ConicProgram` is a quadratic-plus-linear objective over one
shared vector of scalar variables, subject to linear equalities, linear
inequalities, second-order-cone rows, and semidefinite blocks. Two
backends lower it to solver-native data: ``clarabel`` (default) and
``scs``. The assembly layer upstream never references either by name;
selection goes through the ``backend`` argument or the ``AGSYNTH_BACKEND``
environment variable, and tolerance overrides through
``AGSYNTH_SOLVER_TOL``.

Semidefinite blocks use the symmetric vectorization

    svec(S) = (S_00, sqrt(2) S_01, S_11, sqrt(2) S_02, sqrt(2) S_12, S_22, ...)

that is, the upper triangle stacked column by column with off-diagonal
entries scaled by sqrt(2), so that svec(S) . svec(T) = <S, T>. Backends
that order the triangle differently get a row permutation during
lowering.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse

__all__ = [
    "EqualityBlock",
    "InequalityBlock",
    "SecondOrderConeBlock",
    "SemidefiniteBlock",
    "ConicProgram",
    "ConicSolution",
    "ResidualRecord",
    "ResidualReport",
    "svec",
    "smat",
    "svec_dim",
    "solve",
    "verify_solution",
    "epigraph_reformulation",
    "available_backends",
    "DEFAULT_BACKEND",
    "DEFAULT_SOLVER_TOL",
    "ACCEPT_TOL",
]

DEFAULT_BACKEND = "clarabel"
DEFAULT_SOLVER_TOL = 1e-8  # primal/dual feasibility target passed to the solver
ACCEPT_TOL = 1e-6          # independent residual check applied to "optimal" results

BACKEND_ENV = "AGSYNTH_BACKEND"
TOL_ENV = "AGSYNTH_SOLVER_TOL"

_SQRT2 = np.sqrt(2.0)


# ---------------------------------------------------------------------------
# symmetric vectorization
# ---------------------------------------------------------------------------


def svec_dim(n: int) -> int:
    return n * (n + 1) // 2


def _triangle_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """(row, col) per svec position: upper triangle, column-major."""
    rows = np.concatenate([np.arange(j + 1) for j in range(n)]) if n else np.array([], int)
    cols = np.concatenate([np.full(j + 1, j) for j in range(n)]) if n else np.array([], int)
    return rows, cols


def svec(M: np.ndarray) -> np.ndarray:
    n = M.shape[0]
    rows, cols = _triangle_indices(n)
    out = np.asarray(M, dtype=float)[rows, cols].copy()
    out[rows != cols] *= _SQRT2
    return out


def smat(v: np.ndarray, n: int) -> np.ndarray:
    rows, cols = _triangle_indices(n)
    vals = np.asarray(v, dtype=float).copy()
    vals[rows != cols] /= _SQRT2
    M = np.zeros((n, n))
    M[rows, cols] = vals
    M[cols, rows] = vals
    return M


# ---------------------------------------------------------------------------
# program representation
# ---------------------------------------------------------------------------


def _csr(mat) -> sparse.csr_matrix:
    return sparse.csr_matrix(mat, dtype=float)


@dataclass(frozen=True)
class EqualityBlock:
    """Rows A x = b."""

    A: sparse.csr_matrix
    b: np.ndarray
    name: str = "eq"


@dataclass(frozen=True)
class InequalityBlock:
    """Rows A x <= b."""

    A: sparse.csr_matrix
    b: np.ndarray
    name: str = "ineq"


@dataclass(frozen=True)
class SecondOrderConeBlock:
    """||A x + b||_2 <= c . x + d."""

    A: sparse.csr_matrix
    b: np.ndarray
    c: np.ndarray
    d: float
    name: str = "soc"


@dataclass(frozen=True)
class SemidefiniteBlock:
    """smat(A x + const, dim) must be positive semidefinite."""

    dim: int
    A: sparse.csr_matrix
    const: np.ndarray
    name: str = "lmi"

    def matrix(self, x: np.ndarray) -> np.ndarray:
        return smat(self.A @ x + self.const, self.dim)


@dataclass(frozen=True)
class ConicProgram:
    """Immutable conic program over `num_vars` scalar variables.

    Objective: x' Q x + q . x + constant with Q positive semidefinite.
    """

    num_vars: int
    obj_quad: sparse.csr_matrix
    obj_lin: np.ndarray
    obj_const: float = 0.0
    equalities: tuple[EqualityBlock, ...] = ()
    inequalities: tuple[InequalityBlock, ...] = ()
    socs: tuple[SecondOrderConeBlock, ...] = ()
    lmis: tuple[SemidefiniteBlock, ...] = ()

    def objective_value(self, x: np.ndarray) -> float:
        return float(x @ (self.obj_quad @ x) + self.obj_lin @ x + self.obj_const)


@dataclass(frozen=True)
class ConicSolution:
    """Solver outcome; `x` is present iff status is optimal or inaccurate."""

    status: str
    x: np.ndarray | None
    objective: float | None
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# lowering to solver-native cone form:  A x + s = b,  s in K
# ---------------------------------------------------------------------------


def _lower_to_cones(program: ConicProgram):
    """Stack rows in canonical order zero / nonneg / soc / psd."""
    n = program.num_vars
    mats, rhs = [], []
    n_zero = n_pos = 0
    soc_dims: list[int] = []
    psd_dims: list[int] = []

    for blk in program.equalities:
        mats.append(blk.A)
        rhs.append(blk.b)
        n_zero += blk.A.shape[0]
    for blk in program.inequalities:
        mats.append(blk.A)
        rhs.append(blk.b)
        n_pos += blk.A.shape[0]
    for blk in program.socs:
        # s = (c.x + d, A x + b) lives in the second-order cone
        mats.append(sparse.vstack([_csr(-blk.c.reshape(1, -1)), -blk.A]))
        rhs.append(np.concatenate([[blk.d], blk.b]))
        soc_dims.append(blk.A.shape[0] + 1)
    for blk in program.lmis:
        mats.append(-blk.A)
        rhs.append(blk.const.copy())
        psd_dims.append(blk.dim)

    if mats:
        A = sparse.vstack(mats, format="csc")
        b = np.concatenate(rhs)
    else:
        A = sparse.csc_matrix((0, n))
        b = np.zeros(0)
    return A, b, n_zero, n_pos, soc_dims, psd_dims


def _objective_P(program: ConicProgram) -> sparse.csc_matrix:
    """Solver-form quadratic term: objective = 0.5 x' P x + q.x, so P = 2Q;
    both backends take the upper triangle only."""
    return sparse.triu(2.0 * program.obj_quad, format="csc")


def _upper_to_lower_perm(n: int) -> np.ndarray:
    """Row permutation taking upper-column-major svec order to
    lower-column-major order, as expected by SCS."""
    perm = []
    for j in range(n):
        for i in range(j, n):
            # lower entry (i, j), i >= j, sits at upper position of (j, i)
            perm.append(i * (i + 1) // 2 + j)
    return np.array(perm, dtype=int)


def _solve_clarabel(program: ConicProgram, tol: float, verbose: bool) -> ConicSolution:
    import clarabel

    A, b, n_zero, n_pos, soc_dims, psd_dims = _lower_to_cones(program)
    cones = []
    if n_zero:
        cones.append(clarabel.ZeroConeT(n_zero))
    if n_pos:
        cones.append(clarabel.NonnegativeConeT(n_pos))
    cones.extend(clarabel.SecondOrderConeT(d) for d in soc_dims)
    cones.extend(clarabel.PSDTriangleConeT(d) for d in psd_dims)

    settings = clarabel.DefaultSettings()
    settings.verbose = verbose
    settings.tol_feas = tol
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol

    result = clarabel.DefaultSolver(
        _objective_P(program), program.obj_lin, A, b, cones, settings
    ).solve()

    raw = str(result.status)
    status = {
        "Solved": "optimal",
        "AlmostSolved": "inaccurate",
        "PrimalInfeasible": "infeasible",
        "AlmostPrimalInfeasible": "infeasible",
    }.get(raw, "failure")
    x = np.asarray(result.x) if status in ("optimal", "inaccurate") else None
    return ConicSolution(
        status=status,
        x=x,
        objective=program.objective_value(x) if x is not None else None,
        diagnostics={
            "backend": "clarabel",
            "raw_status": raw,
            "iterations": result.iterations,
            "solve_time": result.solve_time,
            "r_prim": result.r_prim,
            "r_dual": result.r_dual,
        },
    )


def _solve_scs(program: ConicProgram, tol: float, verbose: bool) -> ConicSolution:
    import scs

    A, b, n_zero, n_pos, soc_dims, psd_dims = _lower_to_cones(program)
    if psd_dims:
        # permute each PSD block from upper- to lower-column-major order
        offset = n_zero + n_pos + sum(soc_dims)
        perm = np.arange(A.shape[0])
        for d in psd_dims:
            size = svec_dim(d)
            perm[offset : offset + size] = offset + _upper_to_lower_perm(d)
            offset += size
        A = A[perm]
        b = b[perm]

    cone: dict = {}
    if n_zero:
        cone["z"] = n_zero
    if n_pos:
        cone["l"] = n_pos
    if soc_dims:
        cone["q"] = soc_dims
    if psd_dims:
        cone["s"] = psd_dims

    data = dict(P=_objective_P(program), A=A, b=b, c=np.asarray(program.obj_lin, dtype=float))
    out = scs.SCS(
        data, cone, verbose=verbose, eps_abs=tol, eps_rel=tol, max_iters=200_000
    ).solve()

    raw = out["info"]["status"]
    if raw == "solved":
        status = "optimal"
    elif raw.startswith("solved"):
        status = "inaccurate"
    elif "infeasible" in raw:
        status = "infeasible"
    else:
        status = "failure"
    x = np.asarray(out["x"]) if status in ("optimal", "inaccurate") else None
    return ConicSolution(
        status=status,
        x=x,
        objective=program.objective_value(x) if x is not None else None,
        diagnostics={
            "backend": "scs",
            "raw_status": raw,
            "iterations": out["info"]["iter"],
            "solve_time": out["info"]["solve_time"] * 1e-3,
            "res_pri": out["info"]["res_pri"],
            "res_dual": out["info"]["res_dual"],
        },
    )


_BACKENDS: dict[str, tuple[Callable, bool]] = {
    # name -> (solver function, supports a native quadratic objective)
    "clarabel": (_solve_clarabel, True),
    "scs": (_solve_scs, True),
}


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def epigraph_reformulation(program: ConicProgram) -> ConicProgram:
    """Linear-objective equivalent: minimize t + q.x subject to
    x' Q x <= t, encoded as || (2 F x, 1 - t) || <= 1 + t with F' F = Q.
    Used for backends without native quadratic support; the extra
    epigraph variable is appended last."""
    n = program.num_vars
    evals, evecs = np.linalg.eigh(program.obj_quad.toarray())
    keep = evals > 1e-14 * max(evals.max(initial=0.0), 1.0)
    F = (np.sqrt(evals[keep])[:, None] * evecs[:, keep].T)
    k = F.shape[0]

    def widen(mat):
        return sparse.hstack([mat, sparse.csc_matrix((mat.shape[0], 1))], format="csr")

    last_row = sparse.csc_matrix(([-1.0], ([0], [n])), shape=(1, n + 1))
    soc_A = sparse.vstack(
        [sparse.hstack([_csr(2.0 * F), sparse.csc_matrix((k, 1))]), last_row],
        format="csr",
    )
    soc_b = np.concatenate([np.zeros(k), [1.0]])
    c_row = np.zeros(n + 1)
    c_row[n] = 1.0

    return ConicProgram(
        num_vars=n + 1,
        obj_quad=_csr(sparse.csc_matrix((n + 1, n + 1))),
        obj_lin=np.concatenate([program.obj_lin, [1.0]]),
        obj_const=program.obj_const,
        equalities=tuple(
            EqualityBlock(widen(blk.A), blk.b, blk.name) for blk in program.equalities
        ),
        inequalities=tuple(
            InequalityBlock(widen(blk.A), blk.b, blk.name) for blk in program.inequalities
        ),
        socs=tuple(
            SecondOrderConeBlock(widen(blk.A), blk.b, np.append(blk.c, 0.0), blk.d, blk.name)
            for blk in program.socs
        )
        + (SecondOrderConeBlock(soc_A, soc_b, c_row, 1.0, "epigraph"),),
        lmis=tuple(
            SemidefiniteBlock(blk.dim, widen(blk.A), blk.const, blk.name)
            for blk in program.lmis
        ),
    )


def solve(
    program: ConicProgram,
    tol: float | None = None,
    backend: str | None = None,
    verbose: bool = False,
) -> ConicSolution:
    """Solve the program; results flagged "optimal" additionally pass an
    independent residual check at the acceptance tolerance, otherwise the
    status is downgraded to "inaccurate"."""
    backend = backend or os.environ.get(BACKEND_ENV, DEFAULT_BACKEND)
    if backend not in _BACKENDS:
        raise ValueError(f"unknown backend {backend!r}; available: {available_backends()}")
    if tol is None:
        tol = float(os.environ.get(TOL_ENV, DEFAULT_SOLVER_TOL))

    solver_fn, native_quad = _BACKENDS[backend]
    if not native_quad and program.obj_quad.nnz:
        lifted = epigraph_reformulation(program)
        sol = solver_fn(lifted, tol, verbose)
        if sol.x is not None:
            x = sol.x[: program.num_vars]
            sol = ConicSolution(sol.status, x, program.objective_value(x), sol.diagnostics)
        return sol

    sol = solver_fn(program, tol, verbose)
    if sol.status == "optimal":
        report = verify_solution(program, sol, tol=ACCEPT_TOL)
        if not report.ok:
            sol = ConicSolution(
                "inaccurate", sol.x, sol.objective,
                {**sol.diagnostics, "residual_report": report.summary()},
            )
    return sol


# ---------------------------------------------------------------------------
# independent residual checking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualRecord:
    kind: str
    name: str
    violation: float
    within_tol: bool


@dataclass(frozen=True)
class ResidualReport:
    records: tuple[ResidualRecord, ...]
    tol: float

    @property
    def ok(self) -> bool:
        return all(r.within_tol for r in self.records)

    @property
    def max_violation(self) -> float:
        return max((r.violation for r in self.records), default=0.0)

    def flagged(self) -> tuple[ResidualRecord, ...]:
        return tuple(r for r in self.records if not r.within_tol)

    def summary(self) -> dict:
        return {
            "ok": self.ok,
            "max_violation": self.max_violation,
            "flagged": [(r.kind, r.name, r.violation) for r in self.flagged()],
        }


def verify_solution(
    program: ConicProgram, solution: ConicSolution, tol: float = ACCEPT_TOL
) -> ResidualReport:
    """Recompute every constraint residual with plain dense algebra.

    Equalities are held to `tol` absolutely, cone rows to slack >= -tol,
    and semidefinite blocks to min eigenvalue >= -tol (1 + ||block||).
    """
    if solution.x is None:
        raise ValueError("solution carries no primal point to verify")
    x = solution.x
    records = []
    for blk in program.equalities:
        gap = float(np.abs(blk.A @ x - blk.b).max(initial=0.0))
        records.append(ResidualRecord("equality", blk.name, gap, gap <= tol))
    for blk in program.inequalities:
        gap = float((blk.A @ x - blk.b).max(initial=0.0))
        records.append(ResidualRecord("inequality", blk.name, gap, gap <= tol))
    for blk in program.socs:
        gap = float(np.linalg.norm(blk.A @ x + blk.b) - (blk.c @ x + blk.d))
        records.append(ResidualRecord("soc", blk.name, gap, gap <= tol))
    for blk in program.lmis:
        S = blk.matrix(x)
        scale = 1.0 + np.linalg.norm(S, 2) if S.size else 1.0
        gap = float(-np.linalg.eigvalsh(S).min(initial=0.0)) if S.size else 0.0
        records.append(ResidualRecord("lmi", blk.name, gap, gap <= tol * scale))
    return ResidualReport(tuple(records), tol)

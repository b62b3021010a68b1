"""Joint policy/contract synthesis as a single semidefinite program.

The decision variables are the affine policy pieces (open-loop input,
disturbance gain with the nested pattern, primitive-signal gain with the
coupled pattern), the contract parameters (center, scale lambda,
orientation Y), and the induced surrogate-trajectory maps. Constraints:

* linear links tying the mean trajectory and the two trajectory maps to
  the policy variables;
* the mean coupled states must equal the contract center;
* each polyhedral row is enforced robustly over the disturbance
  ellipsoid pair through two second-order-cone rows (one per signal)
  whose bounds are split with per-row auxiliary scalars;
* one semidefinite block per instance certifying that the reachable
  coupled-state ellipsoid sum is contained in the contract ellipsoid.

Sparsity is enforced by construction: forbidden pattern entries are
never allocated as scalar variables, so they are exactly zero.

After the solve, the implementable policy is recovered by a triangular
solve (the gain on actual coupled states is the primitive gain times the
inverse contract transform) and must land back inside the coupled
pattern up to numerical noise; a violation beyond tolerance signals an
assembly bug and raises :class:`PatternViolationError`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
import json

import numpy as np
from scipy import sparse
from scipy.linalg import cholesky, solve_triangular

from agsynth.conic_backend import (
    ConicProgram,
    EqualityBlock,
    InequalityBlock,
    SecondOrderConeBlock,
    SemidefiniteBlock,
    solve,
    svec,
)
from agsynth.infograph import (
    InfoDecomposition,
    compute_decomposition,
    pattern_QC,
    pattern_QN,
    pattern_Y,
)
from agsynth.lifting import LiftedSystem, build_lifted
from agsynth.model import ProblemInstance, instance_hash

__all__ = [
    "PatternViolationError",
    "FreeEntries",
    "VariableLayout",
    "SdpVariables",
    "AffinePolicy",
    "Contract",
    "SynthesisResult",
    "assemble",
    "synthesize",
    "recover_policy",
    "build_contract",
    "objective_value",
    "worst_case_slacks",
    "result_to_dict",
    "result_from_dict",
    "save_result",
    "load_result",
]

PATTERN_TOL = 1e-9  # max off-pattern magnitude tolerated in the recovered gain


class PatternViolationError(RuntimeError):
    """Recovered gain left its sparsity pattern; indicates an assembly bug."""


# ---------------------------------------------------------------------------
# variable bookkeeping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FreeEntries:
    """Scalar variables backing the free positions of a patterned matrix."""

    shape: tuple[int, int]
    rows: np.ndarray
    cols: np.ndarray
    offset: int

    @property
    def count(self) -> int:
        return int(self.rows.size)

    @property
    def flat(self) -> np.ndarray:
        """Row-major positions of the free entries inside the full matrix."""
        return self.rows * self.shape[1] + self.cols

    def value(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = x[self.offset : self.offset + self.count]
        return out


@dataclass(frozen=True)
class SdpVariables:
    """Optimal point of the synthesis program, scattered to dense arrays."""

    Qw: np.ndarray
    Qxi: np.ndarray
    Y: np.ndarray
    ubar: np.ndarray
    vbar: np.ndarray
    xbar: np.ndarray
    Pw: np.ndarray
    Pxi: np.ndarray
    lam: float
    beta: float
    t1: np.ndarray
    t2: np.ndarray


@dataclass(frozen=True)
class AffinePolicy:
    """Implementable decentralized affine policy.

    Input trajectory: u = u_open + Qw w + Qv x, where Qv reads only
    coupled state components (its pattern zeroes all others).
    """

    u_open: np.ndarray
    Qw: np.ndarray
    Qv: np.ndarray


@dataclass(frozen=True)
class Contract:
    """Ellipsoidal contract on the coupled state trajectory.

    The contract set is the image of the disturbance ellipsoid under
    z -> center + Pi_C Z z; membership of a coupled trajectory y is
    (y - center)' shape^{-1} (y - center) <= 1 with
    shape = Pi_C Z Sigma Z' Pi_C'.
    """

    vbar: np.ndarray
    Z: np.ndarray
    center: np.ndarray
    shape: np.ndarray


@dataclass(frozen=True)
class SynthesisResult:
    status: str
    objective: float | None
    variables: SdpVariables | None
    policy: AffinePolicy | None
    contract: Contract | None
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class VariableLayout:
    """Index map from program scalars back to the named variables."""

    num_vars: int
    NX: int
    NU: int
    NC: int
    m: int
    degenerate: bool
    proj: np.ndarray
    qw: FreeEntries
    qxi: FreeEntries | None
    y: FreeEntries | None
    ubar: slice
    vbarC: slice | None
    xbar: slice
    pw_offset: int
    pxi_offset: int | None
    lam_index: int | None
    beta_index: int | None
    t1: slice | None
    t2: slice | None

    def extract(self, x: np.ndarray) -> SdpVariables:
        NX, NU = self.NX, self.NU
        Qw = self.qw.value(x)
        Qxi = self.qxi.value(x) if self.qxi is not None else np.zeros((NU, NX))
        Y = self.y.value(x) if self.y is not None else np.zeros((NX, NX))
        vbar = np.zeros(NX)
        if self.vbarC is not None:
            vbar[self.proj] = x[self.vbarC]
        Pw = x[self.pw_offset : self.pw_offset + NX * NX].reshape(NX, NX)
        if self.pxi_offset is not None:
            Pxi = x[self.pxi_offset : self.pxi_offset + NX * NX].reshape(NX, NX)
        else:
            Pxi = np.zeros((NX, NX))
        return SdpVariables(
            Qw=Qw,
            Qxi=Qxi,
            Y=Y,
            ubar=x[self.ubar].copy(),
            vbar=vbar,
            xbar=x[self.xbar].copy(),
            Pw=Pw,
            Pxi=Pxi,
            lam=float(x[self.lam_index]) if self.lam_index is not None else 1.0,
            beta=float(x[self.beta_index]) if self.beta_index is not None else 0.0,
            t1=x[self.t1].copy() if self.t1 is not None else np.zeros(self.m),
            t2=x[self.t2].copy() if self.t2 is not None else np.zeros(self.m),
        )


def _free_entries(pattern, offset: int) -> FreeEntries:
    rows, cols = np.nonzero(pattern.scalar_mask())
    return FreeEntries(shape=pattern.shape, rows=rows, cols=cols, offset=offset)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def assemble(
    instance: ProblemInstance,
    decomp: InfoDecomposition,
    lifted: LiftedSystem,
    optimize_orientation: bool = True,
) -> tuple[ConicProgram, VariableLayout]:
    """Build the synthesis program and the matching variable layout.

    With `optimize_orientation` False the contract orientation is pinned
    to zero, leaving only translation and scaling of the base ellipsoid.
    When no informational coupling exists the contract machinery drops
    out entirely and the program reduces to disturbance-feedback design
    over the nested gain pattern.
    """
    dims = instance.dims
    NX, NU, m = instance.N_x, instance.N_u, instance.num_constraint_rows
    NC = decomp.coupled_traj_dim
    degenerate = NC == 0

    if lifted.B.shape != (NX, NU) or lifted.Htil.shape != (NX, NC):
        raise ValueError("lifted system dimensions do not match the instance")

    sigma = instance.disturbance.sigma
    M = instance.disturbance.second_moment
    R_x, R_u = instance.cost.R_x, instance.cost.R_u
    F_x, F_u, F_w, g = (
        instance.constraints.F_x,
        instance.constraints.F_u,
        instance.constraints.F_w,
        instance.constraints.g,
    )
    G = cholesky(sigma, lower=True)
    proj = np.asarray(decomp.projection_indices, dtype=int)

    # --- variable layout -------------------------------------------------
    cursor = 0
    qw = _free_entries(pattern_QN(decomp, dims), cursor)
    cursor += qw.count
    if not degenerate:
        qxi = _free_entries(pattern_QC(decomp, dims), cursor)
        cursor += qxi.count
        if optimize_orientation:
            y = _free_entries(pattern_Y(decomp, dims), cursor)
            cursor += y.count
        else:
            y = None
    else:
        qxi = None
        y = None
    ubar = slice(cursor, cursor + NU)
    cursor += NU
    if not degenerate:
        vbarC = slice(cursor, cursor + NC)
        cursor += NC
    else:
        vbarC = None
    xbar = slice(cursor, cursor + NX)
    cursor += NX
    pw_offset = cursor
    cursor += NX * NX
    if not degenerate:
        pxi_offset = cursor
        cursor += NX * NX
        lam_index = cursor
        beta_index = cursor + 1
        cursor += 2
    else:
        pxi_offset = lam_index = beta_index = None
    if m > 0 and not degenerate:
        t1 = slice(cursor, cursor + m)
        cursor += m
        t2 = slice(cursor, cursor + m)
        cursor += m
    else:
        t1 = t2 = None
    nv = cursor

    layout = VariableLayout(
        num_vars=nv, NX=NX, NU=NU, NC=NC, m=m, degenerate=degenerate, proj=proj,
        qw=qw, qxi=qxi, y=y, ubar=ubar, vbarC=vbarC, xbar=xbar,
        pw_offset=pw_offset, pxi_offset=pxi_offset,
        lam_index=lam_index, beta_index=beta_index, t1=t1, t2=t2,
    )

    HPC = lifted.Htil @ lifted.Pi_C  # coupled influence as an NX x NX map

    equalities = []

    # mean trajectory: xbar = Btil ubar + Htil (Pi_C vbar)
    A_mean = np.zeros((NX, nv))
    A_mean[:, xbar] = np.eye(NX)
    A_mean[:, ubar] = -lifted.Btil
    if vbarC is not None:
        A_mean[:, vbarC] = -lifted.Htil
    equalities.append(EqualityBlock(sparse.csr_matrix(A_mean), np.zeros(NX), "mean_traj"))

    # disturbance map: Pw = Btil Qw + Ltil
    A_pw = np.zeros((NX * NX, nv))
    A_pw[:, pw_offset : pw_offset + NX * NX] = np.eye(NX * NX)
    for f in range(qw.count):
        k, c = qw.rows[f], qw.cols[f]
        A_pw[np.arange(NX) * NX + c, qw.offset + f] = -lifted.Btil[:, k]
    equalities.append(
        EqualityBlock(sparse.csr_matrix(A_pw), lifted.Ltil.ravel(), "dist_map")
    )

    if not degenerate:
        # primitive-signal map: Pxi = Btil Qxi + HPC (lam I - Y)
        A_px = np.zeros((NX * NX, nv))
        A_px[:, pxi_offset : pxi_offset + NX * NX] = np.eye(NX * NX)
        for f in range(qxi.count):
            k, c = qxi.rows[f], qxi.cols[f]
            A_px[np.arange(NX) * NX + c, qxi.offset + f] = -lifted.Btil[:, k]
        A_px[:, lam_index] = -HPC.ravel()
        if y is not None:
            for f in range(y.count):
                k, c = y.rows[f], y.cols[f]
                A_px[np.arange(NX) * NX + c, y.offset + f] = HPC[:, k]
        equalities.append(
            EqualityBlock(sparse.csr_matrix(A_px), np.zeros(NX * NX), "prim_map")
        )

        # contract center matches the mean coupled states: Pi_C (xbar - vbar) = 0
        A_ctr = np.zeros((NC, nv))
        for r, idx in enumerate(proj):
            A_ctr[r, xbar.start + idx] = 1.0
            A_ctr[r, vbarC.start + r] = -1.0
        equalities.append(
            EqualityBlock(sparse.csr_matrix(A_ctr), np.zeros(NC), "center_match")
        )

    inequalities = []
    if not degenerate:
        # lam >= 1, beta >= 0, beta <= lam
        A_sc = np.zeros((3, nv))
        b_sc = np.zeros(3)
        A_sc[0, lam_index] = -1.0
        b_sc[0] = -1.0
        A_sc[1, beta_index] = -1.0
        A_sc[2, beta_index] = 1.0
        A_sc[2, lam_index] = -1.0
        inequalities.append(
            InequalityBlock(sparse.csr_matrix(A_sc), b_sc, "scale_bounds")
        )
        if m > 0:
            # t1_i + t2_i <= g_i - F_x[i] xbar - F_u[i] ubar
            A_rows = np.zeros((m, nv))
            A_rows[:, t1] = np.eye(m)
            A_rows[:, t2] = np.eye(m)
            A_rows[:, xbar] = F_x
            A_rows[:, ubar] = F_u
            inequalities.append(
                InequalityBlock(sparse.csr_matrix(A_rows), g.copy(), "row_budgets")
            )

    socs = []
    GT = G.T
    for i in range(m):
        # worst case of the disturbance channel over the support ellipsoid
        A1 = np.zeros((NX, nv))
        A1[:, pw_offset : pw_offset + NX * NX] = np.kron(F_x[i : i + 1], GT)
        A1[:, qw.offset : qw.offset + qw.count] = np.kron(F_u[i : i + 1], GT)[:, qw.flat]
        b1 = GT @ F_w[i]
        if degenerate:
            c1 = np.zeros(nv)
            c1[xbar] = -F_x[i]
            c1[ubar] = -F_u[i]
            socs.append(
                SecondOrderConeBlock(sparse.csr_matrix(A1), b1, c1, float(g[i]), f"row{i}_w")
            )
            continue
        c1 = np.zeros(nv)
        c1[t1.start + i] = 1.0
        socs.append(SecondOrderConeBlock(sparse.csr_matrix(A1), b1, c1, 0.0, f"row{i}_w"))

        # worst case of the primitive-signal channel
        A2 = np.zeros((NX, nv))
        A2[:, pxi_offset : pxi_offset + NX * NX] = np.kron(F_x[i : i + 1], GT)
        A2[:, qxi.offset : qxi.offset + qxi.count] = np.kron(F_u[i : i + 1], GT)[:, qxi.flat]
        c2 = np.zeros(nv)
        c2[t2.start + i] = 1.0
        socs.append(
            SecondOrderConeBlock(sparse.csr_matrix(A2), np.zeros(NX), c2, 0.0, f"row{i}_xi")
        )

    lmis = []
    if not degenerate:
        lmis.append(
            _containment_lmi(layout, sigma, proj, nv)
        )

    obj_quad = _objective_quadratic(layout, M, R_x, R_u)

    program = ConicProgram(
        num_vars=nv,
        obj_quad=obj_quad,
        obj_lin=np.zeros(nv),
        obj_const=0.0,
        equalities=tuple(equalities),
        inequalities=tuple(inequalities),
        socs=tuple(socs),
        lmis=tuple(lmis),
    )
    return program, layout


def _containment_lmi(
    layout: VariableLayout, sigma: np.ndarray, proj: np.ndarray, nv: int
) -> SemidefiniteBlock:
    """Ellipsoid-sum containment certificate.

    The raw certificate carries inv(Sigma) in its two lower diagonal
    blocks; a congruence by diag(I, G, G) with G G' = Sigma turns those
    into identities and the off-diagonal trajectory-map blocks into
    (proj Pw G) and (proj Pxi G):

        [ proj of (lam Sigma - Y Sigma - Sigma Y')  proj Pw G  proj Pxi G ]
        [ (proj Pw G)'                              beta I     0          ]
        [ (proj Pxi G)'                             0          (lam-beta) I ]

    Congruence by an invertible matrix preserves semidefiniteness, so
    this is the same constraint in far better scaling, and inv(Sigma) is
    never formed (the factored form is used throughout).
    """
    NX, NC = layout.NX, layout.NC
    n_s = NC + 2 * NX
    G = cholesky(sigma, lower=True)

    columns: dict[int, np.ndarray] = {}

    def coeff(var_index: int) -> np.ndarray:
        if var_index not in columns:
            columns[var_index] = np.zeros((n_s, n_s))
        return columns[var_index]

    # lambda: Sigma in the coupled block, identity in the lower-right block
    F = coeff(layout.lam_index)
    F[:NC, :NC] += sigma[np.ix_(proj, proj)]
    F[NC + NX :, NC + NX :] += np.eye(NX)
    # beta moves weight between the two signal blocks
    F = coeff(layout.beta_index)
    F[NC : NC + NX, NC : NC + NX] += np.eye(NX)
    F[NC + NX :, NC + NX :] -= np.eye(NX)
    pos_of = {int(r): p for p, r in enumerate(proj)}
    # orientation entries rotate the coupled block
    if layout.y is not None:
        for f in range(layout.y.count):
            r, c = int(layout.y.rows[f]), int(layout.y.cols[f])
            if r not in pos_of:
                continue
            F = coeff(layout.y.offset + f)
            row = sigma[c, proj]
            F[pos_of[r], :NC] -= row
            F[:NC, pos_of[r]] -= row
    # trajectory maps enter through their coupled rows, postmultiplied by G
    for a, p in pos_of.items():
        for l in range(NX):
            F = coeff(layout.pw_offset + a * NX + l)
            F[p, NC : NC + NX] += G[l]
            F[NC : NC + NX, p] += G[l]
            F = coeff(layout.pxi_offset + a * NX + l)
            F[p, NC + NX :] += G[l]
            F[NC + NX :, p] += G[l]

    n_svec = n_s * (n_s + 1) // 2
    A = np.zeros((n_svec, nv))
    for var_index, F in columns.items():
        A[:, var_index] = svec(F)
    return SemidefiniteBlock(
        dim=n_s, A=sparse.csr_matrix(A), const=np.zeros(n_svec), name="containment"
    )


def _objective_quadratic(layout: VariableLayout, M, R_x, R_u) -> sparse.csr_matrix:
    """Expected quadratic cost of the surrogate trajectories as a PSD form
    over the program variables (row-major vec(X) makes each trace term a
    kron(R, M) block)."""
    NX, NU = layout.NX, layout.NU
    blocks: list[tuple[int, np.ndarray]] = []
    kru = np.kron(R_u, M)
    blocks.append((layout.qw.offset, kru[np.ix_(layout.qw.flat, layout.qw.flat)]))
    if layout.qxi is not None and layout.qxi.count:
        blocks.append((layout.qxi.offset, kru[np.ix_(layout.qxi.flat, layout.qxi.flat)]))
    blocks.append((layout.ubar.start, np.asarray(R_u)))
    blocks.append((layout.xbar.start, np.asarray(R_x)))
    krx = np.kron(R_x, M)
    blocks.append((layout.pw_offset, krx))
    if layout.pxi_offset is not None:
        blocks.append((layout.pxi_offset, krx))

    rows, cols, vals = [], [], []
    for off, blk in blocks:
        r, c = np.nonzero(blk)
        rows.append(r + off)
        cols.append(c + off)
        vals.append(blk[r, c])
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    return sparse.csr_matrix(
        sparse.coo_matrix((vals, (rows, cols)), shape=(layout.num_vars, layout.num_vars))
    )


# ---------------------------------------------------------------------------
# recovery and derived quantities
# ---------------------------------------------------------------------------


def recover_policy(
    variables: SdpVariables,
    decomp: InfoDecomposition,
    dims,
) -> AffinePolicy:
    """Map optimized variables to the implementable policy.

    The actual-coupled-state gain is the primitive gain pushed through
    the inverse contract transform (a triangular back-substitution); by
    construction it must respect the coupled pattern, so anything beyond
    numerical noise off the pattern is an assembly bug. The surviving
    noise is zeroed to keep the pattern exact.
    """
    NX = variables.Y.shape[0]
    Z = variables.lam * np.eye(NX) - variables.Y
    Qv = solve_triangular(Z.T, variables.Qxi.T, lower=False).T
    mask = pattern_QC(decomp, dims).scalar_mask()
    off_pattern = np.abs(Qv[~mask]).max(initial=0.0)
    if off_pattern > PATTERN_TOL:
        raise PatternViolationError(
            f"recovered coupled gain violates its pattern by {off_pattern:.3e}"
        )
    Qv = np.where(mask, Qv, 0.0)
    u_open = variables.ubar - Qv @ variables.vbar
    return AffinePolicy(u_open=u_open, Qw=variables.Qw.copy(), Qv=Qv)


def build_contract(
    variables: SdpVariables, instance: ProblemInstance, lifted: LiftedSystem
) -> Contract:
    NX = instance.N_x
    Z = variables.lam * np.eye(NX) - variables.Y
    center = lifted.Pi_C @ variables.vbar
    shape = lifted.Pi_C @ Z @ instance.disturbance.sigma @ Z.T @ lifted.Pi_C.T
    return Contract(vbar=variables.vbar.copy(), Z=Z, center=center, shape=shape)


def objective_value(variables: SdpVariables, M, R_x, R_u) -> float:
    """Expected surrogate cost of a candidate point (same formula the
    program minimizes; usable as an independent check on solver output)."""
    v = variables
    return float(
        np.trace(v.Pxi.T @ R_x @ v.Pxi @ M)
        + np.trace(v.Pw.T @ R_x @ v.Pw @ M)
        + np.trace(v.Qw.T @ R_u @ v.Qw @ M)
        + np.trace(v.Qxi.T @ R_u @ v.Qxi @ M)
        + v.xbar @ R_x @ v.xbar
        + v.ubar @ R_u @ v.ubar
    )


def worst_case_slacks(instance: ProblemInstance, variables: SdpVariables) -> np.ndarray:
    """Per-row slack of the robust constraints at the synthesized point:
    g_i minus the mean term minus both worst-case channel norms. A
    nonnegative vector certifies robust feasibility of the surrogate."""
    G = cholesky(instance.disturbance.sigma, lower=True)
    F_x, F_u, F_w, g = (
        instance.constraints.F_x,
        instance.constraints.F_u,
        instance.constraints.F_w,
        instance.constraints.g,
    )
    row_w = F_x @ variables.Pw + F_u @ variables.Qw + F_w
    row_xi = F_x @ variables.Pxi + F_u @ variables.Qxi
    norms_w = np.linalg.norm(row_w @ G, axis=1)
    norms_xi = np.linalg.norm(row_xi @ G, axis=1)
    return g - F_x @ variables.xbar - F_u @ variables.ubar - norms_w - norms_xi


def synthesize(
    instance: ProblemInstance,
    backend: str | None = None,
    tol: float | None = None,
    optimize_orientation: bool = True,
    verbose: bool = False,
) -> SynthesisResult:
    """Full pipeline: decompose, lift, assemble, solve, recover.

    Solver statuses pass through: "infeasible" and "failure" results
    carry diagnostics but no policy.
    """
    decomp = compute_decomposition(instance)
    lifted = build_lifted(instance, decomp)
    program, layout = assemble(instance, decomp, lifted, optimize_orientation)
    solution = solve(program, tol=tol, backend=backend, verbose=verbose)
    diagnostics = {
        "num_vars": program.num_vars,
        "num_soc": len(program.socs),
        "num_lmi": len(program.lmis),
        **solution.diagnostics,
    }
    if solution.status not in ("optimal", "inaccurate"):
        return SynthesisResult(
            status=solution.status, objective=None, variables=None,
            policy=None, contract=None, diagnostics=diagnostics,
        )
    variables = layout.extract(solution.x)
    policy = recover_policy(variables, decomp, instance.dims)
    contract = build_contract(variables, instance, lifted)
    return SynthesisResult(
        status=solution.status,
        objective=solution.objective,
        variables=variables,
        policy=policy,
        contract=contract,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# report serialization
# ---------------------------------------------------------------------------


def result_to_dict(result: SynthesisResult, instance: ProblemInstance | None = None) -> dict:
    """Synthesis report: status, objective, contract, policy, variables,
    and per-row worst-case slacks. Adds the instance hash when given."""
    doc: dict = {
        "kind": "synthesis",
        "status": result.status,
        "objective": result.objective,
        "diagnostics": result.diagnostics,
    }
    if instance is not None:
        doc["instance_sha256"] = instance_hash(instance)
    if result.variables is not None:
        v = result.variables
        doc["lambda"] = v.lam
        doc["beta"] = v.beta
        doc["variables"] = {
            "Qw": v.Qw.tolist(), "Qxi": v.Qxi.tolist(), "Y": v.Y.tolist(),
            "ubar": v.ubar.tolist(), "vbar": v.vbar.tolist(), "xbar": v.xbar.tolist(),
            "Pw": v.Pw.tolist(), "Pxi": v.Pxi.tolist(),
            "lam": v.lam, "beta": v.beta,
            "t1": v.t1.tolist(), "t2": v.t2.tolist(),
        }
        doc["policy"] = {
            "u_open": result.policy.u_open.tolist(),
            "Qw": result.policy.Qw.tolist(),
            "Qv": result.policy.Qv.tolist(),
        }
        doc["contract"] = {
            "vbar": result.contract.vbar.tolist(),
            "Z": result.contract.Z.tolist(),
            "center": result.contract.center.tolist(),
            "shape": result.contract.shape.tolist(),
        }
        if instance is not None:
            doc["worst_case_slacks"] = worst_case_slacks(instance, v).tolist()
    return doc


def result_from_dict(doc: dict) -> SynthesisResult:
    if doc.get("kind") != "synthesis":
        raise ValueError("not a synthesis report")
    if "variables" not in doc:
        return SynthesisResult(
            status=doc["status"], objective=doc.get("objective"),
            variables=None, policy=None, contract=None,
            diagnostics=doc.get("diagnostics", {}),
        )
    raw = doc["variables"]
    arr = lambda k: np.asarray(raw[k], dtype=float)
    variables = SdpVariables(
        Qw=arr("Qw"), Qxi=arr("Qxi"), Y=arr("Y"),
        ubar=arr("ubar"), vbar=arr("vbar"), xbar=arr("xbar"),
        Pw=arr("Pw"), Pxi=arr("Pxi"),
        lam=float(raw["lam"]), beta=float(raw["beta"]),
        t1=arr("t1"), t2=arr("t2"),
    )
    pol = doc["policy"]
    policy = AffinePolicy(
        u_open=np.asarray(pol["u_open"], dtype=float),
        Qw=np.asarray(pol["Qw"], dtype=float),
        Qv=np.asarray(pol["Qv"], dtype=float),
    )
    con = doc["contract"]
    contract = Contract(
        vbar=np.asarray(con["vbar"], dtype=float),
        Z=np.asarray(con["Z"], dtype=float),
        center=np.asarray(con["center"], dtype=float),
        shape=np.asarray(con["shape"], dtype=float),
    )
    return SynthesisResult(
        status=doc["status"], objective=doc.get("objective"),
        variables=variables, policy=policy, contract=contract,
        diagnostics=doc.get("diagnostics", {}),
    )


def save_result(
    result: SynthesisResult,
    path: str | Path,
    instance: ProblemInstance | None = None,
    extra: dict | None = None,
) -> None:
    doc = result_to_dict(result, instance)
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_result(path: str | Path) -> tuple[SynthesisResult, dict]:
    """Load a synthesis report; returns the result and the raw document."""
    doc = json.loads(Path(path).read_text())
    return result_from_dict(doc), doc

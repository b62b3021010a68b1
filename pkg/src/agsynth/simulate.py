"""Monte Carlo validation of a synthesized policy.

Rolls the closed loop under the actual information structure (the policy
reads the true coupled states, not fictitious ones), checks every
polyhedral row and contract membership per sample, spot-checks the local
disturbance reconstruction that justifies disturbance feedback, and
estimates both the surrogate cost (what the program optimized) and the
actual closed-loop cost (what the system pays). The two costs differ by
design; the report labels them separately.

Each closed-loop rollout is computed twice, by a whole-trajectory affine
fixed point and by a per-step recursion; disagreement beyond tolerance
aborts, since it means the policy is not causal.

Randomness is seeded and reproducible: for each batch the sampler draws
direction normals first, then radius uniforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky, lu_factor, lu_solve

from agsynth.contract_sdp import AffinePolicy, Contract, SynthesisResult
from agsynth.infograph import InfoDecomposition, build_coupling_graphs, compute_decomposition
from agsynth.lifting import BlockIndexer, LiftedSystem, build_lifted
from agsynth.model import ProblemInstance, default_second_moment

__all__ = [
    "NotLocallyNestedError",
    "SimulationConfig",
    "SimulationReport",
    "sample_disturbance",
    "closed_loop",
    "reconstruct_disturbance",
    "check_contract",
    "run",
    "report_to_dict",
]

ROLLOUT_TOL = 1e-8  # fixed point vs. per-step recursion agreement


class NotLocallyNestedError(ValueError):
    """Requested reconstruction is not available to the observer."""


@dataclass(frozen=True)
class SimulationConfig:
    samples: int = 10_000
    seed: int = 0
    feas_tol_abs: float = 1e-6
    feas_tol_rel: float = 1e-6
    membership_tol: float = 1e-6
    cost_samples: int | None = None  # surrogate-cost batch; defaults to `samples`

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be at least 1")
        if self.cost_samples is not None and self.cost_samples < 1:
            raise ValueError("cost_samples must be at least 1")


@dataclass(frozen=True)
class SimulationReport:
    samples: int
    seed: int
    constraint_violations: int
    worst_slack: float
    contract_violations: int
    worst_membership: float
    max_reconstruction_error: float
    rollout_gap: float
    surrogate_cost_mean: float
    surrogate_cost_se: float
    surrogate_cost_samples: int
    actual_cost_mean: float
    actual_cost_se: float
    cost_check_valid: bool
    per_sample_slack: np.ndarray
    per_sample_membership: np.ndarray
    per_sample_cost: np.ndarray

    @property
    def clean(self) -> bool:
        return self.constraint_violations == 0 and self.contract_violations == 0


def sample_disturbance(
    sigma: np.ndarray, rng: np.random.Generator, n: int | None = None
) -> np.ndarray:
    """Uniform draw(s) on {z : z' sigma^{-1} z <= 1}.

    A standard-normal direction is normalized onto the unit sphere,
    scaled by U^(1/dim) to make the radius uniform in volume, and pushed
    through a Cholesky factor of sigma. Every sample lies inside the
    support by construction.
    """
    dim = sigma.shape[0]
    G = cholesky(sigma, lower=True)
    count = 1 if n is None else int(n)
    d = rng.standard_normal((count, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.uniform(size=(count, 1)) ** (1.0 / dim)
    out = (r * d) @ G.T
    return out[0] if n is None else out


def _closed_loop_batch(
    instance: ProblemInstance,
    lifted: LiftedSystem,
    policy: AffinePolicy,
    W: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Vectorized rollout of u = u_open + Qw w + Qv x over sample rows.

    Returns states, inputs, and the worst disagreement between the
    affine fixed point and the per-step recursion.
    """
    n_x, n_u, T = instance.n_x, instance.n_u, instance.T
    N_x = instance.N_x
    idx = BlockIndexer(n_x, n_u, T)

    # whole-trajectory fixed point: (I - B Qv) x = B u_open + (B Qw + L) w
    S = np.eye(N_x) - lifted.B @ policy.Qv
    rhs = (lifted.B @ policy.u_open)[:, None] + (lifted.B @ policy.Qw + lifted.L) @ W.T
    X = lu_solve(lu_factor(S), rhs).T
    U = policy.u_open + W @ policy.Qw.T + X @ policy.Qv.T

    # per-step recursion under the actual information flow
    n = W.shape[0]
    X_rec = np.zeros((n, N_x))
    U_rec = np.zeros((n, instance.N_u))
    X_rec[:, idx.state_block(0)] = W[:, idx.dist_block(0)]
    for t in range(T):
        iu = idx.input_block(t)
        # states at times > t are still zero; causal gains never read them
        U_rec[:, iu] = (
            policy.u_open[iu] + W @ policy.Qw[iu].T + X_rec @ policy.Qv[iu].T
        )
        A_t = instance.dynamics.A[t]
        B_t = instance.dynamics.B[t]
        X_rec[:, idx.state_block(t + 1)] = (
            X_rec[:, idx.state_block(t)] @ A_t.T
            + U_rec[:, iu] @ B_t.T
            + W[:, idx.dist_block(t + 1)]
        )

    gap = max(
        float(np.abs(X - X_rec).max(initial=0.0)),
        float(np.abs(U - U_rec).max(initial=0.0)),
    )
    if gap > ROLLOUT_TOL:
        raise RuntimeError(
            f"causality violation: fixed-point and recursive rollouts disagree by {gap:.3e}"
        )
    return X, U, gap


def closed_loop(
    instance: ProblemInstance,
    lifted: LiftedSystem,
    policy: AffinePolicy,
    w: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop trajectories (x, u) for one disturbance draw."""
    w = np.asarray(w, dtype=float)
    if w.shape != (instance.N_x,):
        raise ValueError(f"w: expected shape ({instance.N_x},), got {w.shape}")
    X, U, _ = _closed_loop_batch(instance, lifted, policy, w[None, :])
    return X[0], U[0]


def reconstruct_disturbance(
    instance: ProblemInstance,
    decomp: InfoDecomposition,
    x_traj: np.ndarray,
    u_traj: np.ndarray,
    i: int,
    j: int,
    t: int,
) -> np.ndarray:
    """Disturbance w_j(t-1) as observer i can compute it.

    Available only for j in N(i): then i observes every state feeding j's
    dynamics and can re-derive every input feeding it, so the state
    update can be solved for the disturbance. t = 0 returns the initial
    state itself.
    """
    if j not in decomp.nested[i]:
        raise NotLocallyNestedError(
            f"subsystem {j} is not locally nested for observer {i}"
        )
    if not 0 <= t <= instance.T:
        raise ValueError(f"t must lie in [0, {instance.T}], got {t}")
    dims = instance.dims
    idx = BlockIndexer(instance.n_x, instance.n_u, instance.T)
    xj_t = x_traj[idx.state_block(t)][dims.state_slice(j)]
    if t == 0:
        return xj_t.copy()
    graphs = build_coupling_graphs(instance)
    A_prev = instance.dynamics.A[t - 1]
    B_prev = instance.dynamics.B[t - 1]
    x_prev = x_traj[idx.state_block(t - 1)]
    u_prev = u_traj[idx.input_block(t - 1)]
    value = xj_t.copy()
    for k in graphs.in_neighbors_A(j):
        value -= A_prev[dims.state_slice(j), dims.state_slice(k)] @ x_prev[dims.state_slice(k)]
    for k in graphs.in_neighbors_B(j):
        value -= B_prev[dims.state_slice(j), dims.input_slice(k)] @ u_prev[dims.input_slice(k)]
    return value


def check_contract(contract: Contract, x_C: np.ndarray) -> float:
    """Membership value of a coupled trajectory in the contract ellipsoid;
    at most 1 (plus tolerance) means inside."""
    if contract.shape.shape[0] == 0:
        raise ValueError("contract has no coupled dimensions to check")
    diff = np.asarray(x_C, dtype=float) - contract.center
    try:
        cho = cholesky(contract.shape, lower=True)
    except np.linalg.LinAlgError:
        raise ValueError("degenerate contract shape (not positive definite)") from None
    half = np.linalg.solve(cho, diff)
    return float(half @ half)


def _mean_and_se(values: np.ndarray) -> tuple[float, float]:
    """Compensated mean and standard error of a 1-d sample."""
    n = values.size
    mean = math.fsum(values) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return mean, math.sqrt(var / n)


def run(
    instance: ProblemInstance,
    result: SynthesisResult,
    config: SimulationConfig,
    decomp: InfoDecomposition | None = None,
    lifted: LiftedSystem | None = None,
) -> SimulationReport:
    """Full validation pass over `config.samples` disturbance draws."""
    if result.policy is None or result.variables is None:
        raise ValueError(f"synthesis result carries no policy (status {result.status!r})")
    if decomp is None:
        decomp = compute_decomposition(instance)
    if lifted is None:
        lifted = build_lifted(instance, decomp)

    rng = np.random.default_rng(config.seed)
    sigma = instance.disturbance.sigma
    n = config.samples
    W = sample_disturbance(sigma, rng, n)

    X, U, gap = _closed_loop_batch(instance, lifted, result.policy, W)

    # polyhedral rows
    con = instance.constraints
    lhs = X @ con.F_x.T + U @ con.F_u.T + W @ con.F_w.T
    slack = con.g[None, :] - lhs
    tol_rows = config.feas_tol_abs + config.feas_tol_rel * np.abs(con.g)
    violated = slack < -tol_rows[None, :]
    constraint_violations = int(np.any(violated, axis=1).sum()) if con.g.size else 0
    per_sample_slack = (
        slack.min(axis=1) if con.g.size else np.full(n, np.inf)
    )
    worst_slack = float(per_sample_slack.min(initial=np.inf))

    # contract membership of the actual coupled states
    NC = decomp.coupled_traj_dim
    if NC > 0:
        proj = np.asarray(decomp.projection_indices)
        diff = X[:, proj] - result.contract.center[None, :]
        cho = cholesky(result.contract.shape, lower=True)
        half = np.linalg.solve(cho, diff.T)
        membership = np.einsum("ij,ij->j", half, half)
        contract_violations = int((membership > 1.0 + config.membership_tol).sum())
        worst_membership = float(membership.max(initial=0.0))
    else:
        membership = np.zeros(n)
        contract_violations = 0
        worst_membership = 0.0

    # reconstruction spot-checks for every nested pair and every step
    idx = BlockIndexer(instance.n_x, instance.n_u, instance.T)
    dims = instance.dims
    graphs = build_coupling_graphs(instance)
    recon_err = 0.0
    observed = sorted({j for i in decomp.nested for j in decomp.nested[i]})
    for j in observed:
        js = dims.state_slice(j)
        for t in range(1, instance.T + 1):
            est = X[:, idx.state_block(t)][:, js].copy()
            for k in graphs.in_neighbors_A(j):
                ks = dims.state_slice(k)
                est -= X[:, idx.state_block(t - 1)][:, ks] @ instance.dynamics.A[t - 1][js, ks].T
            for k in graphs.in_neighbors_B(j):
                ks = dims.input_slice(k)
                est -= U[:, idx.input_block(t - 1)][:, ks] @ instance.dynamics.B[t - 1][js, ks].T
            truth = W[:, idx.dist_block(t)][:, js]
            recon_err = max(recon_err, float(np.abs(est - truth).max(initial=0.0)))

    # actual closed-loop cost
    actual_costs = np.einsum("ij,jk,ik->i", X, instance.cost.R_x, X) + np.einsum(
        "ij,jk,ik->i", U, instance.cost.R_u, U
    )
    actual_mean, actual_se = _mean_and_se(actual_costs)

    # surrogate cost on fresh independent signal pairs
    v = result.variables
    n_cost = config.cost_samples or n
    W2 = sample_disturbance(sigma, rng, n_cost)
    Xi = sample_disturbance(sigma, rng, n_cost)
    X_surr = v.xbar + W2 @ v.Pw.T + Xi @ v.Pxi.T
    U_surr = v.ubar + W2 @ v.Qw.T + Xi @ v.Qxi.T
    surr_costs = np.einsum("ij,jk,ik->i", X_surr, instance.cost.R_x, X_surr) + np.einsum(
        "ij,jk,ik->i", U_surr, instance.cost.R_u, U_surr
    )
    surr_mean, surr_se = _mean_and_se(surr_costs)

    default_M = default_second_moment(sigma, instance.N_x)
    cost_check_valid = bool(
        np.allclose(instance.disturbance.second_moment, default_M, rtol=1e-9, atol=0.0)
    )

    return SimulationReport(
        samples=n,
        seed=config.seed,
        constraint_violations=constraint_violations,
        worst_slack=worst_slack,
        contract_violations=contract_violations,
        worst_membership=worst_membership,
        max_reconstruction_error=recon_err,
        rollout_gap=gap,
        surrogate_cost_mean=surr_mean,
        surrogate_cost_se=surr_se,
        surrogate_cost_samples=n_cost,
        actual_cost_mean=actual_mean,
        actual_cost_se=actual_se,
        cost_check_valid=cost_check_valid,
        per_sample_slack=per_sample_slack,
        per_sample_membership=membership,
        per_sample_cost=actual_costs,
    )


def report_to_dict(report: SimulationReport) -> dict:
    """Aggregate view of the report (per-sample arrays stay out; they go
    to the flat table instead). Infinite slack (no constraint rows) maps
    to null for JSON portability."""
    return {
        "kind": "simulation",
        "samples": report.samples,
        "seed": report.seed,
        "constraint_violations": report.constraint_violations,
        "worst_slack": report.worst_slack if math.isfinite(report.worst_slack) else None,
        "contract_violations": report.contract_violations,
        "worst_membership": report.worst_membership,
        "max_reconstruction_error": report.max_reconstruction_error,
        "rollout_gap": report.rollout_gap,
        "surrogate_cost_mean": report.surrogate_cost_mean,
        "surrogate_cost_se": report.surrogate_cost_se,
        "surrogate_cost_samples": report.surrogate_cost_samples,
        "actual_cost_mean": report.actual_cost_mean,
        "actual_cost_se": report.actual_cost_se,
        "cost_check_valid": report.cost_check_valid,
        "clean": report.clean,
    }

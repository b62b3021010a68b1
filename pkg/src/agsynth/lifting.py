"""Trajectory-space operators for the true and surrogate dynamics.

All whole-trajectory relations used by the synthesizer live here:
x = B u + L w for the true system, and x = Btil u + Ltil w + Htil x_C for
the surrogate system in which coupled-state influence is routed through a
separate input channel. Matrices are dense; block bookkeeping goes
through :class:`BlockIndexer` so the off-by-one conventions are written
down exactly once.

Index conventions (see also the model module):

* state block t of a trajectory vector/row grid covers x(t), t = 0..T;
* input block t covers u(t), t = 0..T-1;
* disturbance block s covers w(s-1), s = 0..T, so block 0 is the random
  initial state and block s >= 1 is the disturbance entering x(s);
* the state-transition product `phi(s, t)` maps x(s) to x(t) along the
  dynamics, with phi(t, t) = I.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from agsynth.infograph import InfoDecomposition
from agsynth.model import ProblemInstance

__all__ = [
    "BlockIndexer",
    "LiftedSystem",
    "surrogate_split",
    "build_B_L",
    "build_surrogate",
    "build_projection",
    "build_lifted",
    "trajectory",
    "lifted_to_dict",
]


@dataclass(frozen=True)
class BlockIndexer:
    """Slices of time blocks inside stacked trajectory vectors."""

    n_x: int
    n_u: int
    horizon: int

    def state_block(self, t: int) -> slice:
        """Rows of x(t) inside x = (x(0), ..., x(T))."""
        return slice(t * self.n_x, (t + 1) * self.n_x)

    def input_block(self, t: int) -> slice:
        """Rows of u(t) inside u = (u(0), ..., u(T-1))."""
        return slice(t * self.n_u, (t + 1) * self.n_u)

    def dist_block(self, s: int) -> slice:
        """Rows of w(s-1) inside w = (w(-1), w(0), ..., w(T-1))."""
        return slice(s * self.n_x, (s + 1) * self.n_x)


@dataclass(frozen=True)
class LiftedSystem:
    """Stacked trajectory operators; `Pi_C` selects the coupled rows."""

    B: np.ndarray
    L: np.ndarray
    Btil: np.ndarray
    Ltil: np.ndarray
    Htil: np.ndarray
    Pi_C: np.ndarray

    @property
    def coupled_traj_dim(self) -> int:
        return self.Pi_C.shape[0]


def _transition_products(A_seq, n_x: int, T: int) -> list[list[np.ndarray]]:
    """phi[s][t] = A(t-1) ... A(s) for s <= t, with phi[t][t] = I."""
    phi = [[None] * (T + 1) for _ in range(T + 1)]
    for s in range(T + 1):
        acc = np.eye(n_x)
        phi[s][s] = acc
        for t in range(s + 1, T + 1):
            acc = A_seq[t - 1] @ acc
            phi[s][t] = acc
    return phi


def surrogate_split(instance: ProblemInstance, decomp: InfoDecomposition):
    """Split each A(t) into a part free of coupled-state influence and
    the remainder: the (i, j) block moves to the remainder when j is a
    coupled neighbor of i. The two parts always sum back to A(t)."""
    dims = instance.dims
    A_surr, H_step = [], []
    for a in instance.dynamics.A:
        a_s = np.array(a)
        h = np.zeros_like(a_s)
        for i in range(1, dims.N + 1):
            for j in decomp.coupled[i]:
                rs, cs = dims.state_slice(i), dims.state_slice(j)
                h[rs, cs] = a_s[rs, cs]
                a_s[rs, cs] = 0.0
        A_surr.append(a_s)
        H_step.append(h)
    return A_surr, H_step


def _stack_input_map(A_seq, B_seq, n_x: int, n_u: int, T: int) -> np.ndarray:
    """Input-to-state trajectory map: block (t, s) = phi(s+1, t) B(s) for
    t > s, zero otherwise. The first block row is zero: x(0) does not
    depend on inputs."""
    phi = _transition_products(A_seq, n_x, T)
    idx = BlockIndexer(n_x, n_u, T)
    out = np.zeros((n_x * (T + 1), n_u * T))
    for t in range(1, T + 1):
        for s in range(t):
            out[idx.state_block(t), idx.input_block(s)] = phi[s + 1][t] @ B_seq[s]
    return out


def _stack_dist_map(A_seq, n_x: int, T: int) -> np.ndarray:
    """Disturbance-to-state map: block (t, s) = phi(s, t) for t >= s.
    Column block s carries w(s-1), which enters the state at time s and
    then propagates; the diagonal blocks are identities."""
    phi = _transition_products(A_seq, n_x, T)
    idx = BlockIndexer(n_x, n_x, T)
    out = np.zeros((n_x * (T + 1), n_x * (T + 1)))
    for t in range(T + 1):
        for s in range(t + 1):
            out[idx.state_block(t), idx.dist_block(s)] = phi[s][t]
    return out


def build_B_L(instance: ProblemInstance) -> tuple[np.ndarray, np.ndarray]:
    """True-dynamics trajectory operators in x = B u + L w."""
    n_x, n_u, T = instance.n_x, instance.n_u, instance.T
    B = _stack_input_map(instance.dynamics.A, instance.dynamics.B, n_x, n_u, T)
    L = _stack_dist_map(instance.dynamics.A, n_x, T)
    return B, L


def build_projection(instance: ProblemInstance, decomp: InfoDecomposition) -> np.ndarray:
    """Row-selection matrix mapping x to its coupled subtrajectory x_C."""
    rows = np.zeros((decomp.coupled_traj_dim, instance.N_x))
    for r, c in enumerate(decomp.projection_indices):
        rows[r, c] = 1.0
    return rows


def build_surrogate(instance: ProblemInstance, decomp: InfoDecomposition):
    """Surrogate trajectory operators (Btil, Ltil, Htil).

    Btil and Ltil repeat the true construction with the coupled-influence
    blocks removed from A(t). Htil carries the removed influence: its
    underlying full map has block (t, s) = phi_surr(s+1, t) H_step(s) for
    t > s (zero first block row, and the last signal block never enters),
    restricted to the coupled columns. Htil has coupled_traj_dim columns;
    the dimension is zero when no coupling exists.
    """
    n_x, n_u, T = instance.n_x, instance.n_u, instance.T
    A_surr, H_step = surrogate_split(instance, decomp)
    Btil = _stack_input_map(A_surr, instance.dynamics.B, n_x, n_u, T)
    Ltil = _stack_dist_map(A_surr, n_x, T)

    phi = _transition_products(A_surr, n_x, T)
    idx = BlockIndexer(n_x, n_x, T)
    H = np.zeros((n_x * (T + 1), n_x * (T + 1)))
    for t in range(1, T + 1):
        for s in range(t):
            H[idx.state_block(t), idx.dist_block(s)] = phi[s + 1][t] @ H_step[s]
    Pi_C = build_projection(instance, decomp)
    Htil = H @ Pi_C.T
    return Btil, Ltil, Htil


def build_lifted(instance: ProblemInstance, decomp: InfoDecomposition) -> LiftedSystem:
    """Assemble every trajectory operator once."""
    B, L = build_B_L(instance)
    Btil, Ltil, Htil = build_surrogate(instance, decomp)
    return LiftedSystem(
        B=B, L=L, Btil=Btil, Ltil=Ltil, Htil=Htil,
        Pi_C=build_projection(instance, decomp),
    )


def lifted_to_dict(lifted: LiftedSystem) -> dict:
    """Debug dump of every trajectory operator, for fixture generation."""
    return {
        "kind": "lifted_system",
        "B": lifted.B.tolist(),
        "L": lifted.L.tolist(),
        "Btil": lifted.Btil.tolist(),
        "Ltil": lifted.Ltil.tolist(),
        "Htil": lifted.Htil.tolist(),
        "Pi_C": lifted.Pi_C.tolist(),
    }


def trajectory(
    instance: ProblemInstance, lifted: LiftedSystem, u: np.ndarray, w: np.ndarray
) -> np.ndarray:
    """State trajectory x = B u + L w for stacked inputs and disturbances."""
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if u.shape != (instance.N_u,):
        raise ValueError(f"u: expected shape ({instance.N_u},), got {u.shape}")
    if w.shape != (instance.N_x,):
        raise ValueError(f"w: expected shape ({instance.N_x},), got {w.shape}")
    return lifted.B @ u + lifted.L @ w

"""Information decomposition and the block sparsity patterns it induces.

Splits each subsystem's observed neighbors into a locally nested part
N(i), whose disturbances the subsystem can reconstruct from its own
measurements, and the complementary coupled part C(i), whose states carry
the influence of control actions the subsystem cannot reconstruct. The
split drives everything downstream: which states get replaced by
fictitious disturbances, and which blocks of the feedback gain and
contract-orientation matrices are allowed to be nonzero.

Membership rule: j belongs to N(i) when i observes j, i observes every
state that feeds j's dynamics, and i observes everything observed by any
subsystem whose input feeds j's dynamics. The last condition lets i
re-run those controllers and reconstruct their actions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from agsynth.model import ProblemInstance, SubsystemDims

__all__ = [
    "CouplingGraphs",
    "InfoDecomposition",
    "SparsityPattern",
    "build_coupling_graphs",
    "compute_decomposition",
    "is_partially_nested",
    "pattern_QN",
    "pattern_QC",
    "pattern_Y",
]


@dataclass(frozen=True)
class CouplingGraphs:
    """Structural coupling graphs read off the dynamics block sparsity.

    Edge (j, i) is in E_A when some A block (i, j) has a nonzero entry,
    i.e. subsystem j's state feeds subsystem i's dynamics; E_B likewise
    for inputs. User zeros are treated as structural (no tolerance).
    """

    E_A: frozenset[tuple[int, int]]
    E_B: frozenset[tuple[int, int]]
    num_vertices: int

    def in_neighbors_A(self, label: int) -> frozenset[int]:
        return frozenset(j for (j, i) in self.E_A if i == label)

    def in_neighbors_B(self, label: int) -> frozenset[int]:
        return frozenset(j for (j, i) in self.E_B if i == label)


@dataclass(frozen=True)
class InfoDecomposition:
    """Per-subsystem nested/coupled split plus the coupling graph G_C.

    `projection_indices` lists, time-major and by ascending subsystem
    label within each time block, the rows of the stacked state
    trajectory that make up the coupled-state trajectory; it defines the
    selection operator Pi_C.
    """

    nested: Mapping[int, frozenset[int]]
    coupled: Mapping[int, frozenset[int]]
    coupled_set: frozenset[int]
    E_C: frozenset[tuple[int, int]]
    coupled_state_dim: int
    coupled_traj_dim: int
    projection_indices: tuple[int, ...]
    horizon: int
    num_vertices: int

    def coupled_out_neighbors(self, label: int) -> frozenset[int]:
        """Out-neighborhood of `label` in G_C."""
        return frozenset(i for (j, i) in self.E_C if j == label)


@dataclass(frozen=True)
class SparsityPattern:
    """Free/zero mask over a (time-block x subsystem-block) matrix grid.

    `mask[t, s, i, j]` is True when block (i, j) of time block (t, s) may
    carry free entries; zero blocks are structural. `row_dims`/`col_dims`
    give the scalar size of each subsystem block within one time block.
    """

    mask: np.ndarray
    row_dims: tuple[int, ...]
    col_dims: tuple[int, ...]

    def __post_init__(self):
        t_rows, t_cols, n_i, n_j = self.mask.shape
        if n_i != len(self.row_dims) or n_j != len(self.col_dims):
            raise ValueError("mask subsystem grid does not match declared block dims")

    @property
    def shape(self) -> tuple[int, int]:
        t_rows, t_cols = self.mask.shape[:2]
        return (t_rows * sum(self.row_dims), t_cols * sum(self.col_dims))

    def scalar_mask(self) -> np.ndarray:
        """Expand the block mask to a scalar boolean matrix."""
        t_rows, t_cols, N_i, N_j = self.mask.shape
        row_block = sum(self.row_dims)
        col_block = sum(self.col_dims)
        out = np.zeros((t_rows * row_block, t_cols * col_block), dtype=bool)
        row_off = np.concatenate([[0], np.cumsum(self.row_dims)])
        col_off = np.concatenate([[0], np.cumsum(self.col_dims)])
        for t in range(t_rows):
            for s in range(t_cols):
                for i in range(N_i):
                    if not self.mask[t, s, i].any():
                        continue
                    rs = slice(t * row_block + row_off[i], t * row_block + row_off[i + 1])
                    for j in range(N_j):
                        if self.mask[t, s, i, j]:
                            cs = slice(
                                s * col_block + col_off[j], s * col_block + col_off[j + 1]
                            )
                            out[rs, cs] = True
        return out

    def num_free_entries(self) -> int:
        return int(self.scalar_mask().sum())


def build_coupling_graphs(instance: ProblemInstance) -> CouplingGraphs:
    """Read E_A and E_B off the exact block sparsity of A(t), B(t)."""
    dims = instance.dims
    E_A, E_B = set(), set()
    for i in range(1, dims.N + 1):
        for j in range(1, dims.N + 1):
            a_hit = any(
                np.any(a[dims.state_slice(i), dims.state_slice(j)] != 0.0)
                for a in instance.dynamics.A
            )
            b_hit = any(
                np.any(b[dims.state_slice(i), dims.input_slice(j)] != 0.0)
                for b in instance.dynamics.B
            )
            if a_hit:
                E_A.add((j, i))
            if b_hit:
                E_B.add((j, i))
    return CouplingGraphs(frozenset(E_A), frozenset(E_B), dims.N)


def compute_decomposition(
    instance: ProblemInstance, graphs: CouplingGraphs | None = None
) -> InfoDecomposition:
    """Split observed neighbors into nested N(i) and coupled C(i) sets."""
    if graphs is None:
        graphs = build_coupling_graphs(instance)
    dims = instance.dims
    info = instance.info_graph
    obs = {i: info.in_neighbors(i) for i in range(1, dims.N + 1)}

    nested, coupled = {}, {}
    for i in range(1, dims.N + 1):
        n_i = set()
        for j in obs[i]:
            feeds_state = graphs.in_neighbors_A(j) <= obs[i]
            feeds_input = all(obs[k] <= obs[i] for k in graphs.in_neighbors_B(j))
            if feeds_state and feeds_input:
                n_i.add(j)
        nested[i] = frozenset(n_i)
        coupled[i] = frozenset(obs[i] - n_i)

    coupled_set = frozenset().union(*coupled.values()) if coupled else frozenset()
    E_C = frozenset((j, i) for (j, i) in info.edges if j in coupled[i])

    coupled_sorted = sorted(coupled_set)
    n_x_C = sum(dims.state_dims[j - 1] for j in coupled_sorted)
    T = instance.T
    indices: list[int] = []
    for t in range(T + 1):
        base = t * dims.n_x
        for j in coupled_sorted:
            off = dims.state_offset(j)
            indices.extend(range(base + off, base + off + dims.state_dims[j - 1]))

    return InfoDecomposition(
        nested=nested,
        coupled=coupled,
        coupled_set=coupled_set,
        E_C=E_C,
        coupled_state_dim=n_x_C,
        coupled_traj_dim=n_x_C * (T + 1),
        projection_indices=tuple(indices),
        horizon=T,
        num_vertices=dims.N,
    )


def is_partially_nested(decomp: InfoDecomposition) -> bool:
    """True iff no information coupling remains (C is empty)."""
    return len(decomp.coupled_set) == 0


def _feedback_mask(decomp: InfoDecomposition, allowed: Mapping[int, frozenset[int]]) -> np.ndarray:
    """Causal T x (T+1) block grid; block (t, s, i, j) free iff j is
    allowed for i and t >= s. Column block s feeds the signal indexed
    s - 1 in the shifted disturbance stacking, so t >= s is causality."""
    T, N = decomp.horizon, decomp.num_vertices
    mask = np.zeros((T, T + 1, N, N), dtype=bool)
    for t in range(T):
        for s in range(t + 1):
            for i in range(1, N + 1):
                for j in allowed[i]:
                    mask[t, s, i - 1, j - 1] = True
    return mask


def pattern_QN(decomp: InfoDecomposition, dims: SubsystemDims) -> SparsityPattern:
    """Gain pattern for feedback on reconstructable disturbances."""
    return SparsityPattern(
        mask=_feedback_mask(decomp, decomp.nested),
        row_dims=dims.input_dims,
        col_dims=dims.state_dims,
    )


def pattern_QC(decomp: InfoDecomposition, dims: SubsystemDims) -> SparsityPattern:
    """Gain pattern for feedback on coupled states / fictitious signals."""
    return SparsityPattern(
        mask=_feedback_mask(decomp, decomp.coupled),
        row_dims=dims.input_dims,
        col_dims=dims.state_dims,
    )


def pattern_Y(decomp: InfoDecomposition, dims: SubsystemDims) -> SparsityPattern:
    """Contract-orientation pattern: strictly causal in time, and block
    (i, j) free only when every coupled listener of i also listens to j,
    which keeps the coupled-gain subspace invariant under right
    multiplication (the zero blocks are what make the invariance work)."""
    T, N = decomp.horizon, decomp.num_vertices
    out_nbrs = {i: decomp.coupled_out_neighbors(i) for i in range(1, N + 1)}
    mask = np.zeros((T + 1, T + 1, N, N), dtype=bool)
    for t in range(T + 1):
        for s in range(t):
            for i in range(1, N + 1):
                for j in range(1, N + 1):
                    if out_nbrs[i] <= out_nbrs[j]:
                        mask[t, s, i - 1, j - 1] = True
    return SparsityPattern(mask=mask, row_dims=dims.state_dims, col_dims=dims.state_dims)

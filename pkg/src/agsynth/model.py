"""Problem instances: domain types, validation, canonicalization, file I/O.

An instance bundles the dynamics of N coupled linear subsystems over a
finite horizon T, an ellipsoidal disturbance description, polyhedral
trajectory constraints, quadratic costs, and the information graph saying
which subsystems can observe which local states.

Conventions used throughout the package:

* Subsystems carry labels 1..N in files, graphs, and index sets. Array
  offsets are derived from labels via :class:`SubsystemDims`.
* Trajectories stack time-major: x = (x(0), ..., x(T)) of length
  N_x = n_x (T+1), u = (u(0), ..., u(T-1)) of length N_u = n_u T, and
  w = (w(-1), w(0), ..., w(T-1)) of length N_x, where the leading
  component w(-1) = x(0) carries the random initial state.
* The disturbance trajectory is supported on {z : z' Sigma^{-1} z <= 1}
  with Sigma symmetric positive definite; M = E[w w'] is its second
  moment. For the default uniform law on that ellipsoid,
  M = Sigma / (N_x + 2).

Validated instances are immutable: their arrays are marked read-only and
may be shared freely across workers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "InstanceError",
    "SubsystemDims",
    "Dynamics",
    "DisturbanceModel",
    "ConstraintData",
    "CostData",
    "InfoGraph",
    "ProblemInstance",
    "validate_instance",
    "default_second_moment",
    "load_instance",
    "save_instance",
    "instance_to_dict",
    "instance_from_dict",
    "instance_hash",
]

# Relative eigenvalue floor below which a nominally PSD matrix is rejected.
PSD_FLOOR = 1e-9
# Relative asymmetry accepted in user-supplied symmetric matrices.
SYMMETRY_TOL = 1e-9

SUPPORTED_DISTRIBUTIONS = ("uniform",)


class InstanceError(ValueError):
    """Raised when an instance fails validation or a file fails to parse."""


@dataclass(frozen=True)
class SubsystemDims:
    """Per-subsystem state and input dimensions, with offset helpers."""

    state_dims: tuple[int, ...]
    input_dims: tuple[int, ...]

    @property
    def N(self) -> int:
        return len(self.state_dims)

    @property
    def n_x(self) -> int:
        return sum(self.state_dims)

    @property
    def n_u(self) -> int:
        return sum(self.input_dims)

    def state_offset(self, label: int) -> int:
        """Offset of subsystem `label` (1-based) inside a stacked state x(t)."""
        return sum(self.state_dims[: label - 1])

    def input_offset(self, label: int) -> int:
        return sum(self.input_dims[: label - 1])

    def state_slice(self, label: int) -> slice:
        off = self.state_offset(label)
        return slice(off, off + self.state_dims[label - 1])

    def input_slice(self, label: int) -> slice:
        off = self.input_offset(label)
        return slice(off, off + self.input_dims[label - 1])


@dataclass(frozen=True)
class Dynamics:
    """Time-varying dynamics x(t+1) = A(t) x(t) + B(t) u(t) + w(t).

    `A` and `B` are length-T tuples of full (stacked) matrices; block
    (i, j) of A(t) has shape n_x^i x n_x^j per the subsystem dimensions.
    Raw instances may carry a single constant matrix instead of a tuple;
    canonicalization expands it to T explicit copies.
    """

    A: tuple[np.ndarray, ...] | np.ndarray
    B: tuple[np.ndarray, ...] | np.ndarray
    horizon: int


@dataclass(frozen=True)
class DisturbanceModel:
    """Ellipsoidal disturbance support plus the trajectory second moment.

    `sigma` shapes the support ellipsoid {z : z' sigma^{-1} z <= 1} of the
    whole disturbance trajectory. `second_moment` is M = E[w w']; when
    None and the distribution is uniform it canonicalizes to
    sigma / (N_x + 2). The distribution tag only drives simulation.
    """

    sigma: np.ndarray
    second_moment: np.ndarray | None = None
    distribution: str = "uniform"


@dataclass(frozen=True)
class ConstraintData:
    """Polyhedral rows F_x x + F_u u + F_w w <= g over whole trajectories."""

    F_x: np.ndarray
    F_u: np.ndarray
    F_w: np.ndarray | None
    g: np.ndarray

    @property
    def num_rows(self) -> int:
        return int(np.asarray(self.g).size)


@dataclass(frozen=True)
class CostData:
    """Quadratic trajectory cost E[x' R_x x + u' R_u u]; both PSD."""

    R_x: np.ndarray
    R_u: np.ndarray


@dataclass(frozen=True)
class InfoGraph:
    """Directed information graph: edge (j, i) means i observes x_j."""

    edges: frozenset[tuple[int, int]]
    num_vertices: int

    def in_neighbors(self, label: int) -> frozenset[int]:
        return frozenset(j for (j, i) in self.edges if i == label)

    def out_neighbors(self, label: int) -> frozenset[int]:
        return frozenset(i for (j, i) in self.edges if j == label)


@dataclass(frozen=True)
class ProblemInstance:
    dims: SubsystemDims
    dynamics: Dynamics
    disturbance: DisturbanceModel
    constraints: ConstraintData
    cost: CostData
    info_graph: InfoGraph

    @property
    def N(self) -> int:
        return self.dims.N

    @property
    def T(self) -> int:
        return self.dynamics.horizon

    @property
    def n_x(self) -> int:
        return self.dims.n_x

    @property
    def n_u(self) -> int:
        return self.dims.n_u

    @property
    def N_x(self) -> int:
        """Stacked trajectory state dimension n_x (T+1)."""
        return self.n_x * (self.T + 1)

    @property
    def N_u(self) -> int:
        """Stacked trajectory input dimension n_u T."""
        return self.n_u * self.T

    @property
    def num_constraint_rows(self) -> int:
        return self.constraints.num_rows


# ---------------------------------------------------------------------------
# numeric checks
# ---------------------------------------------------------------------------


def _as_matrix(value, name: str, shape: tuple[int, int]) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.size == 0 and 0 in shape:
        return arr.reshape(shape)
    if arr.ndim == 1 and shape[0] == 1:
        arr = arr.reshape(1, -1)
    if arr.shape != shape:
        raise InstanceError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InstanceError(f"{name}: contains non-finite entries")
    return arr


def _symmetrize(arr: np.ndarray, name: str) -> np.ndarray:
    gap = np.abs(arr - arr.T).max(initial=0.0)
    scale = 1.0 + np.abs(arr).max(initial=0.0)
    if gap > SYMMETRY_TOL * scale:
        raise InstanceError(f"{name}: not symmetric (max asymmetry {gap:.3e})")
    return 0.5 * (arr + arr.T)


def _check_positive_definite(arr: np.ndarray, name: str) -> None:
    try:
        np.linalg.cholesky(arr)
    except np.linalg.LinAlgError:
        raise InstanceError(f"{name} not positive definite") from None


def _check_psd(arr: np.ndarray, name: str) -> None:
    eigs = np.linalg.eigvalsh(arr)
    floor = -PSD_FLOOR * max(np.abs(eigs).max(initial=0.0), np.finfo(float).tiny)
    if eigs.min(initial=0.0) < floor:
        raise InstanceError(
            f"{name} not positive semidefinite (min eigenvalue {eigs.min():.3e})"
        )


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.flags.writeable = False
    return out


def _canonical_matrix_sequence(raw, name: str, T: int, shape: tuple[int, int]) -> tuple[np.ndarray, ...]:
    """Expand a constant matrix or a length-T sequence to T frozen copies."""
    if isinstance(raw, np.ndarray) and raw.ndim == 2:
        mats = [raw] * T
    elif isinstance(raw, np.ndarray) and raw.ndim == 3:
        mats = list(raw)
    elif isinstance(raw, Sequence) and len(raw) > 0 and np.asarray(raw[0]).ndim == 2:
        mats = list(raw)
    else:
        arr = np.asarray(raw, dtype=float)
        if arr.ndim == 2:
            mats = [arr] * T
        elif arr.ndim == 3:
            mats = list(arr)
        else:
            raise InstanceError(f"{name}: expected a matrix or a list of {T} matrices")
    if len(mats) == 1:
        mats = mats * T
    if len(mats) != T:
        raise InstanceError(f"{name}: expected 1 or {T} matrices, got {len(mats)}")
    return tuple(_frozen(_as_matrix(m, f"{name}({t})", shape)) for t, m in enumerate(mats))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def default_second_moment(sigma: np.ndarray, traj_dim: int) -> np.ndarray:
    """Second moment of the uniform law on {z : z' sigma^{-1} z <= 1}.

    For a uniform draw on an n-dimensional ellipsoid with shape matrix
    sigma the covariance (= second moment, the law is zero mean) equals
    sigma / (n + 2).
    """
    sigma = np.asarray(sigma, dtype=float)
    return sigma / (traj_dim + 2)


def validate_instance(raw: ProblemInstance) -> ProblemInstance:
    """Check every invariant and return the canonicalized instance.

    Canonicalization expands constant dynamics matrices to per-step
    copies, fills in the default second moment and the zero F_w, and
    marks every array read-only. Raises :class:`InstanceError` with a
    field-level message on the first violation.
    """
    dims = raw.dims
    if dims.N == 0:
        raise InstanceError("dims: at least one subsystem required")
    if any(d <= 0 for d in dims.state_dims):
        raise InstanceError("dims.n_x: state dimensions must be strictly positive")
    if any(d <= 0 for d in dims.input_dims):
        raise InstanceError("dims.n_u: input dimensions must be strictly positive")
    if len(dims.state_dims) != len(dims.input_dims):
        raise InstanceError("dims: n_x and n_u lists must have equal length N")

    T = raw.dynamics.horizon
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise InstanceError(f"T: horizon must be a positive integer, got {T!r}")
    T = int(T)

    n_x, n_u = dims.n_x, dims.n_u
    A = _canonical_matrix_sequence(raw.dynamics.A, "A", T, (n_x, n_x))
    B = _canonical_matrix_sequence(raw.dynamics.B, "B", T, (n_x, n_u))
    dynamics = Dynamics(A=A, B=B, horizon=T)

    N_x = n_x * (T + 1)
    N_u = n_u * T

    sigma = _symmetrize(_as_matrix(raw.disturbance.sigma, "Sigma", (N_x, N_x)), "Sigma")
    _check_positive_definite(sigma, "Sigma")
    dist = raw.disturbance.distribution
    if dist not in SUPPORTED_DISTRIBUTIONS:
        raise InstanceError(
            f"distribution: {dist!r} unsupported (supported: {SUPPORTED_DISTRIBUTIONS})"
        )
    if raw.disturbance.second_moment is None:
        M = default_second_moment(sigma, N_x)
    else:
        M = _symmetrize(_as_matrix(raw.disturbance.second_moment, "M", (N_x, N_x)), "M")
    _check_positive_definite(M, "M")
    disturbance = DisturbanceModel(
        sigma=_frozen(sigma), second_moment=_frozen(M), distribution=dist
    )

    g = np.asarray(raw.constraints.g, dtype=float).reshape(-1)
    m = g.size
    F_x = _as_matrix(raw.constraints.F_x, "F_x", (m, N_x))
    F_u = _as_matrix(raw.constraints.F_u, "F_u", (m, N_u))
    if raw.constraints.F_w is None:
        F_w = np.zeros((m, N_x))
    else:
        F_w = _as_matrix(raw.constraints.F_w, "F_w", (m, N_x))
    if not np.all(np.isfinite(g)):
        raise InstanceError("g: contains non-finite entries")
    constraints = ConstraintData(
        F_x=_frozen(F_x), F_u=_frozen(F_u), F_w=_frozen(F_w), g=_frozen(g)
    )

    R_x = _symmetrize(_as_matrix(raw.cost.R_x, "R_x", (N_x, N_x)), "R_x")
    R_u = _symmetrize(_as_matrix(raw.cost.R_u, "R_u", (N_u, N_u)), "R_u")
    _check_psd(R_x, "R_x")
    _check_psd(R_u, "R_u")
    cost = CostData(R_x=_frozen(R_x), R_u=_frozen(R_u))

    graph = raw.info_graph
    if graph.num_vertices != dims.N:
        raise InstanceError(
            f"E_I: graph has {graph.num_vertices} vertices, instance has N={dims.N}"
        )
    for (j, i) in graph.edges:
        if not (1 <= j <= dims.N and 1 <= i <= dims.N):
            raise InstanceError(f"E_I: edge ({j}, {i}) references an unknown vertex")
    for i in range(1, dims.N + 1):
        if (i, i) not in graph.edges:
            raise InstanceError(
                f"E_I: subsystem {i} does not observe its own state; "
                "every subsystem must carry the self edge (i, i)"
            )
    info_graph = InfoGraph(edges=frozenset(graph.edges), num_vertices=dims.N)

    return ProblemInstance(
        dims=SubsystemDims(tuple(int(d) for d in dims.state_dims),
                           tuple(int(d) for d in dims.input_dims)),
        dynamics=dynamics,
        disturbance=disturbance,
        constraints=constraints,
        cost=cost,
        info_graph=info_graph,
    )


# ---------------------------------------------------------------------------
# serialization
#
# File schema (JSON, matrices as row-major nested lists of decimals):
#   {
#     "N": int, "T": int,
#     "dims": {"n_x": [int, ...], "n_u": [int, ...]},
#     "A": matrix | [matrix x T],      # constant or per-step
#     "B": matrix | [matrix x T],
#     "E_I": [[from, to], ...],        # 1-based labels
#     "Sigma": matrix,                 # N_x x N_x
#     "M": matrix,                     # optional; default Sigma/(N_x+2)
#     "F_x": matrix, "F_u": matrix,
#     "F_w": matrix,                   # optional; default 0
#     "g": [float, ...],
#     "R_x": matrix, "R_u": matrix,
#     "distribution": "uniform"        # optional
#   }
# ---------------------------------------------------------------------------

_REQUIRED_FIELDS = ("N", "T", "dims", "A", "B", "E_I", "Sigma", "F_x", "F_u", "g", "R_x", "R_u")


def instance_from_dict(data: dict) -> ProblemInstance:
    """Build and validate an instance from the documented dict schema."""
    if not isinstance(data, dict):
        raise InstanceError("instance document must be a JSON object")
    missing = [f for f in _REQUIRED_FIELDS if f not in data]
    if missing:
        raise InstanceError(f"missing required field(s): {', '.join(missing)}")
    dims_raw = data["dims"]
    if not isinstance(dims_raw, dict) or "n_x" not in dims_raw or "n_u" not in dims_raw:
        raise InstanceError("dims: expected an object with fields n_x and n_u")
    dims = SubsystemDims(tuple(dims_raw["n_x"]), tuple(dims_raw["n_u"]))
    if dims.N != int(data["N"]):
        raise InstanceError(f"N: declared {data['N']} but dims lists have length {dims.N}")
    edges = frozenset((int(j), int(i)) for j, i in data["E_I"])
    raw = ProblemInstance(
        dims=dims,
        dynamics=Dynamics(A=data["A"], B=data["B"], horizon=int(data["T"])),
        disturbance=DisturbanceModel(
            sigma=np.asarray(data["Sigma"], dtype=float),
            second_moment=(
                np.asarray(data["M"], dtype=float) if data.get("M") is not None else None
            ),
            distribution=data.get("distribution", "uniform"),
        ),
        constraints=ConstraintData(
            F_x=np.asarray(data["F_x"], dtype=float),
            F_u=np.asarray(data["F_u"], dtype=float),
            F_w=(np.asarray(data["F_w"], dtype=float) if data.get("F_w") is not None else None),
            g=np.asarray(data["g"], dtype=float),
        ),
        cost=CostData(
            R_x=np.asarray(data["R_x"], dtype=float),
            R_u=np.asarray(data["R_u"], dtype=float),
        ),
        info_graph=InfoGraph(edges=edges, num_vertices=dims.N),
    )
    return validate_instance(raw)


def instance_to_dict(instance: ProblemInstance) -> dict:
    """Serialize a validated instance to the documented dict schema."""
    inst = validate_instance(instance)
    return {
        "N": inst.N,
        "T": inst.T,
        "dims": {"n_x": list(inst.dims.state_dims), "n_u": list(inst.dims.input_dims)},
        "A": [a.tolist() for a in inst.dynamics.A],
        "B": [b.tolist() for b in inst.dynamics.B],
        "E_I": sorted([j, i] for (j, i) in inst.info_graph.edges),
        "Sigma": inst.disturbance.sigma.tolist(),
        "M": inst.disturbance.second_moment.tolist(),
        "F_x": inst.constraints.F_x.tolist(),
        "F_u": inst.constraints.F_u.tolist(),
        "F_w": inst.constraints.F_w.tolist(),
        "g": inst.constraints.g.tolist(),
        "R_x": inst.cost.R_x.tolist(),
        "R_u": inst.cost.R_u.tolist(),
        "distribution": inst.disturbance.distribution,
    }


def load_instance(path: str | Path) -> ProblemInstance:
    """Load and validate an instance file; errors carry field diagnostics."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InstanceError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    try:
        return instance_from_dict(data)
    except InstanceError as exc:
        raise InstanceError(f"{path}: {exc}") from exc


def save_instance(instance: ProblemInstance, path: str | Path) -> None:
    """Write the canonical form; load(save(x)) reproduces x exactly."""
    Path(path).write_text(json.dumps(instance_to_dict(instance), indent=1) + "\n")


def instance_hash(instance: ProblemInstance) -> str:
    """SHA-256 of the canonical serialized form, for artifact cross-checks."""
    blob = json.dumps(instance_to_dict(instance), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()

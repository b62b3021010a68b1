"""Decentralized affine policy synthesis with ellipsoidal assume-guarantee contracts."""

from agsynth.contract_sdp import (
    AffinePolicy,
    Contract,
    SynthesisResult,
    synthesize,
)
from agsynth.infograph import (
    InfoDecomposition,
    build_coupling_graphs,
    compute_decomposition,
    is_partially_nested,
)
from agsynth.lifting import LiftedSystem, build_lifted, trajectory
from agsynth.model import (
    ConstraintData,
    CostData,
    DisturbanceModel,
    Dynamics,
    InfoGraph,
    InstanceError,
    ProblemInstance,
    SubsystemDims,
    default_second_moment,
    instance_hash,
    load_instance,
    save_instance,
    validate_instance,
)
from agsynth.simulate import (
    SimulationConfig,
    SimulationReport,
    check_contract,
    closed_loop,
    run,
    sample_disturbance,
)

__version__ = "0.1.0"

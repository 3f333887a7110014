"""Network localization from angle and displacement constraints.

Anchors (known positions) occupy the leading node indices. Free nodes are
located either by a direct solve of the information-matrix system or by a
simulated distributed gradient protocol.
"""
from .constraints import (
    AngleConstraint,
    ConstraintSet,
    DisplacementConstraint,
    build_constraint_set,
    design_angle_params,
    enumerate_angle_triples,
    enumerate_displacement_tuples,
    mu_from_angles,
    mu_from_bearings,
    mu_from_distances,
    mu_from_local_positions,
    mu_from_measurements,
    mu_from_ratios,
)
from .core import (
    Configuration,
    LocalFrameAssignment,
    NetworkGraph,
    SimilarityTransform,
    apply_similarity,
    relative_quantities,
)
from .errors import *  # noqa: F401,F403
from .localize import (
    NoisePerturbation,
    direct_localize,
    error_bound,
    noise_nonsingularity_check,
    perturb_from_measurement_noise,
)
from .measurements import MODALITIES, MeasurementSet, add_measurement_noise, synthesize_measurements
from .protocol import (
    NodeAgent,
    ProtocolNetwork,
    Trajectory,
    exponential_rate_estimate,
    matrix_flow_step,
    per_node_update,
    run_protocol,
)
from .rigidity import (
    RigidityMatrix,
    RigidityReport,
    assemble_rigidity_matrix,
    check_congruence,
    complete_rigidity_matrix,
    information_matrix,
    nullity_report,
    partition,
    trivial_motion_basis,
)

__version__ = "0.1.0"

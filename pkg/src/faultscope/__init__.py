"""Localisation and reconstruction of sparse unknown inputs in linear networks."""

__version__ = "0.1.0"

from .graph import InfluenceGraph, compose, from_state_matrix, path_weight, transpose
from .gammoid import Gammoid, is_linked, rank, spark_exact, sparse_localizable, transpose_gammoid
from .simulate import LinearSystem, SignalBundle, TwinExperiment, make_twin, pq_norm, residual, simulate
from .lintransfer import (
    CoherenceMatrix,
    coherence_at,
    gramian,
    is_cascade,
    shortest_path_coherence,
    spark_lower_bound,
    transfer_entry,
)
from .reconstruct import (
    ReconstructionProblem,
    ReconstructionResult,
    SolverConfig,
    adjoint_gradient,
    cluster_score,
    objective,
    solve,
)
from .cluster import Clustering, SensorPlan, cluster_inputs, cluster_outputs, iterate_localization, plan_sensors

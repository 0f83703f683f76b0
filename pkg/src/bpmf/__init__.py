"""Combined belief propagation and mean-field message passing on factor graphs."""
from .factor_graph import (Factor, FactorGraph, GraphBuilder, QuadraticPotential, Variable, BpMfPartition,
                           build_graph, check_algorithm1_applicable, partition, region_set_bethe,
                           region_set_bpmf, region_set_mf)
from .free_energy import (all_bp, all_mf, bethe_free_energy, combined_free_energy, constraint_residuals,
                          mf_free_energy, stationarity_residual, variational_free_energy)
from .gaussian import ComplexGaussian, GaussianInfo, QuadraticEvidence, gaussian_product, posterior_update
from .message_passing import EmConstraintSet, UpdateConfig, rescaling_check
from .oracle import enumerate_joint, exact_marginals, grid_mf_minimize
from .scheduler import NotApplicableError, ScheduleTrace, StopRule, forward_backward, run, run_algorithm1, run_loopy
from .state import BeliefState
from .tabular import ContradictionError, Table

__all__ = [
    "Factor", "FactorGraph", "GraphBuilder", "QuadraticPotential", "Variable", "BpMfPartition",
    "build_graph", "check_algorithm1_applicable", "partition", "region_set_bethe",
    "region_set_bpmf", "region_set_mf", "all_bp", "all_mf", "bethe_free_energy", "combined_free_energy",
    "constraint_residuals", "mf_free_energy", "stationarity_residual", "variational_free_energy",
    "ComplexGaussian", "GaussianInfo", "QuadraticEvidence", "gaussian_product", "posterior_update",
    "EmConstraintSet", "UpdateConfig", "rescaling_check", "enumerate_joint", "exact_marginals",
    "grid_mf_minimize", "NotApplicableError", "ScheduleTrace", "StopRule", "forward_backward",
    "run", "run_algorithm1", "run_loopy", "BeliefState", "ContradictionError", "Table",
]

__version__ = "0.1.0"

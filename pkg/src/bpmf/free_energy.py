"""Free energies of beliefs on a factor graph, and residuals of their constraints.

All functions return plain floats; ``math.inf`` marks an infinite free energy
(a belief putting mass where a factor vanishes).
"""
from __future__ import annotations

import math
from typing import Iterable

import numpy as np
from scipy.special import rel_entr, xlogy

from .factor_graph import BpMfPartition, FactorGraph, QuadraticPotential, partition
from .gaussian import ComplexGaussian
from .message_passing import (UpdateConfig, EmConstraintSet, expected_log_table, quadratic_expected_log,
                              recompute, state_difference)
from .state import BeliefState
from .tabular import Table, kl


def variational_free_energy(b_joint: Table, p: Table) -> float:
    """``KL(b || p)`` for a joint belief and a normalized target over the same variables."""
    if sorted(b_joint.scope) != sorted(p.scope):
        raise ValueError(f"scopes differ: {b_joint.scope} vs {p.scope}")
    return kl(b_joint, p)


def _neg_entropy(b) -> float:
    if isinstance(b, ComplexGaussian):
        return -b.entropy()
    b = np.asarray(b, dtype=float)
    return float(xlogy(b, b).sum())


def _bp_term(graph: FactorGraph, a: int, state: BeliefState) -> float:
    ba = np.asarray(state.factor_beliefs[a], dtype=float)
    d = float(rel_entr(ba, graph.factors[a].potential.values).sum())
    return math.inf if np.isinf(d) else d


def expected_log_factor(graph: FactorGraph, a: int, beliefs) -> float:
    """``E[ln f_a]`` under the product of the neighbors' beliefs."""
    pot = graph.factors[a].potential
    if isinstance(pot, QuadraticPotential):
        L = quadratic_expected_log(pot, beliefs)
        return float(expected_log_table(L, pot.discrete, beliefs, keep=None))
    with np.errstate(invalid="ignore"):
        val = float(expected_log_table(pot.log_values, pot.scope, beliefs, keep=None))
    return -math.inf if np.isneginf(val) else val


def _sum(terms: Iterable[float]) -> float:
    total = 0.0
    for t in terms:
        total += t
    return total


def combined_free_energy(graph: FactorGraph, part: BpMfPartition, state: BeliefState) -> float:
    """Region-based free energy of the BP/MF split.

    ``sum_{a in BP} KL-type term - sum_{a in MF} E[ln f_a] - sum_i (|N_BP(i)| - 1) sum b_i ln b_i``,
    with differential entropies for Gaussian variables.
    """
    bp = _sum(_bp_term(graph, a, state) for a in sorted(part.bp))
    mf = _sum(-expected_log_factor(graph, a, state.var_beliefs) for a in sorted(part.mf))
    ent = _sum(-(len(part.n_bp[i]) - 1) * _neg_entropy(state.var_beliefs[i])
               for i in range(graph.n_vars) if len(part.n_bp[i]) != 1)
    return bp + mf + ent


def bethe_free_energy(graph: FactorGraph, state: BeliefState) -> float:
    """``sum_a sum b_a ln(b_a / f_a) - sum_i (|N(i)| - 1) sum b_i ln b_i``."""
    bp = _sum(_bp_term(graph, a, state) for a in range(graph.n_factors))
    ent = _sum(-(len(graph.neighbors(i)) - 1) * _neg_entropy(state.var_beliefs[i])
               for i in range(graph.n_vars) if len(graph.neighbors(i)) != 1)
    return bp + 0.0 + ent


def mf_free_energy(graph: FactorGraph, state: BeliefState) -> float:
    """``-sum_a E[ln f_a] - sum_i H(b_i)`` for fully factorized beliefs."""
    mf = _sum(-expected_log_factor(graph, a, state.var_beliefs) for a in range(graph.n_factors))
    ent = _sum(_neg_entropy(state.var_beliefs[i]) for i in range(graph.n_vars))
    return 0.0 + mf + ent


def constraint_residuals(graph: FactorGraph, part: BpMfPartition, state: BeliefState) -> dict:
    """Worst marginalization and normalization violations over the BP factors and all variables."""
    marg = 0.0
    norm = 0.0
    for a in sorted(part.bp):
        ba = np.asarray(state.factor_beliefs[a], dtype=float)
        norm = max(norm, abs(ba.sum() - 1.0))
        scope = graph.scope(a)
        for k, i in enumerate(scope):
            axes = tuple(j for j in range(len(scope)) if j != k)
            marg = max(marg, float(np.abs(np.asarray(state.var_beliefs[i]) - ba.sum(axis=axes)).max()))
    for i, b in state.var_beliefs.items():
        if not isinstance(b, ComplexGaussian):
            norm = max(norm, abs(float(np.sum(b)) - 1.0))
    return {"max_norm_residual": norm, "max_marg_residual": marg}


def stationarity_residual(graph: FactorGraph, part: BpMfPartition, state: BeliefState,
                          cfg: UpdateConfig = UpdateConfig(), em: EmConstraintSet | None = None) -> float:
    """How far ``state`` is from a fixed point: the change after recomputing everything once."""
    return state_difference(graph, state, recompute(graph, part, state, cfg, em))


def free_energy_lower_bound(graph: FactorGraph) -> float:
    """``-sum_a ln(sum f_a)`` over tabulated factors, a finite lower bound on the combined value."""
    pots = [f.potential for f in graph.factors]
    if not all(isinstance(p, Table) for p in pots):
        raise TypeError("bound is defined for tabulated factors only")
    return _sum(-math.log(p.total()) for p in pots)


def all_bp(graph: FactorGraph) -> BpMfPartition:
    return partition(graph, range(graph.n_factors))


def all_mf(graph: FactorGraph) -> BpMfPartition:
    return partition(graph, ())

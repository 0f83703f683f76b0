"""Brute-force ground truth on tiny discrete graphs."""
from __future__ import annotations

import math

import numpy as np

from .factor_graph import FactorGraph
from .free_energy import mf_free_energy
from .message_passing import mf_factor_to_var
from .state import BeliefState
from .tabular import ContradictionError, Table, log_normalize

# joint states the enumeration oracle will materialize
MAX_JOINT_STATES = 2**20


def _check_discrete(graph: FactorGraph):
    for v in graph.variables:
        if v.is_gaussian:
            raise ValueError(f"oracle handles discrete variables only ({v.name!r} is Gaussian)")
    for f in graph.factors:
        if not isinstance(f.potential, Table):
            raise ValueError("oracle needs tabulated factors")


def log_joint(graph: FactorGraph) -> np.ndarray:
    """Unnormalized log joint ``sum_a ln f_a``, one axis per variable in id order."""
    _check_discrete(graph)
    cards = [v.card for v in graph.variables]
    size = math.prod(cards)
    if size > MAX_JOINT_STATES:
        raise ValueError(f"joint state space has {size} states, limit is {MAX_JOINT_STATES}")
    acc = np.zeros(cards)
    for f in graph.factors:
        shape = [1] * len(cards)
        order = np.argsort(f.scope)
        vals = np.transpose(f.potential.log_values, order)
        for i in f.scope:
            shape[i] = cards[i]
        acc = acc + vals.reshape(shape)
    return acc


def _joint_array(graph: FactorGraph) -> np.ndarray:
    lj = log_joint(graph)
    try:
        ln, _ = log_normalize(lj.ravel())
    except ContradictionError:
        raise ContradictionError("factors have no joint configuration with positive mass") from None
    return np.exp(ln).reshape(lj.shape)


def enumerate_joint(graph: FactorGraph) -> Table:
    """Normalized product of all factors as a single table over every variable.

    The result is a :class:`Table`, so it obeys the table size limit;
    :func:`exact_marginals` works up to ``MAX_JOINT_STATES``.
    """
    return Table(tuple(range(graph.n_vars)), _joint_array(graph))


def log_partition(graph: FactorGraph) -> float:
    """``ln sum_x prod_a f_a(x_a)``."""
    lj = log_joint(graph)
    return log_normalize(lj.ravel())[1]


def exact_marginals(graph: FactorGraph) -> tuple[dict, dict]:
    """Per-variable marginals and per-factor scope marginals (axes in factor scope order)."""
    p = _joint_array(graph)
    n = graph.n_vars
    var_m = {i: p.sum(axis=tuple(j for j in range(n) if j != i)) for i in range(n)}
    fac_m = {}
    for a, f in enumerate(graph.factors):
        rest = tuple(j for j in range(n) if j not in f.scope)
        m = p.sum(axis=rest)
        kept = sorted(f.scope)
        fac_m[a] = np.transpose(m, [kept.index(i) for i in f.scope])
    return var_m, fac_m


def _mf_energy(graph, beliefs) -> float:
    return mf_free_energy(graph, BeliefState(var_beliefs=dict(enumerate(beliefs))))


def _mf_sweep(graph: FactorGraph, beliefs: list) -> None:
    bel = dict(enumerate(beliefs))
    for i in range(graph.n_vars):
        total = np.zeros(graph.card(i))
        for a in graph.neighbors(i):
            total = total + mf_factor_to_var(graph, a, i, bel)
        bel[i] = np.exp(log_normalize(total)[0])
        beliefs[i] = bel[i]


def grid_mf_minimize(graph: FactorGraph, restarts: int = 20, seed: int = 0,
                     tol: float = 1e-12, max_sweeps: int = 10_000) -> dict:
    """Multi-start MF coordinate descent on a tiny strictly positive graph.

    Each restart draws Dirichlet(1) initial beliefs and sweeps variables in
    id order until beliefs stop moving. Returns the best beliefs and free
    energy together with every distinct fixed point found (``fixed_points``,
    a list of ``(F, beliefs)``).
    """
    _check_discrete(graph)
    rng = np.random.default_rng(seed)
    found = []
    for _ in range(restarts):
        beliefs = [rng.dirichlet(np.ones(v.card)) for v in graph.variables]
        for _ in range(max_sweeps):
            old = [b.copy() for b in beliefs]
            _mf_sweep(graph, beliefs)
            if max(float(np.abs(b - o).max()) for b, o in zip(beliefs, old)) < tol:
                break
        found.append((_mf_energy(graph, beliefs), beliefs))
    distinct = []
    for F, b in sorted(found, key=lambda t: t[0]):
        if not any(max(float(np.abs(x - y).max()) for x, y in zip(b, d)) < 1e-6 for _, d in distinct):
            distinct.append((F, b))
    best_F, best_b = distinct[0]
    return {"beliefs": best_b, "free_energy": best_F, "fixed_points": distinct}

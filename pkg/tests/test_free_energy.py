import math
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bpmf.factor_graph import GraphBuilder, gaussian_prior_potential, partition
from bpmf.free_energy import (all_bp, all_mf, bethe_free_energy, combined_free_energy, constraint_residuals,
                              free_energy_lower_bound, mf_free_energy, variational_free_energy)
from bpmf.gaussian import ComplexGaussian
from bpmf.instances import random_applicable_instance, random_mf_instance, random_tree
from bpmf.oracle import enumerate_joint, exact_marginals, log_partition
from bpmf.state import BeliefState
from bpmf.tabular import Table
from bpmf.verify import random_state

seeds = st.integers(0, 2**32 - 1)


def random_beliefs(g, rng):
    return {i: rng.dirichlet(np.ones(g.card(i))) for i in range(g.n_vars)}


def exact_state(g):
    vm, fm = exact_marginals(g)
    return BeliefState(var_beliefs=vm, factor_beliefs=fm)


@given(seeds)
@settings(max_examples=40)
def test_mf_free_energy_is_kl_minus_log_partition(seed):
    # F_MF(b) = KL(prod_i b_i || p) - ln Z for any product belief
    rng = np.random.default_rng(seed)
    g = random_mf_instance(rng, max_vars=4)
    b = random_beliefs(g, rng)
    joint = reduce(np.multiply.outer, [b[i] for i in range(g.n_vars)])
    p = enumerate_joint(g)
    want = variational_free_energy(Table(p.scope, joint), p) - log_partition(g)
    got = mf_free_energy(g, BeliefState(var_beliefs=b))
    assert got == pytest.approx(want, rel=1e-10, abs=1e-10)
    assert got >= -log_partition(g) - 1e-12


@given(seeds)
@settings(max_examples=40)
def test_bethe_is_exact_on_trees(seed):
    # at the exact marginals of a tree the Bethe free energy equals -ln Z
    g = random_tree(np.random.default_rng(seed), normalized=False)
    assert bethe_free_energy(g, exact_state(g)) == pytest.approx(-log_partition(g), abs=1e-10)


@given(seeds)
@settings(max_examples=25)
def test_exact_marginals_satisfy_constraints(seed):
    g = random_tree(np.random.default_rng(seed))
    r = constraint_residuals(g, all_bp(g), exact_state(g))
    assert r["max_marg_residual"] < 1e-12 and r["max_norm_residual"] < 1e-12


def test_constraint_residuals_detect_inconsistency():
    b = GraphBuilder()
    x, y = b.variable(2), b.variable(2)
    b.factor([x, y], np.ones((2, 2)))
    g = b.build()
    st = BeliefState(var_beliefs={x: np.array([0.5, 0.5]), y: np.array([0.9, 0.1])},
                     factor_beliefs={0: np.full((2, 2), 0.25)})
    r = constraint_residuals(g, all_bp(g), st)
    assert r["max_marg_residual"] == pytest.approx(0.4)
    assert r["max_norm_residual"] == pytest.approx(0.0)


def test_combined_agrees_with_both_limits(rng):
    g = random_mf_instance(rng)
    vm, _ = exact_marginals(g)
    st = BeliefState(var_beliefs=vm, factor_beliefs={
        a: reduce(np.multiply.outer, [vm[j] for j in g.scope(a)]) for a in range(g.n_factors)})
    assert combined_free_energy(g, all_mf(g), st) == mf_free_energy(g, st)
    assert combined_free_energy(g, all_bp(g), st) == bethe_free_energy(g, st)


def test_hard_constraint_gives_infinity():
    b = GraphBuilder()
    x = b.variable(2)
    b.factor([x], [1.0, 0.0])
    g = b.build()
    part = all_bp(g)
    ok = BeliefState(var_beliefs={x: np.array([1.0, 0.0])}, factor_beliefs={0: np.array([1.0, 0.0])})
    bad = BeliefState(var_beliefs={x: np.array([0.5, 0.5])}, factor_beliefs={0: np.array([0.5, 0.5])})
    assert combined_free_energy(g, part, ok) == 0.0
    assert combined_free_energy(g, part, bad) == math.inf
    assert free_energy_lower_bound(g) == 0.0


def test_variational_free_energy_scope_check():
    with pytest.raises(ValueError, match="scopes"):
        variational_free_energy(Table((0,), [1.0]), Table((1,), [1.0]))


def gaussian_kl(b: ComplexGaussian, p: ComplexGaussian) -> float:
    d = b.dim
    dm = p.mean - b.mean
    return float(np.real(np.trace(p.precision @ b.covariance()) + dm.conj() @ p.precision @ dm)
                 - d + b.logdet_precision() - p.logdet_precision())


@given(seeds, st.integers(1, 3))
@settings(max_examples=30)
def test_gaussian_mf_free_energy_is_kl_to_prior(seed, d):
    # with a normalized Gaussian prior as the only factor, F(b) = KL(b || prior)
    rng = np.random.default_rng(seed)

    def rand():
        A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        return ComplexGaussian.from_covariance(rng.normal(size=d) + 1j * rng.normal(size=d),
                                               A @ A.conj().T + 0.5 * np.eye(d))

    prior, b = rand(), rand()
    gb = GraphBuilder()
    h = gb.gaussian(d, "h")
    gb.add([h], gaussian_prior_potential(h, prior), "prior")
    g = gb.build()
    part = partition(g, [])
    F = combined_free_energy(g, part, BeliefState(var_beliefs={h: b}))
    assert F == pytest.approx(gaussian_kl(b, prior), rel=1e-9, abs=1e-9)
    assert combined_free_energy(g, part, BeliefState(var_beliefs={h: prior})) == pytest.approx(0.0, abs=1e-9)


def _expanded_form(g, part, st):
    # MF factors carry KL(prod_i b_i || f_a); every variable gets counting number |N_BP| + |N_MF| - 1
    total = 0.0
    for a in range(g.n_factors):
        f = g.factors[a].potential.values
        if a in part.bp:
            b = st.factor_beliefs[a]
        else:
            b = reduce(np.multiply.outer, [st.var_beliefs[j] for j in g.scope(a)])
        total += float(np.sum(b * (np.log(b) - np.log(f))))
    for i in range(g.n_vars):
        b = st.var_beliefs[i]
        total -= (len(g.neighbors(i)) - 1) * float(np.sum(b * np.log(b)))
    return total


@given(seeds)
@settings(max_examples=30, deadline=None)
def test_entropy_grouping_forms_agree(seed):
    rng = np.random.default_rng(seed)
    g, part = random_applicable_instance(rng, gaussian=False)
    st = random_state(g, rng)
    assert combined_free_energy(g, part, st) == pytest.approx(_expanded_form(g, part, st), rel=1e-10, abs=1e-10)

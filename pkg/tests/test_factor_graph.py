import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bpmf.factor_graph import (Factor, FactorGraph, GraphBuilder, ImplicitPotential, QuadraticPotential, Variable,
                               bp_cycle, build_graph, check_algorithm1_applicable, configurations,
                               gaussian_prior_potential, mf_condition_holds, partition, region_set_bethe,
                               region_set_bpmf, region_set_mf)
from bpmf.gaussian import ComplexGaussian
from bpmf.instances import four_cycle, random_applicable_instance, random_mf_instance, random_tree
from bpmf.tabular import Table

seeds = st.integers(0, 2**32 - 1)


def test_variable_needs_exactly_one_kind():
    with pytest.raises(ValueError):
        Variable("x")
    with pytest.raises(ValueError):
        Variable("x", card=2, dim=1)
    with pytest.raises(ValueError):
        Variable("x", card=0)
    assert Variable("h", dim=3).is_gaussian


def test_graph_validation_messages():
    x = Variable("x", card=2)
    with pytest.raises(ValueError, match="unique"):
        FactorGraph([x, Variable("x", card=3)], [])
    with pytest.raises(ValueError, match="unknown variable"):
        build_graph([x], [((1,), [1.0, 1.0])])
    with pytest.raises(ValueError, match="size 3"):
        build_graph([x], [((0,), [1.0, 1.0, 1.0])])
    with pytest.raises(ValueError, match="Gaussian"):
        build_graph([Variable("h", dim=1)], [((0,), [1.0])])
    with pytest.raises(TypeError):
        FactorGraph([x], [Factor((0,), object())])
    with pytest.raises(ValueError, match="empty"):
        FactorGraph([x], [Factor((), ImplicitPotential("k"))])


def test_quadratic_potential_validation():
    with pytest.raises(ValueError, match="Hermitian"):
        QuadraticPotential((), ((0, (0, 1)),), 0.0, [0, 0], [[1, 1j], [1j, 1]])
    with pytest.raises(ValueError, match="semidefinite"):
        QuadraticPotential((), ((0, (0,)),), 0.0, [0], [[-1.0]])
    with pytest.raises(ValueError, match="positive"):
        QuadraticPotential((1,), ((0, (0,)),), [0.0, -np.inf], [[0], [0]], [[[1]], [[1]]])


def test_gaussian_prior_potential_is_log_density(rng):
    A = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    g = ComplexGaussian.from_covariance(rng.normal(size=3) + 1j * rng.normal(size=3), A @ A.conj().T + np.eye(3))
    pot = gaussian_prior_potential(0, g)
    for _ in range(5):
        h = rng.normal(size=3) + 1j * rng.normal(size=3)
        val = pot.const + 2 * np.real(pot.linear.conj() @ h) - np.real(h.conj() @ pot.quadratic @ h)
        assert val == pytest.approx(g.logpdf(h), rel=1e-12)


def test_builder_and_lookup():
    b = GraphBuilder()
    x, y = b.variable(2, "x"), b.variable(3, "y")
    f = b.factor([x, y], np.ones((2, 3)), "pair")
    g = b.build()
    assert g.var_id("y") == y and g.factor_id("pair") == f
    assert g.neighbors(x) == (0,) and g.card(y) == 3
    with pytest.raises(KeyError):
        g.var_id("nope")
    assert list(configurations([2, 2])) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_partition_rejects_gaussian_bp_and_zero_mf():
    b = GraphBuilder()
    x, h = b.variable(2), b.gaussian(1)
    b.add([h], QuadraticPotential((), ((h, (0,)),), 0.0, [0], [[1.0]]))
    b.factor([x], [0.0, 1.0])
    g = b.build()
    with pytest.raises(ValueError, match="Gaussian"):
        partition(g, [0])
    with pytest.raises(ValueError, match="hard constraints"):
        partition(g, [])
    with pytest.raises(ValueError, match="unknown factor"):
        partition(g, [5])
    part = partition(g, [1])
    assert part.mf_only() == [h] and part.shared() == []


@given(seeds)
@settings(max_examples=40)
def test_region_sets_are_valid(seed):
    rng = np.random.default_rng(seed)
    g, part = random_applicable_instance(rng)
    for rs in (region_set_mf(g), region_set_bethe(g), region_set_bpmf(g, part)):
        assert rs.is_valid(g)


@given(seeds)
@settings(max_examples=30)
def test_bpmf_region_set_reduces_to_bethe_and_mf(seed):
    g = random_tree(np.random.default_rng(seed), normalized=False)
    everything = range(g.n_factors)
    assert region_set_bpmf(g, partition(g, everything)).as_set() == region_set_bethe(g).as_set()
    assert region_set_bpmf(g, partition(g, [])).as_set() == region_set_mf(g).as_set()


@given(seeds)
@settings(max_examples=40)
def test_applicability_on_generated_instances(seed):
    rng = np.random.default_rng(seed)
    g = random_tree(rng, normalized=False)
    assert check_algorithm1_applicable(g, partition(g, range(g.n_factors)))
    g = random_mf_instance(rng)
    assert check_algorithm1_applicable(g, partition(g, []))


def test_cycle_witness_is_a_real_cycle(rng):
    g = four_cycle(rng)
    part = partition(g, range(g.n_factors))
    app = check_algorithm1_applicable(g, part)
    assert not app and app.reason == "bp_part_has_cycle"
    cyc = app.witness
    assert cyc == bp_cycle(g, part)
    # consecutive nodes (wrapping) are adjacent factor/variable pairs
    for u, v in zip(cyc, cyc[1:] + cyc[:1]):
        (ku, a), (kv, b) = u, v
        assert ku != kv
        f, i = (a, b) if ku == "f" else (b, a)
        assert i in g.scope(f)
    assert "cycle" in app.describe(g) and mf_condition_holds(g, part)


def test_mf_factor_touching_two_bp_variables_is_refused():
    b = GraphBuilder()
    x, y = b.variable(2, "x"), b.variable(2, "y")
    b.factor([x], [1.0, 2.0])
    b.factor([y], [1.0, 2.0])
    b.factor([x, y], np.ones((2, 2)) + np.eye(2), "bridge")
    g = b.build()
    part = partition(g, [0, 1])
    app = check_algorithm1_applicable(g, part)
    assert app.reason == "mf_factor_touches_several_bp_variables" and app.witness == 2
    assert "bridge" in app.describe(g)
    assert not mf_condition_holds(g, part)


def test_implicit_potential_is_accepted_at_graph_level():
    g = FactorGraph([Variable("u", card=2), Variable("c", card=2)],
                    [Factor((0, 1), ImplicitPotential("trellis"), "code"),
                     Factor((0,), Table((0,), [0.5, 0.5]))])
    part = partition(g, [0, 1])
    assert check_algorithm1_applicable(g, part)
    assert region_set_bpmf(g, part).is_valid(g)

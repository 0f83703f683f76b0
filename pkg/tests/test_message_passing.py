import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bpmf.factor_graph import GraphBuilder, QuadraticPotential, partition
from bpmf.gaussian import ComplexGaussian
from bpmf.instances import observation_factor, parity_instance, random_applicable_instance
from bpmf.message_passing import (EmConstraintSet, UpdateConfig, bp_factor_to_var, combined_var_to_factor,
                                  em_var_update, initial_state, leave_one_out, mf_factor_to_var,
                                  quadratic_expected_log, recompute)
from bpmf.tabular import ContradictionError, Table

seeds = st.integers(0, 2**32 - 1)


def test_update_config_validation():
    with pytest.raises(ValueError):
        UpdateConfig(normalization="bogus")
    with pytest.raises(ValueError):
        UpdateConfig(damping=1.0)
    assert UpdateConfig(omega={(0, 1): 2.0}).omega_for(0, 1) == 2.0


def test_bp_message_against_einsum(rng):
    f = Table((0, 1, 2), rng.uniform(0.1, 1, size=(2, 3, 4)))
    n = {0: np.log(rng.uniform(0.1, 1, 2)), 1: np.log(rng.uniform(0.1, 1, 3)), 2: np.log(rng.uniform(0.1, 1, 4))}
    raw = np.einsum("ijk,i,k->j", f.values, np.exp(n[0]), np.exp(n[2]))
    norm = bp_factor_to_var(f, 1, n)
    np.testing.assert_allclose(np.exp(norm), raw / raw.sum(), rtol=1e-12)
    om = bp_factor_to_var(f, 1, n, UpdateConfig(normalization="omega", omega=3.0), factor_id=0)
    np.testing.assert_allclose(np.exp(om), 3.0 * raw, rtol=1e-12)
    # "z" mode: the message that makes f * n_1 * m_1 ... sum to one
    z = bp_factor_to_var(f, 1, n, UpdateConfig(normalization="z"))
    assert np.sum(np.exp(z + n[1])) == pytest.approx(1.0)


def test_bp_message_contradiction():
    f = Table((0, 1), np.eye(2))
    with pytest.raises(ContradictionError):
        bp_factor_to_var(f, 1, {0: np.array([-np.inf, -np.inf]), 1: np.zeros(2)})


log_vecs = arrays(float, 3, elements=st.one_of(st.just(-np.inf), st.floats(-50, 50)))


@given(st.lists(log_vecs, min_size=1, max_size=6))
def test_leave_one_out_is_division_free(terms):
    # exact zeros (-inf) in other terms must not poison the result
    out = leave_one_out(terms, 3)
    for k, got in enumerate(out):
        want = np.zeros(3)
        for j, t in enumerate(terms):
            if j != k:
                want = want + t
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-9)


def test_combined_variable_messages():
    # variable 0 with BP neighbors 0, 1 and MF neighbor 2
    b = GraphBuilder()
    x = b.variable(2)
    b.factor([x], [1.0, 2.0])
    b.factor([x], [3.0, 1.0])
    b.factor([x], [1.0, 1.0])
    g = b.build()
    part = partition(g, [0, 1])
    m = {0: np.log([0.2, 0.8]), 1: np.log([0.6, 0.4]), 2: np.log([0.3, 0.7])}
    to_bp = np.exp(combined_var_to_factor(x, 0, part, m, m, 2))
    to_mf = np.exp(combined_var_to_factor(x, 2, part, m, m, 2))
    ext = np.array([0.6 * 0.3, 0.4 * 0.7])
    app = np.array([0.2 * 0.6 * 0.3, 0.8 * 0.4 * 0.7])
    np.testing.assert_allclose(to_bp, ext / ext.sum())
    np.testing.assert_allclose(to_mf, app / app.sum())


def test_em_update_takes_argmax_with_low_ties():
    assert em_var_update([np.log([0.2, 0.5, 0.3]), np.log([0.5, 0.2, 0.3])]) == 0
    assert em_var_update([np.log([0.2, 0.3, 0.5]), np.log([0.5, 0.2, 0.3])]) == 2
    assert em_var_update([[1.0, 1.0]], log=False) == 0
    with pytest.raises(ValueError):
        em_var_update([])


def test_em_constraint_must_stay_out_of_bp(rng):
    g, part = parity_instance(rng)
    with pytest.raises(ValueError, match="BP part"):
        EmConstraintSet([0]).validate(part)


def test_mf_table_message_is_expected_log(rng):
    b = GraphBuilder()
    x, y = b.variable(2), b.variable(3)
    vals = rng.uniform(0.1, 2, size=(2, 3))
    b.factor([x, y], vals)
    g = b.build()
    by = rng.dirichlet(np.ones(3))
    want = np.log(vals) @ by
    got = mf_factor_to_var(g, 0, x, {y: by})
    np.testing.assert_allclose(got, want - np.logaddexp.reduce(want), rtol=1e-12)


def test_mf_table_zero_in_support_is_rejected():
    b = GraphBuilder()
    x, y = b.variable(2), b.variable(2)
    b.factor([x, y], [[1.0, 0.0], [1.0, 1.0]])
    g = b.build()
    with pytest.raises(ValueError, match="zero"):
        mf_factor_to_var(g, 0, x, {y: np.array([0.5, 0.5])})
    # no mass on the zero column: fine
    mf_factor_to_var(g, 0, x, {y: np.array([1.0, 0.0])})


def _hermite_expectation(fn, mean, var, n=8):
    # E[fn(h)] for scalar h ~ CN(mean, var) by tensor Gauss-Hermite quadrature
    t, w = np.polynomial.hermite.hermgauss(n)
    s = np.sqrt(var / 2)
    tot = 0.0
    for ta, wa in zip(t, w):
        for tb, wb in zip(t, w):
            tot += wa * wb * fn(mean + s * np.sqrt(2) * (ta + 1j * tb))
    return tot / np.pi


@given(seeds)
@settings(max_examples=25)
def test_quadratic_expectation_against_quadrature(seed):
    rng = np.random.default_rng(seed)
    pts = np.exp(1j * np.pi / 4 * (2 * np.arange(4) + 1))
    y, gamma = complex(rng.normal() + 1j * rng.normal()), float(rng.uniform(0.5, 3))
    pot = observation_factor(0, 1, 0, y, gamma, pts)
    hb = ComplexGaussian([complex(rng.normal(), rng.normal())], [rng.uniform(0.5, 4)])
    got = quadratic_expected_log(pot, {1: hb})
    var = 1 / hb.precision[0, 0].real
    for s, x in enumerate(pts):
        want = _hermite_expectation(lambda h: np.log(gamma / np.pi) - gamma * abs(y - h * x) ** 2, hb.mean[0], var)
        assert got[s] == pytest.approx(want, rel=1e-10, abs=1e-10)


@given(seeds)
@settings(max_examples=25)
def test_gaussian_mf_message_is_quadratic_in_h(seed):
    # the GaussianInfo message equals E_x[ln f(x, h)] up to a constant in h
    rng = np.random.default_rng(seed)
    b = GraphBuilder()
    x, h = b.variable(4), b.gaussian(2)
    pts = np.array([1, 1j, -1, -1j])
    y, gamma = complex(rng.normal() + 1j * rng.normal()), float(rng.uniform(0.5, 3))
    b.add([x, h], observation_factor(x, h, 1, y, gamma, pts))
    g = b.build()
    bx = rng.dirichlet(np.ones(4))
    msg = mf_factor_to_var(g, 0, h, {x: bx})
    H = rng.normal(size=(6, 2)) + 1j * rng.normal(size=(6, 2))
    want = np.array([bx @ (-gamma * np.abs(y - hv[1] * pts) ** 2) for hv in H])
    got = np.array([-np.real(hv.conj() @ msg.precision @ hv) + 2 * np.real(msg.info.conj() @ hv) for hv in H])
    assert np.ptp(want - got) < 1e-9


def test_gaussian_starts_at_its_prior():
    b = GraphBuilder()
    h = b.gaussian(1)
    b.add([h], QuadraticPotential((), ((h, (0,)),), 0.0, [0], [[1.0]]))
    g = b.build()
    part = partition(g, [])
    st_ = initial_state(g, part)
    assert st_.var_beliefs[h].precision[0, 0] == pytest.approx(1.0)


def test_damping_keeps_exact_zeros(rng):
    g, part = parity_instance(rng, with_mf=False)
    st_ = initial_state(g, part)
    cfg = UpdateConfig(damping=0.5)
    for _ in range(10):
        st_ = recompute(g, part, st_, cfg)
    for a in part.bp:
        f = g.factors[a].potential.values
        assert np.all(st_.factor_beliefs[a][f == 0] == 0.0)


@given(seeds)
@settings(max_examples=20, deadline=None)
def test_initial_state_is_uniform(seed):
    g, part = random_applicable_instance(np.random.default_rng(seed))
    st_ = initial_state(g, part)
    for i, v in enumerate(g.variables):
        if not v.is_gaussian:
            np.testing.assert_allclose(st_.var_beliefs[i], np.full(v.card, 1 / v.card))
    for a in part.bp:
        assert st_.factor_beliefs[a].sum() == pytest.approx(1.0)

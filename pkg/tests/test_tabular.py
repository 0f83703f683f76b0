import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bpmf.tabular import (MAX_TABLE_STATES, ContradictionError, Table, entropy, kl, log_contract, log_normalize,
                          marginalize, normalize, product, to_log)

positive = st.floats(min_value=1e-3, max_value=1e3, allow_nan=False)


def tables(max_axes=3, max_card=4, elements=positive):
    shapes = st.lists(st.integers(1, max_card), min_size=1, max_size=max_axes).map(tuple)
    return shapes.flatmap(lambda s: arrays(float, s, elements=elements)).map(
        lambda v: Table(tuple(range(v.ndim)), v))


def test_table_rejects_bad_input():
    with pytest.raises(ValueError, match="axes"):
        Table((0, 1), [1.0, 2.0])
    with pytest.raises(ValueError, match="duplicate"):
        Table((0, 0), np.ones((2, 2)))
    with pytest.raises(ValueError, match="nonnegative"):
        Table((0,), [1.0, -0.5])
    with pytest.raises(ValueError, match="nonnegative"):
        Table((0,), [1.0, np.nan])
    with pytest.raises(ValueError, match="limit"):
        Table(tuple(range(17)), np.ones((2,) * 17))
    assert MAX_TABLE_STATES == 2**16


def test_table_is_immutable():
    t = Table((3,), [1.0, 2.0])
    with pytest.raises(ValueError):
        t.values[0] = 5.0


def test_normalize_and_contradiction():
    t, z = normalize(Table((0,), [1.0, 3.0]))
    np.testing.assert_allclose(t.values, [0.25, 0.75])
    assert z == 0.25
    with pytest.raises(ContradictionError):
        normalize(Table((0,), [0.0, 0.0]))
    with pytest.raises(ContradictionError):
        log_normalize(np.full(3, -np.inf))


def test_kl_conventions():
    b = Table((0,), [0.0, 1.0])
    assert kl(b, Table((0,), [0.5, 0.5])) == pytest.approx(math.log(2))
    assert kl(Table((0,), [0.5, 0.5]), b) == math.inf
    # zero mass where q is zero costs nothing
    assert kl(b, Table((0,), [0.0, 1.0])) == 0.0


def test_entropy_of_uniform():
    assert entropy(Table((0, 1), np.full((2, 3), 1 / 6))) == pytest.approx(math.log(6))


def test_product_broadcasts_and_checks_sizes():
    a = Table((0,), [1.0, 2.0])
    b = Table((1,), [3.0, 4.0, 5.0])
    p = product([a, b], (1, 0))
    np.testing.assert_allclose(p.values, np.outer([3, 4, 5], [1, 2]))
    with pytest.raises(ValueError, match="inconsistent"):
        product([a, Table((0,), [1.0, 2.0, 3.0])], (0,))
    with pytest.raises(ValueError, match="no alphabet size"):
        product([a], (0, 7))
    assert product([a], (0, 7), cards={7: 2}).shape == (2, 2)


@given(tables())
def test_normalize_gives_unit_mass(t):
    n, z = normalize(t)
    assert n.total() == pytest.approx(1.0)
    np.testing.assert_allclose(n.values, t.values * z)


@given(tables())
def test_marginals_preserve_mass(t):
    for v in t.scope:
        assert marginalize(t, v).total() == pytest.approx(t.total(), rel=1e-12)


@given(tables(), st.randoms(use_true_random=False))
def test_transpose_roundtrip(t, r):
    order = list(t.scope)
    r.shuffle(order)
    back = t.transpose(order).transpose(t.scope)
    np.testing.assert_array_equal(back.values, t.values)


@given(tables(), tables())
def test_kl_nonnegative_and_zero_on_self(a, b):
    pa, _ = normalize(a)
    assert kl(pa, pa) == pytest.approx(0.0, abs=1e-12)
    if a.shape == b.shape:
        pb, _ = normalize(b)
        assert kl(pa, pb) >= -1e-12


@given(tables(elements=st.one_of(st.just(0.0), positive)))
@settings(max_examples=60)
def test_log_contract_matches_linear_sum(t):
    if not t.total() > 0:
        return
    rng = np.random.default_rng(t.values.size)
    incoming = [rng.uniform(0.1, 2.0, size=n) for n in t.shape]
    for keep in range(len(t.shape)):
        lin = t.values.copy()
        for j, m in enumerate(incoming):
            if j != keep:
                shape = [1] * lin.ndim
                shape[j] = -1
                lin = lin * m.reshape(shape)
        want = lin.sum(axis=tuple(k for k in range(lin.ndim) if k != keep))
        got = np.exp(log_contract(to_log(t.values), [np.log(m) for m in incoming], keep))
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=0)


def test_log_contract_keeps_exact_zeros():
    f = to_log(np.array([[1.0, 0.0], [0.0, 0.0]]))
    out = log_contract(f, [None, np.zeros(2)], keep=0)
    assert out[1] == -np.inf and out[0] == 0.0


@given(arrays(float, st.integers(1, 6), elements=st.floats(-700, 700)))
def test_log_normalize_is_a_distribution(v):
    out, lz = log_normalize(v)
    assert np.exp(out).sum() == pytest.approx(1.0)
    np.testing.assert_allclose(out + lz, v, rtol=0, atol=1e-9)

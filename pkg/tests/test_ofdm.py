import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp

from bpmf.factor_graph import check_algorithm1_applicable, mf_condition_holds, region_set_bpmf
from bpmf.free_energy import combined_free_energy
from bpmf.message_passing import UpdateConfig
from bpmf.ofdm.conv_code import ConvCode
from bpmf.ofdm.graph import build_ofdm_graph
from bpmf.ofdm.modulation import bits_to_symbol_log, constellation, demap_extrinsic, qam16, qpsk
from bpmf.ofdm.receivers import (bpmf_free_energy, bpmf_iterations, draw_channel, pilot_channel_estimate,
                                 random_info, run_receiver, transmit)
from bpmf.ofdm.scenario import OfdmScenario, bundled_scenario, load_scenario, scenario_from_dict
from bpmf.ofdm.simulate import BER_COLUMNS, ber_csv, ber_sweep, ber_table, trial_rng
from bpmf.scheduler import StopRule, run_loopy
from bpmf.verify import pilot_mmse

seeds = st.integers(0, 2**32 - 1)


def toy_scenario(**kw):
    base = dict(n_carriers=7, n_pilots=3, generators=(0o7, 0o5), ebn0_db=(6.0,), seed=3, max_outer=200, tol=1e-12)
    base.update(kw)
    return OfdmScenario(**base)


# ---------------------------------------------------------------- modulation


@pytest.mark.parametrize("make", [qpsk, qam16])
def test_constellation_energy_and_gray_labels(make):
    c = make()
    assert np.mean(np.abs(c.points) ** 2) == pytest.approx(1.0)
    assert len(set(np.round(c.points, 12))) == c.size
    d = np.abs(c.points[:, None] - c.points[None, :])
    dmin = d[d > 1e-12].min()
    for s, t in zip(*np.nonzero(np.isclose(d, dmin))):
        assert np.sum(c.bits[s] != c.bits[t]) == 1
    bits = c.bits.ravel()
    np.testing.assert_array_equal(c.map(bits), c.points)
    np.testing.assert_array_equal(c.indices(bits), np.arange(c.size))


def test_unknown_constellation():
    with pytest.raises(ValueError, match="unknown"):
        constellation("8psk")


@given(seeds, st.sampled_from(["qpsk", "16qam"]))
@settings(max_examples=30)
def test_demapper_against_enumeration(seed, name):
    rng = np.random.default_rng(seed)
    c = constellation(name)
    L = c.bits_per_symbol
    sym = rng.normal(size=(2, c.size))
    bit = np.log(rng.dirichlet(np.ones(2), size=(2, L)))
    out = demap_extrinsic(c, sym, bit)
    prior = bits_to_symbol_log(c, bit)
    for n in range(2):
        np.testing.assert_allclose(prior[n], [sum(bit[n, l, c.bits[s, l]] for l in range(L)) for s in range(c.size)])
        for l in range(L):
            w = np.zeros(2)
            for s in range(c.size):
                w[c.bits[s, l]] += np.exp(sym[n, s] + sum(bit[n, k, c.bits[s, k]] for k in range(L) if k != l))
            np.testing.assert_allclose(np.exp(out[n, l]), w / w.sum(), rtol=1e-10)


# ---------------------------------------------------------------- convolutional code


def test_textbook_codeword():
    code = ConvCode((0o7, 0o5))
    out = code.encode(np.array([1, 0, 1, 1]))
    np.testing.assert_array_equal(out, [1, 1, 1, 0, 0, 0, 0, 1, 0, 1, 1, 1])
    assert code.memory == 2 and code.n_states == 4 and code.coded_length(4) == 12


@given(st.lists(st.integers(0, 1), min_size=1, max_size=30), st.lists(st.integers(0, 1), min_size=1, max_size=30))
def test_code_is_linear(a, b):
    n = min(len(a), len(b))
    a, b = np.array(a[:n]), np.array(b[:n])
    code = ConvCode((0o133, 0o171))
    np.testing.assert_array_equal(code.encode(a ^ b), code.encode(a) ^ code.encode(b))


@given(seeds, st.integers(1, 6), st.sampled_from([(0o7, 0o5), (0o13, 0o15, 0o17)]))
@settings(max_examples=40)
def test_bcjr_against_codeword_enumeration(seed, K, gens):
    rng = np.random.default_rng(seed)
    code = ConvCode(gens)
    n_c = code.coded_length(K)
    cl = np.log(rng.dirichlet(np.ones(2), size=n_c))
    il = np.log(rng.dirichlet(np.ones(2), size=K))
    res = code.bcjr(cl, il)
    words = [(np.array(u), code.encode(np.array(u))) for u in itertools.product((0, 1), repeat=K)]
    logw = np.array([il[np.arange(K), u].sum() + cl[np.arange(n_c), c].sum() for u, c in words])
    p = np.exp(logw - logsumexp(logw))
    app = np.zeros((K, 2))
    coded_app = np.zeros((n_c, 2))
    for (u, c), pk in zip(words, p):
        app[np.arange(K), u] += pk
        coded_app[np.arange(n_c), c] += pk
    np.testing.assert_allclose(np.exp(res.info_app), app, atol=1e-12)
    # extrinsic times own input is proportional to the APP
    ext = np.exp(res.coded_ext + cl)
    np.testing.assert_allclose(ext / ext.sum(axis=1, keepdims=True), coded_app, atol=1e-12)
    ent = -np.sum(p[p > 0] * np.log(p[p > 0]))
    assert res.path_entropy() == pytest.approx(ent, abs=1e-9)


def test_code_validation():
    with pytest.raises(ValueError, match="at least one"):
        ConvCode(())
    with pytest.raises(ValueError, match="constraint length"):
        ConvCode((0, 0o5))
    with pytest.raises(ValueError):
        ConvCode((0o7, 0o5)).bcjr(np.zeros((2, 2)))


# ---------------------------------------------------------------- scenarios


def test_desk_scenario_layout():
    sc = bundled_scenario("desk")
    assert (sc.n_carriers, sc.n_pilots, sc.modulation) == (64, 12, "qpsk")
    assert sc.data_bits == 2 * 52
    # terminated rate-1/2 code with memory 6 in 104 bits
    assert sc.info_bits == 104 // 2 - 6 and sc.coded_bits <= sc.data_bits
    assert sc.gamma(0.0) == pytest.approx(sc.info_bits / sc.n_data)
    assert sc.gamma(10.0) == pytest.approx(10 * sc.gamma(0.0))
    assert sc.trials_per_point * sc.info_bits >= sc.bits_per_point
    assert len(set(sc.pilot_idx) | set(sc.data_idx)) == 64
    assert sorted(sc.interleaver) == list(range(sc.data_bits))


@pytest.mark.parametrize("name,pilots", [("table1_m25", 25), ("table1_m13", 13)])
def test_table1_scenarios(name, pilots):
    sc = bundled_scenario(name)
    assert sc.n_carriers == 300 and sc.n_pilots == pilots and sc.modulation == "16qam"
    assert sc.code.n_out == 3 and sc.spacing_hz == 15e3
    assert sc.coherence_bandwidth_hz == pytest.approx(200e3)


def test_scenario_io(tmp_path):
    sc = toy_scenario(pilots=(0, 3, 6))
    d = sc.to_dict()
    path = tmp_path / "s.json"
    path.write_text(json.dumps(d))
    back = load_scenario(path)
    assert back.to_dict() == d
    np.testing.assert_array_equal(back.pilot_idx, [0, 3, 6])
    with pytest.raises(ValueError, match="unknown scenario fields"):
        scenario_from_dict({"n_carrier": 5})
    with pytest.raises(ValueError):
        toy_scenario(n_pilots=7)
    with pytest.raises(ValueError, match="distinct"):
        toy_scenario(pilots=(0, 0, 1))


def test_channel_covariance_is_a_valid_prior():
    sc = bundled_scenario("desk")
    R = sc.channel_covariance
    assert np.allclose(R, R.conj().T)
    assert np.linalg.eigvalsh(R).min() > 0
    np.testing.assert_allclose(np.diag(R).real, 1 + sc.ridge, rtol=1e-12)


# ---------------------------------------------------------------- receivers


def test_pilot_estimate_is_lmmse(rng):
    sc = OfdmScenario(n_carriers=16, n_pilots=4)
    gamma = sc.gamma(5.0)
    ch = draw_channel(sc, rng)
    y = ch.observe(transmit(sc, random_info(sc, rng)).symbols, gamma)
    post = pilot_channel_estimate(sc, y, gamma)
    mu, C = pilot_mmse(sc, y, gamma)
    np.testing.assert_allclose(post.mean, mu, atol=1e-10)
    np.testing.assert_allclose(post.covariance(), C, atol=1e-10)


@pytest.mark.parametrize("name", ["bpmf", "bp_gauss", "perfect_csi"])
def test_receivers_decode_a_clean_frame(name):
    sc = bundled_scenario("desk")
    rng = np.random.default_rng(5)
    info = random_info(sc, rng)
    ch = draw_channel(sc, rng)
    gamma = sc.gamma(30.0)
    y = ch.observe(transmit(sc, info).symbols, gamma)
    rec = run_receiver(name, sc, y, gamma, info, ch.h)
    assert rec.bit_errors == 0 and not rec.contradiction
    np.testing.assert_array_equal(rec.decoded, info)


def test_unknown_receiver():
    sc = toy_scenario()
    with pytest.raises(ValueError):
        run_receiver("zf", sc, np.zeros(7, complex), 1.0, None, None)


def test_general_engine_matches_specialized_receiver():
    # the generic scheduler on the explicit graph and the fast receiver run the same fixed-point iteration
    sc = toy_scenario()
    rng = np.random.default_rng(1)
    info = random_info(sc, rng)
    ch = draw_channel(sc, rng)
    gamma = sc.gamma(6.0)
    y = ch.observe(transmit(sc, info).symbols, gamma)
    og = build_ofdm_graph(sc, y, gamma, explicit=True)
    st_, tr = run_loopy(og.graph, og.part, UpdateConfig(damping=0.0),
                        StopRule(max_iters=300, rel_f_tol=1e-16, delta_tol=1e-12), n_inner=1)
    assert tr.status == "converged"
    for last, _, done in bpmf_iterations(sc, y, gamma):
        if done:
            break
    assert done
    np.testing.assert_allclose(st_.var_beliefs[og.channel_var].mean, last.channel.mean, atol=1e-9)
    for n, x in enumerate(og.symbol_vars):
        np.testing.assert_allclose(st_.var_beliefs[x], last.symbol_app[n], atol=1e-9)
    F_gen = combined_free_energy(og.graph, og.part, st_)
    assert F_gen == pytest.approx(bpmf_free_energy(sc, y, gamma, last), rel=1e-9)


def test_ofdm_graph_structure():
    sc = bundled_scenario("desk")
    og = build_ofdm_graph(sc)
    g, part = og.graph, og.part
    assert len(og.info_vars) == sc.info_bits and len(og.coded_vars) == sc.coded_bits
    assert len(og.symbol_vars) == sc.n_data and g.variables[og.channel_var].dim == 64
    # the code and modulation factors close cycles, but each MF factor touches one BP variable
    assert mf_condition_holds(g, part)
    assert check_algorithm1_applicable(g, part).reason == "bp_part_has_cycle"
    assert region_set_bpmf(g, part).is_valid(g)
    assert part.mf_only() == [og.channel_var]
    with pytest.raises(ValueError, match="too large"):
        build_ofdm_graph(sc, explicit=True)


# ---------------------------------------------------------------- simulation harness


def test_trial_streams_are_independent_of_order():
    a = trial_rng(9, 3).integers(0, 1 << 30, 4)
    trial_rng(9, 2).integers(0, 1 << 30, 4)
    np.testing.assert_array_equal(a, trial_rng(9, 3).integers(0, 1 << 30, 4))
    assert not np.array_equal(a, trial_rng(9, 4).integers(0, 1 << 30, 4))


def test_sweep_csv_and_determinism():
    sc = bundled_scenario("desk").replace(ebn0_db=(0.0, 8.0))
    pts = ber_sweep(sc, ("bpmf", "perfect_csi"), trials=2, master_seed=4)
    text = ber_csv(pts)
    lines = text.splitlines()
    assert lines[0] == ",".join(BER_COLUMNS) and len(lines) == 1 + 2 * 2
    assert text == ber_csv(ber_sweep(sc, ("bpmf", "perfect_csi"), trials=2, master_seed=4))
    assert text == ber_csv(ber_sweep(sc, ("bpmf", "perfect_csi"), trials=2, master_seed=4, jobs=2))
    t = ber_table(pts)
    assert set(t) == {"bpmf", "perfect_csi"} and t["bpmf"].shape == (2,)
    for p in pts:
        assert p.bits == 2 * sc.info_bits and 0 <= p.ber <= 1 and not math.isnan(p.mean_outer_iters)


def test_sweep_rejects_unknown_receiver():
    with pytest.raises(ValueError):
        ber_sweep(toy_scenario(), ("nope",), trials=1)

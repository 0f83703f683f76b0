"""Transmitter, channel and the three iterative receivers of the OFDM link.

All receivers share the same BP core: the modulation factors exchange bit
messages with the code trellis (:meth:`ConvCode.bcjr`), driven by a fixed
per-carrier symbol message. They differ in how that symbol message is formed
and how the channel estimate is refreshed:

* :func:`run_bpmf_receiver` treats the observation factors and the channel
  prior in the MF part, so the channel belief is a single Gaussian updated in
  closed form from APP symbol statistics;
* :func:`run_bp_gauss_baseline` keeps everything in BP and collapses each
  Gaussian-mixture message into the channel to one Gaussian;
* :func:`run_perfect_csi` uses the true channel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, xlogy

from ..gaussian import (ComplexGaussian, QuadraticEvidence, evidence_from_symbols, posterior_update,
                        symbol_message_params, symbol_statistics)
from ..tabular import ContradictionError
from .modulation import bits_to_symbol_log, demap_extrinsic
from .scenario import OfdmScenario

RECEIVERS = ("bpmf", "bp_gauss", "perfect_csi")


@dataclass(frozen=True, eq=False)
class TxFrame:
    info: np.ndarray         # K information bits
    stream: np.ndarray       # coded bits followed by known zero padding (deinterleaved order)
    symbols: np.ndarray      # all carriers, pilots included


@dataclass(frozen=True, eq=False)
class ChannelDraw:
    h: np.ndarray            # channel gains on every carrier
    w: np.ndarray            # unit-variance complex noise; scaled by 1/sqrt(gamma) per SNR

    def observe(self, x: np.ndarray, gamma: float) -> np.ndarray:
        if math.isinf(gamma):
            return self.h * x
        return self.h * x + self.w / math.sqrt(gamma)


@dataclass(frozen=True, eq=False)
class TrialRecord:
    info: np.ndarray
    decoded: np.ndarray
    bit_errors: int
    outer_iters: int
    free_energy: float
    converged: bool = True
    contradiction: bool = False


# ---------------------------------------------------------------- transmitter and channel


def random_info(sc: OfdmScenario, rng: np.random.Generator) -> np.ndarray:
    return rng.integers(0, 2, sc.info_bits)


def transmit(sc: OfdmScenario, info: np.ndarray) -> TxFrame:
    """Encode, pad with zeros, interleave, map to the data carriers and insert pilots."""
    info = np.asarray(info, dtype=np.int64)
    if info.size != sc.info_bits:
        raise ValueError(f"expected {sc.info_bits} information bits, got {info.size}")
    coded = sc.code.encode(info)
    stream = np.zeros(sc.data_bits, np.int64)
    stream[:coded.size] = coded
    tx_bits = stream[sc.interleaver]
    x = np.empty(sc.n_carriers, complex)
    x[sc.data_idx] = sc.const.map(tx_bits)
    x[sc.pilot_idx] = sc.pilot_symbols
    return TxFrame(info, stream, x)


def draw_channel(sc: OfdmScenario, rng: np.random.Generator) -> ChannelDraw:
    """``h ~ CN(0, C)`` from the scenario covariance and standard complex noise."""
    n = sc.n_carriers
    z = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
    w = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)
    return ChannelDraw(sc.channel_factor @ z, w)


def apply_channel(sc: OfdmScenario, x: np.ndarray, gamma: float, seed) -> tuple[np.ndarray, ChannelDraw]:
    """``y = h * x + z`` with a fresh channel and noise of precision ``gamma``."""
    if np.asarray(x).shape != (sc.n_carriers,):
        raise ValueError("x must cover every carrier")
    ch = draw_channel(sc, np.random.default_rng(seed))
    return ch.observe(np.asarray(x, complex), gamma), ch


# ---------------------------------------------------------------- BP core


class TurboBp:
    """Loopy BP between the modulation factors and the code trellis.

    Holds the code's messages toward the coded bits between calls, so
    successive outer iterations continue the same BP run.
    """

    def __init__(self, sc: OfdmScenario):
        self.sc = sc
        self.code_to_bits = np.full((sc.coded_bits, 2), -math.log(2.0))
        self.mod_to_bits = np.full((sc.coded_bits, 2), -math.log(2.0))
        pad = np.zeros((sc.data_bits - sc.coded_bits, 2))
        pad[:, 1] = -np.inf
        self._pad = pad
        self.result = None

    def _tx_order(self, stream_msgs):
        full = np.concatenate([stream_msgs, self._pad])
        return full[self.sc.interleaver].reshape(self.sc.n_data, self.sc.const.bits_per_symbol, 2)

    def _stream_order(self, tx_msgs):
        flat = tx_msgs.reshape(-1, 2)
        out = np.empty_like(flat)
        out[self.sc.interleaver] = flat
        return out[: self.sc.coded_bits]

    def bits_to_symbols(self) -> np.ndarray:
        """Message from each modulation factor to its symbol, ``(N, 2**L)`` log."""
        m = bits_to_symbol_log(self.sc.const, self._tx_order(self.code_to_bits))
        return m - logsumexp(m, axis=1, keepdims=True)

    def run(self, sym_log: np.ndarray, sweeps: int):
        """``sweeps`` demapper/decoder exchanges with the symbol messages held fixed."""
        for _ in range(sweeps):
            ext = demap_extrinsic(self.sc.const, sym_log, self._tx_order(self.code_to_bits))
            self.mod_to_bits = self._stream_order(ext)
            self.result = self.sc.code.bcjr(self.mod_to_bits)
            self.code_to_bits = self.result.coded_ext
        return self.result

    def symbol_app(self, sym_log: np.ndarray) -> np.ndarray:
        """Normalized APP symbol beliefs (linear) given the symbol messages."""
        a = sym_log + self.bits_to_symbols()
        if not np.all(np.isfinite(logsumexp(a, axis=1))):
            raise ContradictionError("symbol belief has no mass")
        return np.exp(a - logsumexp(a, axis=1, keepdims=True))

    def decisions(self) -> np.ndarray:
        return self.result.decisions()


def _gaussian_symbol_log(points, mean, var):
    # log CN(x; mean, var) over constellation points, shape (N, S)
    return -np.abs(points[None, :] - mean[:, None]) ** 2 / var[:, None] - np.log(np.pi * var)[:, None]


def pilot_evidence(sc: OfdmScenario, y: np.ndarray, gamma: float) -> QuadraticEvidence:
    """Evidence from the pilot observations only (zero on data carriers)."""
    lam = np.zeros(sc.n_carriers)
    eta = np.zeros(sc.n_carriers, complex)
    xp = sc.pilot_symbols
    lam[sc.pilot_idx] = gamma * np.abs(xp) ** 2
    eta[sc.pilot_idx] = gamma * y[sc.pilot_idx] * xp.conj()
    return QuadraticEvidence(lam, eta)


def pilot_channel_estimate(sc: OfdmScenario, y: np.ndarray, gamma: float) -> ComplexGaussian:
    """Channel belief after the initialization step: prior combined with the pilots."""
    return posterior_update(sc.channel_prior, pilot_evidence(sc, y, gamma))


def _data_evidence(sc, y, gamma, lam_d, eta_d) -> QuadraticEvidence:
    ev = pilot_evidence(sc, y, gamma)
    lam, eta = ev.precision.copy(), ev.weighted_mean.copy()
    lam[sc.data_idx] = lam_d
    eta[sc.data_idx] = eta_d
    return QuadraticEvidence(lam, eta)


def _record(info, decoded, iters, F, converged=True) -> TrialRecord:
    return TrialRecord(info, decoded, int(np.sum(decoded != info)), iters, F, converged)


def _failed(sc, info, iters) -> TrialRecord:
    dec = np.zeros(sc.info_bits, np.int64)
    return TrialRecord(info, dec, int(np.sum(dec != info)), iters, math.nan, False, True)


# ---------------------------------------------------------------- receivers


@dataclass
class BpMfState:
    """Snapshot after one outer iteration of the BP/MF receiver."""

    channel: ComplexGaussian
    symbol_app: np.ndarray
    symbol_msg: np.ndarray
    turbo: TurboBp


def bpmf_iterations(sc: OfdmScenario, y: np.ndarray, gamma: float, max_outer: int | None = None,
                    n_inner: int | None = None, tol: float | None = None):
    """Generator over outer iterations of the BP/MF receiver.

    Yields ``(state, iteration, converged)`` with ``state`` a :class:`BpMfState`.

    The channel belief starts from the pilots alone. Each iteration forms
    the MF symbol messages from the current channel moments, runs BP with
    them held fixed, and updates the channel belief from the APP symbol
    mean and variance. Iteration stops when channel mean and symbol beliefs
    change by less than ``tol``.
    """
    max_outer = max_outer or sc.max_outer
    n_inner = n_inner or sc.n_inner
    tol = sc.tol if tol is None else tol
    points = sc.const.points
    D = sc.data_idx
    yd = y[D]
    post = pilot_channel_estimate(sc, y, gamma)
    turbo = TurboBp(sc)
    app_old = None
    for it in range(1, max_outer + 1):
        mu_h, var_h = post.mean[D], post.variances()[D]
        m, v = symbol_message_params(yd, mu_h, var_h, gamma)
        sym_log = _gaussian_symbol_log(points, m, v)
        turbo.run(sym_log, n_inner)
        app = turbo.symbol_app(sym_log)
        mu_x, var_x = symbol_statistics(app, points)
        ev = evidence_from_symbols(yd, mu_x, var_x, gamma)
        new = posterior_update(sc.channel_prior, _data_evidence(sc, y, gamma, ev.precision, ev.weighted_mean))
        delta = float(np.max(np.abs(new.mean - post.mean))) / max(1.0, float(np.max(np.abs(new.mean))))
        if app_old is not None:
            delta = max(delta, float(np.max(np.abs(app - app_old))))
        else:
            delta = math.inf
        post, app_old = new, app
        yield BpMfState(post, app, sym_log, turbo), it, delta < tol


def run_bpmf_receiver(sc: OfdmScenario, y: np.ndarray, gamma: float, info: np.ndarray | None = None,
                      **kw) -> TrialRecord:
    info = np.zeros(sc.info_bits, np.int64) if info is None else info
    try:
        for state, it, done in bpmf_iterations(sc, y, gamma, **kw):
            if done:
                break
    except ContradictionError:
        return _failed(sc, info, 0)
    F = bpmf_free_energy(sc, y, gamma, state)
    return _record(info, state.turbo.decisions(), it, F, done)


def baseline_iterations(sc: OfdmScenario, y: np.ndarray, gamma: float, max_outer: int | None = None,
                        n_inner: int | None = None, tol: float | None = None):
    """Generator over outer iterations of the BP receiver with Gaussian-collapsed channel messages.

    Symbol messages use the cavity channel marginal (the posterior with the
    carrier's own message removed); channel messages are moment-matched
    mixtures over the constellation weighted by extrinsic symbol probabilities.
    """
    max_outer = max_outer or sc.max_outer
    n_inner = n_inner or sc.n_inner
    tol = sc.tol if tol is None else tol
    points = sc.const.points
    D = sc.data_idx
    yd = y[D]
    lam_d = np.zeros(D.size)
    eta_d = np.zeros(D.size, complex)
    post = pilot_channel_estimate(sc, y, gamma)
    turbo = TurboBp(sc)
    p2 = np.abs(points) ** 2
    for it in range(1, max_outer + 1):
        var = post.variances()[D]
        prec_c = 1.0 / var - lam_d
        mu_c = (post.mean[D] / var - eta_d) / prec_c
        var_c = 1.0 / prec_c
        s = 1.0 / gamma + var_c[:, None] * p2[None, :]
        sym_log = -np.abs(yd[:, None] - mu_c[:, None] * points[None, :]) ** 2 / s - np.log(np.pi * s)
        turbo.run(sym_log, n_inner)
        ext = turbo.bits_to_symbols()
        lw = ext - np.log(p2)[None, :]
        w = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))
        comp_mean = yd[:, None] / points[None, :]
        comp_var = 1.0 / (gamma * p2)[None, :]
        mean = np.sum(w * comp_mean, axis=1)
        second = np.sum(w * (comp_var + np.abs(comp_mean) ** 2), axis=1)
        mvar = np.maximum(second - np.abs(mean) ** 2, 1e-300)
        lam_d, eta_d = 1.0 / mvar, mean / mvar
        new = posterior_update(sc.channel_prior, _data_evidence(sc, y, gamma, lam_d, eta_d))
        delta = float(np.max(np.abs(new.mean - post.mean))) / max(1.0, float(np.max(np.abs(new.mean))))
        post = new
        yield post, turbo, it, (it > 1 and delta < tol)


def run_bp_gauss_baseline(sc: OfdmScenario, y: np.ndarray, gamma: float, info: np.ndarray | None = None,
                          **kw) -> TrialRecord:
    info = np.zeros(sc.info_bits, np.int64) if info is None else info
    try:
        for post, turbo, it, done in baseline_iterations(sc, y, gamma, **kw):
            if done:
                break
    except ContradictionError:
        return _failed(sc, info, 0)
    return _record(info, turbo.decisions(), it, math.nan, done)


def run_perfect_csi(sc: OfdmScenario, y: np.ndarray, gamma: float, h: np.ndarray,
                    info: np.ndarray | None = None, max_outer: int | None = None,
                    tol: float | None = None) -> TrialRecord:
    """BP decoding with the true channel: symbol messages ``exp(-gamma |y - h x|^2)``.

    There is no channel re-estimation; the demapper/decoder exchange is
    repeated until the decoder output stops changing.
    """
    info = np.zeros(sc.info_bits, np.int64) if info is None else info
    max_outer = max_outer or sc.max_outer
    tol = sc.tol if tol is None else tol
    D = sc.data_idx
    if math.isinf(gamma):
        gamma = 1e12
    sym_log = -gamma * np.abs(y[D][:, None] - h[D][:, None] * sc.const.points[None, :]) ** 2
    turbo = TurboBp(sc)
    old = None
    for it in range(1, max_outer + 1):
        turbo.run(sym_log, 1)
        cur = turbo.code_to_bits
        if old is not None and np.max(np.abs(np.exp(cur) - np.exp(old))) < tol:
            break
        old = cur
    return _record(info, turbo.decisions(), it, math.nan, True)


def run_receiver(name: str, sc: OfdmScenario, y: np.ndarray, gamma: float, info, h) -> TrialRecord:
    if name == "bpmf":
        return run_bpmf_receiver(sc, y, gamma, info)
    if name == "bp_gauss":
        return run_bp_gauss_baseline(sc, y, gamma, info)
    if name == "perfect_csi":
        return run_perfect_csi(sc, y, gamma, h, info)
    raise ValueError(f"unknown receiver {name!r}; choose from {RECEIVERS}")


# ---------------------------------------------------------------- free energy


def _ent(p, axis=-1):
    return -xlogy(p, p).sum(axis=axis)


def bpmf_free_energy(sc: OfdmScenario, y: np.ndarray, gamma: float, state: BpMfState) -> float:
    """Region-based free energy of the BP/MF receiver state.

    BP part: info-bit priors, the code factor (entropy of the trellis path
    posterior) and the modulation factors; MF part: the observation factors
    and the channel prior; the channel enters with its differential entropy.
    """
    turbo = state.turbo
    res = turbo.result
    # info bits: prior factor KL term plus the +H(b_u) correction leaves ln 2 per bit
    F = sc.info_bits * math.log(2.0)
    F -= res.path_entropy()
    # modulation factors: the symbol belief is a bijective image of the factor belief
    F -= float(_ent(state.symbol_app).sum())
    b_c = turbo.mod_to_bits + turbo.code_to_bits
    b_c = np.exp(b_c - logsumexp(b_c, axis=1, keepdims=True))
    F += float(_ent(b_c).sum())
    F -= state.channel.entropy()
    F -= expected_log_likelihood(sc, y, gamma, state.channel, state.symbol_app)
    F -= expected_log_prior(sc.channel_prior, state.channel)
    return F


def expected_log_likelihood(sc, y, gamma, channel: ComplexGaussian, symbol_app) -> float:
    """``sum_i E[ln p(y_i | x_i, h_i)]`` over data and pilot carriers."""
    mu_h, var_h = channel.mean, channel.variances()
    mu_x = np.empty(sc.n_carriers, complex)
    var_x = np.zeros(sc.n_carriers)
    mu_x[sc.pilot_idx] = sc.pilot_symbols
    mx, vx = symbol_statistics(symbol_app, sc.const.points)
    mu_x[sc.data_idx], var_x[sc.data_idx] = mx, vx
    e = (np.abs(y) ** 2 - 2.0 * np.real(y.conj() * mu_h * mu_x)
         + (np.abs(mu_h) ** 2 + var_h) * (np.abs(mu_x) ** 2 + var_x))
    return float(np.sum(math.log(gamma / math.pi) - gamma * e))


def expected_log_prior(prior: ComplexGaussian, b: ComplexGaussian) -> float:
    d = b.mean - prior.mean
    quad = float(np.real(d.conj() @ prior.precision @ d))
    tr = float(np.real(np.trace(prior.precision @ b.covariance())))
    return prior.logdet_precision() - prior.dim * math.log(math.pi) - quad - tr

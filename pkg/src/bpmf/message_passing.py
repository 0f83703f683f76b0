"""Message-update kernels for BP, MF and the combined BP/MF fixed-point system.

Discrete messages are log-domain numpy vectors (``-inf`` marks an exact
zero). Messages into Gaussian variables are :class:`GaussianInfo` terms and
messages out of them are the variable's :class:`ComplexGaussian` belief.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .factor_graph import (BpMfPartition, FactorGraph, ImplicitPotential, QuadraticPotential)
from .gaussian import ComplexGaussian, GaussianInfo
from .state import BeliefState, point_mass
from .tabular import ContradictionError, Table, log_contract, log_normalize, to_log

NORMALIZATION_MODES = ("normalized", "z", "omega")


@dataclass(frozen=True)
class UpdateConfig:
    """How messages are scaled and relaxed.

    ``normalization``: ``"normalized"`` scales every message to unit mass
    (the usual practical choice), ``"z"`` uses the factor normalizers that
    make ``b_a`` sum to one, ``"omega"`` multiplies raw sum-product results
    by the fixed constants ``omega`` (a float or a dict keyed ``(a, i)``).
    """

    normalization: str = "normalized"
    omega: float | Mapping = 1.0
    damping: float = 0.0
    allow_zeros: bool = True

    def __post_init__(self):
        if self.normalization not in NORMALIZATION_MODES:
            raise ValueError(f"normalization must be one of {NORMALIZATION_MODES}")
        if not 0.0 <= self.damping < 1.0:
            raise ValueError("damping must lie in [0, 1)")

    def omega_for(self, a: int, i: int) -> float:
        if isinstance(self.omega, Mapping):
            return float(self.omega[(a, i)])
        return float(self.omega)


@dataclass(frozen=True)
class EmConstraintSet:
    """Variables whose beliefs are restricted to point masses, with current estimates."""

    variables: frozenset
    estimates: Mapping = field(default_factory=dict)

    def __init__(self, variables, estimates=None):
        object.__setattr__(self, "variables", frozenset(int(v) for v in variables))
        object.__setattr__(self, "estimates", dict(estimates or {}))

    def validate(self, part: BpMfPartition):
        bad = self.variables & part.i_bp
        if bad:
            raise ValueError(f"EM-constrained variables {sorted(bad)} lie in the BP part")


def _log_table(graph: FactorGraph, a: int) -> np.ndarray:
    pot = graph.factors[a].potential
    if isinstance(pot, ImplicitPotential):
        raise TypeError(f"factor {graph.factors[a].name or a} ({pot.kind}) has no table form")
    if isinstance(pot, QuadraticPotential):
        raise TypeError("quadratic potentials only enter through MF kernels")
    return pot.log_values


# ---------------------------------------------------------------- BP kernels


def bp_factor_to_var(table: Table, target: int, incoming: Mapping[int, np.ndarray],
                     cfg: UpdateConfig = UpdateConfig(), factor_id: int | None = None) -> np.ndarray:
    """Sum-product message from a tabulated factor to variable ``target``.

    ``incoming`` maps variable ids of the factor scope to log messages
    ``n_{j->a}``; the entry for ``target`` is only read in ``"z"`` mode,
    where the factor normalizer needs the full product. Returns the log
    message; raises :class:`ContradictionError` when it is identically zero.
    """
    scope = table.scope
    pos = scope.index(target)
    logf = table.log_values
    ins = [incoming.get(j) for j in scope]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = log_contract(logf, ins, pos)
    if not np.any(np.isfinite(out)):
        raise ContradictionError(f"message to variable {target} vanishes: hard constraints contradict")
    if cfg.normalization == "normalized":
        return log_normalize(out)[0]
    if cfg.normalization == "omega":
        return out + np.log(cfg.omega_for(factor_id, target))
    n_t = incoming.get(target)
    total = out if n_t is None else out + n_t
    with np.errstate(invalid="ignore"):
        log_mass = float(logsumexp(total))
    return out - log_mass


def _sum_logs(terms: Sequence[np.ndarray], card: int) -> np.ndarray:
    acc = np.zeros(card)
    for t in terms:
        acc = acc + t
    return acc


def leave_one_out(terms: Sequence[np.ndarray], card: int) -> list[np.ndarray]:
    """``[sum(terms) - terms[k] for k]`` built from prefix/suffix sums, never by subtraction."""
    k = len(terms)
    prefix = [np.zeros(card)]
    for t in terms:
        prefix.append(prefix[-1] + t)
    suffix = [np.zeros(card)]
    for t in reversed(terms):
        suffix.append(suffix[-1] + t)
    suffix = suffix[::-1]
    return [prefix[j] + suffix[j + 1] for j in range(k)]


def bp_var_to_factor(i: int, a: int, incoming: Mapping[int, np.ndarray], card: int,
                     cfg: UpdateConfig = UpdateConfig()) -> np.ndarray:
    """Pure-BP variable message: sum of incoming log messages from factors other than ``a``."""
    out = _sum_logs([m for c, m in sorted(incoming.items()) if c != a], card)
    if cfg.normalization == "normalized":
        return log_normalize(out)[0]
    return out


def combined_var_to_factor(i: int, a: int, part: BpMfPartition, m_bp: Mapping[int, np.ndarray],
                           m_mf: Mapping[int, np.ndarray], card: int,
                           cfg: UpdateConfig = UpdateConfig()) -> np.ndarray:
    """Variable-to-factor message of the combined system.

    BP replies from every BP neighbor except ``a`` plus every MF message. For
    a BP factor this is the extrinsic value; for an MF factor nothing is
    excluded and the message is the full posterior of ``i``. The variable
    normalizer applies only to variables outside the BP part unless every
    message is normalized anyway.
    """
    terms = [m_bp[c] for c in part.n_bp[i] if c != a]
    terms += [m_mf[c] for c in part.n_mf[i]]
    out = _sum_logs(terms, card)
    if cfg.normalization == "normalized" or a in part.mf or i not in part.i_bp:
        return log_normalize(out)[0]
    return out


# ---------------------------------------------------------------- MF kernels


def _expect_axis(L: np.ndarray, axis: int, p: np.ndarray) -> np.ndarray:
    # sum_k p[k] L[..., k, ...] with 0 * (-inf) = 0
    idx = np.nonzero(p > 0)[0]
    Ls = np.take(L, idx, axis=axis)
    moved = np.moveaxis(Ls, axis, -1)
    return moved @ p[idx]


def expected_log_table(L: np.ndarray, scope: Sequence[int], beliefs: Mapping, keep: int | None) -> np.ndarray:
    """Expectation of log-table ``L`` under product beliefs of every axis except ``keep``.

    Returns a vector over ``keep`` (or a scalar when ``keep`` is None).
    """
    L = np.asarray(L, dtype=float)
    axes = list(scope)
    for j in list(scope):
        if j == keep:
            continue
        ax = axes.index(j)
        L = _expect_axis(L, ax, np.asarray(beliefs[j], dtype=float))
        axes.pop(ax)
    return L


def _gaussian_blocks(pot: QuadraticPotential, beliefs: Mapping):
    """Stacked mean and block-diagonal covariance of the selected Gaussian coordinates."""
    n = pot.cont_dim
    mu = np.zeros(n, complex)
    cov = np.zeros((n, n), complex)
    for v, coords, sl in pot.blocks():
        g: ComplexGaussian = beliefs[v]
        idx = np.asarray(coords)
        mu[sl] = g.mean[idx]
        cov[sl, sl] = g.covariance()[np.ix_(idx, idx)]
    return mu, cov


def quadratic_expected_log(pot: QuadraticPotential, beliefs: Mapping, skip: int | None = None) -> np.ndarray:
    """``E[ln f(x_D, h)]`` over the Gaussian neighbors, tabulated over ``x_D``.

    Gaussian neighbor ``skip`` is left out of the expectation (its
    contribution is dropped entirely); used only for messages to discrete
    variables, where no Gaussian neighbor is skipped.
    """
    mu, cov = _gaussian_blocks(pot, beliefs)
    lin = 2.0 * np.real(np.einsum("...n,n->...", pot.linear.conj(), mu))
    quad = np.real(np.einsum("n,...nm,m->...", mu.conj(), pot.quadratic, mu))
    tr = np.real(np.einsum("...nm,mn->...", pot.quadratic, cov))
    return pot.const + lin - quad - tr


def mf_factor_to_var(graph: FactorGraph, a: int, i: int, beliefs: Mapping):
    """MF message ``exp(E[ln f_a])`` to variable ``i``, expectation over the other neighbors.

    ``beliefs`` maps every other neighbor to its current belief (a pmf or a
    :class:`ComplexGaussian`). Discrete targets get a normalized log vector;
    Gaussian targets get a :class:`GaussianInfo` term in closed form.
    """
    f = graph.factors[a]
    pot = f.potential
    if isinstance(pot, Table):
        L = pot.log_values
        out = expected_log_table(L, pot.scope, beliefs, keep=i)
        if np.any(np.isneginf(out)) or np.any(np.isnan(out)):
            raise ValueError(f"MF factor {f.name or a} has a zero inside the support of its neighbors' beliefs")
        return log_normalize(out)[0]
    if isinstance(pot, QuadraticPotential):
        if graph.variables[i].is_gaussian:
            return _quadratic_to_gaussian(graph, pot, i, beliefs)
        L = quadratic_expected_log(pot, beliefs)
        out = expected_log_table(L, pot.discrete, beliefs, keep=i)
        return log_normalize(out)[0]
    raise TypeError(f"factor {f.name or a} cannot send MF messages")


def _quadratic_to_gaussian(graph, pot: QuadraticPotential, v: int, beliefs) -> GaussianInfo:
    # weights over discrete configurations (no discrete variable excluded)
    w = np.ones(())
    for j in pot.discrete:
        w = np.multiply.outer(w, np.asarray(beliefs[j], dtype=float))
    mu, _ = _gaussian_blocks_except(pot, beliefs, v)
    blocks = pot.blocks()
    sl_v = next(sl for var, _, sl in blocks if var == v)
    coords = next(np.asarray(c) for var, c, _ in blocks if var == v)
    mask = np.ones(pot.cont_dim, bool)
    mask[sl_v] = False
    Q = np.tensordot(w, pot.quadratic, axes=w.ndim) if w.ndim else pot.quadratic
    lin = np.tensordot(w, pot.linear, axes=w.ndim) if w.ndim else pot.linear
    P_blk = Q[sl_v, sl_v]
    eta_blk = lin[sl_v] - Q[sl_v][:, mask] @ mu[mask]
    d = graph.variables[v].dim
    P = np.zeros((d, d), complex)
    eta = np.zeros(d, complex)
    P[np.ix_(coords, coords)] = P_blk
    eta[coords] = eta_blk
    return GaussianInfo(P, eta)


def _gaussian_blocks_except(pot, beliefs, v):
    n = pot.cont_dim
    mu = np.zeros(n, complex)
    for var, coords, sl in pot.blocks():
        if var == v:
            continue
        mu[sl] = beliefs[var].mean[np.asarray(coords)]
    return mu, None


def mf_variable_update(graph: FactorGraph, i: int, factors: Sequence[int], beliefs: Mapping,
                       extra: Sequence = ()):
    """Coordinate update of a belief outside the BP part from its MF neighbors.

    ``extra`` holds additional incoming messages (log vectors or
    :class:`GaussianInfo`). Returns the new belief and the incoming messages.
    """
    msgs = {a: mf_factor_to_var(graph, a, i, beliefs) for a in factors}
    var = graph.variables[i]
    if var.is_gaussian:
        total = GaussianInfo.flat(var.dim)
        for t in list(msgs.values()) + list(extra):
            total = total + t
        return ComplexGaussian.from_info(total), msgs
    out = _sum_logs(list(msgs.values()) + list(extra), var.card)
    lb, _ = log_normalize(out)
    return np.exp(lb), msgs


def em_var_update(incoming: Sequence[np.ndarray], log: bool = True) -> int:
    """Point estimate for an EM-constrained variable: argmax of the product of incoming messages.

    Messages are log vectors unless ``log=False``. Ties go to the lowest state index.
    """
    if len(incoming) == 0:
        raise ValueError("no incoming messages")
    total = None
    for m in incoming:
        m = np.asarray(m, dtype=float) if log else to_log(m)
        total = m if total is None else total + m
    return int(np.argmax(total))


# ---------------------------------------------------------------- beliefs


def compute_beliefs(graph: FactorGraph, part: BpMfPartition, state: BeliefState,
                    em: EmConstraintSet | None = None, only_bp: bool = False) -> BeliefState:
    """Recompute every belief from the messages stored in ``state``.

    ``b_a`` is proportional to ``f_a`` times the incoming ``n`` messages for
    BP factors; ``b_i`` to the product of every incoming ``m`` message. Gaussian
    beliefs are copied from ``state`` unless they can be rebuilt from MF
    messages. EM variables collapse to the argmax. ``only_bp`` restricts
    the update to BP factors and their variables. Returns a new state.
    """
    out = state.copy()
    for a in sorted(part.bp):
        scope = graph.scope(a)
        L = _log_table(graph, a).copy()
        for k, j in enumerate(scope):
            shape = [1] * len(scope)
            shape[k] = -1
            L = L + state.n[(j, a)].reshape(shape)
        flat, lz = log_normalize(L.ravel())
        out.factor_beliefs[a] = np.exp(flat).reshape(L.shape)
        out.log_z_a[a] = -lz
    em_vars = em.variables if em is not None else frozenset()
    for i in range(graph.n_vars):
        if only_bp and i not in part.i_bp:
            continue
        var = graph.variables[i]
        nbrs = graph.neighbors(i)
        if var.is_gaussian:
            terms = [state.m.get((a, i)) for a in nbrs]
            if terms and all(t is not None for t in terms):
                total = GaussianInfo.flat(var.dim)
                for t in terms:
                    total = total + t
                out.var_beliefs[i] = ComplexGaussian.from_info(total)
            continue
        terms = [state.m[(a, i)] for a in nbrs if (a, i) in state.m]
        if i in em_vars:
            k = em_var_update(terms) if terms else state.em_points.get(i, 0)
            out.em_points[i] = k
            out.var_beliefs[i] = point_mass(var.card, k)
            continue
        lb, lz = log_normalize(_sum_logs(terms, var.card))
        out.var_beliefs[i] = np.exp(lb)
        out.log_z_i[i] = 0.0 if i in part.i_bp else -lz
    return out


# ---------------------------------------------------------------- rescaling of unnormalized solutions


@dataclass(frozen=True)
class RescalingReport:
    """Outcome of testing ``omega_{a,i} = g_i * z~_a`` on an unnormalized solution."""

    rescalable: bool
    g: dict
    z_tilde: dict
    witness: tuple | None
    residual: float

    def __bool__(self):
        return self.rescalable


def unnormalized_residual(graph: FactorGraph, m: Mapping, n: Mapping, omega) -> float:
    """Max relative violation of the unnormalized fixed-point system by linear messages ``m``, ``n``."""
    worst = 0.0
    for a, f in enumerate(graph.factors):
        scope = f.scope
        for i in scope:
            w = omega[(a, i)] if isinstance(omega, Mapping) else omega
            ins = [None if j == i else np.log(n[(j, a)]) for j in scope]
            new = w * np.exp(log_contract(f.potential.log_values, ins, scope.index(i)))
            old = np.asarray(m[(a, i)], float)
            worst = max(worst, float(np.max(np.abs(new - old) / np.maximum(np.abs(old), 1e-300))))
    for i in range(graph.n_vars):
        for a in graph.neighbors(i):
            new = np.ones(graph.card(i))
            for c in graph.neighbors(i):
                if c != a:
                    new = new * np.asarray(m[(c, i)], float)
            old = np.asarray(n[(i, a)], float)
            worst = max(worst, float(np.max(np.abs(new - old) / np.maximum(np.abs(old), 1e-300))))
    return worst


def rescaling_check(graph: FactorGraph, m: Mapping, n: Mapping, omega=1.0, rtol: float = 1e-9) -> RescalingReport:
    """Test whether messages solving the unnormalized system can be rescaled to the z-normalized one.

    ``m`` and ``n`` are strictly positive linear-domain messages keyed
    ``(a, i)`` and ``(i, a)``; ``omega`` is a float or a dict keyed ``(a, i)``.
    Computes ``z~_a = 1 / sum f_a prod n`` and looks for ``g_i`` with
    ``omega_{a,i} = g_i z~_a`` on every edge. The ``g_i`` found is the unique
    solution given ``omega`` and ``z~``; the report also carries the residual of
    the unnormalized system so callers can tell whether the inputs solve it.
    """
    z_tilde = {}
    for a, f in enumerate(graph.factors):
        L = f.potential.log_values.copy()
        for k, j in enumerate(f.scope):
            nj = np.asarray(n[(j, a)], float)
            if np.any(nj <= 0):
                raise ValueError("messages must be strictly positive")
            shape = [1] * len(f.scope)
            shape[k] = -1
            L = L + np.log(nj).reshape(shape)
        z_tilde[a] = float(np.exp(-logsumexp(L)))
    g, witness = {}, None
    for i in range(graph.n_vars):
        ratios = []
        for a in graph.neighbors(i):
            w = omega[(a, i)] if isinstance(omega, Mapping) else omega
            ratios.append((a, w / z_tilde[a]))
        if not ratios:
            continue
        ref = ratios[0][1]
        for a, r in ratios[1:]:
            if abs(r - ref) > rtol * max(abs(ref), abs(r)):
                if witness is None:
                    witness = (a, i)
        g[i] = ref
    res = unnormalized_residual(graph, m, n, omega)
    return RescalingReport(witness is None, g if witness is None else {}, z_tilde, witness, res)


# ---------------------------------------------------------------- whole-graph sweeps


def initial_state(graph: FactorGraph, part: BpMfPartition, em: EmConstraintSet | None = None) -> BeliefState:
    """Uniform discrete messages and beliefs; Gaussian beliefs from their purely Gaussian factors.

    A Gaussian variable starts at the product of the quadratic factors that
    touch only that variable (its prior), or at ``CN(0, I)`` when that
    product is not proper.
    """
    st = BeliefState()
    for i, var in enumerate(graph.variables):
        if var.is_gaussian:
            st.var_beliefs[i] = gaussian_prior_belief(graph, i)
            continue
        flat = np.full(var.card, -np.log(var.card))
        st.var_beliefs[i] = np.exp(flat)
        for a in graph.neighbors(i):
            st.m[(a, i)] = flat.copy()
            st.n[(i, a)] = flat.copy()
        st.log_z_i[i] = 0.0
    if em is not None:
        for i in em.variables:
            k = int(em.estimates.get(i, 0))
            st.em_points[i] = k
            st.var_beliefs[i] = point_mass(graph.card(i), k)
    for a in part.bp:
        shape = tuple(graph.card(j) for j in graph.scope(a))
        st.factor_beliefs[a] = np.full(shape, 1.0 / np.prod(shape))
    return st


def gaussian_prior_belief(graph: FactorGraph, v: int) -> ComplexGaussian:
    dim = graph.variables[v].dim
    total = GaussianInfo.flat(dim)
    for a in graph.neighbors(v):
        pot = graph.factors[a].potential
        if isinstance(pot, QuadraticPotential) and not pot.discrete and len(pot.continuous) == 1:
            total = total + _quadratic_to_gaussian(graph, pot, v, {})
    try:
        return ComplexGaussian.from_info(total)
    except ValueError:
        return ComplexGaussian(np.zeros(dim, complex), np.eye(dim))


def mf_inputs(graph: FactorGraph, state: BeliefState, a: int) -> dict:
    """Beliefs of every neighbor of MF factor ``a``; MF factors see full posteriors."""
    return {j: state.var_beliefs[j] for j in graph.scope(a)}


def recompute(graph: FactorGraph, part: BpMfPartition, state: BeliefState,
              cfg: UpdateConfig = UpdateConfig(), em: EmConstraintSet | None = None,
              update_bp: bool = True, update_mf: bool = True) -> BeliefState:
    """One synchronous pass of the combined fixed-point system.

    Every factor-to-variable message is recomputed from ``state`` (BP
    messages from the stored ``n``, MF messages from the stored beliefs),
    then variable messages and beliefs follow from the new factor messages.
    ``update_bp=False`` keeps the BP messages and only refreshes the MF side
    (and vice versa). Damping mixes new and old discrete messages in the log
    domain.
    """
    new = state.copy()
    em_vars = em.variables if em is not None else frozenset()
    if update_bp:
        for a in sorted(part.bp):
            table = graph.factors[a].potential
            ins = {j: state.n[(j, a)] for j in graph.scope(a)}
            for i in graph.scope(a):
                msg = bp_factor_to_var(table, i, ins, cfg, factor_id=a)
                new.m[(a, i)] = _damp(msg, state.m.get((a, i)), cfg.damping)
    if update_mf:
        for a in sorted(part.mf):
            beliefs = mf_inputs(graph, state, a)
            for i in graph.scope(a):
                msg = mf_factor_to_var(graph, a, i, beliefs)
                if isinstance(msg, GaussianInfo):
                    new.m[(a, i)] = msg
                else:
                    new.m[(a, i)] = _damp(msg, state.m.get((a, i)), cfg.damping)
    for i, var in enumerate(graph.variables):
        if not part.n_bp[i]:
            continue
        incoming = {c: new.m[(c, i)] for c in graph.neighbors(i)}
        for a in part.n_bp[i]:
            new.n[(i, a)] = combined_var_to_factor(i, a, part, incoming, incoming, var.card, cfg)
    new = compute_beliefs(graph, part, new, em)
    for i in range(graph.n_vars):
        for a in part.n_mf[i]:
            b = new.var_beliefs[i]
            new.n[(i, a)] = b if graph.variables[i].is_gaussian else to_log(b)
    for i in em_vars:
        new.var_beliefs[i] = point_mass(graph.card(i), new.em_points[i])
    return new


def _damp(msg, old, d):
    if old is None or d == 0.0 or isinstance(old, GaussianInfo):
        return msg
    with np.errstate(invalid="ignore"):
        mixed = (1.0 - d) * msg + d * old
    mixed = np.where(np.isneginf(msg) | np.isneginf(old), -np.inf, mixed)
    return log_normalize(mixed)[0]


def _lin(v) -> np.ndarray:
    return np.exp(log_normalize(v)[0])


def _rel(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    scale = max(1.0, float(np.abs(a).max(initial=0.0)), float(np.abs(b).max(initial=0.0)))
    return float(np.abs(a - b).max(initial=0.0)) / scale


def state_difference(graph: FactorGraph, old: BeliefState, new: BeliefState) -> float:
    """Largest change between two states over messages and variable beliefs.

    Discrete quantities are compared as normalized linear vectors; Gaussian
    ones by relative change of their parameters.
    """
    worst = 0.0
    for key, m in new.m.items():
        o = old.m.get(key)
        if o is None:
            continue
        if isinstance(m, GaussianInfo):
            worst = max(worst, _rel(m.precision, o.precision), _rel(m.info, o.info))
        else:
            worst = max(worst, float(np.abs(_lin(m) - _lin(o)).max()))
    for key, nv in new.n.items():
        o = old.n.get(key)
        if o is None or isinstance(nv, ComplexGaussian):
            continue
        worst = max(worst, float(np.abs(_lin(nv) - _lin(o)).max()))
    for i, b in new.var_beliefs.items():
        o = old.var_beliefs[i]
        if isinstance(b, ComplexGaussian):
            worst = max(worst, _rel(b.mean, o.mean), _rel(b.precision, o.precision))
        else:
            worst = max(worst, float(np.abs(np.asarray(b) - np.asarray(o)).max()))
    return worst

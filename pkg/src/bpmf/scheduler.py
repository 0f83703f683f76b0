"""Update schedules for the combined BP/MF system and their convergence traces.

:func:`run_algorithm1` is the monotone schedule (tree-structured BP part,
exact forward/backward, sequential MF coordinate updates). :func:`run_loopy`
swaps the exact BP step for a few damped flooding sweeps so cyclic BP parts
can be handled, at the price of the monotonicity guarantee.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .factor_graph import (BpMfPartition, FactorGraph, bp_cycle, check_algorithm1_applicable,
                           mf_condition_holds)
from .free_energy import combined_free_energy, constraint_residuals, stationarity_residual
from .gaussian import ComplexGaussian
from .message_passing import (EmConstraintSet, UpdateConfig, bp_factor_to_var, compute_beliefs,
                              em_var_update, initial_state, mf_factor_to_var, mf_inputs,
                              mf_variable_update, recompute, state_difference)
from .state import BeliefState, point_mass
from .tabular import log_normalize, to_log


class NotApplicableError(ValueError):
    """The requested schedule's structural preconditions do not hold."""

    def __init__(self, message, applicability=None):
        super().__init__(message)
        self.applicability = applicability


@dataclass(frozen=True)
class StopRule:
    """Stop when the relative free-energy change or the largest message change is small enough.

    ``rel_f_tol = 0`` switches the free-energy test off. Near a fixed point the
    free energy moves with the square of the message change, so in floating
    point it stalls (exactly equal values) while messages still move by about
    ``1e-8``; runs that must reach smaller residuals stop on messages alone.
    """

    max_iters: int = 200
    rel_f_tol: float = 1e-9
    delta_tol: float = 1e-8

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.rel_f_tol >= 0 and self.delta_tol > 0):
            raise ValueError("delta_tol must be positive and rel_f_tol nonnegative")

    def converged(self, f_prev: float, f_now: float, delta: float) -> bool:
        if delta < self.delta_tol:
            return True
        if self.rel_f_tol > 0 and math.isfinite(f_prev) and math.isfinite(f_now):
            return abs(f_now - f_prev) <= self.rel_f_tol * max(1.0, abs(f_now))
        return False


TRACE_COLUMNS = ("iteration", "free_energy", "marg_residual", "stat_residual", "max_delta")


@dataclass
class ScheduleTrace:
    """Per-iteration diagnostics; ``steps`` holds the free energy after every sub-step."""

    rows: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    status: str = "running"
    stop_reason: str = ""

    def add_step(self, label: str, F: float):
        self.steps.append((label, F))

    def add_row(self, **row):
        self.rows.append(row)

    @property
    def iterations(self) -> int:
        return max(0, len(self.rows) - 1)

    @property
    def free_energies(self) -> np.ndarray:
        return np.array([r["free_energy"] for r in self.rows])

    @property
    def step_free_energies(self) -> np.ndarray:
        return np.array([F for _, F in self.steps])

    def is_monotone(self, tol: float = 1e-12) -> bool:
        """Free energy never increases by more than ``tol`` between recorded sub-steps."""
        F = self.step_free_energies
        return all(b <= a + tol or a == math.inf for a, b in zip(F[:-1], F[1:]))

    def to_csv(self, fh=None, with_time: bool = False) -> str:
        """CSV text with 17 significant digits; wall-clock only when ``with_time``."""
        cols = list(TRACE_COLUMNS) + (["wall_clock"] if with_time else [])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            w.writerow([_fmt(r.get(c)) for c in cols])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


# ---------------------------------------------------------------- forward/backward


def _tree_orders(graph: FactorGraph, part: BpMfPartition):
    """Pre-order node lists and parent links for each tree of the BP subgraph."""
    adj = {}
    for a in sorted(part.bp):
        for i in graph.scope(a):
            adj.setdefault(("v", i), []).append(("f", a))
            adj.setdefault(("f", a), []).append(("v", i))
    parent, order = {}, []
    for root in sorted(adj):
        if root in parent:
            continue
        parent[root] = None
        stack = [root]
        while stack:
            node = stack.pop()
            order.append(node)
            for nxt in reversed(adj[node]):
                if nxt == parent[node]:
                    continue
                if nxt in parent:
                    raise ValueError("BP part has a cycle")
                parent[nxt] = node
                stack.append(nxt)
    return order, parent, adj


def forward_backward(graph: FactorGraph, part: BpMfPartition, evidence: dict | None = None,
                     cfg: UpdateConfig = UpdateConfig()) -> tuple[dict, dict]:
    """Exact two-pass sum-product on the (forest) BP part.

    ``evidence`` maps variable ids to fixed log unary messages (the MF
    messages into the BP part). Messages flow from the leaves to the root of
    every tree and back. With ``cfg.normalization == "normalized"`` every
    message is scaled to unit mass; with ``"omega"`` the raw sum-product
    values are scaled by ``omega`` only. Returns ``(m, n)`` keyed ``(a, i)``
    and ``(i, a)``.
    """
    if cfg.normalization == "z":
        raise ValueError("the two-pass schedule supports normalized or omega scaling only")
    cyc = bp_cycle(graph, part)
    if cyc is not None:
        raise NotApplicableError("BP part has a cycle")
    evidence = evidence or {}
    order, parent, adj = _tree_orders(graph, part)
    m, n = {}, {}
    norm = cfg.normalization == "normalized"

    def var_msg(i, a):
        out = np.array(evidence.get(i, np.zeros(graph.card(i))), dtype=float)
        for c in part.n_bp[i]:
            if c != a:
                out = out + m[(c, i)]
        return log_normalize(out)[0] if norm else out

    def fac_msg(a, i):
        table = graph.factors[a].potential
        ins = {j: n[(j, a)] for j in graph.scope(a) if j != i}
        return bp_factor_to_var(table, i, ins, cfg, factor_id=a)

    def send(src, dst):
        if src[0] == "v":
            n[(src[1], dst[1])] = var_msg(src[1], dst[1])
        else:
            m[(src[1], dst[1])] = fac_msg(src[1], dst[1])

    for node in reversed(order):
        if parent[node] is not None:
            send(node, parent[node])
    for node in order:
        for child in adj[node]:
            if child != parent[node]:
                send(node, child)
    return m, n


# ---------------------------------------------------------------- shared steps


def _mf_into_shared(graph, part, state) -> dict:
    """Refresh MF messages into BP variables; returns their summed log evidence."""
    evidence = {}
    for i in part.shared():
        total = np.zeros(graph.card(i))
        for a in part.n_mf[i]:
            msg = mf_factor_to_var(graph, a, i, mf_inputs(graph, state, a))
            state.m[(a, i)] = msg
            total = total + msg
        evidence[i] = total
    return evidence


def _export_app(graph, part, state):
    # MF factors see the full posterior of every neighbor
    for i in range(graph.n_vars):
        b = state.var_beliefs[i]
        for a in part.n_mf[i]:
            state.n[(i, a)] = b if isinstance(b, ComplexGaussian) else to_log(b)


def _mf_coordinate_step(graph, part, state, i, em_vars):
    if i in em_vars:
        msgs = {a: mf_factor_to_var(graph, a, i, mf_inputs(graph, state, a)) for a in part.n_mf[i]}
        k = em_var_update(list(msgs.values()))
        state.em_points[i] = k
        state.var_beliefs[i] = point_mass(graph.card(i), k)
    else:
        beliefs = {j: state.var_beliefs[j] for a in part.n_mf[i] for j in graph.scope(a)}
        b, msgs = mf_variable_update(graph, i, part.n_mf[i], beliefs)
        state.var_beliefs[i] = b
    state.m.update({(a, i): msg for a, msg in msgs.items()})
    _export_app(graph, part, state)


class _Recorder:
    def __init__(self, graph, part, cfg, em, residuals):
        self.graph, self.part, self.cfg, self.em, self.residuals = graph, part, cfg, em, residuals
        self.trace = ScheduleTrace()
        self.t0 = time.perf_counter()

    def step(self, label, state):
        F = combined_free_energy(self.graph, self.part, state)
        self.trace.add_step(label, F)
        return F

    def row(self, it, state, F, delta):
        marg = stat = float("nan")
        if self.residuals:
            marg = constraint_residuals(self.graph, self.part, state)["max_marg_residual"]
            stat = stationarity_residual(self.graph, self.part, state, self.cfg, self.em)
        self.trace.add_row(iteration=it, free_energy=F, marg_residual=marg, stat_residual=stat,
                           max_delta=delta, wall_clock=time.perf_counter() - self.t0)


def _check_em(part, em):
    if em is not None:
        em.validate(part)
        return em.variables
    return frozenset()


def run_algorithm1(graph: FactorGraph, part: BpMfPartition, cfg: UpdateConfig = UpdateConfig(),
                   stop: StopRule = StopRule(), em: EmConstraintSet | None = None,
                   residuals: bool = True) -> tuple[BeliefState, ScheduleTrace]:
    """Monotone BP/MF schedule.

    Each outer iteration computes MF messages into the BP variables, runs
    exact forward/backward on the BP tree with those as fixed evidence,
    hands the resulting posteriors to the MF factors, then updates every
    variable outside the BP part one at a time in ascending id order. The
    free energy is recorded after the BP step and after every coordinate
    update; ``residuals=False`` skips the per-iteration residual diagnostics.
    """
    app = check_algorithm1_applicable(graph, part)
    if not app:
        raise NotApplicableError(app.describe(graph), app)
    if cfg.damping:
        raise ValueError("the monotone schedule needs undamped updates")
    em_vars = _check_em(part, em)
    state = initial_state(graph, part, em)
    _export_app(graph, part, state)
    rec = _Recorder(graph, part, cfg, em, residuals)
    F_prev = rec.step("init", state)
    rec.row(0, state, F_prev, float("nan"))
    mf_only = part.mf_only()
    for it in range(1, stop.max_iters + 1):
        old = state.copy()
        evidence = _mf_into_shared(graph, part, state)
        if part.bp:
            m, n = forward_backward(graph, part, evidence, cfg)
            state.m.update(m)
            state.n.update(n)
            state = compute_beliefs(graph, part, state, em, only_bp=True)
        _export_app(graph, part, state)
        rec.step("bp", state)
        for i in mf_only:
            _mf_coordinate_step(graph, part, state, i, em_vars)
            F = rec.step(f"mf:{i}", state)
        F = rec.trace.steps[-1][1]
        delta = state_difference(graph, old, state)
        rec.row(it, state, F, delta)
        if stop.converged(F_prev, F, delta):
            rec.trace.status = "converged"
            rec.trace.stop_reason = "delta" if delta < stop.delta_tol else "free_energy"
            return state, rec.trace
        F_prev = F
    rec.trace.status = "max_iterations"
    return state, rec.trace


def run_loopy(graph: FactorGraph, part: BpMfPartition, cfg: UpdateConfig = UpdateConfig(damping=0.3),
              stop: StopRule = StopRule(), em: EmConstraintSet | None = None, n_inner: int = 5,
              divergence_window: int = 10, residuals: bool = True) -> tuple[BeliefState, ScheduleTrace]:
    """BP/MF iterations with damped flooding BP sweeps; cycles in the BP part are allowed.

    The free energy is recorded but not expected to decrease. If the BP
    message change grows for ``divergence_window`` consecutive sweeps the run
    stops with status ``"diverged"`` and returns the partial state.
    """
    if not mf_condition_holds(graph, part):
        app = check_algorithm1_applicable(graph, part)
        raise NotApplicableError(app.describe(graph), app)
    if n_inner < 1:
        raise ValueError("n_inner must be >= 1")
    em_vars = _check_em(part, em)
    state = initial_state(graph, part, em)
    _export_app(graph, part, state)
    rec = _Recorder(graph, part, cfg, em, residuals)
    F_prev = rec.step("init", state)
    rec.row(0, state, F_prev, float("nan"))
    mf_only = part.mf_only()
    growing, last = 0, math.inf
    for it in range(1, stop.max_iters + 1):
        old = state.copy()
        _mf_into_shared(graph, part, state)
        if part.bp:
            for _ in range(n_inner):
                nxt = recompute(graph, part, state, cfg, em, update_mf=False)
                d = state_difference(graph, state, nxt)
                state = nxt
                growing = growing + 1 if d > last else 0
                last = d
                if growing >= divergence_window:
                    rec.trace.status = "diverged"
                    rec.trace.stop_reason = "message change grew for %d sweeps" % growing
                    rec.row(it, state, rec.step("bp", state), d)
                    return state, rec.trace
        _export_app(graph, part, state)
        rec.step("bp", state)
        for i in mf_only:
            _mf_coordinate_step(graph, part, state, i, em_vars)
            rec.step(f"mf:{i}", state)
        F = rec.trace.steps[-1][1]
        delta = state_difference(graph, old, state)
        rec.row(it, state, F, delta)
        if stop.converged(F_prev, F, delta):
            rec.trace.status = "converged"
            rec.trace.stop_reason = "delta" if delta < stop.delta_tol else "free_energy"
            return state, rec.trace
        F_prev = F
    rec.trace.status = "max_iterations"
    return state, rec.trace


def run(graph: FactorGraph, part: BpMfPartition, loopy: bool = False, **kw):
    """Monotone schedule when it applies, the loopy one when asked; otherwise refuse."""
    app = check_algorithm1_applicable(graph, part)
    if app:
        return run_algorithm1(graph, part, **kw)
    if loopy:
        return run_loopy(graph, part, **kw)
    raise NotApplicableError(app.describe(graph), app)

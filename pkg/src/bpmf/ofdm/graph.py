"""The OFDM receiver's factor graph in the generic representation.

:func:`build_ofdm_graph` returns the graph with its BP/MF split. With
``explicit=False`` the code factor is an :class:`ImplicitPotential`, which is
enough for partitioning, region sets and applicability checks at any size.
With ``explicit=True`` every factor is tabulated or quadratic, so the generic
schedulers can run on it; that is only feasible for toy sizes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product as iproduct

import numpy as np

from ..factor_graph import (BpMfPartition, Factor, FactorGraph, ImplicitPotential, QuadraticPotential,
                            Variable, gaussian_prior_potential, partition)
from ..instances import observation_factor as observation_potential
from ..tabular import MAX_TABLE_STATES, Table
from .scenario import OfdmScenario


@dataclass(frozen=True, eq=False)
class OfdmGraph:
    graph: FactorGraph
    part: BpMfPartition
    info_vars: tuple        # variable ids of U_k
    coded_vars: tuple       # variable ids of the coded bits (stream order, padding excluded)
    symbol_vars: tuple      # variable ids of X_n, one per data carrier
    channel_var: int


def pilot_potential(h_var, carrier, y, x, gamma) -> QuadraticPotential:
    const = math.log(gamma / math.pi) - gamma * abs(y) ** 2
    return QuadraticPotential((), ((h_var, (carrier,)),), const, [gamma * y * np.conj(x)],
                              [[gamma * abs(x) ** 2]])


def build_ofdm_graph(sc: OfdmScenario, y: np.ndarray | None = None, gamma: float = 1.0,
                     explicit: bool = False) -> OfdmGraph:
    """Factor graph of the receiver with BP for priors, code and modulation and MF for the rest."""
    if y is None:
        y = np.zeros(sc.n_carriers, complex)
    K, L, N = sc.info_bits, sc.const.bits_per_symbol, sc.n_data
    n_coded = sc.coded_bits
    variables, factors = [], []
    u_ids = []
    for k in range(K):
        u_ids.append(len(variables))
        variables.append(Variable(f"U{k}", card=2))
    c_ids = []
    for j in range(n_coded):
        c_ids.append(len(variables))
        variables.append(Variable(f"C{j}", card=2))
    x_ids = []
    for n in range(N):
        x_ids.append(len(variables))
        variables.append(Variable(f"X{sc.data_idx[n]}", card=sc.const.size))
    h = len(variables)
    variables.append(Variable("H", dim=sc.n_carriers))
    bp = []
    for k in range(K):
        bp.append(len(factors))
        factors.append(Factor((u_ids[k],), Table((u_ids[k],), [0.5, 0.5]), f"pU{k}"))
    code_scope = tuple(c_ids) + tuple(u_ids)
    bp.append(len(factors))
    if explicit:
        factors.append(Factor(code_scope, _code_table(sc, code_scope), "code"))
    else:
        factors.append(Factor(code_scope, ImplicitPotential("trellis", sc.code), "code"))
    # transmitted position k carries stream bit interleaver[k]
    stream_of_tx = sc.interleaver.reshape(N, L)
    for n in range(N):
        stream_bits = stream_of_tx[n]
        scope = (x_ids[n],) + tuple(c_ids[s] for s in stream_bits if s < n_coded)
        bp.append(len(factors))
        factors.append(Factor(scope, _modulation_table(sc, scope, stream_bits, n_coded), f"mod{n}"))
    for n, i in enumerate(sc.data_idx):
        factors.append(Factor((x_ids[n], h), observation_potential(x_ids[n], h, int(i), y[i], gamma,
                                                                    sc.const.points), f"obs{i}"))
    for p, i in enumerate(sc.pilot_idx):
        factors.append(Factor((h,), pilot_potential(h, int(i), y[i], sc.pilot_symbols[p], gamma), f"pilot{i}"))
    factors.append(Factor((h,), gaussian_prior_potential(h, sc.channel_prior), "prior"))
    graph = FactorGraph(variables, factors)
    return OfdmGraph(graph, partition(graph, bp), tuple(u_ids), tuple(c_ids), tuple(x_ids), h)


def _modulation_table(sc, scope, stream_bits, n_coded) -> Table:
    S, L = sc.const.size, sc.const.bits_per_symbol
    free = [l for l in range(L) if stream_bits[l] < n_coded]
    vals = np.zeros((S,) + (2,) * len(free))
    for s in range(S):
        bits = sc.const.bits[s]
        if any(bits[l] for l in range(L) if l not in free):
            continue  # padding positions carry a known zero
        vals[(s,) + tuple(int(bits[l]) for l in free)] = 1.0
    return Table(scope, vals)


def _code_table(sc, scope) -> Table:
    K, n_coded = sc.info_bits, sc.coded_bits
    if 2 ** (K + n_coded) > MAX_TABLE_STATES:
        raise ValueError("code factor too large to tabulate; use explicit=False")
    vals = np.zeros((2,) * (n_coded + K))
    for u in iproduct((0, 1), repeat=K):
        c = sc.code.encode(np.array(u, dtype=np.int64))
        vals[tuple(c) + u] = 1.0
    return Table(scope, vals)

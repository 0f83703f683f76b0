"""Random and hand-built factor graphs used by the verification suite, tests and demos."""
from __future__ import annotations

import math

import numpy as np

from .factor_graph import (BpMfPartition, FactorGraph, GraphBuilder, QuadraticPotential,
                           check_algorithm1_applicable, gaussian_prior_potential, partition)
from .gaussian import ComplexGaussian
from .oracle import log_partition
from .tabular import Table


def _positive(rng, shape, spread=1.0):
    # log-uniform entries keep every factor strictly positive
    return np.exp(spread * rng.uniform(-1.0, 1.0, size=shape))


def normalize_graph(graph: FactorGraph) -> FactorGraph:
    """Rescale the first table factor so the product of all factors sums to one."""
    lz = log_partition(graph)
    factors = list(graph.factors)
    for a, f in enumerate(factors):
        if isinstance(f.potential, Table):
            pot = f.potential
            factors[a] = type(f)(f.scope, Table(pot.scope, pot.values * math.exp(-lz)), f.name)
            return FactorGraph(graph.variables, factors)
    raise ValueError("graph has no table factor to rescale")


def random_tree(rng: np.random.Generator, max_vars: int = 8, max_card: int = 4,
                normalized: bool = True, spread: float = 1.0) -> FactorGraph:
    """Random tree-structured factor graph with positive unary, pairwise and triple factors."""
    n = int(rng.integers(2, max_vars + 1))
    b = GraphBuilder()
    cards = [int(rng.integers(2, max_card + 1)) for _ in range(n)]
    ids = [b.variable(c, f"x{k}") for k, c in enumerate(cards)]
    k = 1
    while k < n:
        parent = int(rng.integers(0, k))
        if k + 1 < n and rng.random() < 0.25:
            scope = [ids[parent], ids[k], ids[k + 1]]
            k += 2
        else:
            scope = [ids[parent], ids[k]]
            k += 1
        b.factor(scope, _positive(rng, tuple(cards[i] for i in scope), spread))
    for i in ids:
        if rng.random() < 0.6:
            b.factor([i], _positive(rng, (cards[i],), spread))
    g = b.build()
    return normalize_graph(g) if normalized else g


def random_mf_instance(rng: np.random.Generator, max_vars: int = 6, max_card: int = 3,
                       spread: float = 1.5) -> FactorGraph:
    """Random discrete graph (cycles allowed) with positive unary and pairwise factors."""
    n = int(rng.integers(2, max_vars + 1))
    b = GraphBuilder()
    cards = [int(rng.integers(2, max_card + 1)) for _ in range(n)]
    ids = [b.variable(c, f"x{k}") for k, c in enumerate(cards)]
    for i in ids:
        b.factor([i], _positive(rng, (cards[i],), spread))
    n_pairs = int(rng.integers(1, n * (n - 1) // 2 + 1))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for p in rng.permutation(len(pairs))[:n_pairs]:
        i, j = pairs[p]
        b.factor([i, j], _positive(rng, (cards[i], cards[j]), spread))
    return b.build()


def observation_factor(x_var: int, h_var: int, coord: int, y: complex, gamma: float, points) -> QuadraticPotential:
    """``ln CN(y; h x, 1/gamma)`` for a discrete ``x`` taking values ``points`` and a Gaussian ``h``."""
    points = np.asarray(points, complex)
    const = math.log(gamma / math.pi) - gamma * abs(y) ** 2 + np.zeros(points.size)
    lin = (gamma * y * points.conj()).reshape(-1, 1)
    quad = (gamma * np.abs(points) ** 2).reshape(-1, 1, 1)
    return QuadraticPotential((x_var,), ((h_var, (coord,)),), const, lin, quad)


def random_applicable_instance(rng: np.random.Generator, n_bp: int | None = None,
                               gaussian: bool | None = None) -> tuple[FactorGraph, BpMfPartition]:
    """Mixed instance on which the convergent schedule applies.

    The BP part is a random tree over discrete variables. MF factors touch at
    most one BP variable: pairwise factors to discrete MF-only variables and,
    optionally, observation factors tying BP or MF-only symbols to a shared
    complex Gaussian vector with a Gaussian prior.
    """
    n_bp = int(rng.integers(2, 5)) if n_bp is None else n_bp
    gaussian = bool(rng.random() < 0.5) if gaussian is None else gaussian
    b = GraphBuilder()
    bp_cards = [int(rng.integers(2, 4)) for _ in range(n_bp)]
    bp_vars = [b.variable(c, f"x{k}") for k, c in enumerate(bp_cards)]
    bp_f = []
    for k in range(1, n_bp):
        p = int(rng.integers(0, k))
        bp_f.append(b.factor([bp_vars[p], bp_vars[k]], _positive(rng, (bp_cards[p], bp_cards[k]))))
    for i in bp_vars:
        if rng.random() < 0.5:
            bp_f.append(b.factor([i], _positive(rng, (bp_cards[i],))))
    n_mf = int(rng.integers(1, 4))
    mf_cards = [int(rng.integers(2, 4)) for _ in range(n_mf)]
    mf_vars = [b.variable(c, f"z{k}") for k, c in enumerate(mf_cards)]
    for k, z in enumerate(mf_vars):
        t = bp_vars[int(rng.integers(0, n_bp))]
        b.factor([t, z], _positive(rng, (bp_cards[t], mf_cards[k]), 1.5))
        if rng.random() < 0.5:
            b.factor([z], _positive(rng, (mf_cards[k],)))
    for k in range(1, n_mf):
        if rng.random() < 0.5:
            b.factor([mf_vars[k - 1], mf_vars[k]], _positive(rng, (mf_cards[k - 1], mf_cards[k]), 1.5))
    if gaussian:
        dim = 2
        h = b.gaussian(dim, "h")
        A = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        prior = ComplexGaussian.from_covariance(rng.normal(size=dim) + 1j * rng.normal(size=dim),
                                                A @ A.conj().T + 0.5 * np.eye(dim))
        b.add([h], gaussian_prior_potential(h, prior), "prior")
        for k, x in enumerate(bp_vars[:2] + mf_vars[:1]):
            card = bp_cards[x] if x in bp_vars else mf_cards[0]
            points = np.exp(2j * np.pi * np.arange(card) / card)
            y = complex(rng.normal() + 1j * rng.normal())
            b.add([x, h], observation_factor(x, h, k % dim, y, float(rng.uniform(0.5, 2.0)), points), f"obs{k}")
    g = b.build()
    part = partition(g, bp_f)
    assert check_algorithm1_applicable(g, part)
    return g, part


def parity_factor(k: int) -> np.ndarray:
    """Indicator of even parity over ``k`` binary variables."""
    idx = np.indices((2,) * k).sum(axis=0)
    return (idx % 2 == 0).astype(float)


def parity_instance(rng: np.random.Generator, n_checks: int = 3, with_mf: bool = True):
    """Binary chain of parity checks (a tree) with soft evidence; some evidence sits in the MF part."""
    b = GraphBuilder()
    xs = [b.variable(2, "x0")]
    checks = []
    for c in range(n_checks):
        new = [b.variable(2, f"x{len(xs)}"), b.variable(2, f"x{len(xs) + 1}")]
        checks.append(b.factor([xs[-1]] + new, parity_factor(3), f"chk{c}"))
        xs.extend(new)
    ev_bp = [b.factor([x], _positive(rng, (2,)), f"ev{x}") for x in xs]
    if with_mf:
        z = b.variable(2, "z")
        b.factor([xs[0], z], _positive(rng, (2, 2), 1.5), "couple")
        b.factor([z], _positive(rng, (2,)), "zprior")
    g = b.build()
    return g, partition(g, checks + ev_bp)


def contradictory_parity() -> FactorGraph:
    """Two parity checks over the same pair that disagree, so no configuration survives."""
    b = GraphBuilder()
    x, y, c = b.variable(2, "x"), b.variable(2, "y"), b.variable(2, "c")
    b.factor([x, y, c], parity_factor(3), "even")
    b.factor([c], [0.0, 1.0], "odd")
    b.factor([x], [1.0, 0.0], "x0")
    b.factor([y], [1.0, 0.0], "y0")
    return b.build()


def loopy_triangle(rng: np.random.Generator, spread: float = 1.0) -> FactorGraph:
    """Three binary variables coupled pairwise around a cycle, with unary evidence."""
    b = GraphBuilder()
    xs = [b.variable(2, f"x{k}") for k in range(3)]
    for k in range(3):
        b.factor([xs[k], xs[(k + 1) % 3]], _positive(rng, (2, 2), spread))
    for x in xs:
        b.factor([x], _positive(rng, (2,), spread))
    return b.build()


def four_cycle(rng: np.random.Generator, coupling: float = 0.3) -> FactorGraph:
    """Binary 4-cycle with weak pairwise couplings."""
    b = GraphBuilder()
    xs = [b.variable(2, f"x{k}") for k in range(4)]
    for k in range(4):
        J = coupling * rng.uniform(-1, 1)
        b.factor([xs[k], xs[(k + 1) % 4]], np.exp(J * np.array([[1.0, -1.0], [-1.0, 1.0]])))
    for x in xs:
        b.factor([x], _positive(rng, (2,)))
    return b.build()


def em_toy(rng: np.random.Generator, n_obs: int = 10, n_theta: int = 4, flip: float = 0.02):
    """A coin bias ``theta`` (EM-constrained) seen through noisy observations of its flips.

    ``theta`` indexes a grid of biases; flips ``x_k`` are drawn from a random
    true bias and observed through a binary channel with crossover ``flip``,
    which becomes BP evidence on ``x_k``. Each ``x_k`` is tied to ``theta``
    by an MF factor, and ``theta`` has a flat MF prior. Returns
    ``(graph, partition, theta id)``.
    """
    q = np.linspace(0.15, 0.85, n_theta)
    true = int(rng.integers(n_theta))
    b = GraphBuilder()
    theta = b.variable(n_theta, "theta")
    bp = []
    for k in range(n_obs):
        x = b.variable(2, f"x{k}")
        flip_k = int(rng.random() < q[true]) ^ int(rng.random() < flip)
        ev = np.array([flip, 1 - flip]) if flip_k else np.array([1 - flip, flip])
        bp.append(b.factor([x], ev, f"obs{k}"))
        b.factor([theta, x], np.stack([1 - q, q], axis=1), f"lik{k}")
    b.factor([theta], np.full(n_theta, 1.0 / n_theta), "prior")
    g = b.build()
    return g, partition(g, bp), theta

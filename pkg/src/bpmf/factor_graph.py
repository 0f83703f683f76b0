"""Factor graphs with a BP/MF split of the factor nodes.

Variables and factors are addressed by integer ids (positions in
``FactorGraph.variables`` and ``FactorGraph.factors``). The two id spaces are
separate sequences, so a variable id can never be mistaken for a factor id.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from itertools import product as iproduct
from typing import Any, Sequence

import numpy as np

from .tabular import Table


@dataclass(frozen=True)
class Variable:
    """A discrete variable with ``card`` states, or a complex Gaussian vector of length ``dim``."""

    name: str
    card: int | None = None
    dim: int | None = None

    def __post_init__(self):
        if (self.card is None) == (self.dim is None):
            raise ValueError(f"variable {self.name!r}: give exactly one of card or dim")
        if self.card is not None and self.card < 1:
            raise ValueError(f"variable {self.name!r}: alphabet size must be >= 1")
        if self.dim is not None and self.dim < 1:
            raise ValueError(f"variable {self.name!r}: dimension must be >= 1")

    @property
    def is_gaussian(self) -> bool:
        return self.dim is not None


@dataclass(frozen=True, eq=False)
class QuadraticPotential:
    """Log-factor quadratic in Gaussian neighbors, tabulated over discrete ones.

    ``ln f(x_D, h) = const[x_D] + 2 Re(linear[x_D]^H h) - h^H quadratic[x_D] h``
    where ``h`` stacks ``continuous[k] = (var, coords)`` blocks: the selected
    coordinates of each Gaussian neighbor, in order.
    """

    discrete: tuple[int, ...]
    continuous: tuple[tuple[int, tuple[int, ...]], ...]
    const: np.ndarray
    linear: np.ndarray
    quadratic: np.ndarray

    def __post_init__(self):
        cont = tuple((int(v), tuple(int(c) for c in coords)) for v, coords in self.continuous)
        n = sum(len(c) for _, c in cont)
        const = np.asarray(self.const, dtype=float)
        dshape = const.shape
        lin = np.asarray(self.linear, dtype=complex).reshape(dshape + (n,))
        quad = np.asarray(self.quadratic, dtype=complex).reshape(dshape + (n, n))
        if len(dshape) != len(self.discrete):
            raise ValueError("const must have one axis per discrete neighbor")
        if not np.all(np.isfinite(const)):
            raise ValueError("quadratic potential must be strictly positive (finite log)")
        herm = np.abs(quad - np.swapaxes(quad.conj(), -1, -2)).max(initial=0.0)
        if herm > 1e-10 * max(1.0, np.abs(quad).max(initial=0.0)):
            raise ValueError("quadratic term must be Hermitian")
        if n and np.linalg.eigvalsh(quad.reshape(-1, n, n)).min() < -1e-10:
            raise ValueError("quadratic term must be positive semidefinite")
        object.__setattr__(self, "discrete", tuple(int(v) for v in self.discrete))
        object.__setattr__(self, "continuous", cont)
        object.__setattr__(self, "const", const)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "quadratic", quad)

    @property
    def cont_dim(self) -> int:
        return self.linear.shape[-1]

    def blocks(self) -> list[tuple[int, tuple[int, ...], slice]]:
        """(variable, coordinates, slice into the stacked vector) per Gaussian neighbor."""
        out, start = [], 0
        for v, coords in self.continuous:
            out.append((v, coords, slice(start, start + len(coords))))
            start += len(coords)
        return out


def gaussian_prior_potential(v: int, g) -> QuadraticPotential:
    """``ln CN(h; mean, inv(precision))`` of a :class:`~bpmf.gaussian.ComplexGaussian` over all of ``v``."""
    P = g.precision
    const = g.logdet_precision() - g.dim * math.log(math.pi) - float(np.real(g.mean.conj() @ P @ g.mean))
    return QuadraticPotential((), ((v, tuple(range(g.dim))),), const, P @ g.mean, P)


@dataclass(frozen=True, eq=False)
class ImplicitPotential:
    """Placeholder for a factor realized outside the table engine (e.g. a code trellis).

    Graph-level operations (partitioning, region sets, applicability) accept
    it; the message kernels do not.
    """

    kind: str
    data: Any = None


@dataclass(frozen=True, eq=False)
class Factor:
    scope: tuple[int, ...]
    potential: Table | QuadraticPotential | ImplicitPotential
    name: str = ""


class FactorGraph:
    """Bipartite graph of variables and factors; immutable once built."""

    def __init__(self, variables: Sequence[Variable], factors: Sequence[Factor]):
        self.variables = tuple(variables)
        self.factors = tuple(factors)
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique")
        nv = len(self.variables)
        for a, f in enumerate(self.factors):
            label = f.name or f"factor {a}"
            if len(f.scope) == 0:
                raise ValueError(f"{label}: empty scope")
            if len(set(f.scope)) != len(f.scope):
                raise ValueError(f"{label}: duplicate variable in scope {f.scope}")
            for i in f.scope:
                if not 0 <= i < nv:
                    raise ValueError(f"{label}: unknown variable id {i}")
            self._check_potential(label, f)
        nbrs: list[list[int]] = [[] for _ in range(nv)]
        for a, f in enumerate(self.factors):
            for i in f.scope:
                nbrs[i].append(a)
        self._var_nbrs = tuple(tuple(n) for n in nbrs)

    def _check_potential(self, label, f: Factor):
        pot = f.potential
        if isinstance(pot, Table):
            if pot.scope != f.scope:
                raise ValueError(f"{label}: table scope {pot.scope} differs from factor scope {f.scope}")
            for i, n in zip(f.scope, pot.shape):
                v = self.variables[i]
                if v.is_gaussian:
                    raise ValueError(f"{label}: tabulated factor over Gaussian variable {v.name!r}")
                if v.card != n:
                    raise ValueError(f"{label}: axis for {v.name!r} has size {n}, expected {v.card}")
        elif isinstance(pot, QuadraticPotential):
            cont_vars = tuple(v for v, _ in pot.continuous)
            if pot.discrete + cont_vars != f.scope:
                raise ValueError(f"{label}: scope must list discrete then Gaussian neighbors")
            for i, n in zip(pot.discrete, pot.const.shape):
                v = self.variables[i]
                if v.is_gaussian or v.card != n:
                    raise ValueError(f"{label}: bad discrete neighbor {v.name!r}")
            for i, coords in pot.continuous:
                v = self.variables[i]
                if not v.is_gaussian:
                    raise ValueError(f"{label}: {v.name!r} is not Gaussian")
                if any(not 0 <= c < v.dim for c in coords):
                    raise ValueError(f"{label}: coordinate out of range for {v.name!r}")
        elif not isinstance(pot, ImplicitPotential):
            raise TypeError(f"{label}: unsupported potential {type(pot).__name__}")

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_factors(self) -> int:
        return len(self.factors)

    def scope(self, a: int) -> tuple[int, ...]:
        return self.factors[a].scope

    def neighbors(self, i: int) -> tuple[int, ...]:
        """Factors adjacent to variable ``i``, ascending."""
        return self._var_nbrs[i]

    def card(self, i: int) -> int:
        return self.variables[i].card

    def var_id(self, name: str) -> int:
        for k, v in enumerate(self.variables):
            if v.name == name:
                return k
        raise KeyError(name)

    def factor_id(self, name: str) -> int:
        for k, f in enumerate(self.factors):
            if f.name == name:
                return k
        raise KeyError(name)

    def rebuild_neighbors(self) -> tuple[tuple[int, ...], ...]:
        """Variable adjacency recomputed from the factor scopes."""
        nbrs = defaultdict(list)
        for a, f in enumerate(self.factors):
            for i in f.scope:
                nbrs[i].append(a)
        return tuple(tuple(nbrs[i]) for i in range(self.n_vars))

    def __repr__(self):
        return f"FactorGraph({self.n_vars} variables, {self.n_factors} factors)"


class GraphBuilder:
    """Incremental construction of a :class:`FactorGraph`.

    >>> b = GraphBuilder()
    >>> x = b.variable(2, "x")
    >>> _ = b.factor([x], [2.0, 6.0])
    >>> b.build().neighbors(x)
    (0,)
    """

    def __init__(self):
        self._vars: list[Variable] = []
        self._factors: list[Factor] = []

    def variable(self, card: int, name: str | None = None) -> int:
        self._vars.append(Variable(name or f"x{len(self._vars)}", card=card))
        return len(self._vars) - 1

    def gaussian(self, dim: int = 1, name: str | None = None) -> int:
        self._vars.append(Variable(name or f"h{len(self._vars)}", dim=dim))
        return len(self._vars) - 1

    def factor(self, scope: Sequence[int], values, name: str = "") -> int:
        self._factors.append(Factor(tuple(scope), Table(tuple(scope), values), name))
        return len(self._factors) - 1

    def add(self, scope: Sequence[int], potential, name: str = "") -> int:
        self._factors.append(Factor(tuple(scope), potential, name))
        return len(self._factors) - 1

    def build(self) -> FactorGraph:
        return FactorGraph(self._vars, self._factors)


def build_graph(variables: Sequence[Variable], factors: Sequence[tuple]) -> FactorGraph:
    """Graph from ``(scope, potential[, name])`` tuples; array potentials become tables."""
    fs = []
    for spec in factors:
        scope, pot = tuple(spec[0]), spec[1]
        name = spec[2] if len(spec) > 2 else ""
        if not isinstance(pot, (Table, QuadraticPotential, ImplicitPotential)):
            pot = Table(scope, pot)
        fs.append(Factor(scope, pot, name))
    return FactorGraph(variables, fs)


# ---------------------------------------------------------------- partition


@dataclass(frozen=True)
class BpMfPartition:
    bp: frozenset
    mf: frozenset
    i_bp: frozenset
    i_mf: frozenset
    n_bp: tuple  # per variable, BP neighbors (ascending)
    n_mf: tuple  # per variable, MF neighbors (ascending)

    def mf_only(self) -> list[int]:
        """Variables touched only by MF factors, ascending."""
        return sorted(self.i_mf - self.i_bp)

    def shared(self) -> list[int]:
        return sorted(self.i_mf & self.i_bp)


def partition(graph: FactorGraph, bp_factor_ids) -> BpMfPartition:
    """Split the factors into a BP part (``bp_factor_ids``) and an MF part (the rest)."""
    bp = frozenset(int(a) for a in bp_factor_ids)
    if not bp <= set(range(graph.n_factors)):
        raise ValueError(f"unknown factor ids {sorted(bp - set(range(graph.n_factors)))}")
    mf = frozenset(range(graph.n_factors)) - bp
    i_bp = frozenset(i for a in bp for i in graph.scope(a))
    i_mf = frozenset(i for a in mf for i in graph.scope(a))
    for i in i_bp:
        if graph.variables[i].is_gaussian:
            raise ValueError(f"Gaussian variable {graph.variables[i].name!r} lies in the BP part")
    for a in mf:
        pot = graph.factors[a].potential
        if isinstance(pot, Table) and np.any(pot.values == 0):
            raise ValueError(
                f"factor {graph.factors[a].name or a} has zeros; hard constraints belong in the BP part"
            )
    n_bp = tuple(tuple(a for a in graph.neighbors(i) if a in bp) for i in range(graph.n_vars))
    n_mf = tuple(tuple(a for a in graph.neighbors(i) if a in mf) for i in range(graph.n_vars))
    return BpMfPartition(bp, mf, i_bp, i_mf, n_bp, n_mf)


# ---------------------------------------------------------------- regions


@dataclass(frozen=True)
class Region:
    variables: frozenset
    factors: frozenset


@dataclass(frozen=True)
class RegionSet:
    regions: tuple[tuple[Region, int], ...]

    def counting_sums(self, graph: FactorGraph) -> tuple[np.ndarray, np.ndarray]:
        """Per-variable and per-factor sums of counting numbers over containing regions."""
        cv = np.zeros(graph.n_vars, dtype=int)
        cf = np.zeros(graph.n_factors, dtype=int)
        for r, c in self.regions:
            for i in r.variables:
                cv[i] += c
            for a in r.factors:
                cf[a] += c
        return cv, cf

    def is_valid(self, graph: FactorGraph) -> bool:
        cv, cf = self.counting_sums(graph)
        if not (np.all(cv == 1) and np.all(cf == 1)):
            return False
        return all(set(graph.scope(a)) <= r.variables for r, _ in self.regions for a in r.factors)

    def as_set(self) -> set:
        return set(self.regions)


def region_set_mf(graph: FactorGraph) -> RegionSet:
    """The single region holding every variable and factor."""
    return RegionSet(((Region(frozenset(range(graph.n_vars)), frozenset(range(graph.n_factors))), 1),))


def region_set_bethe(graph: FactorGraph) -> RegionSet:
    """One large region per factor, one small region per variable with ``c = 1 - |N(i)|``."""
    regions = [(Region(frozenset(graph.scope(a)), frozenset({a})), 1) for a in range(graph.n_factors)]
    regions += [(Region(frozenset({i}), frozenset()), 1 - len(graph.neighbors(i)))
                for i in range(graph.n_vars)]
    return RegionSet(tuple(regions))


def region_set_bpmf(graph: FactorGraph, part: BpMfPartition) -> RegionSet:
    """Large regions for BP factors, one MF region, and small regions outside the MF-only set.

    Small regions get ``c = 1 - |N_BP(i)| - [i in I_MF]``. Variables in no
    factor at all keep a small region with ``c = 1`` so the set stays valid.
    """
    regions = [(Region(frozenset(graph.scope(a)), frozenset({a})), 1) for a in sorted(part.bp)]
    if part.mf:
        regions.append((Region(part.i_mf, part.mf), 1))
    for i in range(graph.n_vars):
        if i in part.i_mf and i not in part.i_bp:
            continue
        regions.append((Region(frozenset({i}), frozenset()),
                        1 - len(part.n_bp[i]) - int(i in part.i_mf)))
    return RegionSet(tuple(regions))


# ---------------------------------------------------------------- applicability


@dataclass(frozen=True)
class Applicability:
    applicable: bool
    reason: str | None = None
    witness: Any = None

    def __bool__(self):
        return self.applicable

    def describe(self, graph: FactorGraph) -> str:
        if self.applicable:
            return "convergent schedule applicable"
        if self.reason == "mf_factor_touches_several_bp_variables":
            a = self.witness
            return (f"MF factor {graph.factors[a].name or a} touches several BP variables; "
                    "neither schedule applies")
        names = []
        for kind, k in self.witness:
            names.append(graph.variables[k].name if kind == "v" else (graph.factors[k].name or f"f{k}"))
        return "BP part has a cycle: " + " - ".join(names) + "; loopy variant required"


class _UnionFind:
    def __init__(self):
        self.parent = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, x, y) -> bool:
        rx, ry = self.find(x), self.find(y)
        if rx == ry:
            return False
        self.parent[rx] = ry
        return True


def bp_cycle(graph: FactorGraph, part: BpMfPartition) -> list | None:
    """A cycle of the BP subgraph as alternating ("f", a)/("v", i) nodes, or None."""
    uf = _UnionFind()
    acyclic = True
    for a in sorted(part.bp):
        for i in graph.scope(a):
            if not uf.union(("f", a), ("v", i)):
                acyclic = False
                break
        if not acyclic:
            break
    if acyclic:
        return None
    return _find_cycle(graph, part)


def _find_cycle(graph, part):
    adj = defaultdict(list)
    for a in sorted(part.bp):
        for i in graph.scope(a):
            adj[("f", a)].append(("v", i))
            adj[("v", i)].append(("f", a))
    seen = {}
    for root in sorted(adj):
        if root in seen:
            continue
        seen[root] = None
        stack = [(root, iter(adj[root]))]
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                continue
            if nxt == seen[node]:
                continue
            if nxt in seen:
                # back edge closes a cycle: walk parents from node to nxt
                cyc = [node]
                while cyc[-1] != nxt:
                    cyc.append(seen[cyc[-1]])
                return cyc[::-1]
            seen[nxt] = node
            stack.append((nxt, iter(adj[nxt])))
    return None


def check_algorithm1_applicable(graph: FactorGraph, part: BpMfPartition) -> Applicability:
    """Whether the provably convergent BP/MF schedule applies.

    Needs a cycle-free BP part and every MF factor touching at most one BP
    variable. On failure the witness is the offending MF factor id or a
    cycle of the BP part.
    """
    for a in sorted(part.mf):
        if len(set(graph.scope(a)) & part.i_bp) > 1:
            return Applicability(False, "mf_factor_touches_several_bp_variables", a)
    cyc = bp_cycle(graph, part)
    if cyc is not None:
        return Applicability(False, "bp_part_has_cycle", cyc)
    return Applicability(True)


def mf_condition_holds(graph: FactorGraph, part: BpMfPartition) -> bool:
    return all(len(set(graph.scope(a)) & part.i_bp) <= 1 for a in part.mf)


def configurations(cards: Sequence[int]):
    """All joint states of variables with the given alphabet sizes, row-major."""
    return iproduct(*[range(n) for n in cards])

"""Dense nonnegative tables over finite alphabets.

A :class:`Table` holds potentials, messages and beliefs of the discrete
world. Values are kept in the linear domain at the API edge; the message
kernels work on log-domain arrays where an exact zero is ``-inf``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp, rel_entr, xlogy

# joint states allowed in a single factor table
MAX_TABLE_STATES = 2**16


class ContradictionError(ValueError):
    """Raised when a table, message or belief has no mass left to normalize."""


@dataclass(frozen=True, eq=False)
class Table:
    """Nonnegative values over the ordered ``scope`` of variable ids.

    ``values.shape[k]`` is the alphabet size of ``scope[k]``.
    """

    scope: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        scope = tuple(int(v) for v in self.scope)
        if vals.ndim != len(scope):
            raise ValueError(f"table has {vals.ndim} axes but scope {scope}")
        if len(set(scope)) != len(scope):
            raise ValueError(f"duplicate variable in scope {scope}")
        if vals.size > MAX_TABLE_STATES:
            raise ValueError(
                f"table over {scope} has {vals.size} joint states, limit is {MAX_TABLE_STATES}"
            )
        if np.any(~np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("table entries must be finite and nonnegative")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "scope", scope)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_log(cls, scope, log_values) -> "Table":
        return cls(scope, np.exp(np.asarray(log_values, dtype=float)))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def cards(self) -> dict[int, int]:
        return dict(zip(self.scope, self.values.shape))

    @property
    def log_values(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.values)

    def total(self) -> float:
        return float(self.values.sum())

    def transpose(self, scope: Sequence[int]) -> "Table":
        """Same table with axes reordered to ``scope``."""
        scope = tuple(scope)
        if sorted(scope) != sorted(self.scope):
            raise ValueError(f"cannot reorder {self.scope} to {scope}")
        perm = [self.scope.index(v) for v in scope]
        return Table(scope, np.transpose(self.values, perm))

    def __repr__(self):
        return f"Table(scope={self.scope}, values={self.values.tolist()})"


def normalize(t: Table) -> tuple[Table, float]:
    """Scale ``t`` to unit mass.

    Returns the normalized table and the multiplicative constant that was
    applied, i.e. the reciprocal of the input mass.
    """
    mass = t.total()
    if not mass > 0:
        raise ContradictionError(f"cannot normalize all-zero table over {t.scope}")
    z = 1.0 / mass
    return Table(t.scope, t.values * z), z


def _aligned(t: Table, target: tuple[int, ...]) -> np.ndarray:
    # view of t.values broadcastable against an array with axes `target`
    missing = [v for v in t.scope if v not in target]
    if missing:
        raise ValueError(f"scope {t.scope} is not contained in target scope {target}")
    order = sorted(t.scope, key=target.index)
    vals = t.transpose(order).values
    shape = [1] * len(target)
    for v, n in zip(order, vals.shape):
        shape[target.index(v)] = n
    return vals.reshape(shape)


def product(ts: Sequence[Table], scope: Sequence[int], cards: dict[int, int] | None = None) -> Table:
    """Pointwise product of ``ts`` broadcast over ``scope``.

    Alphabet sizes come from the inputs; ``cards`` supplies sizes for target
    variables no input mentions.
    """
    scope = tuple(scope)
    sizes = dict(cards or {})
    for t in ts:
        for v, n in t.cards.items():
            if sizes.setdefault(v, n) != n:
                raise ValueError(f"variable {v} has inconsistent alphabet sizes")
    try:
        shape = tuple(sizes[v] for v in scope)
    except KeyError as exc:
        raise ValueError(f"no alphabet size known for variable {exc.args[0]}") from None
    out = np.ones(shape)
    for t in ts:
        out = out * _aligned(t, scope)
    return Table(scope, out)


def marginalize(t: Table, keep: int) -> Table:
    """Sum out every variable except ``keep``."""
    if keep not in t.scope:
        raise ValueError(f"variable {keep} not in scope {t.scope}")
    ax = t.scope.index(keep)
    others = tuple(k for k in range(len(t.scope)) if k != ax)
    return Table((keep,), t.values.sum(axis=others))


def entropy(b: Table) -> float:
    """Shannon entropy in nats, with 0 ln 0 = 0."""
    return float(-xlogy(b.values, b.values).sum())


def kl(b: Table, q: Table) -> float:
    """Kullback-Leibler divergence ``D(b || q)`` in nats.

    Uses 0 ln(0/q) = 0 and a ln(a/0) = +inf for a > 0, so the result may be
    ``math.inf``.
    """
    if b.scope != q.scope:
        q = q.transpose(b.scope)
    if b.shape != q.shape:
        raise ValueError("tables have different shapes")
    d = rel_entr(b.values, q.values).sum()
    return math.inf if np.isinf(d) else float(d)


# log-domain helpers used by the message kernels


def log_normalize(log_v: np.ndarray) -> tuple[np.ndarray, float]:
    """Shift ``log_v`` so that it sums to one in the linear domain.

    Returns the normalized log array and the log of the input mass.
    """
    log_v = np.asarray(log_v, dtype=float)
    # hot path on tiny arrays: plain numpy beats scipy's logsumexp dispatch by ~10x
    m = float(log_v.max()) if log_v.size else -math.inf
    if math.isnan(m) or m == math.inf:
        raise ValueError("log table contains nan or +inf")
    if m == -math.inf:
        raise ContradictionError("all-zero message or belief")
    lz = m + math.log(float(np.exp(log_v - m).sum()))
    return log_v - lz, lz


def log_contract(log_f: np.ndarray, incoming: Sequence[np.ndarray | None], keep: int) -> np.ndarray:
    """``log sum_{x \\ x_keep} f(x) prod_j n_j(x_j)`` with ``incoming[keep]`` skipped.

    ``incoming[j]`` is a log vector for axis ``j`` or ``None`` for a unit
    message. Max-subtraction keeps every intermediate finite.
    """
    acc = np.array(log_f, dtype=float)
    for j, n in enumerate(incoming):
        if j == keep or n is None:
            continue
        shape = [1] * acc.ndim
        shape[j] = -1
        acc = acc + np.reshape(n, shape)
    axes = tuple(k for k in range(acc.ndim) if k != keep)
    if not axes:
        return acc
    return logsumexp(acc, axis=axes)


def to_linear(log_v: np.ndarray) -> np.ndarray:
    return np.exp(np.asarray(log_v, dtype=float))


def to_log(v) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(v, dtype=float))

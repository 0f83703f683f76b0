"""Snapshot of beliefs and messages during BP/MF iterations."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gaussian import ComplexGaussian, GaussianInfo


@dataclass
class BeliefState:
    """Beliefs ``b_i``, ``b_a`` and the messages they were computed from.

    Discrete beliefs are linear-domain pmfs (factor beliefs keep the factor
    table's axis order); discrete messages are log-domain arrays with
    ``-inf`` for exact zeros. Gaussian variables carry a
    :class:`ComplexGaussian` belief, and MF messages into them are
    :class:`GaussianInfo` terms.

    ``n`` is keyed ``(i, a)`` (variable to factor), ``m`` is keyed ``(a, i)``.
    """

    var_beliefs: dict = field(default_factory=dict)
    factor_beliefs: dict = field(default_factory=dict)
    n: dict = field(default_factory=dict)
    m: dict = field(default_factory=dict)
    log_z_a: dict = field(default_factory=dict)
    log_z_i: dict = field(default_factory=dict)
    em_points: dict = field(default_factory=dict)

    def copy(self) -> "BeliefState":
        return BeliefState(dict(self.var_beliefs), dict(self.factor_beliefs), dict(self.n),
                           dict(self.m), dict(self.log_z_a), dict(self.log_z_i),
                           dict(self.em_points))

    def marginal(self, i: int):
        return self.var_beliefs[i]


def is_gaussian_value(v) -> bool:
    return isinstance(v, (ComplexGaussian, GaussianInfo))


def point_mass(card: int, k: int) -> np.ndarray:
    p = np.zeros(card)
    p[k] = 1.0
    return p

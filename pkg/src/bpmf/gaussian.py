"""Proper complex Gaussian densities in information (precision) form.

Densities follow ``CN(x; mu, inv(Lambda)) = det(Lambda) / pi**d *
exp(-(x - mu)^H Lambda (x - mu))``; there is no pseudo-covariance.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

HERMITIAN_TOL = 1e-12


class SingularPrecisionError(ValueError):
    pass


def _as_matrix(a, d=None) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim == 1:
        a = np.diag(a)
    if d is not None and a.shape != (d, d):
        raise ValueError(f"expected a {d}x{d} matrix, got {a.shape}")
    return a


def _cholesky(prec: np.ndarray):
    try:
        return cho_factor(prec, lower=True, check_finite=True)
    except LinAlgError as exc:
        raise SingularPrecisionError("precision matrix is not positive definite") from exc


@dataclass(frozen=True, eq=False)
class GaussianInfo:
    """Quadratic log-density term ``-h^H P h + 2 Re(eta^H h)``, possibly improper.

    Used for MF messages into a Gaussian variable; ``precision`` only has to
    be positive semidefinite.
    """

    precision: np.ndarray
    info: np.ndarray

    def __post_init__(self):
        info = np.atleast_1d(np.asarray(self.info, dtype=complex))
        prec = _as_matrix(self.precision, info.size)
        object.__setattr__(self, "precision", prec)
        object.__setattr__(self, "info", info)

    @classmethod
    def flat(cls, dim: int) -> "GaussianInfo":
        return cls(np.zeros((dim, dim), complex), np.zeros(dim, complex))

    @property
    def dim(self) -> int:
        return self.info.size

    def __add__(self, other: "GaussianInfo") -> "GaussianInfo":
        return GaussianInfo(self.precision + other.precision, self.info + other.info)


@dataclass(frozen=True, eq=False)
class ComplexGaussian:
    """``CN(mean, inv(precision))`` with Hermitian positive definite precision."""

    mean: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=complex))
        prec = _as_matrix(self.precision, mean.size)
        scale = max(1.0, float(np.abs(prec).max()))
        if np.abs(prec - prec.conj().T).max() > HERMITIAN_TOL * scale:
            raise ValueError("precision matrix is not Hermitian")
        prec = 0.5 * (prec + prec.conj().T)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", prec)
        object.__setattr__(self, "_chol", _cholesky(prec))

    @classmethod
    def from_info(cls, info: GaussianInfo) -> "ComplexGaussian":
        c = _cholesky(0.5 * (info.precision + info.precision.conj().T))
        return cls(cho_solve(c, info.info), info.precision)

    @classmethod
    def from_covariance(cls, mean, cov) -> "ComplexGaussian":
        cov = _as_matrix(cov)
        c = _cholesky(0.5 * (cov + cov.conj().T))
        prec = cho_solve(c, np.eye(cov.shape[0], dtype=complex))
        return cls(mean, 0.5 * (prec + prec.conj().T))

    @property
    def dim(self) -> int:
        return self.mean.size

    def to_info(self) -> GaussianInfo:
        return GaussianInfo(self.precision, self.precision @ self.mean)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """``inv(precision) @ b`` through the Cholesky factor."""
        return cho_solve(self._chol, b)

    def covariance(self) -> np.ndarray:
        return self.solve(np.eye(self.dim, dtype=complex))

    def variances(self) -> np.ndarray:
        """Marginal variances ``[inv(precision)]_{ii}`` of every coordinate."""
        L = np.tril(self._chol[0])
        # diag(inv(L L^H)) = column norms of inv(L)
        Linv = np.linalg.solve(L, np.eye(self.dim, dtype=complex))
        return np.sum(np.abs(Linv) ** 2, axis=0).real

    def logdet_precision(self) -> float:
        L = np.tril(self._chol[0])
        return float(2.0 * np.sum(np.log(np.abs(np.diag(L)))))

    def entropy(self) -> float:
        """Differential entropy ``d ln(pi e) - ln det(precision)``."""
        return self.dim * (np.log(np.pi) + 1.0) - self.logdet_precision()

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        """Log density at points ``x`` of shape (..., d)."""
        x = np.asarray(x, dtype=complex)
        dx = x - self.mean
        quad = np.einsum("...i,ij,...j->...", dx.conj(), self.precision, dx).real
        return self.logdet_precision() - self.dim * np.log(np.pi) - quad


@dataclass(frozen=True, eq=False)
class QuadraticEvidence:
    """Per-coordinate diagonal evidence: precision increments and precision-weighted means."""

    precision: np.ndarray
    weighted_mean: np.ndarray

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.precision, dtype=float))
        eta = np.atleast_1d(np.asarray(self.weighted_mean, dtype=complex))
        if lam.shape != eta.shape:
            raise ValueError("precision and weighted_mean must have the same length")
        if np.any(lam < 0):
            raise ValueError("precision increments must be nonnegative")
        object.__setattr__(self, "precision", lam)
        object.__setattr__(self, "weighted_mean", eta)

    @classmethod
    def zeros(cls, dim: int) -> "QuadraticEvidence":
        return cls(np.zeros(dim), np.zeros(dim, complex))

    def __add__(self, other: "QuadraticEvidence") -> "QuadraticEvidence":
        return QuadraticEvidence(self.precision + other.precision,
                                 self.weighted_mean + other.weighted_mean)


def gaussian_product(factors: Iterable[ComplexGaussian | GaussianInfo]) -> ComplexGaussian:
    """Normalized product of Gaussian densities over the same variable.

    Precisions add and the mean is the precision-weighted combination of the
    individual means; the proportionality constant is dropped. Improper
    :class:`GaussianInfo` terms (e.g. a flat factor) are accepted as long as
    the summed precision is positive definite.
    """
    total = None
    for f in factors:
        term = f.to_info() if isinstance(f, ComplexGaussian) else f
        if total is not None and term.dim != total.dim:
            raise ValueError("all factors must have the same dimension")
        total = term if total is None else total + term
    if total is None:
        raise ValueError("empty product")
    return ComplexGaussian.from_info(total)


def posterior_update(prior: ComplexGaussian, ev: QuadraticEvidence) -> ComplexGaussian:
    """Channel posterior from a Gaussian prior and diagonal evidence.

    ``Lambda = Lambda_p + diag(ev.precision)`` and
    ``mu = inv(Lambda) (Lambda_p mu_p + ev.weighted_mean)``.
    """
    if ev.precision.size != prior.dim:
        raise ValueError("evidence dimension does not match prior")
    prec = prior.precision + np.diag(ev.precision)
    rhs = prior.precision @ prior.mean + ev.weighted_mean
    c = _cholesky(prec)
    return ComplexGaussian(cho_solve(c, rhs), prec)


def coordinate_moments(g: ComplexGaussian, i: int) -> tuple[complex, float]:
    """Marginal mean and variance of coordinate ``i``."""
    e = np.zeros(g.dim, dtype=complex)
    e[i] = 1.0
    return complex(g.mean[i]), float(g.solve(e)[i].real)


def symbol_statistics(belief, points) -> tuple:
    """Mean and residual variance of a discrete belief over constellation ``points``.

    ``belief`` may be a single pmf or a stack of pmfs (one per row).
    """
    belief = np.asarray(belief, dtype=float)
    points = np.asarray(points, dtype=complex)
    mu = belief @ points
    var = np.sum(belief * np.abs(points - np.asarray(mu)[..., None]) ** 2, axis=-1)
    if belief.ndim == 1:
        return complex(mu), float(var)
    return mu, var


def evidence_from_symbols(y, sym_mean, sym_var, gamma) -> QuadraticEvidence:
    """Channel evidence of observations ``y = h x + z`` given symbol moments.

    ``lambda = gamma (var + |mean|^2)`` and ``lambda mu = gamma y conj(mean)``;
    a known pilot is the zero-variance case.
    """
    y = np.asarray(y, dtype=complex)
    sym_mean = np.asarray(sym_mean, dtype=complex)
    lam = gamma * (np.asarray(sym_var, dtype=float) + np.abs(sym_mean) ** 2)
    return QuadraticEvidence(lam, gamma * y * sym_mean.conj())


def symbol_message_params(y, h_mean, h_var, gamma):
    """Mean and variance of the Gaussian symbol message from channel moments.

    The message over ``x`` is ``CN(x; y conj(mu_h) / e, 1 / (gamma e))`` with
    ``e = var_h + |mu_h|^2``.
    """
    y = np.asarray(y, dtype=complex)
    h_mean = np.asarray(h_mean, dtype=complex)
    e = np.asarray(h_var, dtype=float) + np.abs(h_mean) ** 2
    return y * h_mean.conj() / e, 1.0 / (gamma * e)

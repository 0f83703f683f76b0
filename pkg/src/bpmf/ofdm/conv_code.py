"""Terminated feedforward convolutional codes with log-domain BCJR decoding."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, xlogy


@dataclass(frozen=True, eq=False)
class ConvCode:
    """Rate ``1/len(generators)`` code with octal generators, e.g. ``(0o133, 0o171)``.

    The encoder starts in the zero state and is flushed with ``memory`` zero
    tail bits, so ``K`` information bits give ``n_out * (K + memory)`` coded bits.
    """

    generators: tuple
    constraint_length: int = field(default=0)

    def __post_init__(self):
        gens = tuple(int(g) for g in self.generators)
        if not gens:
            raise ValueError("need at least one generator")
        K = self.constraint_length or max(g.bit_length() for g in gens)
        if any(g.bit_length() > K or g <= 0 for g in gens):
            raise ValueError(f"generators {[oct(g) for g in gens]} do not fit constraint length {K}")
        object.__setattr__(self, "generators", gens)
        object.__setattr__(self, "constraint_length", K)
        m = K - 1
        S = 1 << m
        # tap d multiplies the input delayed by d; generator MSB is the current input
        taps = np.array([[(g >> (m - d)) & 1 for d in range(K)] for g in gens])
        s = np.arange(S)[:, None]
        u = np.arange(2)[None, :]
        reg = (s << 1) | u  # bit d = input delayed by d
        delayed = (reg[..., None] >> np.arange(K)) & 1  # (S, 2, K)
        out = np.einsum("suk,jk->suj", delayed, taps) % 2
        object.__setattr__(self, "_next", (reg & (S - 1)).astype(np.int64))
        object.__setattr__(self, "_out", out.astype(np.int64))

    @property
    def memory(self) -> int:
        return self.constraint_length - 1

    @property
    def n_out(self) -> int:
        return len(self.generators)

    @property
    def n_states(self) -> int:
        return 1 << self.memory

    def coded_length(self, k: int) -> int:
        return self.n_out * (k + self.memory)

    def encode(self, info: np.ndarray) -> np.ndarray:
        """Coded bits, ``n_out`` per trellis step, tail included."""
        u = np.concatenate([np.asarray(info, dtype=np.int64), np.zeros(self.memory, np.int64)])
        out = np.empty((u.size, self.n_out), np.int64)
        s = 0
        for t, b in enumerate(u):
            out[t] = self._out[s, b]
            s = self._next[s, b]
        return out.ravel()

    def bcjr(self, coded_log: np.ndarray, info_log: np.ndarray | None = None) -> "BcjrResult":
        """Sum-product over the trellis.

        ``coded_log`` (T*n_out, 2) holds incoming log messages for every coded
        bit, ``info_log`` (K, 2) those for the information bits (uniform when
        omitted). Tail inputs are fixed to zero.
        """
        n, S = self.n_out, self.n_states
        cl = np.asarray(coded_log, dtype=float).reshape(-1, n, 2)
        T = cl.shape[0]
        K = T - self.memory
        if K < 0:
            raise ValueError("coded sequence shorter than the tail")
        ul = np.zeros((T, 2))
        if info_log is not None:
            ul[:K] = np.asarray(info_log, dtype=float).reshape(K, 2)
        ul[K:, 1] = -np.inf
        # per-bit contributions, (T, S, 2, n)
        bit_terms = np.stack([cl[:, j, :][:, self._out[:, :, j]] for j in range(n)], axis=-1)
        coded_sum = bit_terms.sum(axis=-1)
        gamma = coded_sum + ul[:, None, :]
        nxt = self._next
        alpha = np.full((T + 1, S), -np.inf)
        alpha[0, 0] = 0.0
        # predecessors of s': (s' >> 1) and (s' >> 1) | S/2, both with input s' & 1
        sp = np.arange(S)
        u_in = sp & 1
        p0, p1 = sp >> 1, (sp >> 1) | (S >> 1)
        for t in range(T):
            g = gamma[t]
            alpha[t + 1] = np.logaddexp(alpha[t, p0] + g[p0, u_in], alpha[t, p1] + g[p1, u_in])
            alpha[t + 1] -= np.max(alpha[t + 1])
        beta = np.full((T + 1, S), -np.inf)
        beta[T, 0] = 0.0
        for t in range(T - 1, -1, -1):
            beta[t] = np.logaddexp(gamma[t, :, 0] + beta[t + 1, nxt[:, 0]],
                                   gamma[t, :, 1] + beta[t + 1, nxt[:, 1]])
            beta[t] -= np.max(beta[t])
        # branch log weights (T, S, 2), unnormalized
        branch = alpha[:-1, :, None] + gamma + beta[1:][:, nxt]
        with np.errstate(invalid="ignore"):
            log_z = logsumexp(branch.reshape(T, -1), axis=1)
        branch_post = branch - log_z[:, None, None]
        info_app = logsumexp(branch_post[:K], axis=1)
        coded_ext = np.empty((T, n, 2))
        for j in range(n):
            excl = branch_post - bit_terms[..., j]
            mask = self._out[:, :, j]
            for b in (0, 1):
                coded_ext[:, j, b] = logsumexp(np.where(mask == b, excl, -np.inf).reshape(T, -1), axis=1)
        coded_ext -= logsumexp(coded_ext, axis=2, keepdims=True)
        info_ext = info_app - ul[:K]
        info_ext -= logsumexp(info_ext, axis=1, keepdims=True)
        return BcjrResult(info_app, info_ext, coded_ext.reshape(T * n, 2), branch_post, alpha, beta)


@dataclass(frozen=True, eq=False)
class BcjrResult:
    info_app: np.ndarray      # (K, 2) normalized log posteriors of the info bits
    info_ext: np.ndarray      # (K, 2) extrinsic messages toward the info-bit variables
    coded_ext: np.ndarray     # (T*n_out, 2) extrinsic messages toward the coded bits
    branch_post: np.ndarray   # (T, S, 2) log posteriors of trellis branches
    alpha: np.ndarray
    beta: np.ndarray

    def decisions(self) -> np.ndarray:
        """Bitwise MAP decisions, ties to 0."""
        return (self.info_app[:, 1] > self.info_app[:, 0]).astype(np.int64)

    def path_entropy(self) -> float:
        """Entropy of the trellis path posterior (a Markov chain over states)."""
        p = np.exp(self.branch_post)
        h_branch = -xlogy(p, p).sum()
        states = p.sum(axis=2)  # posterior of the state at the start of step t
        h_state = -xlogy(states[1:], states[1:]).sum()
        return float(h_branch - h_state)

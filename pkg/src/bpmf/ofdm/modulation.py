"""Gray-mapped constellations and the symbol/bit message exchange of a modulation factor.

Bit-level messages are log-probability arrays of shape ``(..., 2)``; symbol
messages are log vectors over the ``2**L`` constellation points.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

# per-axis Gray labels for 4-PAM: 00 -> -3, 01 -> -1, 11 -> 1, 10 -> 3
_PAM4 = {(0, 0): -3.0, (0, 1): -1.0, (1, 1): 1.0, (1, 0): 3.0}


@dataclass(frozen=True, eq=False)
class Constellation:
    """``points[s]`` carries the label ``bits[s]`` (MSB first); average energy is one."""

    name: str
    points: np.ndarray
    bits: np.ndarray

    @property
    def bits_per_symbol(self) -> int:
        return self.bits.shape[1]

    @property
    def size(self) -> int:
        return self.points.size

    def map(self, bits: np.ndarray) -> np.ndarray:
        """Symbols for a bit array whose length is a multiple of ``L``."""
        L = self.bits_per_symbol
        b = np.asarray(bits, dtype=np.int64).reshape(-1, L)
        idx = b @ (1 << np.arange(L - 1, -1, -1))
        return self.points[idx]

    def indices(self, bits: np.ndarray) -> np.ndarray:
        L = self.bits_per_symbol
        b = np.asarray(bits, dtype=np.int64).reshape(-1, L)
        return b @ (1 << np.arange(L - 1, -1, -1))


def qpsk() -> Constellation:
    bits = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
    pts = ((1 - 2 * bits[:, 0]) + 1j * (1 - 2 * bits[:, 1])) / np.sqrt(2.0)
    return Constellation("qpsk", pts, bits)


def qam16() -> Constellation:
    bits = np.array([[(s >> k) & 1 for k in (3, 2, 1, 0)] for s in range(16)])
    re = np.array([_PAM4[(b[0], b[1])] for b in bits])
    im = np.array([_PAM4[(b[2], b[3])] for b in bits])
    return Constellation("16qam", (re + 1j * im) / np.sqrt(10.0), bits)


CONSTELLATIONS = {"qpsk": qpsk, "16qam": qam16}


def constellation(name: str) -> Constellation:
    try:
        return CONSTELLATIONS[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown constellation {name!r}; choose from {sorted(CONSTELLATIONS)}") from None


def bits_to_symbol_log(const: Constellation, bit_log: np.ndarray) -> np.ndarray:
    """``log prod_l n_l(bit_l(s))`` for bit messages of shape ``(N, L, 2)``; result ``(N, 2**L)``."""
    L = const.bits_per_symbol
    out = np.zeros((bit_log.shape[0], const.size))
    for l in range(L):
        out = out + bit_log[:, l, :][:, const.bits[:, l]]
    return out


def demap_extrinsic(const: Constellation, sym_log: np.ndarray, bit_log: np.ndarray) -> np.ndarray:
    """Messages from the modulation factors to their bits.

    ``sym_log`` (N, 2**L) is the message arriving from each symbol variable
    and ``bit_log`` (N, L, 2) the messages arriving from the bits. The
    returned (N, L, 2) array excludes each bit's own incoming message and is
    normalized per bit.
    """
    N, L = sym_log.shape[0], const.bits_per_symbol
    out = np.empty((N, L, 2))
    for l in range(L):
        acc = sym_log.copy()
        for k in range(L):
            if k != l:
                acc = acc + bit_log[:, k, :][:, const.bits[:, k]]
        for b in (0, 1):
            out[:, l, b] = logsumexp(acc[:, const.bits[:, l] == b], axis=1)
    return out - logsumexp(out, axis=2, keepdims=True)

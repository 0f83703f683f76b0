"""OFDM link configuration: carrier layout, code, interleaver, channel prior and SNR grid."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from ..gaussian import ComplexGaussian
from .conv_code import ConvCode
from .modulation import Constellation, constellation, qpsk


def exponential_pdp_covariance(n_carriers: int, spacing_hz: float, rms_delay_s: float,
                               max_delay_s: float) -> np.ndarray:
    """Frequency-domain channel covariance of a truncated exponential power-delay profile.

    ``R[k, l] = E[h_k conj(h_l)]`` with unit average power. Closed form of
    ``int_0^tmax p(t) exp(-2j pi (k - l) df t) dt`` for ``p(t) ~ exp(-t / t_rms)``.
    """
    d = np.arange(n_carriers)[:, None] - np.arange(n_carriers)[None, :]
    a = 1.0 / rms_delay_s + 2j * np.pi * d * spacing_hz
    norm = rms_delay_s * (1.0 - np.exp(-max_delay_s / rms_delay_s))
    R = (1.0 - np.exp(-a * max_delay_s)) / (a * norm)
    return 0.5 * (R + R.conj().T)


def even_pilots(n_carriers: int, n_pilots: int) -> np.ndarray:
    """``n_pilots`` evenly spaced carrier indices including both band edges."""
    if not 1 <= n_pilots <= n_carriers:
        raise ValueError("need 1 <= n_pilots <= n_carriers")
    if n_pilots == 1:
        return np.array([0])
    return np.unique(np.round(np.linspace(0, n_carriers - 1, n_pilots)).astype(int))


@dataclass(frozen=True)
class OfdmScenario:
    """Everything needed to simulate and receive one OFDM symbol.

    Information length ``K`` is the largest count whose terminated codeword
    fits into the ``L * N`` data bits; leftover positions carry known zeros.
    """

    n_carriers: int = 64
    n_pilots: int = 12
    modulation: str = "qpsk"
    generators: tuple = (0o133, 0o171)
    spacing_hz: float = 15e3
    rms_delay_s: float = 1.0e-6
    max_delay_s: float = 5.0e-6
    ridge: float = 1e-4
    ebn0_db: tuple = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0)
    bits_per_point: int = 10_000
    seed: int = 2024
    n_inner: int = 1
    max_outer: int = 20
    tol: float = 1e-6
    name: str = "desk"
    pilots: tuple | None = field(default=None)

    def __post_init__(self):
        if self.n_pilots >= self.n_carriers:
            raise ValueError("need at least one data carrier")
        if self.info_bits < 1:
            raise ValueError("data carriers cannot hold a terminated codeword")
        if self.n_inner < 1 or self.max_outer < 1:
            raise ValueError("iteration counts must be >= 1")
        if not (self.rms_delay_s > 0 and self.max_delay_s > 0):
            raise ValueError("delays must be positive")
        p = self.pilot_idx
        if len(set(p.tolist())) != self.n_pilots or p.min() < 0 or p.max() >= self.n_carriers:
            raise ValueError("pilot indices must be distinct carriers")

    # ---------------------------------------------------------- layout

    @cached_property
    def pilot_idx(self) -> np.ndarray:
        if self.pilots is not None:
            return np.sort(np.asarray(self.pilots, dtype=int))
        return even_pilots(self.n_carriers, self.n_pilots)

    @cached_property
    def data_idx(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_carriers), self.pilot_idx)

    @property
    def n_data(self) -> int:
        return self.n_carriers - self.n_pilots

    @cached_property
    def const(self) -> Constellation:
        return constellation(self.modulation)

    @cached_property
    def code(self) -> ConvCode:
        return ConvCode(tuple(self.generators))

    @property
    def data_bits(self) -> int:
        return self.const.bits_per_symbol * self.n_data

    @property
    def info_bits(self) -> int:
        c = ConvCode(tuple(self.generators))
        return self.data_bits // c.n_out - c.memory

    @property
    def coded_bits(self) -> int:
        return self.code.coded_length(self.info_bits)

    @property
    def rate(self) -> float:
        """Information bits per transmitted data bit (tail and padding included)."""
        return self.info_bits / self.data_bits

    @cached_property
    def interleaver(self) -> np.ndarray:
        """Permutation: position ``k`` of the transmitted bit stream holds stream bit ``perm[k]``."""
        return np.random.default_rng([self.seed, 1]).permutation(self.data_bits)

    @cached_property
    def pilot_symbols(self) -> np.ndarray:
        idx = np.random.default_rng([self.seed, 2]).integers(0, 4, self.n_pilots)
        return qpsk().points[idx]

    # ---------------------------------------------------------- channel

    @cached_property
    def channel_covariance(self) -> np.ndarray:
        R = exponential_pdp_covariance(self.n_carriers, self.spacing_hz, self.rms_delay_s, self.max_delay_s)
        return R + self.ridge * np.eye(self.n_carriers)

    @cached_property
    def channel_prior(self) -> ComplexGaussian:
        return ComplexGaussian.from_covariance(np.zeros(self.n_carriers, complex), self.channel_covariance)

    @cached_property
    def channel_factor(self) -> np.ndarray:
        return np.linalg.cholesky(self.channel_covariance)

    def gamma(self, ebn0_db: float) -> float:
        """Noise precision for unit-energy data symbols: ``Es/N0 = Eb/N0 * K / N``."""
        return float(10.0 ** (ebn0_db / 10.0) * self.info_bits / self.n_data)

    @property
    def trials_per_point(self) -> int:
        return -(-self.bits_per_point // self.info_bits)

    @property
    def coherence_bandwidth_hz(self) -> float:
        return 1.0 / self.max_delay_s

    @property
    def pilot_spacing_hz(self) -> float:
        return float(np.mean(np.diff(self.pilot_idx))) * self.spacing_hz if self.n_pilots > 1 else np.inf

    # ---------------------------------------------------------- IO

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["generators"] = [oct(g) for g in self.generators]
        d["ebn0_db"] = list(self.ebn0_db)
        d["pilots"] = None if self.pilots is None else list(self.pilots)
        return d

    def replace(self, **kw) -> "OfdmScenario":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return OfdmScenario(**d)


def _parse_generator(g) -> int:
    if isinstance(g, int):
        return g
    s = str(g).strip().lower()
    return int(s[2:] if s.startswith("0o") else s, 8)


def scenario_from_dict(d: dict) -> OfdmScenario:
    known = set(OfdmScenario.__dataclass_fields__)
    unknown = set(d) - known - {"comment"}
    if unknown:
        raise ValueError(f"unknown scenario fields: {sorted(unknown)}")
    kw = {k: v for k, v in d.items() if k in known}
    if "generators" in kw:
        kw["generators"] = tuple(_parse_generator(g) for g in kw["generators"])
    if "ebn0_db" in kw:
        kw["ebn0_db"] = tuple(float(x) for x in kw["ebn0_db"])
    if kw.get("pilots") is not None:
        kw["pilots"] = tuple(int(p) for p in kw["pilots"])
    return OfdmScenario(**kw)


def load_scenario(path) -> OfdmScenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def bundled_scenario(name: str) -> OfdmScenario:
    """Scenario shipped with the package (``desk``, ``table1_m25``, ``table1_m13``)."""
    return load_scenario(DATA_DIR / f"{name}.json")

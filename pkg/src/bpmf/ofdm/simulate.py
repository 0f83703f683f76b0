"""Monte-Carlo BER sweeps over an SNR grid.

Every trial draws its information bits, channel and unit noise from a
generator seeded by ``(master_seed, trial)`` and reuses them at every SNR
point, so curves are compared on common random numbers. Results are merged
in trial order, so the output does not depend on the number of workers.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .receivers import RECEIVERS, draw_channel, random_info, run_receiver, transmit
from .scenario import OfdmScenario

BER_COLUMNS = ("snr_db", "receiver", "trials", "bit_errors", "ber", "mean_outer_iters")


@dataclass(frozen=True)
class BerPoint:
    snr_db: float
    receiver: str
    trials: int
    bit_errors: int
    bits: int
    outer_iters: int
    contradictions: int = 0

    @property
    def ber(self) -> float:
        return self.bit_errors / self.bits

    @property
    def mean_outer_iters(self) -> float:
        return self.outer_iters / self.trials


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(trial)]))


def run_trial(sc: OfdmScenario, master_seed: int, trial: int, receivers=RECEIVERS) -> list:
    """Errors and iteration counts of one trial, as ``(snr index, receiver, errors, iters, contradiction)``."""
    rng = trial_rng(master_seed, trial)
    info = random_info(sc, rng)
    ch = draw_channel(sc, rng)
    x = transmit(sc, info).symbols
    out = []
    for k, snr in enumerate(sc.ebn0_db):
        gamma = sc.gamma(snr)
        y = ch.observe(x, gamma)
        for name in receivers:
            rec = run_receiver(name, sc, y, gamma, info, ch.h)
            out.append((k, name, rec.bit_errors, rec.outer_iters, rec.contradiction))
    return out


def _trial_job(args):
    return run_trial(*args)


def ber_sweep(sc: OfdmScenario, receivers=RECEIVERS, trials: int | None = None,
              master_seed: int | None = None, jobs: int = 1) -> list[BerPoint]:
    """BER of each receiver at each SNR point; ``trials`` defaults to the scenario's bit budget."""
    receivers = tuple(receivers)
    for r in receivers:
        if r not in RECEIVERS:
            raise ValueError(f"unknown receiver {r!r}; choose from {RECEIVERS}")
    trials = sc.trials_per_point if trials is None else int(trials)
    seed = sc.seed if master_seed is None else int(master_seed)
    jobs_args = [(sc, seed, t, receivers) for t in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_trial_job, jobs_args, chunksize=max(1, trials // (4 * jobs))))
    else:
        results = [_trial_job(a) for a in jobs_args]
    acc = {}
    for res in results:
        for k, name, errs, iters, contra in res:
            e, it, c = acc.get((k, name), (0, 0, 0))
            acc[(k, name)] = (e + errs, it + iters, c + int(contra))
    points = []
    for k, snr in enumerate(sc.ebn0_db):
        for name in receivers:
            e, it, c = acc[(k, name)]
            points.append(BerPoint(float(snr), name, trials, e, trials * sc.info_bits, it, c))
    return points


def ber_csv(points: list[BerPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BER_COLUMNS)
    for p in points:
        w.writerow([f"{p.snr_db:.17g}", p.receiver, p.trials, p.bit_errors, f"{p.ber:.17g}",
                    f"{p.mean_outer_iters:.17g}"])
    return buf.getvalue()


def ber_table(points: list[BerPoint]) -> dict:
    """``{receiver: array of BER over the SNR grid}``."""
    out = {}
    for p in points:
        out.setdefault(p.receiver, []).append(p.ber)
    return {k: np.array(v) for k, v in out.items()}

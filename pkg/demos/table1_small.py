"""A few frames of the 300-carrier, 16-QAM scenarios with dense and sparse pilots.

    python3 demos/table1_small.py [trials]

This only exercises the large configuration end to end; the number of
frames is far too small for a meaningful BER curve.
"""
import sys
import time

from bpmf.ofdm.scenario import bundled_scenario
from bpmf.ofdm.simulate import ber_sweep, ber_table

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 2
for name in ("table1_m25", "table1_m13"):
    sc = bundled_scenario(name).replace(ebn0_db=(4.0, 8.0))
    t0 = time.perf_counter()
    table = ber_table(ber_sweep(sc, trials=trials))
    print(f"{name}: {sc.n_pilots} pilots, {sc.info_bits} info bits per frame ({time.perf_counter() - t0:.1f} s)")
    for r, bers in table.items():
        print(f"   {r:12s} " + "  ".join(f"{snr:.0f} dB: {b:.3g}" for snr, b in zip(sc.ebn0_db, bers)))

"""Small BER sweep of the three OFDM receivers on the desk scenario.

    python3 demos/ofdm_ber.py [trials]

Each trial carries 46 information bits; the default of 40 trials per
point runs in well under a minute. The acceptance run uses the full
bit budget (``bpmf ofdm-ber --scenario desk``).
"""
import sys

from bpmf.ofdm.scenario import bundled_scenario
from bpmf.ofdm.simulate import ber_sweep, ber_table

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 40
sc = bundled_scenario("desk")
points = ber_sweep(sc, trials=trials)
table = ber_table(points)
print(f"{sc.n_carriers} carriers, {sc.n_pilots} pilots, {sc.modulation}, {trials * sc.info_bits} bits per point")
print("Eb/N0 dB  " + "".join(f"{r:>12}" for r in table))
for k, snr in enumerate(sc.ebn0_db):
    print(f"{snr:8.1f}  " + "".join(f"{table[r][k]:12.4g}" for r in table))

"""Decoding thresholds of uncoupled and SC LDPC codes with QPSK versus pilot count."""

import dataclasses

from scbicm.density.outer import DeConfig
from scbicm.density.threshold import threshold_search

ldpc = DeConfig(L=1, coupled_code=False, J=4)
sc = DeConfig(L=64, J=4)

print(f"{'T_tr':>6} {'LDPC':>8} {'SC LDPC':>8}")
for T_tr, lo_l, hi_l, lo_s, hi_s in [(4, 6.5, 8.5, 3.0, 4.0), (6, 5.5, 6.5, 3.0, 3.8)]:
    a = threshold_search(dataclasses.replace(ldpc, T_tr=T_tr), lo_l, hi_l, tol_db=0.02).threshold_db
    b = threshold_search(dataclasses.replace(sc, T_tr=T_tr), lo_s, hi_s, tol_db=0.02).threshold_db
    print(f"{T_tr:>6} {a:8.2f} {b:8.2f}")

"""Per-stage BER profile of sliding-window density evolution.

Prints one line per few stages: a character per section, '.' once the
section's BER is below 1e-6, otherwise the leading digit of -log10(BER).
"""

import numpy as np

from scbicm.density.outer import DeConfig, outer_de

cfg = DeConfig(snr_db=3.5, L=40, W=1, T_tr=6, W_SW=11, J=4, epsilon=1e-6)
res = outer_de(cfg, record="stage")
last = {}
for row in res.trace:
    if 0 <= row["section"] < cfg.L:
        last.setdefault(row["stage"], {})[row["section"]] = row["ber"]
for stage in sorted(last)[::3]:
    line = []
    for l in range(cfg.L):
        ber = last[stage].get(l)
        if ber is None:
            line.append(" ")
        elif ber < 1e-6:
            line.append(".")
        else:
            line.append(str(min(9, int(-np.log10(max(ber, 1e-9))))))
    print(f"stage {stage:3d} |{''.join(line)}|")
print("success:", res.success)

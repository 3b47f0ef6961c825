"""EXIT curves of the QPSK demodulator with 6 pilots and the (3,6) decoder."""

from scbicm.density.exit import exit_curves
from scbicm.density.outer import DeConfig

for snr in (3.37, 5.98, 7.0):
    chart = exit_curves(DeConfig(snr_db=snr, L=1, coupled_code=False, T_tr=6))
    pts = ", ".join(f"({x:.3f}, {y:.3f})" for x, y in chart.intersections)
    print(f"{snr:5.2f} dB: {len(chart.intersections)} intersection(s) {pts}")
    chart.to_csv(f"exit_{snr:g}dB.csv")

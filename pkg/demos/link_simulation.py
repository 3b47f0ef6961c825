"""Small finite-length run of the windowed receiver for an SC LDPC code with coupled BICM."""

from scbicm.channel import substream
from scbicm.coupled_interleaver import CouplingParams, build
from scbicm.lmmse_receiver import CeMudd, ScheduleConfig, run_ce_mudd
from scbicm.modem import qam
from scbicm.sc_ldpc import make_code

L, M = 16, 768
code = make_code(3, 6, L, M, 1)
itl = build(CouplingParams(M, L, 1, 2), substream(1, 2**32, 1))
receiver = CeMudd(code, itl, qam(2), 6, 6, 64, 0, ScheduleConfig(W_SW=6, I=10, J=4, early_stop=True))
for snr in (4.0, 6.0, 8.0):
    pt = run_ce_mudd(receiver, snr, 3, seed=1)
    lo, hi = pt.confidence()
    print(f"{snr:4.1f} dB  BER {pt.ber:.2e}  [{lo:.1e}, {hi:.1e}]  per section {pt.section_errors.tolist()}")

"""Decoding-threshold search by bisection on the SNR."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass

from .outer import DeConfig, outer_de

log = logging.getLogger(__name__)


class BracketError(ValueError):
    """The search bracket does not straddle the threshold."""

    def __init__(self, lo_db: float, lo_ok: bool, hi_db: float, hi_ok: bool):
        self.lo = (lo_db, lo_ok)
        self.hi = (hi_db, hi_ok)
        super().__init__(
            f"bracket does not straddle the threshold: {lo_db} dB -> "
            f"{'success' if lo_ok else 'failure'}, {hi_db} dB -> {'success' if hi_ok else 'failure'}")


@dataclass
class ThresholdResult:
    threshold_db: float
    lo_db: float
    hi_db: float
    probes: list

    def to_json(self, path=None, extra: dict | None = None) -> str:
        doc = {"threshold_db": self.threshold_db, "bracket_db": [self.lo_db, self.hi_db],
               "probes": [{"snr_db": s, "success": ok} for s, ok in self.probes]}
        if extra:
            doc.update(extra)
        text = json.dumps(doc, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as f:
                f.write(text + "\n")
        return text


def decodes(cfg: DeConfig, snr_db: float) -> bool:
    """Success predicate of the density evolution at ``snr_db``."""
    return outer_de(dataclasses.replace(cfg, snr_db=float(snr_db))).success


def threshold_search(cfg: DeConfig, lo_db: float, hi_db: float, tol_db: float = 0.005,
                     check_bracket: bool = True) -> ThresholdResult:
    """Smallest SNR (dB) at which :func:`decodes` succeeds, to within ``tol_db``.

    Success is assumed monotone in the SNR.  The returned value is the
    midpoint of the final bracket ``[fail, success]``.

    Raises
    ------
    BracketError
        ``lo_db`` already succeeds or ``hi_db`` still fails.
    """
    probes = []
    if check_bracket:
        lo_ok = decodes(cfg, lo_db)
        hi_ok = decodes(cfg, hi_db)
        probes += [(lo_db, lo_ok), (hi_db, hi_ok)]
        if lo_ok or not hi_ok:
            raise BracketError(lo_db, lo_ok, hi_db, hi_ok)
    lo, hi = float(lo_db), float(hi_db)
    while hi - lo > tol_db:
        mid = 0.5 * (lo + hi)
        ok = decodes(cfg, mid)
        probes.append((mid, ok))
        log.info("%.4f dB -> %s", mid, "success" if ok else "failure")
        if ok:
            hi = mid
        else:
            lo = mid
    return ThresholdResult(0.5 * (lo + hi), lo, hi, probes)


def min_outer_iterations(cfg: DeConfig, I_max: int = 200) -> int | None:
    """Smallest number of outer iterations per stage for which the DE succeeds.

    Success is assumed monotone in ``I``.  Returns ``None`` if even ``I_max``
    fails.
    """
    def ok(I):
        return outer_de(dataclasses.replace(cfg, I=int(I))).success

    if not ok(I_max):
        return None
    lo, hi = 0, I_max  # lo fails (or is zero), hi succeeds
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi

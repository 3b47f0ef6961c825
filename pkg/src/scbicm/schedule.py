"""Sliding-window decoding stages shared by the simulator and the density evolution."""

from __future__ import annotations

import math
from typing import Iterator


def window_stages(L: int, W_SW: int | None, both_sided: bool = False) -> Iterator[tuple[list, list]]:
    """Yield ``(windows, emit)`` for every stage.

    ``windows`` lists the decoder section ranges ``(lo, hi)`` active in the
    stage and ``emit`` the sections whose decisions are final once the stage
    ends.  One-sided: stage ``l`` decodes ``[l, l + W_SW)`` for
    ``l = 0, ..., L - W_SW`` and finalises section ``l`` (all remaining
    sections in the last stage).  Both-sided: two windows move inward from the
    two ends until they meet.  ``W_SW=None`` decodes everything in one stage.
    """
    if W_SW is None or W_SW >= L:
        yield [(0, L)], list(range(L))
        return
    if W_SW < 1:
        raise ValueError("W_SW must be positive")
    if not both_sided:
        for lp in range(L - W_SW + 1):
            emit = [lp] if lp < L - W_SW else list(range(lp, L))
            yield [(lp, lp + W_SW)], emit
        return
    n_stage = math.ceil((L - 2 * W_SW) / 2) + 1 if L > 2 * W_SW else 1
    for k in range(n_stage):
        left = (k, min(k + W_SW, L))
        right = (max(L - k - W_SW, 0), L - k)
        if left[1] >= right[0]:
            yield [(k, L - k)], list(range(k, L - k))
            return
        yield [left, right], [k, L - 1 - k]

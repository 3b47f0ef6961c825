"""Entropy transfer (EXIT) curves of the demodulator and of the LDPC decoder.

Both curves live in the plane ``(x, y)`` where ``x`` is the entropy of the
demapper output fed to the decoder and ``y`` the entropy fed back from the
decoder.  The demodulator curve gives ``x`` as a function of ``y`` for one
uncoupled section; the decoder curve gives ``y`` as a function of ``x``.

The decoder curve is derived from the extended BP fixed-point curve of the
``(dv, dc)`` ensemble, parametrised by the variable-to-check entropy ``u``:

    c(u) = 1 - psi((dc - 1) psi_inv(1 - u))
    x(u) = psi(psi_inv(u) - (dv - 1) psi_inv(c(u)))
    y(u) = psi(dv psi_inv(c(u)))

The BP curve follows the stable branch above its leftmost turning point and
is zero below it.  The MAP curve jumps at the abscissa where the area under
the stable branch to its right equals the design rate (Maxwell construction).
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass

import numpy as np

from .feedback import feedback_model
from .fixed_points import solve_channel_fp, solve_demod_fp
from .outer import DeConfig
from .psi import psi, psi_inv


def demodulator_curve(cfg: DeConfig, h_fb) -> np.ndarray:
    """Demapper output entropy for uniform feedback entropy ``h_fb`` (uncoupled section)."""
    fb = feedback_model(cfg.Q)
    h = np.atleast_1d(np.clip(np.asarray(h_fb, dtype=float), 0.0, 1.0))
    x2 = fb.x2(h)
    if cfg.pin_unknown:
        x2 = np.where(h >= 1.0, 0.0, x2)
    xi = np.zeros_like(h) if cfg.perfect_csi else solve_channel_fp(cfg.N0, x2, cfg.K, cfg.T, cfg.T_tr)
    sig = solve_demod_fp(cfg.N0, xi, lambda s: fb.mse(h, s), cfg.K, cfg.N)
    return fb.demapper_entropy((1.0 - xi) / sig, h)


def _ebp(dv: int, dc: int, n: int = 4001):
    u = np.linspace(0.0, 1.0, n)[1:]
    c = 1.0 - psi((dc - 1) * psi_inv(1.0 - u))
    m_ch = psi_inv(u) - (dv - 1) * psi_inv(c)
    ok = m_ch >= 0.0
    x = np.where(ok, psi(np.maximum(m_ch, 0.0)), np.nan)
    y = psi(dv * psi_inv(c))
    return u[ok], x[ok], y[ok]


@dataclass
class DecoderCurve:
    """Stable branch of the extended BP curve plus the jump abscissa.

    ``x_stable`` increases with ``y_stable``; the curve is 0 for ``x < x_jump``.
    """

    x_stable: np.ndarray
    y_stable: np.ndarray
    x_jump: float
    y_jump: float

    def y_of_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.interp(x, self.x_stable, self.y_stable)
        return np.where(x < self.x_jump, 0.0, y)

    def x_of_y(self, y) -> np.ndarray:
        """Abscissa of the curve at ordinate ``y`` (``x_jump`` along the vertical segment)."""
        y = np.asarray(y, dtype=float)
        x = np.interp(y, self.y_stable, self.x_stable)
        return np.where(y <= self.y_jump, self.x_jump, x)


def decoder_curve(dv: int, dc: int, kind: str = "map", n: int = 4001) -> DecoderCurve:
    """BP or MAP transfer curve of the uncoupled ``(dv, dc)`` ensemble."""
    if kind not in ("bp", "map"):
        raise ValueError("kind must be 'bp' or 'map'")
    u, x, y = _ebp(dv, dc, n)
    # stable branch: from u = 1 down to the leftmost turning point of x(u)
    i_turn = int(np.argmin(x))
    xs, ys = x[i_turn:], y[i_turn:]
    if kind == "bp":
        return DecoderCurve(xs, ys, float(xs[0]), float(ys[0]))
    rate = 1.0 - dv / dc
    # area to the right of x_stable[i] under the stable branch
    seg = 0.5 * (ys[1:] + ys[:-1]) * np.diff(xs)
    right = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    j = int(np.searchsorted(-right, -rate))  # first index with area <= rate
    j = min(max(j, 1), len(xs) - 1)
    # linear interpolation of the area between xs[j-1] and xs[j]
    a0, a1 = right[j - 1], right[j]
    f = 0.0 if a0 == a1 else (a0 - rate) / (a0 - a1)
    xj = xs[j - 1] + f * (xs[j] - xs[j - 1])
    yj = ys[j - 1] + f * (ys[j] - ys[j - 1])
    return DecoderCurve(xs, ys, float(xj), float(yj))


@dataclass
class ExitChart:
    y: np.ndarray  # feedback entropy grid
    x_dem: np.ndarray  # demodulator output at each y
    x_dec: np.ndarray  # decoder curve abscissa at each y
    decoder: DecoderCurve
    intersections: list

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["h_dec2dem", "h_dem2dec_demod", "h_dem2dec_decoder"])
            for row in zip(self.y, self.x_dem, self.x_dec):
                wr.writerow([f"{v:.10g}" for v in row])


def exit_curves(cfg: DeConfig, kind: str = "map", n_points: int = 2001) -> ExitChart:
    """Sample both curves on a feedback-entropy grid and locate their intersections.

    Intersections are returned as ``(x, y)`` points.  The point on ``y = 0``
    counts when the demodulator's perfect-feedback output lies left of the
    decoder curve's jump; the others are sign changes of ``x_dem - x_dec``.
    """
    cfg = dataclasses.replace(cfg, W=0)
    y = np.linspace(0.0, 1.0, n_points)
    x_dem = demodulator_curve(cfg, y)
    dec = decoder_curve(cfg.dv, cfg.dc, kind)
    x_dec = dec.x_of_y(y)
    points = []
    if x_dem[0] <= dec.x_jump:
        points.append((float(x_dem[0]), 0.0))
    g = x_dem[1:] - x_dec[1:]
    for i in np.nonzero(np.sign(g[1:]) != np.sign(g[:-1]))[0]:
        if g[i] == 0.0:
            continue
        t = g[i] / (g[i] - g[i + 1])
        yi = y[i + 1] + t * (y[i + 2] - y[i + 1])
        xi = x_dem[i + 1] + t * (x_dem[i + 2] - x_dem[i + 1])
        points.append((float(xi), float(yi)))
    return ExitChart(y, x_dem, x_dec, dec, points)

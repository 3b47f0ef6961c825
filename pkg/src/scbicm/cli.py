"""Command-line driver: TOML experiment files, validation and the run modes.

An experiment file has a top-level ``mode`` and ``seed`` plus the sections
``[system]``, ``[code]``, ``[coupling]``, ``[schedule]``, ``[de]``,
``[sweep]`` and ``[simulate]``.  Missing keys take the defaults in
:data:`DEFAULTS`; ``inf`` (or the string ``"inf"``) stands for an unlimited
window or iteration count.  Every run writes ``result.json`` (numbers only,
reproducible from config and seed), ``config.json`` (the normalised
experiment, loadable with ``--config``), ``meta.json`` (version and wall
clock) and mode-specific CSV files.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import metadata, resources
from pathlib import Path

import numpy as np
import tomli

log = logging.getLogger("scbicm")

MODES = ("de-threshold", "de-profile", "de-window-sweep", "de-iteration-sweep", "exit-chart", "simulate")

DEFAULTS = {
    "mode": "de-threshold",
    "seed": 1,
    "system": {"Q": 2, "K": 6, "N": 6, "T": 64, "T_tr": 6, "perfect_csi": False},
    "code": {"kind": "sc", "dv": 3, "dc": 6, "L": 64, "M": None},
    "coupling": {"W": 0, "both_sided": False},
    "schedule": {"W_SW": None, "I": None, "J": 4},
    "de": {"snr_db": None, "lo_db": None, "hi_db": None, "tol_db": 0.01, "epsilon": 0.0,
           "stall_tol": 1e-8, "boundary_unlimited": False, "exit_kind": "map"},
    "sweep": {"W_SW": [], "snr_offsets_db": [], "I_max": 200},
    "simulate": {"snr_db": [], "frames": 10, "est_snr_db": None, "early_stop": False,
                 "structured_pilots": False, "trace": True},
}

_UNLIMITED = {("schedule", "W_SW"), ("schedule", "I"), ("schedule", "J")}

#: Exit codes.
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BRACKET = 0, 1, 2, 3


class ConfigError(ValueError):
    """Invalid experiment; ``errors`` lists every problem found."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


@dataclass
class Report:
    """Outcome of :func:`validate_config`."""

    spec: dict
    warnings: list = field(default_factory=list)
    rate: Fraction | None = None

    @property
    def rate_float(self) -> float | None:
        return None if self.rate is None else float(self.rate)


# -- loading -----------------------------------------------------------------------------


def preset_names() -> list[str]:
    files = resources.files("scbicm").joinpath("presets").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".toml"))


def load_preset(name: str) -> dict:
    path = resources.files("scbicm").joinpath("presets", f"{name}.toml")
    if not path.is_file():
        raise ConfigError([f"unknown preset {name!r}; available: {', '.join(preset_names())}"])
    return tomli.loads(path.read_text())


def load_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return json.loads(text)
    return tomli.loads(text)


def _is_unlimited(v) -> bool:
    return v is None or (isinstance(v, str) and v.lower() == "inf") or (isinstance(v, float) and math.isinf(v))


def normalise(raw: dict) -> dict:
    """Fill defaults and map ``inf`` to ``None``; unknown keys are errors."""
    spec, errors = _merge_defaults(raw)
    if errors:
        raise ConfigError(errors)
    return spec


def _merge_defaults(raw: dict) -> tuple[dict, list]:
    errors = []
    spec = copy.deepcopy(DEFAULTS)
    for key, val in raw.items():
        if key not in spec:
            errors.append(f"unknown key {key!r}")
        elif isinstance(spec[key], dict):
            if not isinstance(val, dict):
                errors.append(f"[{key}] must be a table")
                continue
            for k, v in val.items():
                if k not in spec[key]:
                    errors.append(f"unknown key {key}.{k}")
                elif (key, k) in _UNLIMITED and _is_unlimited(v):
                    spec[key][k] = None
                else:
                    spec[key][k] = v
        else:
            spec[key] = val
    return spec, errors


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply ``section.key=value`` strings, values parsed as TOML."""
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError([f"override {item!r} is not of the form key=value"])
        key, text = item.split("=", 1)
        val = tomli.loads(f"v = {text}")["v"] if text.strip() else ""
        parts = key.strip().split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    return raw


# -- validation --------------------------------------------------------------------------


def _code_rate(spec: dict) -> Fraction:
    from .sc_ldpc import design_rate

    c = spec["code"]
    if c["kind"] == "sc":
        return design_rate(c["dv"], c["dc"], c["L"])
    return 1 - Fraction(c["dv"], c["dc"])


def validate_config(raw: dict) -> Report:
    """Check a whole experiment and report every error at once.

    Returns the normalised experiment with warnings and the overall rate;
    raises :class:`ConfigError` listing all problems otherwise.
    """
    from .coupled_interleaver import CouplingParams, overall_rate

    spec, errors = _merge_defaults(raw)
    warnings = []
    sy, co, cp, sc, de, sw, si = (spec[k] for k in ("system", "code", "coupling", "schedule", "de", "sweep",
                                                    "simulate"))
    mode = spec["mode"]
    if mode not in MODES:
        errors.append(f"mode must be one of {', '.join(MODES)}, got {mode!r}")
    if not isinstance(spec["seed"], int) or spec["seed"] < 0:
        errors.append("seed must be a non-negative integer")
    Q, K, N, T, T_tr = sy["Q"], sy["K"], sy["N"], sy["T"], sy["T_tr"]
    if Q < 2 or Q % 2:
        errors.append(f"system.Q must be a positive even integer, got {Q}")
    if K < 1 or N < 1:
        errors.append("system.K and system.N must be positive")
    if not 0 <= T_tr < T:
        errors.append(f"need 0 <= system.T_tr < system.T, got T_tr={T_tr}, T={T}")
    dv, dc, L, W = co["dv"], co["dc"], co["L"], cp["W"]
    if co["kind"] not in ("sc", "ldpc"):
        errors.append(f"code.kind must be 'sc' or 'ldpc', got {co['kind']!r}")
    if dv < 1 or dc <= dv or dc % dv:
        errors.append(f"code.dc={dc} must be a multiple of code.dv={dv} larger than it")
    if L < 1:
        errors.append("code.L must be positive")
    if co["kind"] == "sc" and L < dv:
        errors.append(f"an SC code needs code.L >= dv={dv}")
    if W < 0:
        errors.append("coupling.W must be non-negative")
    if cp["both_sided"] and L % 2:
        errors.append("both-sided coupling needs an even code.L (codewords on both sides)")
    if sc["W_SW"] is not None and not 1 <= sc["W_SW"] <= L:
        errors.append(f"schedule.W_SW must lie in [1, L={L}]")
    for k in ("I", "J"):
        if sc[k] is not None and sc[k] < 1:
            errors.append(f"schedule.{k} must be positive")
    if not 0.0 <= de["epsilon"] < 0.5:
        errors.append("de.epsilon must lie in [0, 0.5)")
    if W > 0 and K % (2 * W + 1):
        warnings.append(f"K={K} is not a multiple of 2W+1={2 * W + 1}: antennas see the subsections unevenly")

    if mode in ("de-threshold", "de-window-sweep", "de-iteration-sweep"):
        lo, hi = de["lo_db"], de["hi_db"]
        if lo is None or hi is None or not lo < hi:
            errors.append("de.lo_db < de.hi_db is required for a threshold search")
        if de["tol_db"] <= 0:
            errors.append("de.tol_db must be positive")
    if mode == "de-profile" and not isinstance(de["snr_db"], (int, float)):
        errors.append("de.snr_db must be a number for de-profile")
    if mode == "exit-chart":
        s = de["snr_db"]
        if s is None or (isinstance(s, list) and not s):
            errors.append("de.snr_db (number or list) is required for exit-chart")
        if de["exit_kind"] not in ("map", "bp"):
            errors.append("de.exit_kind must be 'map' or 'bp'")
    if mode == "de-window-sweep" and not sw["W_SW"]:
        errors.append("sweep.W_SW must list window sizes")
    if mode == "de-iteration-sweep":
        if not sw["snr_offsets_db"]:
            errors.append("sweep.snr_offsets_db must list SNR margins")
        if sc["W_SW"] is None:
            errors.append("de-iteration-sweep needs a finite schedule.W_SW")

    if mode == "simulate":
        M = co["M"]
        if M is None or M < 1:
            errors.append("code.M (bits per section) is required for simulate")
        else:
            errors += [f"coupling: {e}" for e in CouplingParams(M, L, W, Q, cp["both_sided"]).errors()]
            if M % dc:
                errors.append(f"code.M={M} must be a multiple of dc={dc}")
            per_block = K * (T - T_tr) * Q
            if M % per_block:
                warnings.append(f"M={M} bits do not fill whole fading blocks of K(T-T_tr)Q={per_block} bits;"
                                " the last block of each section is partly empty")
        if not si["snr_db"]:
            errors.append("simulate.snr_db must list at least one SNR")
        if si["frames"] < 1:
            errors.append("simulate.frames must be positive")
        if sc["W_SW"] is None or sc["I"] is None or sc["J"] is None:
            errors.append("simulate needs finite schedule.W_SW, schedule.I and schedule.J")
    if T_tr == 0 and W == 0 and not sy["perfect_csi"]:
        warnings.append("no pilots and no coupling: channel estimation cannot start")

    if errors:
        raise ConfigError(errors)
    rate = overall_rate(CouplingParams(co["M"] or 2 * W + 1, L, W, Q, cp["both_sided"]), _code_rate(spec),
                        K, T, T_tr)
    return Report(spec, warnings, rate)


# -- building blocks ---------------------------------------------------------------------


def de_config(spec: dict, **changes):
    from .density.outer import DeConfig

    sy, co, cp, sc, de = (spec[k] for k in ("system", "code", "coupling", "schedule", "de"))
    kw = dict(Q=sy["Q"], K=sy["K"], N=sy["N"], T=sy["T"], T_tr=sy["T_tr"], perfect_csi=sy["perfect_csi"],
              dv=co["dv"], dc=co["dc"], L=co["L"], coupled_code=co["kind"] == "sc", W=cp["W"],
              both_sided=cp["both_sided"], W_SW=sc["W_SW"], I=sc["I"], J=sc["J"], stall_tol=de["stall_tol"],
              epsilon=de["epsilon"], boundary_unlimited=de["boundary_unlimited"])
    if isinstance(de["snr_db"], (int, float)):
        kw["snr_db"] = float(de["snr_db"])
    kw.update(changes)
    return DeConfig(**kw)


def build_system(spec: dict):
    """Code, interleaver and receiver of a ``simulate`` experiment.

    The code and interleaver are drawn once from the experiment seed, so
    every SNR point and frame shares them.
    """
    from .channel import substream
    from .coupled_interleaver import CouplingParams, build
    from .lmmse_receiver import CeMudd, ScheduleConfig
    from .modem import qam
    from .sc_ldpc import make_block_code, make_code

    sy, co, cp, sc, si = (spec[k] for k in ("system", "code", "coupling", "schedule", "simulate"))
    seed = spec["seed"]
    make = make_code if co["kind"] == "sc" else make_block_code
    code = make(co["dv"], co["dc"], co["L"], co["M"], substream(seed, 2**32, 0))
    itl = build(CouplingParams(co["M"], co["L"], cp["W"], sy["Q"], cp["both_sided"]), substream(seed, 2**32, 1))
    sched = ScheduleConfig(sc["W_SW"], sc["I"], sc["J"], si["early_stop"])
    return CeMudd(code, itl, qam(sy["Q"]), sy["K"], sy["N"], sy["T"], sy["T_tr"], sched,
                  structured_pilots=si["structured_pilots"])


def _parallel_map(fn, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def _threshold(args):
    from .density.threshold import threshold_search

    cfg, lo, hi, tol = args
    return threshold_search(cfg, lo, hi, tol_db=tol)


def _min_iter(args):
    from .density.threshold import min_outer_iterations

    cfg, I_max = args
    return min_outer_iterations(cfg, I_max)


def _simulate_point(args):
    from .lmmse_receiver import run_ce_mudd

    spec, snr = args
    si = spec["simulate"]
    system = build_system(spec)
    return run_ce_mudd(system, snr, si["frames"], spec["seed"], si["est_snr_db"], trace=si["trace"])


def _write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(header)
        for row in rows:
            wr.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])


# -- modes -------------------------------------------------------------------------------


def run_de_threshold(spec: dict, out: Path, workers: int) -> dict:
    de = spec["de"]
    r = _threshold((de_config(spec), de["lo_db"], de["hi_db"], de["tol_db"]))
    return {"threshold_db": r.threshold_db, "bracket_db": [r.lo_db, r.hi_db],
            "probes": [{"snr_db": s, "success": ok} for s, ok in r.probes]}


def run_de_profile(spec: dict, out: Path, workers: int) -> dict:
    from .density.outer import outer_de

    r = outer_de(de_config(spec), record="stage")
    r.to_csv(out / "profile.csv")
    _write_csv(out / "stages.csv", ["stage", "iterations", "section", "h_post"],
               ((s.stage, s.iterations, sec, h) for s in r.stages for sec, h in zip(s.sections, s.h_post)))
    return {"snr_db": float(spec["de"]["snr_db"]), "success": r.success, "outer_iterations": r.outer_iterations,
            "max_ber": float(np.max(r.ber)), "ber": [float(b) for b in r.ber]}


def run_de_window_sweep(spec: dict, out: Path, workers: int) -> dict:
    de = spec["de"]
    sizes = [int(w) for w in spec["sweep"]["W_SW"]]
    jobs = [(de_config(spec, W_SW=w), de["lo_db"], de["hi_db"], de["tol_db"]) for w in sizes]
    res = _parallel_map(_threshold, jobs, workers)
    _write_csv(out / "window_sweep.csv", ["W_SW", "threshold_db"], ((w, r.threshold_db) for w, r in zip(sizes, res)))
    return {"W_SW": sizes, "threshold_db": [r.threshold_db for r in res]}


def run_de_iteration_sweep(spec: dict, out: Path, workers: int) -> dict:
    de, sw = spec["de"], spec["sweep"]
    base = _threshold((de_config(spec, I=None), de["lo_db"], de["hi_db"], de["tol_db"]))
    rho = base.hi_db  # a point known to succeed with unlimited iterations
    offsets = [float(o) for o in sw["snr_offsets_db"]]
    jobs = [(de_config(spec, snr_db=rho + o, boundary_unlimited=True), int(sw["I_max"])) for o in offsets]
    res = _parallel_map(_min_iter, jobs, workers)
    _write_csv(out / "iteration_sweep.csv", ["snr_offset_db", "snr_db", "I_min"],
               ((o, rho + o, "" if r is None else r) for o, r in zip(offsets, res)))
    return {"threshold_db": rho, "snr_offset_db": offsets, "I_min": res}


def run_exit_chart(spec: dict, out: Path, workers: int) -> dict:
    from .density.exit import exit_curves

    snrs = spec["de"]["snr_db"]
    snrs = snrs if isinstance(snrs, list) else [snrs]
    charts = {}
    for s in snrs:
        chart = exit_curves(de_config(spec, snr_db=float(s)), kind=spec["de"]["exit_kind"])
        chart.to_csv(out / f"exit_{float(s):g}dB.csv")
        charts[f"{float(s):g}"] = {"intersections": [list(p) for p in chart.intersections],
                                   "decoder_jump": [chart.decoder.x_jump, chart.decoder.y_jump]}
    return {"charts": charts}


def run_simulate(spec: dict, out: Path, workers: int) -> dict:
    from .lmmse_receiver import write_trace_csv

    snrs = [float(s) for s in spec["simulate"]["snr_db"]]
    rate = validate_config(spec).rate
    pts = _parallel_map(_simulate_point, [(spec, s) for s in snrs], workers)
    _write_csv(out / "ber.csv", ["snr_db", "frames", "errors", "bits", "ber", "ci_lo", "ci_hi"],
               ((p.snr_db, p.frames, p.errors, p.bits, p.ber, *p.confidence()) for p in pts))
    rows = [{"snr_db": p.snr_db, **r} for p in pts for r in p.trace]
    write_trace_csv(rows, out / "trace.csv")
    return {"rate": float(rate), "points": [
        {"snr_db": p.snr_db, "frames": p.frames, "errors": p.errors, "bits": p.bits,
         "ber": p.ber, "section_errors": p.section_errors.tolist()} for p in pts]}


RUNNERS = {
    "de-threshold": run_de_threshold,
    "de-profile": run_de_profile,
    "de-window-sweep": run_de_window_sweep,
    "de-iteration-sweep": run_de_iteration_sweep,
    "exit-chart": run_exit_chart,
    "simulate": run_simulate,
}


def version_stamp() -> str:
    """Package version, with ``git describe`` appended inside a checkout."""
    try:
        v = metadata.version("scbicm")
    except metadata.PackageNotFoundError:
        v = "unknown"
    try:
        d = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                           capture_output=True, text=True, timeout=5)
        if d.returncode == 0 and d.stdout.strip():
            v += "+" + d.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return v


def run_experiment(raw: dict, out, workers: int = 1) -> dict:
    """Validate and run an experiment, writing its files under ``out``."""
    report = validate_config(raw)
    spec = report.spec
    for w in report.warnings:
        log.warning(w)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    result = RUNNERS[spec["mode"]](spec, out, workers)
    elapsed = time.time() - t0
    doc = {"mode": spec["mode"], "seed": spec["seed"], "rate": report.rate_float, "result": result}
    (out / "result.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(spec, indent=2, sort_keys=True) + "\n")
    meta = {"version": version_stamp(), "wall_clock_s": round(elapsed, 3),
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(t0)), "argv": sys.argv}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return doc


# -- entry point -------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scbicm", description="Coupled BICM with iterative channel estimation: "
                                "density evolution, EXIT charts and link simulation.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(q, needs_out):
        src = q.add_mutually_exclusive_group(required=True)
        src.add_argument("--preset", help="name of a bundled experiment (see 'scbicm presets')")
        src.add_argument("--config", help="TOML or JSON experiment file")
        q.add_argument("--mode", choices=MODES, help="override the experiment's mode")
        q.add_argument("--seed", type=int, help="override the experiment's seed")
        q.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a value, e.g. --set system.T_tr=4 (repeatable)")
        q.add_argument("-v", "--verbose", action="count", default=0)
        if needs_out:
            q.add_argument("--out", required=True, help="output directory")
            q.add_argument("--workers", type=int, default=1, help="processes for independent points")

    common(sub.add_parser("run", help="run an experiment"), True)
    common(sub.add_parser("validate", help="check an experiment and print its rate"), False)
    sub.add_parser("presets", help="list bundled experiments")
    return p


def _load(args) -> dict:
    raw = load_preset(args.preset) if args.preset else load_file(args.config)
    raw = apply_overrides(raw, args.set)
    if args.mode:
        raw["mode"] = args.mode
    if args.seed is not None:
        raw["seed"] = args.seed
    return raw


def main(argv=None) -> int:
    from .density.threshold import BracketError

    args = _parser().parse_args(argv)
    if args.command == "presets":
        for name in preset_names():
            print(name)
        return EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        raw = _load(args)
        if args.command == "validate":
            report = validate_config(raw)
            for w in report.warnings:
                print(f"warning: {w}")
            print(f"ok: mode={report.spec['mode']} rate={report.rate} ({report.rate_float:.6g} bits/channel use)")
            return EXIT_OK
        doc = run_experiment(raw, args.out, args.workers)
    except ConfigError as e:
        print(e, file=sys.stderr)
        return EXIT_CONFIG
    except BracketError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BRACKET
    except (OSError, tomli.TOMLDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    print(json.dumps(doc["result"], sort_keys=True)[:2000])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

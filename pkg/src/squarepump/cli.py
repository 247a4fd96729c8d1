"""Command-line front end: ``squarepump <subcommand> [--preset NAME] [--config FILE] [flags]``.

Settings are layered: preset, then the JSON config file, then flags.  Tables
go to ``--out`` or standard output.  The exit status is 0 only if every grid
point solved, 1 if some failed and 2 on bad input.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import List, Optional, Sequence

import numpy as np

from . import sweep as sw
from .presets import PRESETS, get_preset

logger = logging.getLogger("squarepump")

DEFAULT_PRESET = {
    "spectrum": "fig2", "single-cavity": "fig1b", "steady": "fig2", "sweep": "fig2",
    "equilibrium": "fig2", "modulated": "fig7", "crosscheck": None,
}

CROSSCHECK_DEFAULTS = {
    "n_max": 5, "omega_minus": -0.5, "omega_plus": 0.5, "n_emitters": 3,
    "rabi": 1e-3, "pump": 0.05, "loss_rate": 1e-5, "tolerance": 0.02,
}


def _range(text: str) -> List[float]:
    """``"a"`` or ``"a:b:n"``."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            v = float(parts[0])
            return [v, v, 1]
        if len(parts) == 3:
            return [float(parts[0]), float(parts[1]), int(parts[2])]
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"expected 'value' or 'start:stop:num', got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="squarepump", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", choices=sorted(PRESETS))
    common.add_argument("--config", help="JSON file with settings")
    common.add_argument("--out", help="output CSV path (default: stdout)")
    common.add_argument("--workers", type=int)
    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--mu", type=_range, help="mu/U value or start:stop:num")
    grid.add_argument("--j", type=_range, help="J/U value or start:stop:num")
    grid.add_argument("--sites", type=int)
    grid.add_argument("--nmax", type=int)
    grid.add_argument("--solver", choices=sw.SOLVERS)

    p = sub.add_parser("spectrum", parents=[common, grid],
                       help="emission (and loss) spectrum with Lamb shift at one mu")
    p.add_argument("--omega", type=_range, help="frequency grid start:stop:num")
    sub.add_parser("single-cavity", parents=[common, grid],
                   help="photon-number staircase of one cavity for several edge widths")
    sub.add_parser("steady", parents=[common, grid], help="one steady-state point")
    sub.add_parser("sweep", parents=[common, grid], help="steady states on a (mu, J) grid")
    sub.add_parser("equilibrium", parents=[common, grid],
                   help="ground-state reference on a (mu, J) grid")
    p = sub.add_parser("modulated", parents=[common],
                       help="single cavity with a frequency-swept emitter")
    p.add_argument("--speed", type=float, action="append", help="sweep speed (repeatable)")
    p.add_argument("--summary", action="store_true", help="only the late-time summary table")
    sub.add_parser("crosscheck", parents=[common],
                   help="emitter-resolved model against the photon-only equation")
    return parser


def _settings(args) -> dict:
    name = args.preset
    file_data = {}
    if args.config:
        with open(args.config) as fh:
            file_data = json.load(fh)
        name = name or file_data.pop("preset", None)
    file_data.pop("preset", None)
    name = name or DEFAULT_PRESET[args.command]
    data = get_preset(name) if name else {}
    data.update(file_data)
    flags = {"mu": getattr(args, "mu", None), "J": getattr(args, "j", None),
             "n_sites": getattr(args, "sites", None), "n_max": getattr(args, "nmax", None),
             "solver": getattr(args, "solver", None), "out": args.out, "workers": args.workers}
    data.update({k: v for k, v in flags.items() if v is not None})
    return data


def _emit(text: str, out: Optional[str]):
    if out:
        try:
            with open(out, "w", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write output table to {out!r}: {exc}") from exc
    else:
        sys.stdout.write(text)


def _cmd_spectrum(data, args) -> int:
    cfg = sw.SweepConfig.from_dict(data)
    mu = float(cfg.mu_grid[0])
    diss = cfg.dissipation(mu)
    lo, hi = mu - cfg.emission_span - 1.0, mu + 1.0
    if diss.loss is not None:
        hi = diss.loss.omega_hi + 1.0
    start, stop, num = args.omega or [lo, hi, 801]
    omega = np.linspace(start, stop, int(num))
    rows = []
    for w in omega:
        row = {"omega_over_U": w, "emission": float(diss.emission.value(w)),
               "emission_lamb_shift": float(diss.emission.lamb_shift(w))}
        if diss.loss is not None:
            row.update(loss=float(diss.loss.value(w)), loss_lamb_shift=float(diss.loss.lamb_shift(w)))
        rows.append(row)
    _emit(sw.format_table(rows, columns=tuple(rows[0])), data.get("out"))
    return 0


def _cmd_grid(data, args) -> int:
    cfg = sw.SweepConfig.from_dict(data)
    if args.command == "equilibrium":
        rows = sw.equilibrium_reference(cfg)
    elif args.command == "single-cavity":
        rows = sw.single_cavity_scan(cfg, data.get("widths", [cfg.emission_width]))
    else:
        if args.command == "steady" and len(cfg.mu_grid) * len(cfg.J_grid) != 1:
            raise ValueError("steady needs a single point: give --mu VALUE and --j VALUE")
        rows = sw.run_sweeps([cfg], cfg.workers or None)[0]
    _emit(sw.format_table(rows), cfg.out)
    failed = [r for r in rows if r["status"] not in ("ok", "degenerate")]
    for r in failed:
        logger.error("mu=%s J=%s: %s", r["mu_over_U"], r["J_over_U"], r["status"])
    return 0 if not failed else 1


def _cmd_modulated(data, args) -> int:
    summary, series = sw.modulated_scan(data, speeds=args.speed, trajectory=not args.summary)
    if args.summary:
        text = sw.format_table(summary, columns=sw.MODULATED_COLUMNS)
    else:
        text = sw.format_table(series, columns=("target_n", "speed", "rabi", "t", "n", "delta_n"))
    _emit(text, data.get("out"))
    return 0 if all(r["status"] == "ok" for r in summary) else 1


def _cmd_crosscheck(data, args) -> int:
    from .microscopic import EmitterConfig, crosscheck

    p = dict(CROSSCHECK_DEFAULTS)
    p.update({k: v for k, v in data.items() if k in CROSSCHECK_DEFAULTS})
    edges = np.linspace(p["omega_minus"], p["omega_plus"], int(p["n_emitters"]) + 1)
    emitters = EmitterConfig(tuple(0.5 * (edges[1:] + edges[:-1])), p["rabi"], p["pump"])
    res = crosscheck(int(p["n_max"]), emitters, p["loss_rate"])
    _emit(sw.format_table([res], columns=tuple(res)), data.get("out"))
    if res["relative_error"] > p["tolerance"]:
        logger.error("photon numbers differ by %.3g (tolerance %.3g)", res["relative_error"], p["tolerance"])
        return 1
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"spectrum": _cmd_spectrum, "modulated": _cmd_modulated,
               "crosscheck": _cmd_crosscheck}.get(args.command, _cmd_grid)
    try:
        data = _settings(args)
        return handler(data, args)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"squarepump {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

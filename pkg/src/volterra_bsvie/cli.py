"""Command line entry point: ``solve``, ``study``, ``presets`` and ``check``."""
from __future__ import annotations

import argparse
import sys

from .config import parse_config
from .errors import BsvieError, ConfigurationError
from .problems import PRESETS, preset_names
from .runner import EXIT_CONFIG, convergence_study, parse_ladder, run


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="volterra-bsvie", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="run the pipeline for one config")
    s.add_argument("config")
    s.add_argument("--out", help="output directory (default: $VOLTERRA_BSVIE_OUTPUT_ROOT/<name>)")
    st = sub.add_parser("study", help="refinement study over a ladder")
    st.add_argument("config")
    st.add_argument("--ladder", required=True, help="e.g. M=50,100,200 or 'M=25,50;n_paths=1000,4000'")
    st.add_argument("--out")
    sub.add_parser("presets", help="list the preset catalog")
    c = sub.add_parser("check", help="validate a config without running it")
    c.add_argument("config")
    return p


def _presets(out) -> int:
    width = max(map(len, PRESETS))
    for name in preset_names():
        entry = PRESETS[name]
        coeffs = "  ".join(f"{k}={v}" for k, v in entry["problem"].items())
        out.write(f"{name:<{width}}  {entry['summary']}\n{'':<{width}}  {coeffs}\n")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    out, err = sys.stdout, sys.stderr
    if args.command == "presets":
        return _presets(out)
    try:
        cfg = parse_config(args.config)
        if args.command == "check":
            out.write(f"ok: {cfg.name} ({cfg.problem.kind}), T={cfg.T:g}, M=J={cfg.M}, n_paths={cfg.n_paths}\n")
            return 0
        if args.command == "study":
            study = convergence_study(cfg, parse_ladder(args.ladder), directory=args.out)
            for row in study["rows"]:
                out.write(f"M={row['M']:<5} n_paths={row['n_paths']:<7} {row['status']:<14} "
                          f"error={row['error']}\n")
            out.write(f"fitted order: {study['order_error']}\nwritten to {study['directory']}\n")
            return 0
        res = run(cfg, directory=args.out)
    except (ConfigurationError, ValueError) as exc:
        err.write(f"configuration error: {exc}\n")
        return EXIT_CONFIG
    except BsvieError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_CONFIG
    out.write(open(f"{res.directory}/summary.txt", encoding="utf-8").read())
    if res.error:
        err.write(f"configuration error: {res.error}\n")
    return res.status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line interface.

Each subcommand reads a JSON config and writes CSV/JSON artifacts; report
paths also render a PNG figure next to the tabular output.  Rerunning a
command with the same config and seed reproduces the CSV/JSON byte for byte.
"""

from __future__ import annotations

import argparse
import json
import pathlib


def _load_config(path):
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def _robot_from_config(cfg):
    from .dynamics import RobotParams

    return RobotParams(**cfg.get("robot", {}))


def cmd_gen_gaits(args) -> int:
    from .gaits import (
        DEFAULT_GAINS,
        N_LIBRARY,
        SLOPE_PRE,
        IOGains,
        build_library,
        library_betas,
    )
    from .plotting import plot_gait_family

    cfg = _load_config(args.config)
    p = _robot_from_config(cfg)
    gains = IOGains(**cfg["gains"]) if "gains" in cfg else DEFAULT_GAINS
    betas = cfg.get("betas")
    if betas is None:
        betas = library_betas(cfg.get("n_gaits", N_LIBRARY))
    lib = build_library(
        p,
        gains,
        betas=betas,
        slope_pre=cfg.get("slope_pre", SLOPE_PRE),
        verbose=not args.quiet,
    )
    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lib.save(out)
    fig_path = out.with_suffix(".png")
    plot_gait_family(lib, fig_path)
    print(f"wrote {out} ({len(lib.betas)} gaits) and {fig_path}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="gaitroa",
        description="regions of attraction for parameterized walking gaits",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-gaits", help="generate and save the gait library")
    g.add_argument("--config", default=None, help="JSON config (optional)")
    g.add_argument("--out", required=True, help="output library JSON path")
    g.add_argument("--quiet", action="store_true")
    g.set_defaults(func=cmd_gen_gaits)

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())

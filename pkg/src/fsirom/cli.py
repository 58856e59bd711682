"""``fsirom <stage> --config <path> [--out <dir>] [--threads N]``."""

import argparse
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import workflow
from .config import load_config
from .errors import FsiRomError

STAGES = ("mesh", "fom", "pod", "rom", "compare", "report", "perturb", "ablate")


def _stage(name, cfg, out):
    if name == "mesh":
        workflow.make_mesh(cfg, out)
    elif name == "fom":
        workflow.full_order(cfg, out)
    elif name == "pod":
        workflow.offline(cfg, out)
    elif name == "rom":
        workflow.reduced(cfg, out)
    elif name == "compare":
        rep = workflow.compare(cfg, out)
        print(f"max total error {rep.total.max():.4g}, spacetime error {rep.spacetime:.4g}")
    elif name == "report":
        for row in workflow.report(cfg, out):
            print(f"{row[0]:>10s} s  dofs {row[1]} -> {row[2]} ({row[4]})  solve {row[5]:.3g} s -> "
                  f"{row[6]:.3g} s  speedup {row[8]:.3g}")
    elif name == "perturb":
        for row in workflow.perturbation_study(cfg, out):
            print(f"{row[0]:>14s}  spacetime {row[3]:.4g}  max |dy error| {row[5]:.3g} m")
    elif name == "ablate":
        for row in workflow.ablation_study(cfg, out):
            print(f"{row[0]:>10s}  N={row[1]}  max total error {row[2]:.4g}  spacetime {row[3]:.4g}")


def _threads(arg, cfg):
    if arg is not None:
        return arg
    env = os.environ.get("THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise FsiRomError(f"THREADS={env!r} is not an integer") from None
    return cfg.threads


def build_parser():
    p = argparse.ArgumentParser(prog="fsirom", description="ALE FSI full-order model and segmented POD ROM")
    p.add_argument("stage", choices=STAGES)
    p.add_argument("--config", required=True, help="key=value configuration file")
    p.add_argument("--out", help="output directory (overrides out.dir)")
    p.add_argument("--threads", type=int, help="BLAS thread count (overrides THREADS and the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        out = Path(args.out or cfg.out_dir)
        if args.stage != "mesh" and not out.is_dir():
            raise workflow.MissingArtifact(f"output directory {out} does not exist; run `fsirom mesh` first")
        with threadpool_limits(limits=_threads(args.threads, cfg)):
            _stage(args.stage, cfg, out)
    except FsiRomError as exc:
        print(f"fsirom {args.stage}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"fsirom {args.stage}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

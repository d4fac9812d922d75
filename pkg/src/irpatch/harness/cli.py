"""Command-line entry point: ``irpatch <command> --config <path>``."""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConfigError, IRPatchError
from ..optim import CONVERGED
from . import experiments
from .config import load_config

log = logging.getLogger("irpatch")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2

SUITE_COMMANDS = {
    "ablate-placement": experiments.ablate_placement,
    "ablate-losses": experiments.ablate_losses,
    "defend": experiments.defend_smooth,
    "eval-ap": experiments.eval_ap,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="irpatch", description=__doc__)
    p.add_argument("command", choices=["optimize", *SUITE_COMMANDS])
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--out", default="irpatch_out", help="output directory (default: %(default)s)")
    p.add_argument("--scenes", type=int, help="number of suite scenes (overrides n_scenes)")
    p.add_argument("--seed", type=int, help="master seed (overrides seed)")
    p.add_argument("--snapshots", type=int, help="keep a mask snapshot every K iterations")
    p.add_argument("-v", "--verbose", action="store_true", help="log config defaults and progress")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.scenes is not None:
            overrides["n_scenes"] = args.scenes
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.snapshots is not None:
            overrides["snapshots"] = args.snapshots
        if overrides:
            cfg = cfg.replace(**overrides)
        if args.command == "optimize":
            _, summary = experiments.optimize(cfg, args.out)
            print(
                f"{summary['stop_reason']} after {summary['iterations']} iterations: "
                f"score {summary['adv_score']:.4f}, |M|_1 {summary['mask_l1']:.2f} "
                f"(budget {summary['epsilon_max']:.2f}), "
                f"{summary['stencil_components']} stencil component(s)"
            )
            return EXIT_OK if summary["stop_reason"] == CONVERGED else EXIT_NOT_CONVERGED
        report = SUITE_COMMANDS[args.command](cfg)
        rec, summ = report.write(args.out)
        for key, value in report.summary().items():
            if key.endswith((".asr", ".ap")) or key.endswith("agg_support"):
                print(f"{key} = {experiments._fmt(value)}")
        print(f"wrote {rec} and {summ}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"irpatch: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (IRPatchError, OSError) as exc:
        print(f"irpatch: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

# -*- coding: utf-8 -*-
# Copyright: (c) 2024, weakhoi contributors
# MIT License (see LICENSE or https://opensource.org/licenses/MIT)

import argparse
import logging
import sys

from hoiclient._commands import (
    cmd_eval,
    cmd_export_embeddings,
    cmd_gen_data,
    cmd_gradcheck,
    cmd_infer,
    cmd_train,
)
from hoiclient._config import MODE_ALIASES, load_run_config
from weakhoi import __version__
from weakhoi.evaluation import Protocol
from weakhoi.exceptions import ExitCodes, HOIException, TrainingDiverged
from weakhoi.learning import ABLATION_PRESETS

log = logging.getLogger("hoiclient")

COMMANDS = {
    "gen-data": (cmd_gen_data, "Generate the synthetic vocabulary and dataset."),
    "train": (cmd_train, "Train a model and write its checkpoint and metrics."),
    "infer": (cmd_infer, "Write the detections of a checkpoint over a dataset."),
    "eval": (cmd_eval, "Evaluate a detections file and write the mAP report."),
    "gradcheck": (cmd_gradcheck, "Compare analytic and finite difference gradients."),
    "export-embeddings": (cmd_export_embeddings, "Export pair and knowledge bank features as CSV."),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config, the defaults are used when omitted.")
    common.add_argument("--seed", type=int, help="Overrides both the training and the generator seed.")
    common.add_argument("--out", help="Overrides the primary output path of the command.")
    common.add_argument("--protocol", choices=Protocol.ALL, help="Evaluation protocol.")
    common.add_argument("--mode", choices=sorted(MODE_ALIASES), help="Inference scoring mode.")
    common.add_argument("--preset", choices=sorted(ABLATION_PRESETS), help="Ablation preset applied when training.")
    common.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG instead of INFO.")

    parser = argparse.ArgumentParser(prog="weakhoi", description="Weakly supervised HOI detection toolkit.")
    parser.add_argument("--version", action="version", version="%(prog)s " + __version__)
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True
    for name, (_, description) in COMMANDS.items():
        subparsers.add_parser(name, parents=[common], help=description, description=description)
    return parser


def _overrides(args):
    overrides = {"protocol": args.protocol, "mode": args.mode, "preset": args.preset}
    if args.seed is not None:
        overrides["train"] = {"seed": args.seed}
        overrides["generate"] = {"seed": args.seed}
    return overrides


def main(argv=None):
    """
    Command line entry point.

    :param argv: Arguments without the program name, defaults to sys.argv.
    :return: The process exit code.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    command = COMMANDS[args.command][0]
    try:
        config = load_run_config(args.config, **_overrides(args))
        command(config, out=args.out)

    except TrainingDiverged as err:
        log.error("%s, diagnostics: %s" % (err, err.diagnostics))
        return err.exit_code

    except HOIException as err:
        log.error("%s failed: %s" % (args.command, err))
        return err.exit_code

    except OSError as err:
        log.error("%s failed: %s" % (args.command, err))
        return ExitCodes.USAGE

    return ExitCodes.SUCCESS


if __name__ == "__main__":
    sys.exit(main())

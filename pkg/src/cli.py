#!/usr/bin/env python3
"""
catlab command-line interface.

Subcommands:
    verify-constructions  exactness suites for the recall and selective-copy constructions
    lengen-sweep          accuracy and error of one model across test lengths
    lcat-phase            Landmark-CAT dimension thresholds over block sizes
    gen-tasks             synthetic suites as JSONL
    sc-demo               decode a few selective-copy prompts
    audit                 length-generalization audit report for one model
"""
import argparse
import logging
import sys

from src import __version__
from src.config import CATLAB_LOG_LEVEL, LOG_LEVELS, validate_config
from src.commands import audit, gen_tasks, lcat_phase, lengen_sweep, sc_demo, verify_constructions
from src.commands.common import add_common_arguments, run_guarded

SUBCOMMANDS = {
    'verify-constructions': (verify_constructions, "Verify the exact CAT constructions"),
    'lengen-sweep': (lengen_sweep, "Sweep recall accuracy across test lengths"),
    'lcat-phase': (lcat_phase, "Landmark-CAT phase transition over block sizes"),
    'gen-tasks': (gen_tasks, "Generate synthetic task suites"),
    'sc-demo': (sc_demo, "Decode selective-copy prompts"),
    'audit': (audit, "Audit a recall model for length generalization"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catlab", description="Convolution-augmented attention lab")
    parser.add_argument("--version", action="version", version=f"catlab {__version__}")
    parser.add_argument("--log-level", choices=LOG_LEVELS, type=str.upper,
                        help="Logging level (default: CATLAB_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (module, help_text) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=module.__doc__)
        add_common_arguments(p)
        module.add_arguments(p)
        p.set_defaults(handler=module.run)
    return parser


def setup_logging(level: str):
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level or CATLAB_LOG_LEVEL)
    try:
        validate_config()
    except ValueError as e:
        print(f"❌ Configuration error: {str(e)}")
        return 1
    return run_guarded(args.handler, args)


if __name__ == "__main__":
    sys.exit(main())

"""
==============================================================================
LIEEP Experiment CLI
==============================================================================
Description: Command-line entry point for running, validating and listing
integrator experiments

Main Features:
    - run: integrate the configured experiments and write CSV results
    - validate: polarization, lemma and symmetry checks
    - presets list / presets emit: shipped experiment files

Environment Variables (.env):
    - LIEEP_LOG_LEVEL: logging level (default: INFO)
    - LIEEP_OUTPUT_ROOT: output root override for every experiment
    - LIEEP_PRESETS_PATH: presets directory (default: ./presets)

Exit Codes:
    0 success, 1 validation failure, 2 config error, 3 integration failure
    (including any unexpected exception, logged with its traceback)

Run Command:
    python main.py run --config presets/wind_conservative.ini
==============================================================================
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_INTEGRATION_FAILED = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        "lieep",
        description="Linearly implicit energy-preserving exponential integrator experiments.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run the experiments in a config file.")
    run.add_argument("--config", required=True, help="INI experiment file.")
    run.add_argument("--section", help="Run only this experiment.")

    validate = commands.add_parser("validate", help="Validate the problems in a config file.")
    validate.add_argument("--config", required=True, help="INI experiment file.")
    validate.add_argument("--section", help="Validate only this experiment.")

    presets = commands.add_parser("presets", help="Shipped experiment presets.")
    actions = presets.add_subparsers(dest="action", required=True)
    actions.add_parser("list", help="List preset names.")
    emit = actions.add_parser("emit", help="Print a preset's config file.")
    emit.add_argument("name", help="Preset name as shown by 'presets list'.")
    emit.add_argument("--output", help="Write to this file instead of stdout.")
    return parser


def _run(args) -> int:
    import harness

    status = EXIT_OK
    references = {}
    for config in harness.load_configs(args.config, args.section):
        manifest = harness.run(config, references)
        if manifest["status"] != "success":
            logger.error(f"[{config.name}] {manifest['failures']} failed runs")
            status = EXIT_INTEGRATION_FAILED
    return status


def _validate(args) -> int:
    import harness

    status = EXIT_OK
    for config in harness.load_configs(args.config, args.section):
        report = harness.validate(config)
        print(f"{config.name}: {report['status'].upper()} ({report['file']})")
        if report["status"] != "pass":
            status = EXIT_VALIDATION_FAILED
    return status


def _presets(args) -> int:
    import harness

    if args.action == "list":
        for preset in harness.list_presets():
            print(f"{preset['name']:<28} {preset['description']}")
        return EXIT_OK

    text = harness.read_preset(args.name)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(text)
        logger.info(f"Preset '{args.name}' written to {args.output}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    logging.basicConfig(
        level=os.getenv("LIEEP_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)

    from errors import ConfigError

    handlers = {"run": _run, "validate": _validate, "presets": _presets}
    try:
        return handlers[args.command](args)
    except ConfigError as e:
        logger.error(f"Config error: {e}")
        return EXIT_CONFIG_ERROR
    except Exception:
        logger.exception(f"'{args.command}' failed unexpectedly")
        return EXIT_INTEGRATION_FAILED


if __name__ == "__main__":
    sys.exit(main())

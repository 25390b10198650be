"""Main entrypoint for the enclosure laboratory."""

import argparse
import sys
from typing import List, Optional

from enclab.core.config import RuntimeSettings, config_hash, load_config
from enclab.core.engine import ExperimentEngine, commands
from enclab.core.exceptions import EnclabError
from enclab.core.logger import get_logger, setup_logger


EXIT_CHECK_FAILED = 1
EXIT_ERROR = 2


def build_parser() -> argparse.ArgumentParser:
    epilog = "commands:\n" + "\n".join(f"  {name:<12} {text}" for name, text in commands.describe().items())
    parser = argparse.ArgumentParser(
        prog="enclab",
        description="Time-domain enclosure method laboratory for a two-layer medium",
        epilog=epilog,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument(
        'command',
        choices=commands.list(),
        help='Pipeline stage to run'
    )
    parser.add_argument(
        'paths',
        nargs='*',
        help='Config files for the sweep command'
    )
    parser.add_argument(
        '--config',
        type=str,
        default='config.yaml',
        help='Path to configuration file'
    )
    parser.add_argument(
        '--out',
        type=str,
        help='Output directory (overrides config)'
    )
    parser.add_argument(
        '--check',
        action='store_true',
        help='Run the acceptance checks of the command; exit 1 if any fails'
    )
    parser.add_argument(
        '--seed',
        type=int,
        help='Random seed (overrides config)'
    )
    parser.add_argument(
        '--threads',
        type=int,
        help='Parallel workers (overrides config)'
    )
    parser.add_argument(
        '--log-level',
        type=str,
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        help='Log level (overrides config)'
    )
    parser.add_argument(
        '--only',
        nargs='+',
        help='Checks to run with the verify command'
    )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main function; returns the process exit code."""
    args = build_parser().parse_args(argv)

    try:
        config = load_config(args.config)
        env = RuntimeSettings()

        # precedence: command line, then environment, then config file
        updates = {}
        if args.seed is not None:
            updates["seed"] = args.seed
        threads = args.threads or env.threads
        if threads:
            updates["threads"] = threads
        if updates:
            config = config.model_copy(update=updates)
        level = args.log_level or env.log_level or config.logging.level

        setup_logger(
            level=level,
            log_format=config.logging.format,
            log_file=config.logging.file,
            rotation=config.logging.rotation,
            config_hash=config_hash(config),
        )
        logger = get_logger()
        logger.info(f"Configuration '{config.name}' loaded from {args.config}")

        engine = ExperimentEngine(config, out_dir=args.out or env.out)
        result = engine.run_command(
            args.command,
            check=args.check or args.command == "verify",
            paths=args.paths,
            only=args.only,
        )
        logger.info(f"{args.command}: {result}")

    except FileNotFoundError as e:
        print(f"Error: {e}")
        return EXIT_ERROR
    except EnclabError as e:
        print(f"Error: {e}")
        return EXIT_ERROR
    except KeyboardInterrupt:
        print("\nInterrupted")
        return EXIT_ERROR

    if engine.failed_checks:
        names = ", ".join(c.name for c in engine.failed_checks)
        print(f"Failed checks: {names}")
        return EXIT_CHECK_FAILED
    return 0


if __name__ == "__main__":
    sys.exit(main())

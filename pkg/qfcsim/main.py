import logging
import sys

from .cli import build_cli
from .config import THREADS

logger = logging.getLogger(__name__)


def main(argv=None):
    """Parse the command line, run one subcommand and return its exit code."""
    cli = build_cli()
    logger.debug(f"Default worker threads: {THREADS}")
    try:
        return cli.run(argv)
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 130


if __name__ == "__main__":
    sys.exit(main())

"""Entry point of the `btcnn` command."""
import logging
import sys
from typing import List, Optional

from .cli.commands import HANDLERS
from .cli.parser import build_parser
from .utils.errors import StageError


def main(argv: Optional[List[str]] = None) -> int:
    """Run the command line; return the process exit code."""
    args = build_parser().parse_args(argv)

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format='%(levelname)s: %(message)s'
    )
    logger = logging.getLogger(__name__)

    logger.info(f"Running {args.command} (seed {args.seed})")
    try:
        HANDLERS[args.command](args)
    except StageError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return 1
    logger.info(f"{args.command} finished")
    return 0


if __name__ == "__main__":
    sys.exit(main())

import logging
import sys

FORMAT = "%(asctime)s [rank {rank}] %(levelname)s %(name)s: %(message)s"


def configure_logging(verbosity=0, rank=0, stream=None):
    """Install a single stream handler on the root logger.

    Rank 0 logs at INFO (DEBUG with -v); the other ranks only report
    warnings unless run with -vv.
    """
    if rank == 0:
        level = logging.DEBUG if verbosity >= 1 else logging.INFO
    else:
        level = logging.DEBUG if verbosity >= 2 else logging.WARNING

    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(logging.Formatter(FORMAT.format(rank=rank)))

    root = logging.getLogger()
    for old in list(root.handlers):
        root.removeHandler(old)
    root.addHandler(handler)
    root.setLevel(level)
    logging.captureWarnings(True)
    return root

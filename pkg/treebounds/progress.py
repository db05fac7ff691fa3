import sys

from tqdm import tqdm


def progress(iterable, desc, total=None):
    """tqdm bar on stderr, silent unless stderr is a terminal."""
    return tqdm(
        iterable,
        desc=desc,
        total=total,
        file=sys.stderr,
        disable=not sys.stderr.isatty(),
        leave=False,
    )

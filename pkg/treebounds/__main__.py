#!/usr/bin/env python
"""treebounds command-line utility."""

import sys

from treebounds.cli import main

if __name__ == "__main__":
    sys.exit(main())

"""Allow ``python -m cortexforge`` to reach the CLI."""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())

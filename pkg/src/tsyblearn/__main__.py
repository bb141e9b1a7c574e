"""Run the experiment CLI as ``python -m tsyblearn``."""

from __future__ import annotations

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())

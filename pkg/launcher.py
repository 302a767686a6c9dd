"""
flatscan launcher
Run experiments from a checkout without installing the package:

    python launcher.py find --config configs/quartic.json
"""

import sys

from src.flatscan.cli import parse_and_dispatch


if __name__ == '__main__':
    sys.exit(parse_and_dispatch(sys.argv[1:]))

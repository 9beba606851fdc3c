#!/usr/bin/env python3
"""Command-line entry point; see patchguard_exporter.export."""

import sys

from patchguard_exporter.export import main

if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""Wrapper script to run catlab from a source checkout."""
import sys
import os

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.cli import main  # pyright: ignore[reportMissingImports]

if __name__ == "__main__":
    sys.exit(main())

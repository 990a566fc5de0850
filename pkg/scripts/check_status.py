#!/usr/bin/env python3
"""
Status check for the catlab environment: configuration and dependencies.
"""

import importlib
import sys
import os

# Add parent directory to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src import __version__
from src.config import (
    CATLAB_JOBS, CATLAB_LOG_LEVEL, CATLAB_OUTPUT_DIR, CATLAB_SEED,
    DEFAULT_VOCAB_SIZE, NORM_EPS, SIGNATURE_ENUM_LIMIT, validate_config,
)

DEPENDENCIES = ("numpy", "scipy", "joblib", "tqdm", "dotenv")


def check_dependencies():
    """Check that every runtime dependency imports."""
    print("📦 Dependencies")
    print("=" * 50)
    ok = True
    for name in DEPENDENCIES:
        try:
            module = importlib.import_module(name)
            version = getattr(module, "__version__", "unknown")
            print(f"   ✅ {name} {version}")
        except ImportError as e:
            print(f"   ❌ {name}: {e}")
            ok = False
    return ok


def check_system_config():
    """Check environment configuration."""
    print("\n⚙️  System Configuration")
    print("=" * 50)
    print(f"   Seed override: {CATLAB_SEED or 'none (config documents)'}")
    print(f"   Jobs: {CATLAB_JOBS}")
    print(f"   Output directory: {CATLAB_OUTPUT_DIR}")
    print(f"   Log level: {CATLAB_LOG_LEVEL}")
    print(f"   Norm floor: {NORM_EPS:g}")
    print(f"   Signature enumeration limit: {SIGNATURE_ENUM_LIMIT}")
    print(f"   Default vocabulary size: {DEFAULT_VOCAB_SIZE}")
    try:
        validate_config()
        print("   ✅ Configuration valid")
        return True
    except ValueError as e:
        print(f"   ❌ {e}")
        return False


def check_output_dir():
    """Check that the output directory is writable."""
    print("\n💾 Output Directory")
    print("=" * 50)
    target = os.path.abspath(CATLAB_OUTPUT_DIR)
    parent = target if os.path.isdir(target) else os.path.dirname(target)
    if os.access(parent, os.W_OK):
        print(f"   ✅ Writable: {target}")
        return True
    print(f"   ❌ Not writable: {target}")
    return False


def main():
    """Main status check."""
    print(f"🚀 catlab {__version__} - System Status")
    print("=" * 50)
    print()

    checks = [
        ("Dependencies", check_dependencies()),
        ("Configuration", check_system_config()),
        ("Output directory", check_output_dir()),
    ]

    print("\n" + "=" * 50)
    print("📊 Status Summary")
    print("=" * 50)
    all_ok = True
    for name, status in checks:
        print(f"   {'✅' if status else '❌'} {name}")
        all_ok &= status

    print()
    if all_ok:
        print("🎉 All systems ready!")
        print("\n📝 Try:")
        print("   python catlab.py sc-demo")
        print("   python catlab.py verify-constructions")
    else:
        print("⚠️  Some components need attention")
        sys.exit(1)


if __name__ == "__main__":
    main()

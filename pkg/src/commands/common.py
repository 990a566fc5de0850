"""
Shared wiring for catlab subcommands.

Every subcommand accepts --config/--seed/--out/--jobs. Precedence for the
seed is: --seed flag, then the CATLAB_SEED environment variable, then the
config document.
"""
import argparse
import logging
import sys
from dataclasses import replace
from typing import Any, Callable, Dict, Iterable, Optional, Type

from tqdm import tqdm

from src.config import ExperimentConfig, get_seed
from src.core.errors import CatlabError, InvalidConfig
from src.utils.io_utils import RunManifest

logger = logging.getLogger(__name__)


def add_common_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--config", "-c", help="Path to a JSON config document")
    parser.add_argument("--seed", type=int, help="Global seed (overrides CATLAB_SEED and the config)")
    parser.add_argument("--out", "-o", help="Output directory")
    parser.add_argument("--jobs", "-j", type=int, help="Parallel workers")
    parser.add_argument("--no-progress", action="store_true", help="Disable progress bars")


def load_config(cls: Type[ExperimentConfig], args: argparse.Namespace,
                overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Load the config document and apply environment and flag overrides.

    Raises:
        InvalidConfig: If the merged config is invalid
    """
    config = cls.load(getattr(args, 'config', None))
    changes = {'seed': get_seed(config.seed)}
    if getattr(args, 'seed', None) is not None:
        changes['seed'] = args.seed
    if getattr(args, 'out', None):
        changes['out'] = args.out
    if getattr(args, 'jobs', None) is not None:
        changes['jobs'] = args.jobs
    for key, value in (overrides or {}).items():
        if value is not None:
            changes[key] = value
    try:
        config = replace(config, **changes)
    except TypeError as e:
        raise InvalidConfig(str(e))
    config.validate()
    return config


def progress(iterable: Optional[Iterable], args: argparse.Namespace, **kwargs) -> tqdm:
    """tqdm bar honouring --no-progress; pass iterable=None and total= for a manual bar."""
    disable = getattr(args, 'no_progress', False) or not sys.stderr.isatty()
    return tqdm(iterable, disable=disable, leave=False, **kwargs)


def finish(manifest: RunManifest, out_dir: str, ok: bool) -> int:
    """Write the manifest and report the final status; returns the exit code."""
    manifest.finish(ok)
    path = manifest.save(out_dir)
    print(f"💾 Manifest saved to: {path}")
    if ok:
        print("✅ All checks passed")
        return 0
    print("❌ One or more checks failed")
    return 1


def run_guarded(run: Callable[[argparse.Namespace], int], args: argparse.Namespace) -> int:
    """Run a subcommand, mapping errors to a printed message and exit status 1."""
    try:
        return run(args)
    except CatlabError as e:
        print(f"❌ Error: {type(e).__name__}: {e}")
        return 1
    except Exception as e:
        logger.debug("Unexpected failure", exc_info=True)
        print(f"❌ Error: {str(e)}")
        return 1


def standalone_main(description: str, add_arguments: Callable[[argparse.ArgumentParser], None],
                    run: Callable[[argparse.Namespace], int], argv=None):
    parser = argparse.ArgumentParser(description=description)
    add_common_arguments(parser)
    add_arguments(parser)
    args = parser.parse_args(argv)
    sys.exit(run_guarded(run, args))

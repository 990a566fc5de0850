#!/usr/bin/env python3
"""
Generate synthetic recall and selective-copy suites as JSONL.

Named presets reproduce the standard MQAR / MQNAR training recipes; otherwise
the suite is described by kind, N, L, k and vocab_size in the config.
"""
import argparse
import sys
from dataclasses import replace

from src.config import GenTasksConfig
from src.commands.common import finish, load_config, progress, standalone_main
from src.core.errors import InvalidConfig
from src.core.tasks import TASK_PRESETS, TaskSuiteSpec, derive_seed, generate_suite, validate_instance
from src.utils.io_utils import RunManifest, write_jsonl

COMMAND = 'gen-tasks'


def apply_preset(config: GenTasksConfig) -> GenTasksConfig:
    """Fill kind/N/L/k and split sizes from a named preset."""
    if config.preset is None:
        return config
    if config.preset not in TASK_PRESETS:
        raise InvalidConfig(f"Unknown preset {config.preset!r} (choose from {', '.join(sorted(TASK_PRESETS))})")
    return replace(config, **TASK_PRESETS[config.preset])


def run(args: argparse.Namespace) -> int:
    config = apply_preset(load_config(GenTasksConfig, args, {"preset": getattr(args, "preset", None)}))
    sizes = {"n_train": getattr(args, "n_train", None), "n_test": getattr(args, "n_test", None)}
    config = replace(config, **{k: v for k, v in sizes.items() if v is not None})
    config.validate()
    manifest = RunManifest(COMMAND, config.to_dict())

    ok = True
    for split, n, index in (('train', config.n_train, 0), ('test', config.n_test, 1)):
        if n == 0:
            continue
        spec = TaskSuiteSpec(kind=config.kind, L=config.L, vocab_size=config.vocab_size, k=config.k,
                             n_instances=n, seed=derive_seed(config.seed, index), N=config.N,
                             no_match_fraction=config.no_match_fraction)
        print(f"🔄 Generating {n} {config.kind} {split} instances (L={config.L}, k={config.k})")
        suite = generate_suite(spec, jobs=config.jobs)
        invalid = sum(1 for inst in progress(suite, args, desc=f"validating {split}") if validate_instance(inst))
        if invalid:
            print(f"❌ {invalid} {split} instances failed self-verification")
            ok = False
        path = manifest.path_for(config.out, f"tasks.{split}", 'jsonl')
        write_jsonl(path, (inst.to_dict() for inst in suite))
        manifest.add_output(split, path)
        print(f"💾 {split.capitalize()} split saved to: {path}")
    return finish(manifest, config.out, ok)


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--preset", help=f"Named suite ({', '.join(sorted(TASK_PRESETS))})")
    parser.add_argument("--n-train", type=int, help="Training instances")
    parser.add_argument("--n-test", type=int, help="Test instances")


def main(argv=None):
    standalone_main("Generate synthetic task suites", add_arguments, run, argv)


if __name__ == "__main__":
    main(sys.argv[1:])

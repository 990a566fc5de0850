#!/usr/bin/env python3
"""Decode a few selective-copy prompts with the exact construction and show them."""
import argparse
import sys

from src.config import ScDemoConfig
from src.commands.common import finish, load_config, standalone_main
from src.core.constructions import build_sc_model, decode_sc
from src.core.errors import NonTermination
from src.core.tasks import derive_seed, exact_match, gen_sc
from src.utils.io_utils import RunManifest, write_jsonl

COMMAND = 'sc-demo'


def _show(tokens, signal_size: int, bot: int) -> str:
    out = []
    for t in tokens:
        if t == bot:
            out.append('⊥')
        elif t < signal_size:
            out.append(str(t))
        else:
            out.append('.')
    return ' '.join(out)


def run(args: argparse.Namespace) -> int:
    config = load_config(ScDemoConfig, args, {"variant": getattr(args, "variant", None)})
    manifest = RunManifest(COMMAND, config.to_dict())
    T = config.n_signal + config.n_noise + config.n_signal + 1
    model = build_sc_model(config.signal_size, T, config.variant, window=config.n_signal + 1)
    print(f"🔄 Selective copy, {config.variant} variant: |S|={config.signal_size}, "
          f"{config.n_signal} signals among {config.n_noise} noise tokens")

    records, ok = [], True
    for i in range(config.instances):
        inst = gen_sc(config.n_signal, config.n_noise, config.signal_size, derive_seed(config.seed, i))
        try:
            decoded = decode_sc(model, inst)
        except NonTermination as e:
            print(f"❌ Instance {i}: {e}")
            decoded = []
        hit = exact_match(inst, decoded)
        ok &= hit
        print(f"\n📝 Prompt:   {_show(inst.tokens, config.signal_size, model.bot)}")
        print(f"   Expected: {inst.answers}")
        print(f"   {'✅' if hit else '❌'} Decoded:  {decoded}")
        records.append({"tokens": inst.tokens, "answers": inst.answers, "decoded": decoded, "correct": hit})

    path = manifest.path_for(config.out, 'sc_demo', 'jsonl')
    write_jsonl(path, records)
    manifest.add_output('decoded', path)
    print(f"\n💾 Decoded instances saved to: {path}")
    return finish(manifest, config.out, ok)


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--variant", choices=('infinite', 'window'), help="Query filter variant")


def main(argv=None):
    standalone_main("Decode selective-copy prompts with the exact construction", add_arguments, run, argv)


if __name__ == "__main__":
    main(sys.argv[1:])

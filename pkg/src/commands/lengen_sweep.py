#!/usr/bin/env python3
"""
Length-generalization sweep.

Builds one member of the recall model family at build_length, measures its
normalized error there, then evaluates error and accuracy at every test
length. The corrupted member is a negative control and must fail everywhere.
"""
import argparse
import sys

from src.config import LengenSweepConfig
from src.commands.common import finish, load_config, standalone_main
from src.core.audit import build_family_member, epsilon0, length_gen_curve, measure_epsilon
from src.core.numerics import Vocab
from src.utils.io_utils import RunManifest, write_csv

COMMAND = 'lengen-sweep'
CSV_COLUMNS = ('L_prime', 'max_error', 'accuracy')


def run(args: argparse.Namespace) -> int:
    config = load_config(LengenSweepConfig, args, {
        "model": getattr(args, "model", None),
        "eta": getattr(args, "eta", None),
    })
    manifest = RunManifest(COMMAND, config.to_dict())
    vocab = Vocab.orthonormal(config.vocab_size)
    model = build_family_member(config.model, vocab, config.build_length, config.eta, config.epsilon0)

    print(f"🔄 Measuring {config.model} model at build length {config.build_length}")
    eps = measure_epsilon(model, vocab, config.build_length, config.suite_size, seed=config.seed,
                          jobs=config.jobs)
    eps0 = epsilon0(eps, vocab)
    print(f"   epsilon = {eps:.3e}, epsilon0 = {eps0:.3e}")

    print(f"🔄 Sweeping lengths {config.lengths}")
    curve = length_gen_curve(model, vocab, config.lengths, config.suite_size, eps0, config.seed,
                             jobs=config.jobs)
    rows = [list(row) for row in curve.rows()]

    print("\n📊 Length generalization:")
    for L_prime, err, acc in rows:
        print(f"   L'={L_prime:<6} max error {err:.3e}  accuracy {acc:.4f}")

    if config.model == 'corrupted':
        ok = all(p.accuracy == 0.0 for p in curve.points)
    else:
        ok = all(p.accuracy == 1.0 for p in curve.points)

    csv_path = manifest.path_for(config.out, 'lengen_sweep', 'csv')
    write_csv(csv_path, CSV_COLUMNS, rows)
    manifest.add_output('curve', csv_path)
    manifest.notes.append(f"epsilon0={eps0!r}")
    manifest.notes.append(f"r_hat={curve.r_hat!r} r_hat_stability={curve.r_hat_stability!r}")
    print(f"💾 Curve saved to: {csv_path}")
    return finish(manifest, config.out, ok)


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--model", choices=('exact', 'perturbed', 'corrupted', 'soft'),
                        help="Model family member")
    parser.add_argument("--eta", type=float, help="Perturbation size for the perturbed member")


def main(argv=None):
    standalone_main("Sweep recall accuracy across test lengths", add_arguments, run, argv)


if __name__ == "__main__":
    main(sys.argv[1:])

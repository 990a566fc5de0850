#!/usr/bin/env python3
"""
Landmark-CAT phase transition.

For every block size B, bisects over the embedding dimension d for the
dimensions where recall succeeds in 10%, 50% and 90% of Random Context Model
trials, and compares the median with the theoretical threshold.
"""
import argparse
import math
import sys

from src.config import LcatPhaseConfig
from src.commands.common import finish, load_config, progress, standalone_main
from src.core.lcat import BLOCK_MEAN, LcatConfig, SweepRow, Sufficient, phase_transition, theoretical_threshold
from src.utils.io_utils import RunManifest, write_csv

COMMAND = 'lcat-phase'
RATIO_RANGE = (0.5, 1.5)
MIN_R2 = 0.98


def sweep_checks(result, base: LcatConfig) -> dict:
    checks = {"monotone": not result.non_monotone,
              "d_50_found": all(r.d_50 is not None for r in result.rows)}
    if base.filter_kind == BLOCK_MEAN:
        ratios = []
        for row in result.rows:
            if row.d_50 is None:
                continue
            ref = theoretical_threshold(LcatConfig(L=base.L, B=row.B, d=1, sigma2=base.sigma2),
                                        0.0, Sufficient())
            ratios.append(row.d_50 / ref)
        checks["d_50_near_theory"] = all(RATIO_RANGE[0] <= r <= RATIO_RANGE[1] for r in ratios)
        if len(result.rows) >= 3:
            checks["d_50_linear_in_B"] = result.linear_fit_r2() >= MIN_R2
    return checks


def run(args: argparse.Namespace) -> int:
    config = load_config(LcatPhaseConfig, args, {
        "filter_kind": getattr(args, "filter_kind", None),
        "sim_mode": getattr(args, "sim_mode", None),
        "trials": getattr(args, "trials", None),
    })
    manifest = RunManifest(COMMAND, config.to_dict())
    base = LcatConfig(L=config.L, B=min(config.block_sizes), d=1, sigma2=config.sigma2,
                      filter_kind=config.filter_kind, sim_mode=config.sim_mode)

    print(f"🔄 Phase transition at L=2^{math.log2(config.L):g}, {config.filter_kind}, "
          f"{config.sim_mode} mode, {config.trials} trials per point")
    bar = progress(None, args, total=len(config.block_sizes), desc="block sizes")
    result = phase_transition(base, config.block_sizes, config.target_rates, config.trials,
                              seed=config.seed, jobs=config.jobs, t=config.t, progress=lambda: bar.update(1))
    bar.close()

    print("\n📊 Dimension thresholds:")
    for row in result.rows:
        flag = " (non-monotone)" if row.non_monotone else ""
        print(f"   B={row.B:<5} d_10={row.d_10}  d_50={row.d_50}  d_90={row.d_90}  theory={row.d_theory}{flag}")
    if len(result.rows) >= 3:
        print(f"   R^2 of d_50 vs B: {result.linear_fit_r2():.4f}")

    checks = sweep_checks(result, base)
    for name, passed in checks.items():
        print(f"   {'✅' if passed else '❌'} {name}")
    if result.non_monotone:
        manifest.notes.append("NonMonotone: " + ", ".join(str(r.B) for r in result.rows if r.non_monotone))

    csv_path = manifest.path_for(config.out, 'lcat_phase', 'csv')
    write_csv(csv_path, SweepRow.CSV_COLUMNS, [row.csv_row() for row in result.rows])
    manifest.add_output('sweep', csv_path)
    print(f"💾 Sweep saved to: {csv_path}")
    return finish(manifest, config.out, all(checks.values()))


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--filter-kind", choices=('block_mean', 'exp_smoothing'), help="Landmark filter")
    parser.add_argument("--sim-mode", choices=('full', 'reduced'), help="Simulation mode")
    parser.add_argument("--trials", type=int, help="Trials per bisection step")


def main(argv=None):
    standalone_main("Sweep the Landmark-CAT dimension threshold over block sizes", add_arguments, run, argv)


if __name__ == "__main__":
    main(sys.argv[1:])

#!/usr/bin/env python3
"""
Audit one recall model for length generalization.

The report records the measured error, its normalized form, whether the
model is inside the certified regime and whether the certified consequences
(value filter near the delay, attention near the golden map, stable error
growth) hold.
"""
import argparse
import sys

from src.config import AuditConfig
from src.commands.common import finish, load_config, standalone_main
from src.commands.lengen_sweep import CSV_COLUMNS as CURVE_COLUMNS
from src.core.audit import audit, build_family_member, check_filter_bound
from src.core.numerics import Vocab
from src.utils.io_utils import RunManifest, write_csv, write_json

COMMAND = 'audit'
MAX_R_HAT_DRIFT = 2.0


def audit_checks(report, model_name: str) -> dict:
    """Pass/fail of each audited property for one report."""
    if model_name == 'corrupted':
        return {"negative_control_fails": all(a == 0.0 for a in report.lengen_accuracy.values())}
    checks = {"in_regime": report.in_regime}
    if report.in_regime:
        checks["filter_bound"] = check_filter_bound(report)
        checks["golden_map_bound"] = report.golden_map_bound_holds
        checks["r_hat_stable"] = report.r_hat_stability <= MAX_R_HAT_DRIFT
        checks["lengen_accuracy"] = all(a == 1.0 for a in report.lengen_accuracy.values())
    return checks


def run(args: argparse.Namespace) -> int:
    config = load_config(AuditConfig, args, {
        "model": getattr(args, "model", None),
        "eta": getattr(args, "eta", None),
    })
    manifest = RunManifest(COMMAND, config.to_dict())
    vocab = Vocab.orthonormal(config.vocab_size)
    model = build_family_member(config.model, vocab, config.L, config.eta, config.epsilon0)

    print(f"🔄 Auditing {config.model} model at L={config.L}")
    report = audit(model, vocab, config.L, config.lengths, config.suite_size, seed=config.seed,
                   jobs=config.jobs, model_name=config.model)
    checks = audit_checks(report, config.model)

    print("\n📊 Audit report:")
    print(f"   epsilon            {report.epsilon:.3e}")
    print(f"   epsilon0           {report.epsilon0:.3e} (regime {'yes' if report.in_regime else 'no'})")
    print(f"   filter l1 to delay {report.filter_l1_to_delay:.3e}")
    print(f"   golden map l1 max  {report.map_l1_max:.3e}")
    print(f"   R-hat              {report.r_hat:.3e} (stability {report.r_hat_stability:.3f})")
    for name, passed in checks.items():
        print(f"   {'✅' if passed else '❌'} {name}")

    path = manifest.path_for(config.out, f"audit.{config.model}", 'json')
    write_json(path, {"run_id": manifest.run_id, "report": report.to_dict(), "checks": checks})
    manifest.add_output('report', path)
    print(f"💾 Report saved to: {path}")

    curve_path = manifest.path_for(config.out, f"audit_curve.{config.model}", 'csv')
    write_csv(curve_path, CURVE_COLUMNS,
              [[L_prime, report.lengen_errors[L_prime], report.lengen_accuracy[L_prime]]
               for L_prime in sorted(report.lengen_errors)])
    manifest.add_output('curve', curve_path)
    print(f"💾 Curve saved to: {curve_path}")
    return finish(manifest, config.out, all(checks.values()))


def add_arguments(parser: argparse.ArgumentParser):
    parser.add_argument("--model", choices=('exact', 'perturbed', 'corrupted', 'soft'),
                        help="Model family member")
    parser.add_argument("--eta", type=float, help="Perturbation size for the perturbed member")


def main(argv=None):
    standalone_main("Audit a recall model for length generalization", add_arguments, run, argv)


if __name__ == "__main__":
    main(sys.argv[1:])

import sys
import json
import argparse
from pathlib import Path

from intersnap_archive.definitions import InterSnapError, ConfigInvalid, InvalidFault
from intersnap_archive.config import output_path, delete_output
from intersnap_archive.io import default_suite, list_scenarios
from intersnap_archive.run import load_scenario, run_scenario, run_battery, export_state, verify_output
from intersnap_archive.visualise import write_figures


fault_cases = {1: "fault_case_1", 2: "fault_case_2", 3: "fault_case_3"}


def _error(code, message, exit_code):
    sys.stderr.write(json.dumps({"error": code, "message": message}) + "\n")
    return exit_code


def _out_path(out, name, seed):
    if out:
        return Path(out)
    try:
        return output_path(default_suite, name, seed)
    except (AttributeError, FileNotFoundError, KeyError):
        return Path("output") / f"{name}-seed{seed}"


def _run(scenario, seed, out, verbose, figures=False):
    config = load_scenario(scenario, seed=seed)
    out = _out_path(out, config["name"], config["seed"])
    if out.exists():
        delete_output(out)

    result = run_scenario(config, store_root=out / "store", verbose=verbose)
    export_state(result, out)
    if figures:
        write_figures(result.report, out / "figures")

    if result.world.error_log:
        print(f"!!! Errors occurred during {config['name']}. See {out / 'error_log.txt'} for details")

    return result, out


def command_run(args):
    result, out = _run(args.scenario, args.seed, args.out, args.verbose, figures=args.figures)
    print(json.dumps({"scenario": result.world.config["name"], "seed": result.world.seed,
                      "state_hash": result.state_hash, "out": str(out),
                      "summary": result.report.summary(wall_clock=False)}, sort_keys=True))
    return 0


def command_fault_demo(args):
    result, out = _run(fault_cases[args.case], args.seed, args.out, args.verbose)
    print(json.dumps({"case": args.case, "state_hash": result.state_hash, "out": str(out),
                      "verdicts": [v["verdict"] for v in result.world.verdicts]}, sort_keys=True))
    return 0


def command_verify(args):
    violations = verify_output(args.out)
    if violations:
        for violation in violations:
            print(violation)
        return _error("verify_failed", f"{len(violations)} invariant violations in {args.out}", 3)
    print(f"{args.out} verifies")
    return 0


def command_battery(args):
    seeds = list(range(args.first_seed, args.first_seed + args.seeds))
    records = run_battery(args.scenario, seeds, workers=args.workers, verbose=True)
    failed = [r["seed"] for r in records if r["atomicity_violations"]]
    for record in records:
        print(json.dumps({"seed": record["seed"], "state_hash": record["state_hash"],
                          "atomicity_violations": len(record["atomicity_violations"]),
                          "errors": len(record["errors"])}, sort_keys=True))
    if failed:
        return _error("atomicity_violation", f"Seeds with violations: {failed}", 1)
    return 0


def command_list(args):
    for name in list_scenarios(this_repo=True):
        print(name)
    return 0


def parser():
    p = argparse.ArgumentParser(prog="intersnap",
                                description="Snapshot archiving for cross-chain transactions between permissioned ledgers",
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run a scenario and export its state")
    run.add_argument("--scenario", required=True, help="Scenario JSON file, or a scenario name in the test suite")
    run.add_argument("--seed", type=int, default=None, help="Overrides the scenario seed")
    run.add_argument("--out", default=None, help="Output directory")
    run.add_argument("--figures", action="store_true", help="Also write metric figures")
    run.add_argument("--verbose", action="store_true")
    run.set_defaults(func=command_run)

    demo = sub.add_parser("fault-demo", help="Run one of the three dispute demonstration scenarios")
    demo.add_argument("--case", type=int, choices=sorted(fault_cases), required=True)
    demo.add_argument("--seed", type=int, default=None)
    demo.add_argument("--out", default=None)
    demo.add_argument("--verbose", action="store_true")
    demo.set_defaults(func=command_fault_demo)

    verify = sub.add_parser("verify", help="Re-check the invariants of an exported run")
    verify.add_argument("--out", required=True)
    verify.set_defaults(func=command_verify)

    battery = sub.add_parser("battery", help="Run a scenario for consecutive seeds")
    battery.add_argument("--scenario", required=True)
    battery.add_argument("--seeds", type=int, default=10, help="Number of seeds")
    battery.add_argument("--first-seed", type=int, default=0)
    battery.add_argument("--workers", type=int, default=1)
    battery.set_defaults(func=command_battery)

    scenarios = sub.add_parser("list", help="List the scenarios shipped with the package")
    scenarios.set_defaults(func=command_list)

    return p


def main(argv=None):
    args = parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigInvalid, InvalidFault) as e:
        return _error(e.code, str(e), 2)
    except InterSnapError as e:
        return _error(e.code, str(e), 1)
    except FileNotFoundError as e:
        return _error("not_found", str(e), 1)
    except OSError as e:
        return _error("io_failure", str(e), 1)
    except (TypeError, ValueError) as e:
        return _error("invalid_argument", str(e), 1)


if __name__ == "__main__":
    sys.exit(main())

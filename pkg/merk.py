#!/usr/bin/env python3
"""
CLI for MERK multirate integration studies
Usage: python merk.py list
       python merk.py converge --method MERK4 --problem bi_directional --policy fixed_m:50 --out merk4.csv
       python merk.py efficiency --method MIS-KW3 --problem brusselator --policy fixed_h:0.001
       python merk.py msweep --method MERK4 --problem one_directional
       python merk.py inner-order-study --method MERK4
       python merk.py oracle-check

Exit codes: 0 success, 1 solver failure, 2 configuration error.
"""

import argparse
import logging
import sys
from pathlib import Path

from config import Config
from models import ConfigError, ContractViolation, MerkError, StepPolicy, StudyConfig
from services.harness import (
    METHODS, REFERENCE_INNER_ORDERS, efficiency_table, run_convergence, run_inner_order_study, run_msweep,
)
from services.inner_erk import tableau_catalog
from services.merk_core import scheme_catalog
from services.oracle_checks import run_oracle_checks
from services.problems import PROBLEM_SPECS, get_problem_spec

logger = logging.getLogger(__name__)


def resolve_output(out):
    """Bare file names go to Config.OUTPUT_DIR"""
    if not out:
        return None
    path = Path(out)
    if path.parent == Path('.'):
        path = Path(Config.OUTPUT_DIR) / path
    return str(path)


def build_study_config(args) -> StudyConfig:
    spec = get_problem_spec(args.problem)
    policy = StepPolicy.parse(args.policy) if args.policy else spec.default_policy
    return StudyConfig(
        method=args.method,
        problem=args.problem,
        policy=policy,
        H_list=tuple(args.h_list or spec.macro_steps(args.method)),
        q=args.q,
        r=args.r,
        output_path=resolve_output(args.out),
        jobs=args.jobs,
    )


def _print_rate(report):
    rate = 'n/a' if report.best_fit_rate is None else f"{report.best_fit_rate:.2f}"
    print(f"\n📈 Best-fit rate: {rate} (floor {report.floor_cutoff:g})")
    if report.config.output_path:
        print(f"💾 CSV written to {report.config.output_path}")


def command_converge(args) -> int:
    report = run_convergence(build_study_config(args))
    print(report.to_frame().to_string(index=False))
    _print_rate(report)
    return 0


def command_efficiency(args) -> int:
    report = run_convergence(build_study_config(args))
    print(efficiency_table(report).to_string(index=False))
    _print_rate(report)
    return 0


def command_msweep(args) -> int:
    result = run_msweep(args.method, args.problem, m_list=args.m_list, H_list=args.h_list,
                        jobs=args.jobs, output_path=resolve_output(args.out))
    curves = result['curves']
    print(curves[['m', 'H', 'max_error', 'slow_calls', 'total_calls']].to_string(index=False))
    print(f"\n🎯 Selected m = {result['selected_m']}")
    if result['slow_choice'] != result['total_choice']:
        print(f"⚠️  Total-calls view preferred m = {result['total_choice']}")
    return 0


def command_inner_order_study(args) -> int:
    table = run_inner_order_study(args.method, problem=args.problem, m=args.m, H_list=args.h_list, jobs=args.jobs)
    reference = REFERENCE_INNER_ORDERS.get(args.method, {})
    table['reference'] = [reference.get((q, r)) for q, r in zip(table['q'], table['r'])]
    print(table.to_string(index=False, float_format=lambda x: f"{x:.2f}"))
    return 0


def command_oracle_check(args) -> int:
    checks = run_oracle_checks()
    for check in checks:
        marker = '✅ PASS' if check['passed'] else '❌ FAIL'
        print(f"{marker}  {check['name']}: {check['detail']}")
    failed = [check for check in checks if not check['passed']]
    print(f"\n{len(checks) - len(failed)}/{len(checks)} properties passed")
    return 1 if failed else 0


def command_list(args) -> int:
    print("Methods:")
    schemes = scheme_catalog()
    for method in METHODS:
        if method in schemes:
            scheme = schemes[method]
            print(f"  {method:<9} order {scheme.order}, fast duration {scheme.fast_duration_per_step} H")
            if args.verbose:
                for line in scheme.describe():
                    print(f"      {line}")
        else:
            print(f"  {method:<9} order 3, fast duration 1 H (baseline)")

    print("\nProblems:")
    for spec in PROBLEM_SPECS.values():
        print(f"  {spec.id:<19} category {spec.category:<2} {spec.default_policy}  {spec.description}")

    print("\nTableaus:")
    for name, tableau in tableau_catalog().items():
        print(f"  {name:<11} order {tableau.declared_order}, {tableau.stages} stages")
    return 0


def _add_study_flags(parser):
    parser.add_argument('--method', required=True, choices=METHODS, help='Integration method')
    parser.add_argument('--problem', required=True, choices=list(PROBLEM_SPECS), help='Benchmark problem')
    parser.add_argument('--policy', help='fixed_h:VAL or fixed_m:VAL (default: problem default)')
    parser.add_argument('--h-list', type=float, nargs='+', help='Macro steps H, descending')
    parser.add_argument('--q', type=int, help='Order of the stage inner method')
    parser.add_argument('--r', type=int, help='Order of the final inner method')
    parser.add_argument('--out', help='CSV output file')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='merk', description='Multirate exponential Runge-Kutta studies')
    parser.add_argument('--jobs', type=int, default=Config.DEFAULT_JOBS, help='Parallel runs per study (default 1)')
    subparsers = parser.add_subparsers(dest='command', help='Commands')

    converge_parser = subparsers.add_parser('converge', help='Convergence study')
    _add_study_flags(converge_parser)

    efficiency_parser = subparsers.add_parser('efficiency', help='Error against slow and total calls')
    _add_study_flags(efficiency_parser)

    msweep_parser = subparsers.add_parser('msweep', help='Sweep the separation factor m')
    msweep_parser.add_argument('--method', required=True, choices=METHODS, help='Integration method')
    msweep_parser.add_argument('--problem', required=True, choices=list(PROBLEM_SPECS), help='Category II problem')
    msweep_parser.add_argument('--m-list', type=int, nargs='+', help='Separation factors')
    msweep_parser.add_argument('--h-list', type=float, nargs='+', help='Macro steps H, descending')
    msweep_parser.add_argument('--out', help='CSV output file')

    inner_parser = subparsers.add_parser('inner-order-study', help='Observed order by inner orders (q, r)')
    inner_parser.add_argument('--method', required=True, choices=[m for m in METHODS if m != 'MIS-KW3'])
    inner_parser.add_argument('--problem', default='bi_directional', choices=list(PROBLEM_SPECS))
    inner_parser.add_argument('--m', type=int, help='Separation factor (default: balanced m for the method)')
    inner_parser.add_argument('--h-list', type=float, nargs='+', help='Macro steps H, descending')

    subparsers.add_parser('oracle-check', help='Run the oracle property suites')

    list_parser = subparsers.add_parser('list', help='List methods, problems and tableaus')
    list_parser.add_argument('--verbose', action='store_true', help='Show stage-group plans')
    return parser


COMMANDS = {
    'converge': command_converge,
    'efficiency': command_efficiency,
    'msweep': command_msweep,
    'inner-order-study': command_inner_order_study,
    'oracle-check': command_oracle_check,
    'list': command_list,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code

    if not args.command:
        parser.print_help()
        return 2

    logging.basicConfig(
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        level=Config.LOG_LEVEL
    )

    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ContractViolation) as e:
        print(f"❌ Configuration error: {e}")
        return 2
    except MerkError as e:
        print(f"❌ Solver failure: {e}")
        return 1


if __name__ == '__main__':
    sys.exit(main())

"""
Command-line interface

Subcommands: simulate, estimate, verify <theorem>, kernels, diagnose, selftest.
Exit codes: 0 on success or pass, 2 on verification failure or too few samples or survivors, 1 on usage or
configuration errors.
"""
import argparse
import dataclasses
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from config import LOG_LEVEL, PATHS
from src import __version__
from src.cone_geometry import Direction
from src.config_loader import ConfigLoader
from src.ensembles import MatrixLaw, center
from src.estimators import (diagnose_ensemble, harmonic_V_star_table, harmonic_V_table, invariant_measure, lyapunov,
                            sigma2)
from src.exceptions import InsufficientSamples, InsufficientSurvivors, LabError
from src.harness import THEOREMS, ExperimentRunner
from src.kernels import KERNELS, tabulate
from src.reporting import get_report_analyzer
from src.selftest import run_selftest
from src.utils import canonical_json, print_metrics, write_csv, write_json
from src.walk_engine import (CompositeCollector, MomentCollector, SurvivalCollector, TrajectoryTableCollector, batch)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2
QUANTITIES = ('lyapunov', 'sigma2', 'nu', 'V', 'V_star')

SCHEMA_HELP = """\
JSON schemas
  ensemble:   {"dim": 2, "support": [{"matrix": [[2, 1], [1, 1]], "prob": 0.5}, ...], "log_scale": 0.0}
              or {"dim": d, "generator": "exp_uniform", "params": {"a": 0.0, "b": 0.693}}
  simulate:   {"ensemble": <ensemble or file>, "start": [..], "n": 400, "num_traj": 100000, "seed": 1,
               "thresholds": [1.0, 2.0]}
  estimate:   {"ensemble": <ensemble or file>, "n": 2000, "m": 10000, "n_V": 400, "m_V": 100000,
               "ys": [1, 2], "zs": [1, 2], "samples": 20000}
  experiment: {"ensemble": <ensemble or file>, "theorem": "thm1", "cells": [{"y": 2, "z": 0.5, "z_scaled": true,
               "delta": 1, "n": 1024}], "num_traj": 10000000, "n_V": 400, "m_V": 100000, "seed": 1}
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON configuration file')
    common.add_argument('--out', default=PATHS['results_dir'], help='output directory')
    common.add_argument('--seed', type=int, help='override the configured seed')
    common.add_argument('--threads', type=int, help='worker count for batches')
    common.add_argument('--tol', type=float, help='per-cell ratio tolerance')
    common.add_argument('--log-level', default=LOG_LEVEL)

    parser = _Parser(prog='lab', description='Products of positive random matrices: simulation and verification')
    parser.add_argument('--version', action='version', version=__version__)
    sub = parser.add_subparsers(dest='command', parser_class=_Parser)

    simulate = sub.add_parser('simulate', parents=[common], help='run a batch of trajectories')
    simulate.add_argument('--per-trajectory', action='store_true', help='also write one CSV row per trajectory')

    estimate = sub.add_parser('estimate', parents=[common], help='estimate lambda, sigma^2, nu, V, V*')
    estimate.add_argument('--what', default=','.join(QUANTITIES), help=f"comma list from {QUANTITIES}")

    verify = sub.add_parser('verify', parents=[common], help='run a verification experiment')
    verify.add_argument('theorem', choices=THEOREMS)
    verify.add_argument('--regime', choices=('small_y', 'large_y', 'unified'))

    kernels = sub.add_parser('kernels', parents=[common], help='tabulate a kernel on a grid')
    kernels.add_argument('--name', required=True, choices=sorted(KERNELS))
    kernels.add_argument('--grid', action='append', default=[], metavar='ARG=START:STOP:NUM',
                         help='grid for one argument, repeatable')

    diagnose = sub.add_parser('diagnose', parents=[common], help='validate an ensemble and print its diagnostics')
    diagnose.add_argument('--delta', type=float, default=1.0, help='moment excess for condition A2')

    sub.add_parser('selftest', parents=[common], help='kernel and geometry property suites')
    return parser


def _require_config(args) -> Path:
    if not args.config:
        raise UsageError(f"'{args.command}' needs --config")
    return Path(args.config)


def _parse_grid(items: Sequence[str]) -> Dict[str, np.ndarray]:
    axes = {}
    for item in items:
        try:
            name, spec = item.split('=', 1)
            start, stop, num = spec.split(':')
            axes[name] = np.linspace(float(start), float(stop), int(num))
        except ValueError:
            raise UsageError(f"Bad grid '{item}', expected ARG=START:STOP:NUM")
    return axes


def cmd_simulate(args) -> int:
    path = _require_config(args)
    plan = ConfigLoader().load_plan(path)
    if args.seed is not None:
        plan = dataclasses.replace(plan, seed=args.seed)
    collectors = {'moments': MomentCollector(plan.n)}
    if plan.thresholds:
        collectors['survival'] = SurvivalCollector(plan.thresholds)
    if args.per_trajectory:
        collectors['table'] = TrajectoryTableCollector(plan.thresholds)
    result = batch(plan, CompositeCollector(**collectors), n_jobs=args.threads)
    out = Path(args.out)
    summary = {'plan': plan.to_json(), 'moments': result['moments']}
    if 'survival' in result:
        summary['survival'] = result['survival']
    write_json(summary, out / 'simulate_summary.json')
    if 'table' in result:
        write_csv(result['table']['table'], out / 'trajectories.csv')
    print_metrics({k: v for k, v in result['moments'].items()}, title='simulation')
    return EXIT_OK


def cmd_estimate(args) -> int:
    path = _require_config(args)
    loader = ConfigLoader()
    data = loader.load_json(path)
    law = MatrixLaw.from_json(loader.ensemble_spec(data, path.parent))
    wanted = [w.strip() for w in args.what.split(',') if w.strip()]
    unknown = sorted(set(wanted) - set(QUANTITIES))
    if unknown:
        raise UsageError(f"Unknown quantities {unknown}, expected a subset of {QUANTITIES}")
    seed = args.seed if args.seed is not None else int(data.get('seed', 0))
    x = Direction.from_json(data['start']) if 'start' in data else Direction.barycenter(law.dim)
    xp = Direction.from_json(data['dual_start']) if 'dual_start' in data else Direction.barycenter(law.dim)
    n, m = int(data.get('n', 2000)), int(data.get('m', 10_000))
    n_V, m_V = int(data.get('n_V', 400)), int(data.get('m_V', 100_000))
    out = Path(args.out)
    estimates: Dict[str, Any] = {'ensemble': law.to_json()}

    lam = None
    if {'lyapunov', 'sigma2', 'V', 'V_star'} & set(wanted):
        lam = lyapunov(law, n, m, seed=seed, x=x, n_jobs=args.threads)
        estimates['lyapunov'] = lam.to_json()
    if 'sigma2' in wanted:
        estimates['sigma2'] = sigma2(law, lam.value, n, m, seed=seed + 1, x=x, n_jobs=args.threads).to_json()
    if 'nu' in wanted:
        measure = invariant_measure(law, samples=int(data.get('samples', 20_000)), seed=seed + 2, x=x)
        estimates['nu'] = {'samples': measure.samples.shape[0], 'a1_failed': measure.a1_failed}
        if law.dim == 2:
            write_csv(measure.to_frame(), out / 'invariant_measure.csv')
            estimates['nu']['mode'] = measure.mode()
    # V and V* are defined for the centered walk
    centered = center(law, lam.value) if lam is not None else law
    if 'V' in wanted:
        ys = [float(y) for y in data.get('ys', [1.0])]
        estimates['V'] = [e.to_json() for e in harmonic_V_table(centered, x, ys, n_V, m_V, seed=seed + 3,
                                                                n_jobs=args.threads)]
    if 'V_star' in wanted:
        zs = [float(z) for z in data.get('zs', [1.0])]
        estimates['V_star'] = [e.to_json() for e in harmonic_V_star_table(centered, xp, zs, n_V, m_V, seed=seed + 4,
                                                                          n_jobs=args.threads)]
    write_json(estimates, out / 'estimates.json')
    logger.info(f"✓ Estimates written to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    path = _require_config(args)
    overrides: Dict[str, Any] = {'theorem': args.theorem}
    if args.seed is not None:
        overrides['seed'] = args.seed
    if args.tol is not None:
        overrides['tol'] = args.tol
    if args.regime is not None:
        overrides['regime'] = args.regime
    spec = ConfigLoader().load_experiment(path, **overrides)
    runner = ExperimentRunner(spec, n_jobs=args.threads).calibrate()
    report = runner.run()
    report.write(args.out)
    summary = get_report_analyzer().summarize(report)
    for line in summary['lines']:
        print(line)
    for note in summary['notes']:
        print(f"note: {note}")
    if not report.passed:
        logger.error(f"Verification of '{args.theorem}' failed")
        return EXIT_FAILED
    return EXIT_OK


def cmd_kernels(args) -> int:
    frame = tabulate(args.name, _parse_grid(args.grid))
    path = write_csv(frame, Path(args.out) / f"kernel_{args.name}.csv")
    logger.info(f"✓ {len(frame)} values written to {path}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    path = _require_config(args)
    loader = ConfigLoader()
    data = loader.load_json(path)
    spec = loader.ensemble_spec(data, path.parent) if 'ensemble' in data else data
    law = MatrixLaw.from_json(spec)
    seed = args.seed if args.seed is not None else int(data.get('seed', 0))
    diagnostics = diagnose_ensemble(law, delta=args.delta, seed=seed, n_jobs=args.threads)
    print(canonical_json(diagnostics.to_json()))
    return EXIT_OK


def cmd_selftest(args) -> int:
    results = run_selftest()
    for check in results:
        print(f"{'PASS' if check.passed else 'FAIL'}  {check.name:<24} {check.detail}")
    if not all(c.passed for c in results):
        logger.error("Self-test failed")
        return EXIT_FAILED
    return EXIT_OK


COMMANDS = {
    'simulate': cmd_simulate,
    'estimate': cmd_estimate,
    'verify': cmd_verify,
    'kernels': cmd_kernels,
    'diagnose': cmd_diagnose,
    'selftest': cmd_selftest,
}


def run_cli(argv: Optional[List[str]] = None) -> int:
    """
    Parse arguments and run one subcommand

    Args:
        argv: Argument list without the program name

    Returns:
        Exit code
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
    except UsageError as e:
        print(f"error: {e}\n")
        parser.print_help()
        print("\n" + SCHEMA_HELP)
        return EXIT_USAGE

    logging.basicConfig(level=str(args.log_level).upper(), format='%(levelname)s %(name)s: %(message)s')
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        logger.error(str(e))
        print(SCHEMA_HELP)
        return EXIT_USAGE
    except FileNotFoundError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except (InsufficientSamples, InsufficientSurvivors) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILED
    except LabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_USAGE

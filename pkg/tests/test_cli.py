"""Tests for the command-line interface"""
import json
from pathlib import Path

import pandas as pd
import pytest

from src.cli import EXIT_FAILED, EXIT_OK, EXIT_USAGE, build_parser, run_cli

CONFIG_DIR = Path(__file__).parent.parent / 'configs'
AB = {'dim': 2, 'support': [{'matrix': [[2, 1], [1, 1]], 'prob': 0.5},
                            {'matrix': [[1, 1], [1, 2]], 'prob': 0.5}], 'non_arithmetic': True}


def write_config(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


class TestParser:
    """Argument parsing and usage errors"""

    def test_verify_arguments(self):
        args = build_parser().parse_args(['verify', 'thm1', '--config', 'x.json', '--seed', '3', '--tol', '0.2'])
        assert args.theorem == 'thm1'
        assert args.seed == 3
        assert args.tol == 0.2

    def test_no_subcommand(self, capsys):
        assert run_cli([]) == EXIT_USAGE
        assert 'JSON schemas' in capsys.readouterr().out

    def test_unknown_theorem(self):
        assert run_cli(['verify', 'thm9', '--config', 'x.json']) == EXIT_USAGE

    def test_missing_config_flag(self):
        assert run_cli(['simulate']) == EXIT_USAGE

    def test_missing_config_file(self, tmp_path):
        assert run_cli(['verify', 'thm1', '--config', str(tmp_path / 'missing.json')]) == EXIT_USAGE

    def test_invalid_experiment(self, tmp_path):
        config = write_config(tmp_path, 'bad.json', {'ensemble': AB, 'theorem': 'thm1', 'cells': []})
        assert run_cli(['verify', 'thm1', '--config', config, '--out', str(tmp_path)]) == EXIT_USAGE

    def test_invalid_ensemble(self, tmp_path):
        config = write_config(tmp_path, 'bad.json', {'dim': 2, 'support': [{'matrix': [[0, 0], [1, 1]], 'prob': 1}]})
        assert run_cli(['diagnose', '--config', config]) == EXIT_USAGE


class TestCommands:
    """Subcommands end to end on small inputs"""

    def test_selftest(self, capsys):
        assert run_cli(['selftest']) == EXIT_OK
        out = capsys.readouterr().out
        assert 'PASS' in out
        assert 'FAIL' not in out

    def test_kernels(self, tmp_path):
        code = run_cli(['kernels', '--name', 'psi', '--grid', 'y=0:2:3', '--grid', 'z=0:1:2', '--out', str(tmp_path)])
        assert code == EXIT_OK
        frame = pd.read_csv(tmp_path / 'kernel_psi.csv')
        assert list(frame.columns) == ['y', 'z', 'value']
        assert len(frame) == 6
        assert (frame.loc[frame['z'] == 0, 'value'] == 0).all()

    def test_kernels_bad_grid(self, tmp_path):
        assert run_cli(['kernels', '--name', 'psi', '--grid', 'y=0:2', '--out', str(tmp_path)]) == EXIT_USAGE

    def test_kernels_missing_axis(self, tmp_path):
        assert run_cli(['kernels', '--name', 'psi', '--grid', 'y=0:2:3', '--out', str(tmp_path)]) == EXIT_USAGE

    def test_simulate(self, tmp_path):
        config = write_config(tmp_path, 'sim.json', {'ensemble': AB, 'n': 20, 'num_traj': 1000, 'seed': 1,
                                                     'thresholds': [1.0]})
        out = tmp_path / 'out'
        assert run_cli(['simulate', '--config', config, '--out', str(out), '--per-trajectory']) == EXIT_OK
        summary = json.loads((out / 'simulate_summary.json').read_text())
        assert summary['plan']['num_traj'] == 1000
        assert 'survival' in summary
        assert len(pd.read_csv(out / 'trajectories.csv')) == 1000

    def test_simulate_is_reproducible(self, tmp_path):
        config = write_config(tmp_path, 'sim.json', {'ensemble': AB, 'n': 20, 'num_traj': 500, 'seed': 4})
        run_cli(['simulate', '--config', config, '--out', str(tmp_path / 'a')])
        run_cli(['simulate', '--config', config, '--out', str(tmp_path / 'b'), '--threads', '2'])
        first = (tmp_path / 'a' / 'simulate_summary.json').read_bytes()
        second = (tmp_path / 'b' / 'simulate_summary.json').read_bytes()
        assert first == second

    def test_estimate(self, tmp_path):
        config = write_config(tmp_path, 'est.json', {'ensemble': AB, 'n': 200, 'm': 1000, 'samples': 640, 'seed': 2})
        out = tmp_path / 'out'
        assert run_cli(['estimate', '--config', config, '--out', str(out), '--what', 'lyapunov,nu']) == EXIT_OK
        estimates = json.loads((out / 'estimates.json').read_text())
        assert estimates['lyapunov']['value'] > 0
        assert 'sigma2' not in estimates
        assert (out / 'invariant_measure.csv').exists()

    def test_estimate_unknown_quantity(self, tmp_path):
        config = write_config(tmp_path, 'est.json', {'ensemble': AB})
        assert run_cli(['estimate', '--config', config, '--out', str(tmp_path), '--what', 'entropy']) == EXIT_USAGE

    def test_diagnose_bundled_ensemble(self, capsys):
        assert run_cli(['diagnose', '--config', str(CONFIG_DIR / 'ab_ensemble.json')]) == EXIT_OK
        diagnostics = json.loads(capsys.readouterr().out)
        assert diagnostics['kappa_sup'] == pytest.approx(2.0)
        assert diagnostics['theorem_variant'] == 'A1'

    def test_verify_duality(self, tmp_path):
        config = write_config(tmp_path, 'fk.json', {
            'ensemble': str(CONFIG_DIR / 'ab_ensemble.json'), 'theorem': 'duality', 'duality_n': 64,
            'duality_traj': 500, 'poisson_K': [5, 10], 'sigma_n': 100, 'sigma_m': 2000, 'seed': 1,
        })
        out = tmp_path / 'out'
        assert run_cli(['verify', 'duality', '--config', config, '--out', str(out)]) == EXIT_OK
        report = json.loads((out / 'duality_report.json').read_text())
        assert report['passed'] is True
        assert report['checks']['duality_bound'] is True

    def test_verify_failure_exit_code(self, tmp_path):
        config = write_config(tmp_path, 'thm1.json', {
            'ensemble': AB, 'theorem': 'thm1', 'num_traj': 20000, 'n_V': 50, 'm_V': 2000, 'sigma_n': 100,
            'sigma_m': 2000, 'seed': 1, 'cells': [{'y': 1.0, 'z': 0.5, 'z_scaled': True, 'delta': 1.0, 'n': 64}],
        })
        code = run_cli(['verify', 'thm1', '--config', config, '--out', str(tmp_path), '--tol', '0'])
        assert code == EXIT_FAILED

    def test_too_few_survivors_is_a_failure(self, tmp_path):
        config = write_config(tmp_path, 'cclt.json', {
            'ensemble': AB, 'theorem': 'cclt', 'num_traj': 2000, 'n_V': 50, 'm_V': 2000, 'sigma_n': 100,
            'sigma_m': 2000, 'seed': 1, 'cells': [{'y': 1.0, 'n': 64}],
        })
        assert run_cli(['verify', 'cclt', '--config', config, '--out', str(tmp_path)]) == EXIT_FAILED

"""
Tests for the command-line entry point.
"""
import json
import logging
import math
import subprocess
import sys
from pathlib import Path

import pandas as pd
import pytest
import yaml

from src.main import (
    EXIT_FLAGGED,
    EXIT_IO,
    EXIT_OK,
    EXIT_USAGE,
    NexusApp,
    build_parser,
    grid_range,
    run,
)
from src.result_io import CSV_COLUMNS, validate_document
from src.utils import TrackingLostError

ROOT = Path(__file__).resolve().parent.parent


def write_config(tmp_path, **sections):
    data = {
        'output': {'directory': str(tmp_path / 'results'), 'csv_digits': 17},
        'logging': {'level': 'WARNING', 'file': str(tmp_path / 'logs' / 'exnexus.log')},
        'perturbation': {'eps': 0.1, 'n_samples': 256, 'theta': 0.3},
        'dynamics': {'t_max': 3.0, 'steps': 60, 'snapshot_t0': 0.8},
        'fitting': {'max_iterations': 500},
        'runtime': {'max_workers': 1},
    }
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    path = tmp_path / 'config.yaml'
    path.write_text(yaml.safe_dump(data))
    return path


def read_result(tmp_path, command):
    return json.loads((tmp_path / 'results' / f'{command}.json').read_text())


def synth(config, path, seed=7):
    return run(['synth', '--config', str(config), '--w', '4.5', '--gamma1', '17', '--gamma2', '8',
                '--tm', '0.5', '--sigma', '0.02', '--reps', '3', '--seed', str(seed), '--out', str(path)])


@pytest.fixture(autouse=True)
def restore_logging():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers:
        if handler not in handlers:
            handler.close()
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def config(tmp_path):
    return write_config(tmp_path)


class TestArgumentParsing:
    """Test suite for the argument grammar."""

    def test_grid_range(self):
        """Test min:max:n parses into a tuple."""
        assert grid_range('0:12:241') == (0.0, 12.0, 241)

    @pytest.mark.parametrize('text', ['0:12', '1:0:5', '-1:2:3', 'a:b:c', '1:1:4', '0:1:0'])
    def test_bad_grid_range(self, text):
        """Test malformed ranges are usage errors."""
        with pytest.raises(SystemExit) as excinfo:
            build_parser().parse_args(['spectrum', '--w', '3', '--gamma', text])
        assert excinfo.value.code == 2

    def test_negative_w(self):
        """Test a negative w is a usage error."""
        with pytest.raises(SystemExit) as excinfo:
            run(['spectrum', '--w', '-1', '--gamma', '0:1:5'])
        assert excinfo.value.code == 2

    def test_unknown_case(self):
        """Test an unknown perturbation case is a usage error."""
        with pytest.raises(SystemExit) as excinfo:
            run(['berry', '--case', 'offdiagonal'])
        assert excinfo.value.code == 2

    def test_gamma2_needs_tm(self, config):
        """Test evolve --gamma2 without --tm is a usage error."""
        with pytest.raises(SystemExit) as excinfo:
            run(['evolve', '--config', str(config), '--w', '3', '--gamma', '1', '--gamma2', '2'])
        assert excinfo.value.code == 2

    def test_no_command(self):
        """Test a missing subcommand returns the usage code."""
        assert run([]) == EXIT_USAGE

    def test_schema(self, capsys):
        """Test --schema prints the table columns and the JSON schema."""
        assert run(['--schema']) == EXIT_OK
        out = capsys.readouterr().out
        assert 'spectrum: gamma, re_0' in out
        assert 'JSON result schema:' in out

    def test_module_entry_point(self):
        """Test the package runs as a module."""
        completed = subprocess.run([sys.executable, '-m', 'src.main', '--schema'], cwd=ROOT,
                                   capture_output=True, text=True, timeout=120)
        assert completed.returncode == 0
        assert 'CSV tables' in completed.stdout


class TestNexusApp:
    """Test suite for application setup."""

    def test_settings_from_config(self, config, tmp_path):
        """Test the output directory, precision and workers come from the config."""
        app = NexusApp(str(config))
        assert app.out_dir == tmp_path / 'results'
        assert app.digits == 17
        assert app.max_workers == 1

    def test_out_overrides_config(self, config, tmp_path):
        """Test --out replaces output.directory."""
        assert run(['nexus', '--config', str(config), '--out', str(tmp_path / 'elsewhere')]) == EXIT_OK
        assert (tmp_path / 'elsewhere' / 'nexus.json').exists()

    def test_missing_config(self, tmp_path):
        """Test a missing configuration file exits with the I/O code."""
        assert run(['nexus', '--config', str(tmp_path / 'absent.yaml')]) == EXIT_IO

    def test_incomplete_config(self, tmp_path):
        """Test a configuration without required fields exits with the I/O code."""
        path = tmp_path / 'config.yaml'
        path.write_text(yaml.safe_dump({'output': {'directory': str(tmp_path)}}))
        assert run(['nexus', '--config', str(path)]) == EXIT_IO

    def test_log_file_created(self, config, tmp_path):
        """Test the configured log file is opened."""
        run(['nexus', '--config', str(config)])
        assert (tmp_path / 'logs' / 'exnexus.log').exists()


class TestCommands:
    """Test suite for the subcommands."""

    def test_nexus(self, config, tmp_path):
        """Test the nexus location, value and phase-fixed eigenvector."""
        assert run(['nexus', '--config', str(config)]) == EXIT_OK
        doc = read_result(tmp_path, 'nexus')
        assert validate_document(doc) == []
        results = doc['results']
        assert results['location'] == pytest.approx([2.0 * math.sqrt(2.0), 3.0 * math.sqrt(3.0)], abs=1e-9)
        assert results['value'] == pytest.approx([0.0, -math.sqrt(3.0)], abs=1e-9)
        expected = [[0.0, 1.0 / math.sqrt(6.0)], [1.0 / math.sqrt(2.0), 0.0], [0.0, -1.0 / math.sqrt(3.0)]]
        for got, want in zip(results['coalesced_vector'], expected):
            assert got == pytest.approx(want, abs=1e-4)
        assert doc['tables'] == ['nexus.csv']

    def test_spectrum(self, config, tmp_path):
        """Test the spectrum table header and length."""
        assert run(['spectrum', '--config', str(config), '--w', '3', '--gamma', '0:12:241']) == EXIT_OK
        table = pd.read_csv(tmp_path / 'results' / 'spectrum.csv')
        assert list(table.columns) == CSV_COLUMNS['spectrum']
        assert len(table) == 241
        assert read_result(tmp_path, 'spectrum')['results']['ep_gammas'] == []

    def test_arcs(self, config, tmp_path):
        """Test the arcs table starts with the nexus."""
        assert run(['arcs', '--config', str(config), '--w', f'{2.0 * math.sqrt(2.0)!r}:4:5']) == EXIT_OK
        table = pd.read_csv(tmp_path / 'results' / 'arcs.csv')
        assert list(table.columns) == CSV_COLUMNS['arcs']
        assert table['order'].iloc[0] == 3
        assert len(table) == 9

    def test_arcs_below_nexus(self, config):
        """Test a w range below 2√2 is an invalid-parameter error."""
        assert run(['arcs', '--config', str(config), '--w', '2:4:5']) == EXIT_USAGE

    def test_perturb(self, config, tmp_path):
        """Test the perturb output holds exponents and a permutation."""
        assert run(['perturb', '--config', str(config), '--case', 'diag']) == EXIT_OK
        results = read_result(tmp_path, 'perturb')['results']
        assert len(results['exponents']) == 3
        assert sorted(results['permutation']) == [0, 1, 2]
        table = pd.read_csv(tmp_path / 'results' / 'perturb.csv')
        assert list(table.columns) == CSV_COLUMNS['perturb']

    def test_perturb_tracking_lost(self, config, tmp_path, mocker):
        """Test lost tracking writes a flagged document and exits 4."""
        mocker.patch('src.main.scaling_exponents', side_effect=TrackingLostError('ambiguous overlap'))
        assert run(['perturb', '--config', str(config), '--case', 'mixed']) == EXIT_FLAGGED
        doc = read_result(tmp_path, 'perturb')
        assert doc['flagged'] is True
        assert doc['error'] == 'ambiguous overlap'

    def test_berry(self, config, tmp_path):
        """Test the berry table and the convention in the parameters."""
        assert run(['berry', '--config', str(config), '--case', 'diagonal', '--convention', 'right']) == EXIT_OK
        table = pd.read_csv(tmp_path / 'results' / 'berry.csv')
        assert list(table.columns) == CSV_COLUMNS['berry']
        assert table['cycles_to_closure'].tolist() == [3, 3, 3]
        assert read_result(tmp_path, 'berry')['parameters']['convention'] == 'right'

    def test_evolve(self, config, tmp_path):
        """Test evolve writes the population table."""
        assert run(['evolve', '--config', str(config), '--w', '3', '--gamma', '2', '--steps', '11']) == EXIT_OK
        table = pd.read_csv(tmp_path / 'results' / 'evolve.csv')
        assert list(table.columns) == CSV_COLUMNS['evolve']
        assert len(table) == 11
        assert table['N2'].iloc[0] == pytest.approx(1.0)

    def test_evolve_two_rate(self, config, tmp_path):
        """Test evolve with a switching time records both rates."""
        args = ['evolve', '--config', str(config), '--w', '4.5', '--gamma', '17', '--gamma2', '8', '--tm', '0.5']
        assert run(args) == EXIT_OK
        parameters = read_result(tmp_path, 'evolve')['parameters']
        assert parameters['gamma2'] == 8.0
        assert parameters['steps'] == 60

    def test_snapshot_and_alpha(self, config, tmp_path):
        """Test snapshot and alpha tables."""
        grid = '0.01:50:40'
        assert run(['snapshot', '--config', str(config), '--w', '3', '--gamma', grid]) == EXIT_OK
        assert run(['alpha', '--config', str(config), '--w', '3', '--gamma', grid]) == EXIT_OK
        snapshot = pd.read_csv(tmp_path / 'results' / 'snapshot.csv')
        alpha = pd.read_csv(tmp_path / 'results' / 'alpha.csv')
        assert list(snapshot.columns) == CSV_COLUMNS['snapshot']
        assert list(alpha.columns) == CSV_COLUMNS['alpha']
        assert len(snapshot) == 40
        assert len(alpha) == 40

    def test_figure(self, config, tmp_path):
        """Test a figure bundle is written under the output directory."""
        assert run(['figure', 'fig1b', '--config', str(config)]) == EXIT_OK
        doc = read_result(tmp_path, 'fig1b')
        assert doc['tables'] == ['fig1b_arcs.csv', 'fig1b_effective.csv']
        assert (tmp_path / 'results' / 'fig1b_arcs.csv').exists()


class TestSynthAndFit:
    """Test suite for synthetic data and fitting from the command line."""

    def test_synth_reproducible(self, config, tmp_path):
        """Test the same seed writes byte-identical files."""
        assert synth(config, tmp_path / 'a.csv') == EXIT_OK
        assert synth(config, tmp_path / 'b.csv') == EXIT_OK
        assert (tmp_path / 'a.csv').read_bytes() == (tmp_path / 'b.csv').read_bytes()
        assert (tmp_path / 'a.json').read_bytes() == (tmp_path / 'b.json').read_bytes()
        assert json.loads((tmp_path / 'a.json').read_text())['provenance']['seed'] == 7

    def test_synth_seed_changes_data(self, config, tmp_path):
        """Test a different seed gives different data."""
        synth(config, tmp_path / 'a.csv', seed=1)
        synth(config, tmp_path / 'b.csv', seed=2)
        assert (tmp_path / 'a.csv').read_bytes() != (tmp_path / 'b.csv').read_bytes()

    def test_synth_then_fit(self, config, tmp_path):
        """Test a synthetic dataset fits cleanly."""
        synth(config, tmp_path / 'data.csv')
        assert run(['fit', '--config', str(config), '--data', str(tmp_path / 'data.csv')]) == EXIT_OK
        doc = read_result(tmp_path, 'fit')
        assert doc['flagged'] is False
        assert doc['parameters']['w'] == 4.5
        assert len(doc['results']['rss_history']) > 0
        table = pd.read_csv(tmp_path / 'results' / 'fit.csv')
        assert list(table.columns) == CSV_COLUMNS['fit']

    def test_fit_missing_data(self, config, tmp_path):
        """Test a missing dataset exits with the I/O code."""
        assert run(['fit', '--config', str(config), '--data', str(tmp_path / 'absent.csv')]) == EXIT_IO

    def test_fit_malformed_data(self, config, tmp_path):
        """Test a dataset without the record columns exits with the I/O code."""
        path = tmp_path / 'bad.csv'
        path.write_text('t,mean\n0.0,1.0\n')
        args = ['fit', '--config', str(config), '--data', str(path), '--w', '1', '--nominal-gamma', '1']
        assert run(args) == EXIT_IO

    def test_fit_not_converged(self, tmp_path):
        """Test an iteration cap writes a flagged result and exits 4."""
        config = write_config(tmp_path, fitting={'max_iterations': 2})
        synth(config, tmp_path / 'data.csv')
        assert run(['fit', '--config', str(config), '--data', str(tmp_path / 'data.csv')]) == EXIT_FLAGGED
        doc = read_result(tmp_path, 'fit')
        assert doc['flagged'] is True
        assert doc['error']
        assert doc['results']['converged'] is False
        assert (tmp_path / 'results' / 'fit.csv').exists()

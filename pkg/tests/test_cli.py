"""
End-to-end runs through the command-line interface
"""
import json
import os
import re

from adaptopt.commands import cli
from adaptopt.commands import runner as runner_module
from adaptopt.errors import EXIT_CONFIG_ERROR, EXIT_OK, EXIT_SOLVER_FAILURE, InvertedElementError, SolverFailure
from adaptopt.models.run_config import IterationRecord
from adaptopt.utils.history import read_history


def invoke(cli_runner, tmp_path, *args):
    return cli_runner.invoke(cli, ['--env', 'testing', '--log-dir', str(tmp_path / 'logs'), *args])


class TestCheck:
    def test_valid_configuration(self, cli_runner, tmp_path, write_config):
        result = invoke(cli_runner, tmp_path, 'check', write_config({'problem.preset': 'cantilever'}))
        assert result.exit_code == EXIT_OK
        assert 'problem.preset=cantilever\n' in result.output
        assert 'filter.radius=0.1  # default' in result.output

    def test_empty_configuration(self, cli_runner, tmp_path, write_config):
        result = invoke(cli_runner, tmp_path, 'check', write_config({}))
        assert result.exit_code == EXIT_CONFIG_ERROR
        assert 'problem.preset: required key is missing' in result.output


class TestRun:
    def test_small_run_writes_all_artifacts(self, cli_runner, tmp_path, small_run_config):
        result = invoke(cli_runner, tmp_path, 'run', small_run_config())
        assert result.exit_code == EXIT_OK, result.output

        run_dir = tmp_path / 'run'
        for name in ('config_resolved.txt', 'history.csv', 'summary.json', 'history.png'):
            assert (run_dir / name).is_file()
        for iteration in (1, 2, 3):
            assert (run_dir / 'snapshots' / f'iter_{iteration:04d}.npz').is_file()
            assert (run_dir / 'snapshots' / f'iter_{iteration:04d}.vtu').is_file()

        with open(run_dir / 'history.csv') as f:
            assert f.readline().strip() == ','.join(IterationRecord.CSV_HEADER)
        rows = read_history(run_dir / 'history.csv')
        assert [int(r['iter']) for r in rows] == [1, 2, 3]
        times = [float(r['t_acc']) for r in rows]
        assert times == sorted(times)
        assert all(r['g_pvm'] == '' for r in rows)

        summary = json.loads((run_dir / 'summary.json').read_text())
        assert summary['status'] == EXIT_OK
        assert summary['iterations'] == 3
        assert summary['adaptation_events'] == sum(int(r['event']) for r in rows)
        assert summary['final_cells'] == int(rows[-1]['cells'])

    def test_snapshot_is_a_vtk_unstructured_grid(self, cli_runner, tmp_path, small_run_config):
        invoke(cli_runner, tmp_path, 'run', small_run_config())
        rows = read_history(tmp_path / 'run' / 'history.csv')
        header = (tmp_path / 'run' / 'snapshots' / 'iter_0003.vtu').read_bytes().split(b'<AppendedData')[0]

        assert b'<VTKFile type="UnstructuredGrid"' in header
        cells = re.search(rb'NumberOfCells="\s*(\d+)\s*"', header)
        assert cells and int(cells.group(1)) == int(rows[-1]['cells'])
        for name in (b'density', b'vm', b'level', b'cnf', b'displacement'):
            assert b'Name="' + name + b'"' in header

    def test_runs_are_deterministic(self, cli_runner, tmp_path, small_run_config):
        invoke(cli_runner, tmp_path, 'run', small_run_config('first'))
        invoke(cli_runner, tmp_path, 'run', small_run_config('second'))

        def without_timings(path):
            lines = path.read_text().splitlines()
            header = lines[0].split(',')
            keep = [i for i, name in enumerate(header) if name not in ('dt', 't_acc')]
            return [[line.split(',')[i] for i in keep] for line in lines]

        first = without_timings(tmp_path / 'first' / 'history.csv')
        second = without_timings(tmp_path / 'second' / 'history.csv')
        assert len(first) == 4
        assert first == second

    def test_interval_beyond_budget_never_adapts(self, cli_runner, tmp_path, small_run_config):
        result = invoke(cli_runner, tmp_path, 'run', small_run_config(adapt__interval=10))
        assert result.exit_code == EXIT_OK
        rows = read_history(tmp_path / 'run' / 'history.csv')
        assert all(r['event'] == '0' for r in rows)
        assert len({r['cells'] for r in rows}) == 1

    def test_disabled_criterion_keeps_the_mesh(self, cli_runner, tmp_path, small_run_config):
        result = invoke(cli_runner, tmp_path, 'run', small_run_config(adapt__criterion='NONE'))
        assert result.exit_code == EXIT_OK
        summary = json.loads((tmp_path / 'run' / 'summary.json').read_text())
        assert summary['adaptation_events'] == 0
        assert summary['final_cells'] == 8

    def test_stress_constrained_run_logs_pnorm(self, cli_runner, tmp_path, small_run_config):
        config = small_run_config(problem__kind='compliance_volume_stress', problem__stress_limit=0.5,
                                  output__plot='false')
        result = invoke(cli_runner, tmp_path, 'run', config)
        assert result.exit_code == EXIT_OK, result.output
        rows = read_history(tmp_path / 'run' / 'history.csv')
        assert all(float(r['g_pvm']) > 0.0 for r in rows)
        assert not (tmp_path / 'run' / 'history.png').exists()

    def test_configuration_error_creates_no_output(self, cli_runner, tmp_path, small_run_config):
        result = invoke(cli_runner, tmp_path, 'run', small_run_config(adapt__c_c=0.5))
        assert result.exit_code == EXIT_CONFIG_ERROR
        assert 'adapt.c_c' in result.output
        assert not (tmp_path / 'run').exists()

    def test_solver_failure_keeps_last_good_iteration(self, cli_runner, tmp_path, small_run_config, monkeypatch):
        calls = []
        solve = runner_module.solve_newton

        def failing_solve(*args, **kwargs):
            calls.append(1)
            if len(calls) == 2:
                raise SolverFailure('state solve failed in load step 1', step=1)
            return solve(*args, **kwargs)

        monkeypatch.setattr(runner_module, 'solve_newton', failing_solve)
        result = invoke(cli_runner, tmp_path, 'run', small_run_config())

        assert result.exit_code == EXIT_SOLVER_FAILURE
        run_dir = tmp_path / 'run'
        assert (run_dir / 'snapshots' / 'last_good.npz').is_file()
        assert len(read_history(run_dir / 'history.csv')) == 1
        summary = json.loads((run_dir / 'summary.json').read_text())
        assert summary['failure']['step'] == 1
        with open(tmp_path / 'logs' / 'run_errors.log') as f:
            assert 'solver_failure' in f.read()

    def test_any_run_error_keeps_last_good_iteration(self, cli_runner, tmp_path, small_run_config, monkeypatch):
        calls = []
        measure = runner_module.compliance

        def failing_compliance(*args, **kwargs):
            calls.append(1)
            if len(calls) == 2:
                raise InvertedElementError('J <= 0 at 1 quadrature point')
            return measure(*args, **kwargs)

        monkeypatch.setattr(runner_module, 'compliance', failing_compliance)
        result = invoke(cli_runner, tmp_path, 'run', small_run_config())

        assert result.exit_code == EXIT_SOLVER_FAILURE
        run_dir = tmp_path / 'run'
        assert (run_dir / 'snapshots' / 'last_good.npz').is_file()
        assert len(read_history(run_dir / 'history.csv')) == 1
        summary = json.loads((run_dir / 'summary.json').read_text())
        assert summary['status'] == EXIT_SOLVER_FAILURE
        assert summary['failure']['code'] == 'INVERTED_ELEMENT'
        with open(tmp_path / 'logs' / 'run_errors.log') as f:
            assert 'inverted_element' in f.read()

    def test_design_update_runs_on_the_adapted_mesh(self, cli_runner, tmp_path, small_run_config, monkeypatch):
        sizes = []
        update = runner_module.design_update

        def recording_update(rho, *args, **kwargs):
            sizes.append(len(rho))
            return update(rho, *args, **kwargs)

        monkeypatch.setattr(runner_module, 'design_update', recording_update)
        result = invoke(cli_runner, tmp_path, 'run', small_run_config(adapt__criterion='DENS'))
        assert result.exit_code == EXIT_OK, result.output

        rows = read_history(tmp_path / 'run' / 'history.csv')
        assert rows[1]['event'] == '1'
        assert int(rows[2]['cells']) > int(rows[1]['cells'])
        assert sizes == [int(rows[0]['cells']), int(rows[2]['cells']), int(rows[2]['cells'])]


class TestExport:
    def test_export_single_field(self, cli_runner, tmp_path, small_run_config):
        invoke(cli_runner, tmp_path, 'run', small_run_config())
        snapshot = tmp_path / 'run' / 'snapshots' / 'iter_0001.npz'
        target = tmp_path / 'cnf.vtu'

        result = invoke(cli_runner, tmp_path, 'export', str(snapshot), '--field', 'cnf', '--output', str(target))
        assert result.exit_code == EXIT_OK, result.output
        assert os.path.isfile(target)
        header = target.read_bytes().split(b'<AppendedData')[0]
        assert b'Name="cnf"' in header
        assert b'Name="density"' not in header

    def test_export_rejects_unknown_field(self, cli_runner, tmp_path, small_run_config):
        invoke(cli_runner, tmp_path, 'run', small_run_config())
        snapshot = tmp_path / 'run' / 'snapshots' / 'iter_0001.npz'
        result = invoke(cli_runner, tmp_path, 'export', str(snapshot), '--field', 'energy')
        assert result.exit_code == 2

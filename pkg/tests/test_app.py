"""
Application factory, settings profiles and run logging
"""
import json
import logging

from adaptopt import create_app
from adaptopt.models.run_config import IterationRecord
from adaptopt.utils import logging_config
from adaptopt.utils.logging_config import log_iteration, log_performance, log_run_event, track_error


def last_json(path, marker):
    with open(path) as f:
        line = f.read().strip().splitlines()[-1]
    return json.loads(line.split(marker, 1)[1])


class TestCreateApp:
    def test_testing_profile(self, app, tmp_path):
        assert app.config_name == 'testing'
        assert app.config['TESTING'] is True
        assert app.config['LOG_TO_CONSOLE'] is False
        assert app.config['NEWTON_RTOL'] == 1e-9
        for name in ('adaptopt.log', 'errors.log', 'events.log', 'performance.log'):
            assert (tmp_path / 'logs' / name).is_file()

    def test_unknown_profile_falls_back_to_default(self, tmp_path):
        app = create_app('staging', log_dir=str(tmp_path / 'logs'))
        assert app.config_name == 'default'
        assert app.config['DEBUG'] is True

    def test_log_dir_under_run_directory(self, app):
        assert app.log_dir('runs/case') == 'runs/case/logs'

    def test_settings_profile_keys(self, app):
        expected = {
            'OUTPUT_ROOT', 'LOG_DIR_NAME', 'LOG_LEVEL', 'LOG_MAX_BYTES', 'LOG_BACKUP_COUNT', 'LOG_TO_CONSOLE',
            'SLOW_CALL_SECONDS', 'NEWTON_MAX_ITERATIONS', 'NEWTON_RTOL', 'NEWTON_ATOL',
            'LINE_SEARCH_MAX_HALVINGS', 'MAX_LOAD_BISECTIONS', 'TESTING'
        }
        assert set(app.config) == expected


class TestRunLogging:
    def test_run_event_is_one_json_line(self, app, tmp_path):
        log_run_event('adaptation', {'iteration': 5, 'cells': 812})
        event = last_json(tmp_path / 'logs' / 'events.log', 'EVENT: ')
        assert event['event_type'] == 'adaptation'
        assert event['details'] == {'iteration': 5, 'cells': 812}

    def test_iteration_records(self, app, tmp_path):
        log_iteration(IterationRecord(3, 1.5e-3, -0.01, cells=800, dofs=6642))
        record = last_json(tmp_path / 'logs' / 'iterations.log', 'ITERATION: ')
        assert record['iter'] == 3
        assert record['cells'] == 800

    def test_tracked_errors(self, app, tmp_path):
        track_error('solver_failure', 'Newton did not converge', {'iteration': 7})
        error = last_json(tmp_path / 'logs' / 'run_errors.log', 'ERROR: ')
        assert error['error_type'] == 'solver_failure'
        assert error['additional_data'] == {'iteration': 7}

    def test_slow_calls_are_recorded(self, app, tmp_path, monkeypatch):
        monkeypatch.setitem(logging_config._state, 'slow_call_seconds', -1.0)

        @log_performance
        def assemble_everything():
            return 42

        assert assemble_everything() == 42
        entry = last_json(tmp_path / 'logs' / 'performance.log', 'PERFORMANCE: ')
        assert entry['function'] == 'assemble_everything'

    def test_module_loggers_reach_the_main_log(self, app, tmp_path):
        logging.getLogger('adaptopt.models.mesh').info('mesh message for the main log')
        with open(tmp_path / 'logs' / 'adaptopt.log') as f:
            content = f.read()
        assert 'INFO in test_app: mesh message for the main log' in content

import pytest
from click.testing import CliRunner

from adaptopt import create_app

SMALL_CANTILEVER = {
    'problem.preset': 'cantilever',
    'mesh.base_nx': 4,
    'mesh.base_ny': 2,
    'mesh.init_level': 0,
    'mesh.max_level': 2,
    'filter.radius': 0.5,
    'optimizer.iterations': 3,
    'adapt.interval': 2,
    'output.snapshot_every': 1,
}


@pytest.fixture
def write_config(tmp_path):
    """Write a key=value run configuration and return its path"""
    def write(values, name='run.cfg'):
        path = tmp_path / name
        lines = ['# generated for a test']
        lines += [f'{key}={value}' for key, value in values.items()]
        path.write_text('\n'.join(lines) + '\n')
        return str(path)
    return write


@pytest.fixture
def small_run_config(write_config, tmp_path):
    """Three-iteration cantilever on a 4 x 2 grid writing into tmp_path/run"""
    def build(name='run', **overrides):
        values = dict(SMALL_CANTILEVER)
        values['output.directory'] = str(tmp_path / name)
        values.update({key.replace('__', '.'): value for key, value in overrides.items()})
        return write_config(values, name=f'{name}.cfg')
    return build


@pytest.fixture
def app(tmp_path):
    return create_app('testing', log_dir=str(tmp_path / 'logs'))


@pytest.fixture
def cli_runner():
    return CliRunner()

"""
Run configuration: a flat key-value file with dotted section prefixes.

    problem.preset = cantilever
    adapt.criterion = CNF
    adapt.interval = 5

The file is read with python-dotenv, validated against SCHEMA and resolved
against the preset defaults. Every defaulted key is recorded so the runner
can echo it to the event log.
"""
import logging
import os

from dotenv import dotenv_values

from adaptopt.errors import ConfigError
from adaptopt.models.adaptivity import CriterionConfig
from adaptopt.models.mechanics import MaterialParams
from adaptopt.models.regularization import BOUNDARY_SCALINGS, FilterParams
from adaptopt.utils.validators import coerce_value, comprehensive_input_validation

logger = logging.getLogger(__name__)

PRESETS = ('cantilever', 'ubeam')
CRITERIA = ('CNF', 'DENS', 'VNM', 'NONE')
PROBLEM_KINDS = ('compliance_volume', 'compliance_volume_stress')

# key -> (type, default, numeric range or choices)
SCHEMA = {
    'problem.preset': ('choice', None, PRESETS),
    'problem.kind': ('choice', None, PROBLEM_KINDS),
    'problem.load': ('float', None, (('>', 0.0), None)),
    'problem.stress_limit': ('float', None, (('>', 0.0), None)),
    'problem.volume_fraction': ('float', 0.5, (('>', 0.0), 1.0)),
    'problem.initial_density': ('float', None, (0.0, 1.0)),

    'geometry.width': ('float', None, (('>', 0.0), None)),
    'geometry.height': ('float', None, (('>', 0.0), None)),
    'geometry.cutout_x': ('float', None, (('>', 0.0), None)),
    'geometry.cutout_y': ('float', None, (('>', 0.0), None)),
    'geometry.load_width': ('float', None, (('>', 0.0), None)),

    'mesh.base_nx': ('int', None, (1, None)),
    'mesh.base_ny': ('int', None, (1, None)),
    'mesh.init_level': ('int', 1, (0, None)),
    'mesh.max_level': ('int', 4, (0, 8)),
    'mesh.degree': ('int', 2, (1, 2)),

    'material.lambda': ('float', 2.66, (None, None)),
    'material.mu': ('float', 0.71, (('>', 0.0), None)),
    'material.simp_exponent': ('float', 3.0, (1.0, None)),
    'material.rho_min': ('float', 1e-6, (('>', 0.0), 0.1)),
    'material.void_threshold': ('float', 0.1, (0.0, 0.5)),
    'material.void_sharpness': ('float', 50.0, (('>', 0.0), None)),

    'filter.radius': ('float', None, (('>', 0.0), None)),
    'filter.boundary_coeff': ('float', 0.5, (0.0, None)),
    'filter.boundary_scaling': ('choice', 'length', BOUNDARY_SCALINGS),
    'filter.beta_initial': ('float', 1.0, (('>', 0.0), None)),
    'filter.beta_max': ('float', 16.0, (('>', 0.0), None)),
    'filter.beta_interval': ('int', 50, (1, None)),
    'filter.eta': ('float', 0.5, (('>', 0.0), 1.0)),
    'filter.epsilon': ('float', 0.1, (('>', 0.0), 1.0)),

    'optimizer.iterations': ('int', 200, (1, None)),
    'optimizer.move': ('float', 0.2, (('>', 0.0), 1.0)),
    'optimizer.p': ('float', 8.0, (2.0, None)),

    'solver.load_steps': ('int', 1, (1, None)),

    'adapt.criterion': ('choice', 'CNF', CRITERIA),
    'adapt.c_r': ('float', 0.25, (0.0, 1.0)),
    'adapt.c_c': ('float', 0.01, (0.0, 1.0)),
    'adapt.interval': ('int', 5, (1, None)),
    'adapt.exclude_boundary': ('bool', False, None),
    'adapt.exclude_supports': ('bool', False, None),

    'output.directory': ('string', None, None),
    'output.name': ('string', None, None),
    'output.snapshot_every': ('int', 10, (1, None)),
    'output.plot': ('bool', True, None),

    'run.seed': ('int', None, (0, None)),
}

REQUIRED_KEYS = ['problem.preset']

PRESET_DEFAULTS = {
    'cantilever': {
        'problem.kind': 'compliance_volume',
        'problem.load': 0.001,
        'geometry.width': 2.0,
        'geometry.height': 1.0,
        'geometry.load_width': 0.1,
        'mesh.base_nx': 20,
        'mesh.base_ny': 10,
        'filter.radius': 0.1,
    },
    'ubeam': {
        'problem.kind': 'compliance_volume_stress',
        'problem.load': 0.02,
        'problem.stress_limit': 0.5,
        'adapt.exclude_supports': True,
        'geometry.width': 1.0,
        'geometry.height': 2.0,
        'geometry.cutout_x': 0.5,
        'geometry.cutout_y': 0.5,
        'geometry.load_width': 0.2,
        'mesh.base_nx': 10,
        'mesh.base_ny': 20,
        'filter.radius': 0.2,
    },
}


def _thresholds_ordered(data):
    if data['adapt.c_c'] >= data['adapt.c_r']:
        return False, 'adapt.c_c: must be smaller than adapt.c_r'
    return True, None


def _levels_ordered(data):
    if data['mesh.init_level'] > data['mesh.max_level']:
        return False, 'mesh.init_level: must not exceed mesh.max_level'
    return True, None


def _beta_ordered(data):
    if data['filter.beta_initial'] > data['filter.beta_max']:
        return False, 'filter.beta_initial: must not exceed filter.beta_max'
    return True, None


def _stress_limit_present(data):
    if data['problem.kind'] == 'compliance_volume_stress' and data['problem.stress_limit'] is None:
        return False, 'problem.stress_limit: required for a stress-constrained problem'
    return True, None


def _cutout_on_grid(data):
    if data['problem.preset'] != 'ubeam':
        return True, None
    for key, size, count in (('geometry.cutout_x', 'geometry.width', 'mesh.base_nx'),
                             ('geometry.cutout_y', 'geometry.height', 'mesh.base_ny')):
        value = data[key]
        if value is None or value >= data[size]:
            return False, f'{key}: must lie inside the domain'
        cells = value / (data[size] / data[count])
        if abs(cells - round(cells)) > 1e-9:
            return False, f'{key}: must fall on a base-grid line'
    return True, None


def _load_patch_fits(data):
    span = data['geometry.height']
    if data['problem.preset'] == 'ubeam':
        span = data['geometry.height'] - data['geometry.cutout_y']
    if data['geometry.load_width'] > span:
        return False, 'geometry.load_width: longer than the loaded edge'
    return True, None


CROSS_FIELD_RULES = [
    _thresholds_ordered,
    _levels_ordered,
    _beta_ordered,
    _stress_limit_present,
    _cutout_on_grid,
    _load_patch_fits,
]


def _validation_rules():
    return {
        'required_fields': REQUIRED_KEYS,
        'allowed_fields': list(SCHEMA),
        'field_types': {key: kind for key, (kind, _, _) in SCHEMA.items() if kind != 'choice'},
        'field_choices': {key: extra for key, (kind, _, extra) in SCHEMA.items() if kind == 'choice'},
        'numeric_ranges': {key: extra for key, (kind, _, extra) in SCHEMA.items()
                           if kind in ('int', 'float') and extra is not None},
    }


def _error_keys(errors):
    return sorted({message.partition(':')[0] for message in errors})


def _is_blank(value):
    return value is None or (isinstance(value, str) and not value.strip())


def _coerce(key, value):
    kind, _, extra = SCHEMA[key]
    if kind != 'choice':
        return coerce_value(value, kind)
    text = str(value).strip()
    for choice in extra:
        if choice.lower() == text.lower():
            return choice
    return text


class RunConfig:
    """Fully resolved run configuration"""

    def __init__(self, values, defaulted=None, source=None):
        self.values = dict(values)
        self.defaulted = list(defaulted or [])
        self.source = source

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        value = self.values.get(key)
        return default if value is None else value

    def with_overrides(self, **overrides):
        """Copy with `section_key=value` overrides (underscore after the section)"""
        values = dict(self.values)
        for name, value in overrides.items():
            section, _, field = name.partition('_')
            key = f'{section}.{field}'
            if key not in SCHEMA:
                raise ConfigError(f'unknown override {name}', keys=[key])
            values[key] = value
        return RunConfig(values, self.defaulted, self.source)

    @property
    def preset(self):
        return self.values['problem.preset']

    @property
    def iterations(self):
        return self.values['optimizer.iterations']

    def material(self):
        return MaterialParams(self.values['material.lambda'], self.values['material.mu'])

    def filter_params(self):
        return FilterParams(
            radius=self.values['filter.radius'],
            boundary_coeff=self.values['filter.boundary_coeff'],
            beta=self.values['filter.beta_initial'],
            eta=self.values['filter.eta'],
            epsilon=self.values['filter.epsilon'],
            boundary_scaling=self.values['filter.boundary_scaling']
        )

    def criterion(self):
        return CriterionConfig(
            kind=self.values['adapt.criterion'],
            c_r=self.values['adapt.c_r'],
            c_c=self.values['adapt.c_c'],
            interval=self.values['adapt.interval'],
            exclude_boundary=self.values['adapt.exclude_boundary'],
            exclude_supports=self.values['adapt.exclude_supports']
        )

    def run_name(self):
        if self.values.get('output.name'):
            return self.values['output.name']
        return f"{self.preset}_{self.values['adapt.criterion'].lower()}"

    def output_dir(self, output_root):
        if self.values.get('output.directory'):
            return self.values['output.directory']
        return os.path.join(output_root, self.run_name())

    def dumps(self):
        """Resolved configuration in the same key-value format it was read from"""
        lines = []
        for key in SCHEMA:
            value = self.values.get(key)
            if value is None:
                continue
            marker = '  # default' if key in self.defaulted else ''
            if isinstance(value, bool):
                value = 'true' if value else 'false'
            lines.append(f'{key}={value}{marker}')
        return '\n'.join(lines) + '\n'

    def to_dict(self):
        return {
            'source': self.source,
            'values': dict(self.values),
            'defaulted': list(self.defaulted)
        }

    def __repr__(self):
        return f'<RunConfig {self.preset} {self.values["adapt.criterion"]}>'


def resolve_config(raw, source=None):
    """Validate raw key-value pairs and apply preset and schema defaults

    Raises ConfigError listing every offending key path.
    """
    raw = {str(key).strip(): value for key, value in raw.items()}

    is_valid, errors = comprehensive_input_validation(raw, _validation_rules())
    if not is_valid:
        logger.warning(f"Run configuration rejected: {errors}")
        raise ConfigError('invalid run configuration', keys=_error_keys(errors), errors=errors)

    preset = _coerce('problem.preset', raw['problem.preset'])
    preset_defaults = PRESET_DEFAULTS[preset]

    values = {}
    defaulted = []
    for key, (_, default, _) in SCHEMA.items():
        if key in raw and not _is_blank(raw[key]):
            values[key] = _coerce(key, raw[key])
        else:
            values[key] = preset_defaults.get(key, default)
            defaulted.append(key)

    is_valid, errors = comprehensive_input_validation(values, {'custom_validators': CROSS_FIELD_RULES})
    if not is_valid:
        logger.warning(f"Run configuration rejected: {errors}")
        raise ConfigError('inconsistent run configuration', keys=_error_keys(errors), errors=errors)

    return RunConfig(values, defaulted, source)


def load_config(path):
    """Read and resolve a run configuration file"""
    if not os.path.isfile(path):
        raise ConfigError(f'configuration file not found: {path}')

    try:
        raw = dotenv_values(path)
    except (OSError, UnicodeDecodeError) as e:
        raise ConfigError(f'could not read configuration file {path}: {e}')

    config = resolve_config(raw, source=os.path.abspath(path))
    logger.info(f"Loaded run configuration {path} ({len(config.defaulted)} defaulted keys)")
    return config


class IterationRecord:
    """One row of the optimization history"""

    CSV_HEADER = ['iter', 'objective', 'g_vol', 'g_pvm', 'cells', 'dofs', 'dt', 't_acc', 'event']

    def __init__(self, iteration, objective, g_vol, g_pvm=None, cells=0, dofs=0,
                 dt=0.0, t_acc=0.0, event=False, indicator_max=None, beta=None):
        self.iteration = iteration
        self.objective = objective
        self.g_vol = g_vol
        self.g_pvm = g_pvm
        self.cells = cells
        self.dofs = dofs
        self.dt = dt
        self.t_acc = t_acc
        self.event = event
        self.indicator_max = indicator_max
        self.beta = beta

    def csv_row(self):
        return [
            self.iteration,
            repr(float(self.objective)),
            repr(float(self.g_vol)),
            '' if self.g_pvm is None else repr(float(self.g_pvm)),
            self.cells,
            self.dofs,
            f'{self.dt:.6f}',
            f'{self.t_acc:.6f}',
            int(bool(self.event)),
        ]

    def to_dict(self):
        return {
            'iter': self.iteration,
            'objective': self.objective,
            'g_vol': self.g_vol,
            'g_pvm': self.g_pvm,
            'cells': self.cells,
            'dofs': self.dofs,
            'dt': self.dt,
            't_acc': self.t_acc,
            'event': bool(self.event),
            'indicator_max': self.indicator_max,
            'beta': self.beta
        }

    def __repr__(self):
        return f'<IterationRecord {self.iteration} objective={self.objective:.6g}>'

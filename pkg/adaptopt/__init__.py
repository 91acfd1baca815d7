import logging
import os

__version__ = '1.0.0'


class App:
    """Process-level context: resolved settings plus the configured logger"""

    def __init__(self, config_name):
        self.name = 'adaptopt'
        self.config_name = config_name
        self.config = {}
        self.logger = logging.getLogger('adaptopt')

    def from_object(self, obj):
        """Copy UPPERCASE attributes of a settings class into config"""
        for key in dir(obj):
            if key.isupper():
                self.config[key] = getattr(obj, key)

    def log_dir(self, run_dir=None):
        base = run_dir or self.config['OUTPUT_ROOT']
        return os.path.join(base, self.config['LOG_DIR_NAME'])

    def __repr__(self):
        return f'<App {self.name} ({self.config_name})>'


def create_app(config_name=None, log_dir=None):
    """Application factory pattern"""
    if config_name is None:
        config_name = os.environ.get('ADAPTOPT_ENV', 'development')

    from adaptopt.config import config
    if config_name not in config:
        config_name = 'default'

    app = App(config_name)
    app.from_object(config[config_name])

    # Setup logging
    from adaptopt.utils.logging_config import setup_logging, setup_performance_logging
    setup_logging(app, log_dir or app.log_dir())
    setup_performance_logging(app, log_dir or app.log_dir())

    app.logger.info(f"adaptopt {__version__} initialized ({config_name})")
    return app

import os

from dotenv import load_dotenv

# Pick up a local .env before the settings classes read the environment
load_dotenv()


class Config:
    """Base configuration class"""

    # Output settings
    OUTPUT_ROOT = os.environ.get('ADAPTOPT_OUTPUT_ROOT') or 'runs'
    LOG_DIR_NAME = os.environ.get('ADAPTOPT_LOG_DIR_NAME') or 'logs'

    # Logging settings
    LOG_LEVEL = os.environ.get('ADAPTOPT_LOG_LEVEL') or 'INFO'
    LOG_MAX_BYTES = 10240000  # 10MB
    LOG_BACKUP_COUNT = 10
    LOG_TO_CONSOLE = os.environ.get('ADAPTOPT_LOG_TO_CONSOLE', 'true').lower() in ['true', 'on', '1']
    SLOW_CALL_SECONDS = float(os.environ.get('ADAPTOPT_SLOW_CALL_SECONDS') or 1.0)

    # Newton-Raphson settings
    NEWTON_MAX_ITERATIONS = 50
    NEWTON_RTOL = 1e-9
    NEWTON_ATOL = 1e-12
    LINE_SEARCH_MAX_HALVINGS = 12
    MAX_LOAD_BISECTIONS = 6


class DevelopmentConfig(Config):
    """Development configuration"""
    DEBUG = True
    LOG_LEVEL = os.environ.get('ADAPTOPT_LOG_LEVEL') or 'DEBUG'


class TestingConfig(Config):
    """Testing configuration"""
    TESTING = True
    LOG_TO_CONSOLE = False
    SLOW_CALL_SECONDS = 60.0


class ProductionConfig(Config):
    """Production configuration"""
    DEBUG = False
    LOG_TO_CONSOLE = False


# Configuration dictionary
config = {
    'development': DevelopmentConfig,
    'testing': TestingConfig,
    'production': ProductionConfig,
    'default': DevelopmentConfig
}

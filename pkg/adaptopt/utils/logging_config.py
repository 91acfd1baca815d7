import os
import json
import logging
import time
import functools
from logging.handlers import RotatingFileHandler
from datetime import datetime, timezone

# Loggers owned by this module; their handlers are rebuilt on every setup
_MANAGED_LOGGERS = ['adaptopt', 'adaptopt.events', 'adaptopt.iterations',
                    'adaptopt.performance', 'adaptopt.errors']

_state = {
    'log_dir': None,
    'max_bytes': 10240000,
    'backup_count': 10,
    'slow_call_seconds': 1.0,
}


def _utc_now():
    return datetime.now(timezone.utc).isoformat()


def _rotating_handler(filename, formatter, level):
    handler = RotatingFileHandler(
        os.path.join(_state['log_dir'], filename),
        maxBytes=_state['max_bytes'],
        backupCount=_state['backup_count']
    )
    handler.setFormatter(formatter)
    handler.setLevel(level)
    return handler


def _reset_handlers():
    for name in _MANAGED_LOGGERS:
        logger = logging.getLogger(name)
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
            handler.close()


def setup_logging(app, log_dir):
    """Setup file and console logging for a run"""

    os.makedirs(log_dir, exist_ok=True)
    _reset_handlers()

    _state['log_dir'] = log_dir
    _state['max_bytes'] = app.config.get('LOG_MAX_BYTES', 10240000)
    _state['backup_count'] = app.config.get('LOG_BACKUP_COUNT', 10)
    _state['slow_call_seconds'] = app.config.get('SLOW_CALL_SECONDS', 1.0)

    # Configure log format
    formatter = logging.Formatter(
        '[%(asctime)s] %(levelname)s in %(module)s: %(message)s'
    )

    main_logger = logging.getLogger('adaptopt')
    main_logger.addHandler(_rotating_handler('adaptopt.log', formatter, logging.INFO))
    main_logger.addHandler(_rotating_handler('errors.log', formatter, logging.ERROR))

    if app.config.get('LOG_TO_CONSOLE'):
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(logging.Formatter('%(levelname)s: %(message)s'))
        console_handler.setLevel(logging.INFO)
        main_logger.addHandler(console_handler)

    # Structured run events
    events_logger = logging.getLogger('adaptopt.events')
    events_logger.addHandler(_rotating_handler(
        'events.log', logging.Formatter('[%(asctime)s] EVENT: %(message)s'), logging.INFO))
    events_logger.setLevel(logging.INFO)
    events_logger.propagate = False

    level = getattr(logging, str(app.config.get('LOG_LEVEL', 'INFO')).upper(), logging.INFO)
    main_logger.setLevel(level)

    main_logger.info(f"Logging initialized in {log_dir}")


def setup_performance_logging(app, log_dir):
    """Setup performance monitoring logs"""
    os.makedirs(log_dir, exist_ok=True)
    performance_logger = logging.getLogger('adaptopt.performance')
    performance_logger.addHandler(_rotating_handler(
        'performance.log', logging.Formatter('[%(asctime)s] PERFORMANCE: %(message)s'), logging.INFO))
    performance_logger.setLevel(logging.INFO)
    performance_logger.propagate = False


def log_run_event(event_type, details=None):
    """Log a structured run event as one JSON line"""
    events_logger = logging.getLogger('adaptopt.events')

    event_data = {
        'timestamp': _utc_now(),
        'event_type': event_type,
        'details': details or {}
    }

    events_logger.info(json.dumps(event_data, default=str))


def log_iteration(record):
    """Log one optimization iteration record"""
    iteration_logger = logging.getLogger('adaptopt.iterations')

    # Setup iteration logger if not exists
    if not iteration_logger.handlers and _state['log_dir']:
        iteration_logger.addHandler(_rotating_handler(
            'iterations.log', logging.Formatter('[%(asctime)s] ITERATION: %(message)s'), logging.INFO))
        iteration_logger.setLevel(logging.INFO)
        iteration_logger.propagate = False

    iteration_logger.info(json.dumps(record.to_dict(), default=str))


def log_performance(func):
    """Decorator to log slow calls"""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.perf_counter()
        result = func(*args, **kwargs)
        execution_time = time.perf_counter() - start_time

        if execution_time > _state['slow_call_seconds']:
            performance_logger = logging.getLogger('adaptopt.performance')
            performance_logger.warning(json.dumps({
                'function': func.__name__,
                'module': func.__module__,
                'execution_time': execution_time,
                'timestamp': _utc_now()
            }))

        return result
    return wrapper


def track_error(error_type, error_message, additional_data=None):
    """Track run errors"""
    error_logger = logging.getLogger('adaptopt.errors')

    if not error_logger.handlers and _state['log_dir']:
        error_logger.addHandler(_rotating_handler(
            'run_errors.log', logging.Formatter('[%(asctime)s] ERROR: %(message)s'), logging.ERROR))
        error_logger.setLevel(logging.ERROR)

    error_data = {
        'timestamp': _utc_now(),
        'error_type': error_type,
        'error_message': str(error_message),
        'additional_data': additional_data or {}
    }

    error_logger.error(json.dumps(error_data, default=str))

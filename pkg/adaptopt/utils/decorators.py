import inspect
import logging
from functools import wraps

from adaptopt.errors import UnconvergedSolutionError

logger = logging.getLogger(__name__)


def converged_solution_required(f):
    """Decorator that refuses evaluation on an unconverged solution

    The wrapped callable must take a ``solution`` argument.
    """
    signature = inspect.signature(f)

    @wraps(f)
    def decorated(*args, **kwargs):
        bound = signature.bind_partial(*args, **kwargs)
        solution = bound.arguments.get('solution')

        if solution is None or not getattr(solution, 'converged', False):
            logger.error(f"{f.__name__} refused: state solution is not converged")
            raise UnconvergedSolutionError(
                f'{f.__name__} requires a converged state solution',
                step=getattr(solution, 'failed_step', None)
            )

        return f(*args, **kwargs)
    return decorated

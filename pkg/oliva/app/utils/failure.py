import json
import sys
from functools import wraps

import numpy as np

from ..utils.errors import OlivaError
from ..utils.logger import Logger


def failure_tolerant(default):
    """Decorator factory: log a failed fit and return `default` instead of raising."""
    def decorator(f):
        @wraps(f)
        def decorated_function(*args, **kwargs):
            try:
                return f(*args, **kwargs)
            except (OlivaError, np.linalg.LinAlgError) as e:
                Logger().get_logger().debug(f'{f.__name__} failed: '
                                            f'{type(e).__name__}: {e}')
                return default
        return decorated_function
    return decorator


infinite_on_failure = failure_tolerant(float('inf'))


def exit_code_on_failure(f):
    """Decorator for CLI commands: map errors to exit codes and JSON on stderr."""
    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            f(*args, **kwargs)
            return 0
        except OlivaError as e:
            Logger().get_logger().error(f'{type(e).__name__}: {e}')
            print(json.dumps(e.to_dict()), file=sys.stderr)
            return e.exit_code
        except np.linalg.LinAlgError as e:
            Logger().get_logger().error(f'linear algebra failure: {e}')
            print(json.dumps({'error': 'LinAlgError', 'message': str(e),
                              'context': {}}), file=sys.stderr)
            return 3
    return decorated_function

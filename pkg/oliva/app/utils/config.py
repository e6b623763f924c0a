import os
from pathlib import Path

from ..utils.errors import ConfigError
from ..utils.singleton import Singleton


class Config(metaclass=Singleton):
    """Holds "global" configuration for the engine."""

    @staticmethod
    def get_thread_count() -> int:
        """Workers used for GCV grids and Monte Carlo replications."""
        try:
            threads = int(os.environ.get('OLIVA_THREADS', '1'))
        except ValueError:
            raise ConfigError('OLIVA_THREADS must be an integer',
                              value=os.environ.get('OLIVA_THREADS'))
        return max(threads, 1)

    @staticmethod
    def get_log_level() -> str:
        return os.environ.get('OLIVA_LOG_LEVEL', 'INFO').upper()

    @staticmethod
    def get_discrete_levels() -> int:
        """Columns with at most this many distinct values get an indicator basis."""
        return int(os.environ.get('OLIVA_DISCRETE_LEVELS', '10'))

    @staticmethod
    def get_spline_degree() -> int:
        return int(os.environ.get('OLIVA_SPLINE_DEGREE', '3'))

    @staticmethod
    def read_config_file(path: str | Path, known_keys: set[str] | None = None
                         ) -> dict[str, str]:
        """Parse a `key=value` file into a dict keyed by flag name.

        Keys are normalized to underscores (`j-values` and `j_values` are the
        same key). Values are returned as raw strings; list valued flags keep
        their comma separated form.
        """
        path = Path(path)
        try:
            lines = path.read_text(encoding='utf-8').splitlines()
        except OSError as e:
            raise ConfigError(f'cannot read config file: {e}', path=str(path))

        values = {}
        for lineno, raw in enumerate(lines, start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError('expected key=value', path=str(path),
                                  line=lineno)
            key, value = (part.strip() for part in line.split('=', 1))
            key = key.lstrip('-').replace('-', '_')
            if known_keys is not None and key not in known_keys:
                raise ConfigError(f'unknown config key {key!r}',
                                  path=str(path), line=lineno)
            values[key] = value
        return values

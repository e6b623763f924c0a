import threading
from datetime import datetime, timedelta


class Singleton(type):
    """A metaclass that implements the singleton pattern.

    Only one instance of a class is created and reused by every later call.
    The instance is refreshed every `MAX_INSTANCE_TTL`, so environment driven
    settings (thread count, log level) are re-read by long running processes.

    Creation is guarded by a lock: GCV grids and Monte Carlo replications run
    on a thread pool and all of them reach for `Logger()` and `Config()`.

    Usage:
    ```python
    >>> class Settings(metaclass=Singleton):
    ...     pass

    >>> a = Settings()
    >>> b = Settings()
    >>> a is b
        True
    >>> c = Settings(force_recreate=True)
    >>> a is c
        False
    ```
    """

    _instances = {}
    _creation_time = {}
    _lock = threading.RLock()

    MAX_INSTANCE_TTL = timedelta(minutes=5)

    def _create_instance(cls, *args, **kwargs):
        cls._instances[cls] = super(Singleton, cls).__call__(*args, **kwargs)
        cls._creation_time[cls] = datetime.now()

    def _expired(cls) -> bool:
        created = cls._creation_time.get(cls)
        return created is None or created + cls.MAX_INSTANCE_TTL < datetime.now()

    def __call__(cls, *args, force_recreate=False, **kwargs):
        """Return the shared instance, creating it when missing, expired or forced."""
        with Singleton._lock:
            if force_recreate or cls not in cls._instances or cls._expired():
                cls._create_instance(*args, **kwargs)
            return cls._instances[cls]

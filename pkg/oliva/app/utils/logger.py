import sys
import logging

from ..utils.config import Config
from ..utils.singleton import Singleton


class Logger(metaclass=Singleton):
    default_config = {
        'name': 'oliva',
        'format': '[%(asctime)s|%(name)s|%(levelname)s|%(processName)s:%(threadName)s|%(filename)s, '
                  'line %(lineno)s in %(funcName)s] %(message)s',
    }

    def __init__(self,
                 config_to_use: dict = None):

        config = {**Logger.default_config,
                  'level': Config().get_log_level(),
                  **(config_to_use or {})}
        self.logger = logging.getLogger(config['name'])

        logging_lvl = getattr(logging, config['level'], logging.INFO)
        self.logger.setLevel(logging_lvl)
        self.logger.propagate = False

        # Reports go to stdout, so diagnostics go to stderr.
        handler = logging.StreamHandler(sys.stderr)
        handler.setLevel(logging_lvl)
        handler.setFormatter(logging.Formatter(config['format']))

        # The singleton is refreshed periodically; keep a single handler.
        for old in list(self.logger.handlers):
            self.logger.removeHandler(old)
        self.logger.addHandler(handler)

    def get_logger(self) -> logging.Logger:
        return self.logger

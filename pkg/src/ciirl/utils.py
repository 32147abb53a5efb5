# src/ciirl/utils.py

import logging
import os

LOG_ENV_VAR = "CI_IRL_LOG"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_LEVELS = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "WARNING": logging.WARNING,
    "WARN": logging.WARNING,
    "ERROR": logging.ERROR,
}


def configure_logging(level=None):
    """
    Installs a single stream handler on the package logger.

    The level comes from the argument, else from the CI_IRL_LOG environment
    variable, else WARNING. Calling this twice does not stack handlers.
    """
    raw = level if level is not None else os.environ.get(LOG_ENV_VAR, "WARNING")
    resolved = _LEVELS.get(str(raw).strip().upper())

    logger = logging.getLogger("ciirl")
    if not any(getattr(h, "_ciirl_handler", False) for h in logger.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._ciirl_handler = True
        logger.addHandler(handler)
    logger.setLevel(resolved if resolved is not None else logging.WARNING)
    if resolved is None:
        logger.warning("Unknown %s value %r; using WARNING.", LOG_ENV_VAR, raw)
    return logger


def derive_seed(master_seed, offset):
    """Seeds for independent sub-tasks are the master seed plus a fixed offset."""
    return int(master_seed) + int(offset)

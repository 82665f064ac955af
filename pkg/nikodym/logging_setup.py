import logging

from .config import settings

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str | None = None) -> None:
    """Install one stream handler on the package logger (idempotent)."""
    root = logging.getLogger("nikodym")
    root.setLevel((level or settings.LOG_LEVEL).upper())
    if not any(getattr(h, "_nikodym", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handler._nikodym = True
        root.addHandler(handler)

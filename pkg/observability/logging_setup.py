import logging
import os

from dotenv import load_dotenv

load_dotenv()

UNINET_LOG_LEVEL = os.getenv("UNINET_LOG_LEVEL", "INFO")

LOG_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"


def configure_logging(level: str = None) -> None:
    """Install a single stream handler on the root logger; safe to call more than once."""
    level = (level or UNINET_LOG_LEVEL).upper()
    root  = logging.getLogger()
    root.setLevel(level)
    if not any(getattr(h, "_uninet", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt="%H:%M:%S"))
        handler._uninet = True
        root.addHandler(handler)
    # matplotlib and PIL are chatty at DEBUG
    for noisy in ("matplotlib", "PIL"):
        logging.getLogger(noisy).setLevel(max(logging.getLevelName(level), logging.INFO))

"""Command-line harness: synthetic data, gradient-check suite, toy training and ablations."""

from __future__ import annotations

import logging
import os

import colorlog
import dotenv

dotenv.load_dotenv()
logger = logging.getLogger(__name__)

root_logger = logging.getLogger()
root_logger.setLevel(logging.DEBUG if bool(os.getenv("CMX_DEBUG")) else logging.INFO)
if not any(isinstance(h.formatter, colorlog.ColoredFormatter) for h in root_logger.handlers):
    stderr_handler = colorlog.StreamHandler()
    stderr_handler.setFormatter(
        colorlog.ColoredFormatter("%(log_color)s%(levelname)-7s%(reset)s %(name)s: %(message)s")
    )
    root_logger.addHandler(stderr_handler)

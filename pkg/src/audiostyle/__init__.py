"""Spectrogram style transfer with a from-scratch CNN and reverse-mode autodiff."""

from .config import RunConfig, StftConfig, TransferConfig, load_config, parse_config
from .errors import AudioStyleError

__version__ = "0.1.0"

__all__ = ["AudioStyleError", "RunConfig", "StftConfig", "TransferConfig", "load_config", "parse_config"]

"""Simulator for a rotating propeller-LED image-sensor link.

Light-trail rendering, camera response, adjacent-only ISI BER analysis,
Monte Carlo validation and control-angle design.
"""

from .config import ConfigError, SystemConfig, load_config, parse_config

__version__ = "0.1.0"

__all__ = ["ConfigError", "SystemConfig", "load_config", "parse_config", "__version__"]

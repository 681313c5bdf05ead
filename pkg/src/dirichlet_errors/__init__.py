"""Error calculus on Wiener space for option pricing and hedging."""
__version__ = "0.1.0"

from . import black_scholes, error_algebra, level_vol, mc_ibp, wiener  # noqa: E402,F401
from .errors import (CapabilityError, ConfigError, ErrorCalculusError,  # noqa: E402,F401
                     InputError, NumericError)

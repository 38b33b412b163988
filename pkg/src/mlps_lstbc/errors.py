"""Exception types shared across the simulator."""


class FramingError(ValueError):
    """Bit or sample count does not fill an integer number of frames."""


class ConfigError(ValueError):
    """Invalid simulation configuration."""


class InfeasibleConfigError(ConfigError):
    """Configuration is well formed but cannot be simulated (e.g. trellis too large)."""

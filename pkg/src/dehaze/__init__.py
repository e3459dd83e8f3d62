"""Single-image dehazing: dark-channel baseline, haze synthesis and a small numpy CNN."""

__version__ = "0.1.0"

"""Grid-projection pricing engine for options on discrete-dividend stocks."""

__version__ = "0.1.0"

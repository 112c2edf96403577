"""Semantic exceptions shared across the package.

The CLI maps these onto exit codes (config 2, convergence 3, everything
else 4), so library code should raise the most specific one that applies
instead of bare ValueError/RuntimeError.
"""


class BigmatchError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(BigmatchError, ValueError):
    """A config file, market description, or argument violates its contract."""


class InfeasibleError(BigmatchError, ValueError):
    """A requested quantity does not exist (e.g. filling more seats than capacity)."""


class ConvergenceError(BigmatchError, RuntimeError):
    """Fixed-point iteration or root bracketing exhausted its budget."""

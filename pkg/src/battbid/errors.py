"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1, data
problems exit 2, numerical failures exit 3.
"""


class BattbidError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(BattbidError):
    """Invalid configuration value, missing section, bad flag combination."""

    exit_code = 1


class DataError(BattbidError):
    """Malformed or inconsistent input data / artifact files."""

    exit_code = 2


class NumericalError(BattbidError):
    """Solver breakdown, non-finite bounds, iteration limits."""

    exit_code = 3


class RecourseError(NumericalError):
    """A stage problem was infeasible although slack variables are present.

    Slack-relaxed storage bounds are supposed to guarantee a feasible
    recourse action from any reachable state, so this indicates a modelling
    or state-propagation bug rather than a property of the instance.
    """

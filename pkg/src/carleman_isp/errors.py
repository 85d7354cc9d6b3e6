"""Exception hierarchy.

Each class carries an ``exit_code`` so the command line driver can map a
failure category to a process status without string matching.
"""


class IspError(Exception):
    exit_code = 1


class ConfigError(IspError, ValueError):
    exit_code = 2


class BasisConditioningError(IspError, ArithmeticError):
    exit_code = 3


class GridAlignmentError(IspError, ValueError):
    exit_code = 4


class StabilityError(IspError, ArithmeticError):
    exit_code = 5


class SolverError(IspError, ArithmeticError):
    exit_code = 6

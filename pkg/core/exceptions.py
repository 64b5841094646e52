#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Exceptions
Error types raised by the analysis packages
"""


class AnalysisError(Exception):
    """Base class for every error raised by the analysis code"""


class ConfigError(AnalysisError, ValueError):
    """Invalid run configuration (reported as a usage error)"""


class DataValidationError(AnalysisError, ValueError):
    """Dataset could not be parsed or failed validation"""

    def __init__(self, message, line=None, basin=None):
        self.line = line
        self.basin = basin
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownFieldError(AnalysisError, KeyError):
    """Field id not present in the dataset schema"""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown field"


class WindowError(AnalysisError, ValueError):
    """Invalid moving-median window or window longer than the series"""


class BasisError(AnalysisError, ValueError):
    """A smoother basis could not be constructed"""


class DesignError(AnalysisError, ValueError):
    """Model design could not be assembled"""


class RankDeficiencyError(AnalysisError, ValueError):
    """Design or regressor block is not of full column rank"""

    def __init__(self, message, columns=()):
        self.columns = tuple(columns)
        if self.columns:
            message = f"{message}: {', '.join(self.columns)}"
        super().__init__(message)


class ConvergenceError(AnalysisError, RuntimeError):
    """IRLS did not converge; the last iterate is attached"""

    def __init__(self, message, last_iterate=None):
        self.last_iterate = last_iterate
        super().__init__(message)


class NonNestedModelError(AnalysisError, ValueError):
    """Reduced model is not a column subset of the full model on the same rows"""


class UnknownTermError(AnalysisError, KeyError):
    """Term name not present in a fitted model"""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown term"


class DimensionError(AnalysisError, ValueError):
    """Coefficient block does not match the basis it is reduced with"""


class PoolingError(AnalysisError, ValueError):
    """Random-effects pooling received unusable input"""

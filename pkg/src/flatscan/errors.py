"""
flatscan errors - exception hierarchy shared by every module
"""

from typing import Any, Dict, Optional


class FlatscanError(Exception):
    """Root of all flatscan failures"""

    def context(self) -> Dict[str, Any]:
        """Extra fields reported next to the message in structured errors"""
        return {}


class ConfigError(FlatscanError, ValueError):
    """Invalid, unknown or missing configuration"""

    def __init__(self, message: str, key: Optional[str] = None, path: Optional[str] = None):
        super().__init__(message)
        self.key = key
        self.path = path

    def context(self) -> Dict[str, Any]:
        ctx = {}
        if self.key is not None:
            ctx['key'] = self.key
        if self.path is not None:
            ctx['path'] = self.path
        return ctx


class DimensionError(FlatscanError, ValueError):
    """Shapes of vectors, matrices or data do not agree"""


class DataError(FlatscanError, ValueError):
    """Dataset construction or CSV ingestion failed"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[int] = None):
        if row is not None:
            message = f"{message} (row {row}" + (f", column {column})" if column is not None else ")")
        super().__init__(message)
        self.row = row
        self.column = column

    def context(self) -> Dict[str, Any]:
        return {k: v for k, v in (('row', self.row), ('column', self.column)) if v is not None}


class EigenSolverError(FlatscanError, ArithmeticError):
    """The symmetric eigensolver did not converge"""

    def __init__(self, message: str, info: int = 0):
        super().__init__(message)
        self.info = info

    def context(self) -> Dict[str, Any]:
        return {'info': self.info}


class SolverBreakdown(FlatscanError, ArithmeticError):
    """Non-finite values appeared inside an iterative solver"""

    def __init__(self, message: str, iteration: int = 0):
        super().__init__(message)
        self.iteration = iteration

    def context(self) -> Dict[str, Any]:
        return {'iteration': self.iteration}


class TraceError(FlatscanError, ValueError):
    """A stored trace file is empty or malformed"""

    def __init__(self, message: str, row: Optional[int] = None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row

    def context(self) -> Dict[str, Any]:
        return {'row': self.row} if self.row is not None else {}

"""
Exception hierarchy shared by every dit_cache module.
Library code raises these; only main_application turns them into exit codes.
"""

from typing import Any, Dict, Iterable, List, Optional


class DitCacheError(Exception):
    """Base class for all errors raised by dit_cache"""


class DimensionError(DitCacheError):
    """Raised when tensor or matrix shapes do not agree"""

    def __init__(self, message: str, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = [tuple(s) for s in shapes]


class GraphError(DitCacheError):
    """Raised on misuse of the autodiff graph (non-scalar loss, cleared graph)"""


class NumericError(DitCacheError):
    """Raised when NaN/Inf shows up in a value that is about to be committed"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CacheError(DitCacheError):
    """Raised when the feature cache is read in an invalid state"""


class FormatError(DitCacheError):
    """Raised when a router file or checkpoint cannot be decoded"""


class ConfigError(DitCacheError):
    """Raised with every violated configuration constraint at once"""

    def __init__(self, violations: Iterable[str]):
        self.violations: List[str] = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"{len(self.violations)} configuration error(s):\n{lines}")

"""
Shared types, exceptions and logging setup for the exceptional nexus toolkit.
"""
import logging
import logging.handlers
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional


class NexusError(Exception):
    """Base class for toolkit errors."""


class IllConditionedError(NexusError):
    """Eigen-residual exceeded the acceptance bound."""

    def __init__(self, message: str, system: Any = None):
        super().__init__(message)
        self.system = system


class TrackingLostError(NexusError):
    """Branch identity could not be carried between neighbouring samples."""


class DegenerateDataError(NexusError):
    """Data holds no information about the quantity being fitted."""


class NoBracketError(NexusError):
    """Eigenvalue branches show no degeneracy inside the sampled window."""


class NotConvergedError(NexusError):
    """Iterative fit hit its iteration cap."""

    def __init__(self, message: str, result: Any = None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class ParamPoint:
    """A point (w, Γ̄) of the dimensionless parameter plane, in units of Ω₁."""

    w: float
    gamma: float

    def __post_init__(self):
        for name in ('w', 'gamma'):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")

    @property
    def q(self) -> float:
        """w² + 1, the recurring combination in the characteristic polynomial."""
        return self.w * self.w + 1.0

    def __repr__(self) -> str:
        return f"ParamPoint(w={self.w}, gamma={self.gamma})"


def complex_pair(value: complex) -> list:
    """Encode a complex number as [re, im] for JSON."""
    value = complex(value)
    return [value.real, value.imag]


def setup_logging(log_config: Dict[str, Any], logger_name: str = 'exnexus') -> logging.Logger:
    """
    Configure root logging from the `logging:` config section.

    Args:
        log_config: Logging configuration dictionary
        logger_name: Name of the application logger to return

    Returns:
        Application logger
    """
    log_level = str(log_config.get('level', 'INFO')).upper()
    log_file: Optional[str] = log_config.get('file')

    handlers: list = [logging.StreamHandler(sys.stderr)]
    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.handlers.RotatingFileHandler(
            log_path,
            maxBytes=int(log_config.get('max_bytes', 10485760)),
            backupCount=int(log_config.get('backup_count', 5)),
        ))

    logging.basicConfig(
        level=getattr(logging, log_level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )
    return logging.getLogger(logger_name)

"""
Input validation utilities.
"""
import math
from typing import Any

import numpy as np

from utils.errors import InvalidArgumentError

# Relative tolerances for symmetric-PSD checks
SYMMETRY_TOLERANCE = 1e-12
EIGENVALUE_TOLERANCE = 1e-12


def require_finite(name: str, value: Any) -> float:
    """
    Validate that a scalar is a finite real number.
    
    Args:
        name: Field name used in the error message
        value: Value to check
        
    Returns:
        float: The value as float
        
    Raises:
        InvalidArgumentError: If the value is not a finite number
    """
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise InvalidArgumentError(f"{name} must be a number, got {value!r}")
    if not math.isfinite(number):
        raise InvalidArgumentError(f"{name} must be finite, got {value!r}")
    return number


def require_non_negative(name: str, value: Any) -> float:
    """Validate a finite scalar that must be >= 0."""
    number = require_finite(name, value)
    if number < 0:
        raise InvalidArgumentError(f"{name} must be non-negative, got {number}")
    return number


def require_positive(name: str, value: Any) -> float:
    """Validate a finite scalar that must be > 0."""
    number = require_finite(name, value)
    if number <= 0:
        raise InvalidArgumentError(f"{name} must be positive, got {number}")
    return number


def require_finite_array(name: str, values: Any, ndim: int = 1) -> np.ndarray:
    """
    Convert to a float array and check shape rank and finiteness.
    
    Args:
        name: Field name used in the error message
        values: Array-like input
        ndim: Expected number of dimensions
        
    Returns:
        np.ndarray: Float64 array
    """
    array = np.asarray(values, dtype=float)
    if array.ndim != ndim:
        raise InvalidArgumentError(f"{name} must be {ndim}-dimensional, got shape {array.shape}")
    if not np.all(np.isfinite(array)):
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return array


def is_symmetric_psd(matrix: np.ndarray) -> bool:
    """
    Check that a matrix is symmetric and positive semi-definite within tolerance.
    
    Asymmetry is measured relative to the largest entry; the smallest eigenvalue
    may go below zero by at most a small fraction of the trace.
    
    Args:
        matrix: Square matrix
        
    Returns:
        bool: True if symmetric PSD within tolerance
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        return False
    if not np.all(np.isfinite(matrix)):
        return False
    scale = float(np.max(np.abs(matrix))) if matrix.size else 0.0
    if scale == 0.0:
        return True
    if np.max(np.abs(matrix - matrix.T)) > SYMMETRY_TOLERANCE * scale:
        return False
    symmetric = 0.5 * (matrix + matrix.T)
    min_eig = float(np.linalg.eigvalsh(symmetric)[0])
    trace = float(np.trace(symmetric))
    return min_eig >= -EIGENVALUE_TOLERANCE * max(trace, scale)

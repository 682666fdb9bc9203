"""Input validation helpers shared by the estimators."""

import numbers

import numpy as np
from sklearn.utils.validation import check_array


class EchoSigError(Exception):
    """Base class for all errors raised by echosig."""


class InputError(EchoSigError, ValueError):
    """Bad user input: malformed files, failed preconditions."""


class NumericalError(EchoSigError, ArithmeticError):
    """A numerical procedure failed to produce a valid result."""


class DegenerateSignatureError(NumericalError):
    """A signature has (near) zero variance and carries no channel evidence."""


def check_samples(samples, name="samples"):
    """Return `samples` as a finite 1-D float64 array, rejecting empty input."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise InputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def check_matrix(X, name="X", min_rows=1):
    try:
        return check_array(X, dtype=np.float64, ensure_min_samples=min_rows,
                           input_name=name)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def check_scores(scores, name="scores", min_count=10):
    """Validate a set of correlation scores in [-1, 1]."""
    arr = np.asarray(scores, dtype=np.float64).ravel()
    if arr.size < min_count:
        raise InputError(f"{name}: need at least {min_count} scores, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name}: non-finite score")
    if np.any(np.abs(arr) > 1.0 + 1e-12):
        raise InputError(f"{name}: scores must lie in [-1, 1]")
    if np.ptp(arr) == 0.0:
        raise InputError(f"{name}: all scores are equal")
    return arr


def check_fraction(value, name, low=0.0, high=1.0, closed_low=True, closed_high=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise InputError(f"{name} must be a finite real number")
    ok_low = value >= low if closed_low else value > low
    ok_high = value <= high if closed_high else value < high
    if not (ok_low and ok_high):
        lb = "[" if closed_low else "("
        rb = "]" if closed_high else ")"
        raise InputError(f"{name}={value} outside {lb}{low}, {high}{rb}")
    return float(value)

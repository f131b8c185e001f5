"""Input validation helpers shared by the estimators and functional API."""

from __future__ import annotations

import itertools
import math

import numpy as np

from .exceptions import InvalidEta, InvalidSimplex

SIMPLEX_ATOL = 1e-9


def check_simplex(p, d=None, atol=SIMPLEX_ATOL):
    """Validate a probability vector (or a stack of them, one per row).

    Coordinates must be nonnegative and sum to one within ``atol``; rows
    within tolerance are renormalized, anything else raises
    :class:`InvalidSimplex`. Returns a float64 array.
    """
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim not in (1, 2):
        raise InvalidSimplex(f"expected a 1-D or 2-D array, got shape {arr.shape}")
    if arr.shape[-1] < 2:
        raise InvalidSimplex("a probability vector needs at least 2 outcomes")
    if d is not None and arr.shape[-1] != d:
        raise InvalidSimplex(f"expected {d} outcomes, got {arr.shape[-1]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidSimplex("probability vector has non-finite entries")
    if np.any(arr < 0):
        raise InvalidSimplex("probability vector has negative entries")
    total = arr.sum(axis=-1, keepdims=True)
    if np.any(np.abs(total - 1.0) > atol):
        raise InvalidSimplex(
            f"coordinates sum to {np.ravel(total)[np.argmax(np.abs(np.ravel(total) - 1))]!r}, not 1"
        )
    if np.any(total != 1.0):
        arr = arr / total
    return arr


def check_outcomes(ys, d):
    """Validate a sequence of 0-based outcome indices in ``range(d)``."""
    arr = np.asarray(ys)
    if arr.ndim != 1:
        raise ValueError(f"outcomes must be 1-D, got shape {arr.shape}")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError("outcomes must be integers")
    arr = arr.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= d):
        raise ValueError(f"outcomes must lie in [0, {d})")
    return arr


def check_eta(eta, allow_inf=True):
    eta = float(eta)
    if math.isnan(eta) or eta <= 0:
        raise InvalidEta(f"learning rate must be positive, got {eta}")
    if math.isinf(eta) and not allow_inf:
        raise InvalidEta("a finite learning rate is required here")
    return eta


def one_hot(ys, d):
    ys = np.asarray(ys, dtype=np.int64)
    out = np.zeros((ys.size, d))
    out[np.arange(ys.size), ys] = 1.0
    return out


def relative_residual(a, b):
    """``|a - b| / max(1, |a|, |b|)``; the scale every identity check uses.

    Two equal infinities count as a zero residual.
    """
    a = float(a)
    b = float(b)
    if a == b:
        return 0.0
    if not (math.isfinite(a) and math.isfinite(b)):
        return math.inf
    return abs(a - b) / max(1.0, abs(a), abs(b))


def simplex_grid(d, resolution):
    """All points of the simplex whose coordinates are multiples of ``resolution``.

    ``1/resolution`` is rounded to the nearest integer ``m``; rows are in
    lexicographic order of their integer numerators.
    """
    m = int(round(1.0 / resolution))
    if m < 1:
        raise ValueError("resolution must be at most 1")
    rows = [
        c + (m - sum(c),)
        for c in itertools.product(range(m + 1), repeat=d - 1)
        if sum(c) <= m
    ]
    return np.asarray(rows, dtype=np.float64) / m

"""Proper losses through their convex representations.

Every loss here is written as ``loss(p, y) = D(e_y, p) - psi(e_y)`` for a
convex ``psi`` on the simplex, where ``D`` is the Bregman divergence of
``psi``. The four "fair" families (log, squared, spherical, unscaled
Tsallis) have ``psi(e_y) = 0``; the scaled Tsallis score has
``psi(e_y) = 1`` and therefore ``loss(e_y, y) = -1``.

All functions accept a single probability vector or a stack of them (one
per row) and broadcast the usual way. Outcomes are 0-based. Infinite losses
are plain ``math.inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import SingularGradient
from .validation import check_outcomes, check_simplex, simplex_grid


class Family(str, Enum):
    LOG = "log"
    SQUARED = "squared"
    SPHERICAL = "spherical"
    UNSCALED_TSALLIS = "tsallis"
    SCALED_TSALLIS = "scaled_tsallis"


_TSALLIS = (Family.UNSCALED_TSALLIS, Family.SCALED_TSALLIS)


@dataclass(frozen=True)
class LossSpec:
    """A proper loss: one of the five named families plus its Tsallis order.

    ``LossSpec.tsallis(1.0)`` evaluates exactly like ``LossSpec.log()`` and
    ``LossSpec.tsallis(2.0)`` like ``LossSpec.squared()``; the family is
    kept anyway because a few bounds are stated per family.
    """

    family: Family
    alpha: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.family in _TSALLIS:
            if self.alpha is None:
                raise ValueError(f"{self.family.value} needs an alpha in [1, 2]")
            alpha = float(self.alpha)
            if not 1.0 <= alpha <= 2.0:
                raise ValueError(f"alpha must lie in [1, 2], got {alpha}")
            object.__setattr__(self, "alpha", alpha)
        elif self.alpha is not None:
            raise ValueError(f"{self.family.value} takes no alpha")

    @classmethod
    def log(cls):
        return cls(Family.LOG)

    @classmethod
    def squared(cls):
        return cls(Family.SQUARED)

    @classmethod
    def spherical(cls):
        return cls(Family.SPHERICAL)

    @classmethod
    def tsallis(cls, alpha, scaled=False):
        family = Family.SCALED_TSALLIS if scaled else Family.UNSCALED_TSALLIS
        return cls(family, alpha)

    @classmethod
    def from_string(cls, text):
        """Parse ``"log"``, ``"squared"``, ``"spherical"``, ``"tsallis:1.5"``
        or ``"scaled_tsallis:1.5"``."""
        name, _, alpha = text.strip().partition(":")
        name = name.strip().lower().replace("-", "_")
        if name in ("tsallis", "unscaled_tsallis"):
            name = Family.UNSCALED_TSALLIS.value
        family = Family(name)
        return cls(family, float(alpha) if alpha else None)

    def __str__(self):
        if self.alpha is None:
            return self.family.value
        return f"{self.family.value}:{self.alpha:g}"

    @property
    def is_fair(self):
        """Whether perfect prediction costs zero (``psi(e_y) = 0``)."""
        return self.family is not Family.SCALED_TSALLIS

    @property
    def kernel(self):
        """The closed form used to evaluate this spec.

        Unscaled Tsallis at the endpoints dispatches to the log and squared
        formulas instead of the singular ``1/(1-alpha)`` expression.
        """
        if self.family is Family.UNSCALED_TSALLIS:
            if self.alpha == 1.0:
                return "log"
            if self.alpha == 2.0:
                return "squared"
            return "tsallis"
        if self.family is Family.SCALED_TSALLIS:
            return "scaled"
        return self.family.value


# Unchecked kernels. Inputs are float arrays whose last axis is the outcome
# axis; callers validate.


def _loss_matrix(spec, p):
    """``out[..., y] = loss(p, y)`` for every outcome ``y``."""
    kind = spec.kernel
    with np.errstate(divide="ignore"):
        if kind == "log":
            return -np.log(p)
        if kind == "squared":
            return np.sum(p * p, axis=-1, keepdims=True) - 2.0 * p + 1.0
        if kind == "spherical":
            return 1.0 - p / np.linalg.norm(p, axis=-1, keepdims=True)
        a = spec.alpha
        power_sum = np.sum(p**a, axis=-1, keepdims=True)
        if kind == "tsallis":
            return (a * p ** (a - 1.0) - 1.0) / (1.0 - a) + power_sum
        return (a - 1.0) * power_sum - a * p ** (a - 1.0)


def _psi(spec, p):
    kind = spec.kernel
    if kind == "log":
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0, p * np.log(p), 0.0)
        return np.sum(terms, axis=-1)
    if kind == "squared":
        return np.sum(p * p, axis=-1) - 1.0
    if kind == "spherical":
        return np.linalg.norm(p, axis=-1) - 1.0
    a = spec.alpha
    power_sum = np.sum(p**a, axis=-1)
    if kind == "tsallis":
        return (power_sum - 1.0) / (a - 1.0)
    return power_sum


def _grad_psi(spec, p):
    kind = spec.kernel
    if kind == "log":
        if np.any(p <= 0):
            raise SingularGradient("log-loss gradient is infinite at a zero coordinate")
        return 1.0 + np.log(p)
    if kind == "squared":
        return 2.0 * p
    if kind == "spherical":
        return p / np.linalg.norm(p, axis=-1, keepdims=True)
    a = spec.alpha
    if kind == "tsallis":
        return (a / (a - 1.0)) * p ** (a - 1.0)
    return a * p ** (a - 1.0)


def _bregman(spec, p, q):
    """Closed-form ``D(p, q)``.

    Under log loss this is the KL divergence with the support conventions
    ``0 log(0/q) = 0`` and ``p log(p/0) = inf`` for ``p > 0``, so boundary
    points that share support need no gradient.
    """
    kind = spec.kernel
    if kind == "log":
        p, q = np.broadcast_arrays(p, q)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
        return np.sum(terms, axis=-1)
    if kind == "squared":
        diff = p - q
        return np.sum(diff * diff, axis=-1)
    if kind == "spherical":
        q_norm = np.linalg.norm(q, axis=-1)
        return np.linalg.norm(p, axis=-1) - np.sum(p * q, axis=-1) / q_norm
    a = spec.alpha
    numerator = (
        np.sum(p**a, axis=-1)
        + (a - 1.0) * np.sum(q**a, axis=-1)
        - a * np.sum(p * q ** (a - 1.0), axis=-1)
    )
    if kind == "tsallis":
        return numerator / (a - 1.0)
    return numerator


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


# Public API.


def loss_eval(spec, p, y):
    """Loss of forecast ``p`` when outcome ``y`` (0-based) is realized.

    With a stack of forecasts, ``y`` is either one outcome or one per row.
    """
    p = check_simplex(p)
    d = p.shape[-1]
    losses = _loss_matrix(spec, p)
    if p.ndim == 1:
        y = int(check_outcomes([y], d)[0])
        return float(losses[y])
    y = check_outcomes(np.broadcast_to(y, p.shape[:1]), d)
    return losses[np.arange(p.shape[0]), y]


def loss_eval_dist(spec, p, q):
    """Expected loss ``sum_y q_y loss(p, y)``; ``0 * inf`` counts as 0."""
    p = check_simplex(p)
    q = check_simplex(q, d=p.shape[-1])
    losses = _loss_matrix(spec, p)
    with np.errstate(invalid="ignore"):
        terms = np.where(q > 0, q * losses, 0.0)
    return _scalar(np.sum(terms, axis=-1))


def psi(spec, p):
    """The convex representation ``psi(p) = -loss(p, p)``."""
    return _scalar(_psi(spec, check_simplex(p)))


def grad_psi(spec, p):
    """A subgradient selection of ``psi`` at ``p``.

    Raises :class:`SingularGradient` under log loss at a zero coordinate.
    """
    return _grad_psi(spec, check_simplex(p))


def bregman(spec, p, q):
    """Bregman divergence ``psi(p) - psi(q) - <grad psi(q), p - q>``."""
    p = check_simplex(p)
    q = check_simplex(q, d=p.shape[-1])
    return _scalar(_bregman(spec, p, q))


def lipschitz_const(spec, d):
    """Sup-norm bound on the loss gradient over the simplex, or ``None``.

    Only the squared loss (2) and the spherical loss (2 sqrt(d)) are
    Lipschitz on the whole simplex among the families here.
    """
    kind = spec.kernel
    if kind == "squared" or (kind == "scaled" and spec.alpha == 2.0):
        return 2.0
    if kind == "spherical":
        return 2.0 * math.sqrt(d)
    return None


def properness_check(spec, q, grid_resolution, atol=1e-9):
    """Brute-force check that ``q`` minimizes ``p -> loss(p, q)`` on a grid."""
    if not 0 < grid_resolution <= 0.5:
        raise ValueError("grid_resolution must lie in (0, 0.5]")
    q = check_simplex(q)
    grid = simplex_grid(q.shape[-1], grid_resolution)
    at_truth = loss_eval_dist(spec, q, q)
    candidates = loss_eval_dist(spec, grid, np.broadcast_to(q, grid.shape))
    return bool(np.all(at_truth <= candidates + atol))

"""Generalized variance over Bregman divergences.

For positive weights ``w_i`` and points ``x_i`` on the simplex, with
``W_n = sum w_i`` and weighted mean ``m_n``, the generalized variance is
``s_n = sum_i w_i D(x_i, m_n)``. This module provides the recurrence that
updates ``s_n`` one point at a time, its batch counterpart, the resulting
online-variance identity and the finite-support law of total variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import _bregman, _grad_psi
from .validation import check_simplex


@dataclass(frozen=True)
class WeightedStream:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = check_simplex(np.atleast_2d(self.points))
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if weights.shape[0] != points.shape[0]:
            raise ValueError("points and weights must have the same length")
        if np.any(~(weights > 0)):
            raise ValueError("weights must be strictly positive")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.points.shape[0]

    @classmethod
    def unit(cls, points):
        points = np.atleast_2d(points)
        return cls(points, np.ones(points.shape[0]))

    def running_means(self):
        """Weighted means ``m_1, ..., m_n`` as rows, and the weight sums."""
        W = np.cumsum(self.weights)
        sums = np.cumsum(self.weights[:, None] * self.points, axis=0)
        return sums / W[:, None], W


@dataclass(frozen=True)
class GenVarState:
    """Running ``(n, W_n, m_n, s_n)``; ``mean`` is ``None`` while empty."""

    n: int = 0
    W: float = 0.0
    mean: np.ndarray | None = None
    s: float = 0.0

    @classmethod
    def empty(cls):
        return cls()


def three_points_residual(spec, p, q, r):
    """``D(p,q) - D(p,r) - D(r,q) - <grad psi(r) - grad psi(q), p - r>``.

    Zero up to rounding for any convex representation; propagates
    :class:`~calibeat.exceptions.SingularGradient` when a gradient at ``q``
    or ``r`` is infinite.
    """
    p = check_simplex(p)
    q = check_simplex(q, d=p.shape[-1])
    r = check_simplex(r, d=p.shape[-1])
    cross = np.sum((_grad_psi(spec, r) - _grad_psi(spec, q)) * (p - r), axis=-1)
    out = _bregman(spec, p, q) - _bregman(spec, p, r) - _bregman(spec, r, q) - cross
    return float(out) if np.ndim(out) == 0 else out


def genvar_update(spec, state, x, w=1.0):
    """Fold one weighted point into a :class:`GenVarState`.

    ``s_n = s_{n-1} + w_n D(x_n, m_n) + W_{n-1} D(m_{n-1}, m_n)``. With the
    squared loss and unit weights this is Welford's update.
    """
    x = check_simplex(x)
    w = float(w)
    if not w > 0:
        raise ValueError("weight must be strictly positive")
    if state is None or state.n == 0:
        return GenVarState(n=1, W=w, mean=x.copy(), s=0.0)
    W = state.W + w
    mean = (state.W * state.mean + w * x) / W
    s = (
        state.s
        + w * float(_bregman(spec, x, mean))
        + state.W * float(_bregman(spec, state.mean, mean))
    )
    return GenVarState(n=state.n + 1, W=W, mean=mean, s=s)


def genvar_fold(spec, stream):
    state = GenVarState.empty()
    for x, w in zip(stream.points, stream.weights):
        state = genvar_update(spec, state, x, w)
    return state


def genvar_batch(spec, stream):
    """``s_n`` recomputed from scratch against the final weighted mean."""
    mean = stream.weights @ stream.points / stream.weights.sum()
    return float(stream.weights @ _bregman(spec, stream.points, mean))


def genvar_path(spec, stream):
    """``s_1, ..., s_n`` from the update recurrence, vectorized."""
    means, W = stream.running_means()
    increments = np.zeros(len(stream))
    if len(stream) > 1:
        increments[1:] = stream.weights[1:] * _bregman(
            spec, stream.points[1:], means[1:]
        ) + W[:-1] * _bregman(spec, means[:-1], means[1:])
    return np.cumsum(increments)


def online_variance_identity(spec, stream):
    """Both sides of the generalized online formula for the variance.

    ``lhs = sum_{i>=2} w_i D(x_i, m_i)`` and
    ``rhs = sum_{i>=1} w_i D(x_i, m_n) - sum_{i>=2} W_{i-1} D(m_{i-1}, m_i)``,
    each evaluated directly. The first sum on the right starts at ``i = 1``:
    it is ``s_n``, which telescopes from ``s_1 = 0``.
    """
    if len(stream) < 2:
        return 0.0, 0.0
    means, W = stream.running_means()
    x, w = stream.points[1:], stream.weights[1:]
    lhs = float(w @ _bregman(spec, x, means[1:]))
    to_final = float(stream.weights @ _bregman(spec, stream.points, means[-1]))
    path = float(W[:-1] @ _bregman(spec, means[:-1], means[1:]))
    return lhs, to_final - path


def total_variance_check(spec, points, probs, partition):
    """Generalized law of total variance on a finite distribution.

    ``partition`` is either a label per point or a list of index groups.
    Returns ``(total, within, between)`` with ``total = V[X]``,
    ``within = E[V[X | Y]]`` and ``between = V[E[X | Y]]``.
    """
    points = check_simplex(np.atleast_2d(points))
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != points.shape[:1] or np.any(probs < 0):
        raise ValueError("probs must be a nonnegative weight per point")
    if abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("probs must sum to 1")
    labels = _labels_from_partition(partition, points.shape[0])

    mean = probs @ points
    total = float(probs @ _bregman(spec, points, mean))
    within = 0.0
    between = 0.0
    for label in np.unique(labels):
        members = labels == label
        mass = probs[members].sum()
        if mass == 0:
            continue
        cond_mean = probs[members] @ points[members] / mass
        within += float(probs[members] @ _bregman(spec, points[members], cond_mean))
        between += mass * float(_bregman(spec, cond_mean, mean))
    return total, within, between


def _labels_from_partition(partition, n):
    if len(partition) == n and all(np.isscalar(c) for c in partition):
        return np.asarray(partition)
    labels = np.full(n, -1)
    for k, group in enumerate(partition):
        for i in group:
            if labels[i] != -1:
                raise ValueError(f"index {i} appears in two cells")
            labels[i] = k
    if np.any(labels == -1):
        raise ValueError("partition does not cover every index")
    return labels

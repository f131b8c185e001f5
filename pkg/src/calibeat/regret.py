"""Regret, its exact FTRL decompositions, and explicit bound certificates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidEta
from .forecaster import best_in_hindsight, prefix_point
from .losses import _bregman, _loss_matrix
from .validation import check_outcomes, check_simplex, relative_residual


@dataclass(frozen=True)
class RegretReport:
    """FTRL regret against the best fixed forecast and its three parts.

    ``stability`` compares FTRL with BTRL (which plays ``p_{t+1}`` in round
    ``t``), ``btrl_vs_pT1`` compares BTRL with the regularized leader
    ``p_{T+1}``, and ``smoothing`` compares ``p_{T+1}`` with the empirical
    frequencies.
    """

    total: float
    stability: float
    btrl_vs_pT1: float
    smoothing: float

    @property
    def parts_sum(self):
        return self.stability + self.btrl_vs_pT1 + self.smoothing

    @property
    def residual(self):
        return relative_residual(self.total, self.parts_sum)


@dataclass(frozen=True)
class BtrlEqualityReport:
    """Both sides of the BTRL regret equality.

    ``lhs`` is the regret of BTRL against ``p_{T+1}``; the four terms sum to
    it. Every term except ``term_pos`` is nonpositive.
    """

    lhs: float
    term_pos: float
    term_prefix: float
    term_grid: float
    term_path: float

    @property
    def rhs(self):
        return self.term_pos + self.term_prefix + self.term_grid + self.term_path

    @property
    def residual(self):
        return relative_residual(self.lhs, self.rhs)

    @property
    def max_trailing_term(self):
        return max(self.term_prefix, self.term_grid, self.term_path)


@dataclass(frozen=True)
class BoundBreakdown:
    stability: float
    penalty_improved: float
    penalty_fallback: float
    smoothing: float | None

    @property
    def penalty(self):
        return min(self.penalty_improved, self.penalty_fallback)

    @property
    def total(self):
        smoothing = 0.0 if self.smoothing is None else self.smoothing
        return self.stability + self.penalty + smoothing


def _losses_at(spec, p, ys):
    """``loss(p, y_t)`` for a fixed forecast ``p`` and every round."""
    return _loss_matrix(spec, np.asarray(p, dtype=np.float64))[ys]


def _sum_of_differences(a, b):
    diff = np.asarray(a) - np.asarray(b)
    # inf - inf cannot come from FTRL iterates; treat it as unbounded.
    diff = np.where(np.isnan(diff), math.inf, diff)
    return float(np.sum(diff))


def regret(spec, ps, ys, d=None):
    """``sum_t loss(p_t, y_t) - min_p sum_t loss(p, y_t)``.

    The minimum is attained at the empirical frequencies by properness.
    """
    ps = check_simplex(np.atleast_2d(ps))
    d = ps.shape[1] if d is None else d
    ys = check_outcomes(ys, d)
    if ps.shape[0] != ys.size:
        raise ValueError("need one forecast per outcome")
    if ys.size == 0:
        return 0.0
    played = float(np.sum(_loss_matrix(spec, ps)[np.arange(ys.size), ys]))
    best = float(np.sum(_losses_at(spec, best_in_hindsight(ys, d), ys)))
    return played - best


def multi_loss_regret(specs, ps, ys, d=None):
    """Regret of one forecast sequence under each loss in ``specs``."""
    return [regret(spec, ps, ys, d) for spec in specs]


def decompose(spec, transcript):
    """Split FTRL regret into stability, BTRL-vs-leader and smoothing terms.

    ``total`` is computed separately from the three parts through
    :func:`regret`, so ``report.residual`` is a genuine check.
    """
    tr = transcript if transcript.spec == spec else transcript.with_spec(spec)
    if tr.T == 0:
        return RegretReport(0.0, 0.0, 0.0, 0.0)
    ys = tr.ys
    leader = _losses_at(spec, tr.predictions[-1], ys)
    hindsight = _losses_at(spec, best_in_hindsight(ys, tr.d), ys)
    return RegretReport(
        total=regret(spec, tr.predictions[:-1], ys, tr.d),
        stability=_sum_of_differences(tr.ftrl_losses, tr.btrl_losses),
        btrl_vs_pT1=_sum_of_differences(tr.btrl_losses, leader),
        smoothing=_sum_of_differences(leader, hindsight),
    )


def btrl_equality(spec, transcript):
    """Evaluate both sides of the BTRL regret equality independently.

    With ``p_{j/d}`` the uniform distribution over the first ``j``
    outcomes::

        sum_t loss(p_{t+1}, y_t) - sum_t loss(p_{T+1}, y_t)
            =   (1/eta) sum_{j>=1} D(e_j, p_{T+1})
              - (1/eta) sum_{j>=2} D(e_j, p_{j/d})
              - sum_{j<d} (j/eta) D(p_{j/d}, p_{(j+1)/d})
              - sum_t (d/eta + t - 1) D(p_t, p_{t+1})

    For a fair loss ``D(e_j, p) = loss(p, j)``. Writing the first two terms
    as divergences keeps the equality exact for unfair losses too.
    """
    tr = transcript if transcript.spec == spec else transcript.with_spec(spec)
    if math.isinf(tr.eta):
        raise InvalidEta("the BTRL equality needs a finite learning rate")
    eta, d, T = tr.eta, tr.d, tr.T
    ps = tr.predictions
    final = ps[-1]

    lhs = _sum_of_differences(tr.btrl_losses, _losses_at(spec, final, tr.ys))

    prefixes = np.stack([prefix_point(j, d) for j in range(1, d + 1)])
    eye = np.eye(d)
    # The leading term runs over every outcome, not just j >= 2.
    term_pos = float(np.sum(_bregman(spec, eye, final))) / eta
    term_prefix = -float(np.sum(_bregman(spec, eye[1:], prefixes[1:]))) / eta
    grid_weights = np.arange(1, d) / eta
    term_grid = -float(grid_weights @ _bregman(spec, prefixes[:-1], prefixes[1:]))
    if T:
        path_weights = d / eta + np.arange(T)
        term_path = -float(path_weights @ _bregman(spec, ps[:-1], ps[1:]))
    else:
        term_path = 0.0
    return BtrlEqualityReport(lhs, term_pos, term_prefix, term_grid, term_path)


def bound_tsallis(alpha, d, T, eta=1.0, smoothing=True):
    """Explicit certificates for each FTRL regret term under unscaled Tsallis.

    The smoothing certificate ``3 alpha d`` is only established for
    ``eta = 1``; asking for it at another learning rate raises
    :class:`InvalidEta`. The penalty certificate is the smaller of the
    ``log T`` bound and the ``d alpha / (alpha - 1)`` bound (infinite at
    ``alpha = 1``).
    """
    alpha = float(alpha)
    if not 1.0 <= alpha <= 2.0:
        raise ValueError("alpha must lie in [1, 2]")
    if not eta > 0 or math.isinf(eta):
        raise InvalidEta("bounds need a finite positive learning rate")
    if T < 1:
        raise ValueError("T must be at least 1")
    if smoothing and eta != 1.0:
        raise InvalidEta("the smoothing certificate only holds for eta = 1")
    log_T = math.log(T)
    inner = math.log(eta * T / d + 1.0)
    stability = alpha * (
        log_T + d ** (2.0 - alpha) * (inner + eta ** (2.0 - alpha) * inner ** (alpha - 1.0))
    )
    improved = d + d ** (2.0 - alpha) * (max(1.0, math.log(eta + 1.0)) + log_T)
    fallback = math.inf if alpha == 1.0 else d * alpha / (alpha - 1.0)
    return BoundBreakdown(
        stability=stability,
        penalty_improved=improved,
        penalty_fallback=fallback,
        smoothing=3.0 * alpha * d if smoothing else None,
    )


def headline_rate(alpha, d, T):
    """The constant-free rate ``d + d^(2 - alpha) log T``."""
    return d + d ** (2.0 - alpha) * math.log(T)


def bound_lipschitz(G, R, T, eta, d=None):
    """``G R (1 + log T)`` for FTL, ``G R (d + log T)`` for ``eta = 1``."""
    if math.isinf(eta):
        return G * R * (1.0 + math.log(T))
    if eta == 1.0:
        if d is None:
            raise ValueError("the eta = 1 bound needs the dimension d")
        return G * R * (d + math.log(T))
    raise InvalidEta("Lipschitz certificates exist for eta in {1, inf} only")

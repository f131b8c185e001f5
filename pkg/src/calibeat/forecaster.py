"""Follow The Regularized Leader with loss-based regularization.

With regularizer ``Phi(p) = sum_j loss(p, e_j)`` and any proper loss, the
FTRL iterate has the closed form::

    p_{j, t+1} = (c_{j,t} + 1/eta) / (t + d/eta)

where ``c_{j,t}`` counts occurrences of outcome ``j`` in the first ``t``
rounds. The prediction never depends on the loss. ``eta = inf`` gives
Follow The Leader, whose first prediction is taken to be uniform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import UndefinedFirstPrediction
from .losses import LossSpec, _loss_matrix
from .validation import check_eta, check_outcomes, simplex_grid


@dataclass(frozen=True)
class FtrlState:
    counts: tuple
    t: int
    eta: float
    d: int

    def __post_init__(self):
        if len(self.counts) != self.d or self.d < 1:
            raise ValueError("counts must have one entry per outcome")
        if any(c < 0 for c in self.counts) or sum(self.counts) != self.t:
            raise ValueError("counts must be nonnegative and sum to t")
        object.__setattr__(self, "eta", check_eta(self.eta))

    @classmethod
    def initial(cls, d, eta=1.0):
        return cls(counts=(0,) * d, t=0, eta=eta, d=d)

    @property
    def is_ftl(self):
        return math.isinf(self.eta)


def prefix_point(j, d):
    """Uniform distribution over the first ``j`` outcomes."""
    if not 1 <= j <= d:
        raise ValueError(f"j must lie in [1, {d}]")
    out = np.zeros(d)
    out[:j] = 1.0 / j
    return out


def predict(state, strict=False):
    """Closed-form FTRL forecast for the next round.

    FTL before any outcome returns the uniform vector, unless ``strict``,
    in which case :class:`UndefinedFirstPrediction` is raised.
    """
    counts = np.asarray(state.counts, dtype=np.float64)
    if state.is_ftl:
        if state.t == 0:
            if strict:
                raise UndefinedFirstPrediction("FTL has no leader before round 1")
            return np.full(state.d, 1.0 / state.d)
        return counts / state.t
    return (counts + 1.0 / state.eta) / (state.t + state.d / state.eta)


def predict_exact(state):
    """The same forecast as exact fractions (``eta`` read as its exact value)."""
    if state.is_ftl:
        if state.t == 0:
            return tuple(Fraction(1, state.d) for _ in range(state.d))
        return tuple(Fraction(c, state.t) for c in state.counts)
    inv_eta = 1 / Fraction(state.eta)
    denom = state.t + state.d * inv_eta
    return tuple((c + inv_eta) / denom for c in state.counts)


def observe(state, y):
    y = int(check_outcomes([y], state.d)[0])
    counts = list(state.counts)
    counts[y] += 1
    return FtrlState(counts=tuple(counts), t=state.t + 1, eta=state.eta, d=state.d)


def prediction_path(ys, eta, d):
    """Forecasts ``p_1, ..., p_{T+1}`` as the rows of a ``(T+1, d)`` array."""
    eta = check_eta(eta)
    ys = check_outcomes(ys, d)
    T = ys.size
    counts = np.zeros((T + 1, d))
    np.add.at(counts, (np.arange(1, T + 1), ys), 1.0)
    counts = np.cumsum(counts, axis=0)
    t = np.arange(T + 1, dtype=np.float64)
    if math.isinf(eta):
        out = np.empty_like(counts)
        out[0] = 1.0 / d
        out[1:] = counts[1:] / t[1:, None]
        return out
    return (counts + 1.0 / eta) / (t + d / eta)[:, None]


@dataclass(frozen=True)
class Transcript:
    """One FTRL run: forecasts and the per-round FTRL and BTRL losses.

    ``predictions[t]`` is the forecast for round ``t + 1`` (0-based rows), so
    the final row is ``p_{T+1}``. ``ftrl_losses[t] = loss(p_t, y_t)`` and
    ``btrl_losses[t] = loss(p_{t+1}, y_t)``.
    """

    spec: LossSpec
    ys: np.ndarray
    eta: float
    d: int
    predictions: np.ndarray = field(repr=False)
    ftrl_losses: np.ndarray = field(repr=False)
    btrl_losses: np.ndarray = field(repr=False)

    @property
    def T(self):
        return int(self.ys.size)

    @property
    def ftrl_total(self):
        return float(np.sum(self.ftrl_losses))

    @property
    def btrl_total(self):
        return float(np.sum(self.btrl_losses))

    def prefix(self, t):
        """The transcript of the first ``t`` rounds."""
        return Transcript(
            self.spec,
            self.ys[:t],
            self.eta,
            self.d,
            self.predictions[: t + 1],
            self.ftrl_losses[:t],
            self.btrl_losses[:t],
        )

    def with_spec(self, spec):
        """Re-score the same forecasts under another loss."""
        return _score(spec, self.ys, self.eta, self.d, self.predictions)


def _score(spec, ys, eta, d, predictions):
    T = ys.size
    rows = np.arange(T)
    losses = _loss_matrix(spec, predictions)
    return Transcript(
        spec=spec,
        ys=ys,
        eta=eta,
        d=d,
        predictions=predictions,
        ftrl_losses=losses[:-1][rows, ys],
        btrl_losses=losses[1:][rows, ys],
    )


def run(spec, ys, eta=1.0, d=None):
    """Play FTRL against ``ys`` and record the transcript.

    ``d`` defaults to ``max(ys) + 1`` (and at least 2).
    """
    ys = np.asarray(ys, dtype=np.int64)
    if d is None:
        d = max(2, int(ys.max()) + 1 if ys.size else 2)
    ys = check_outcomes(ys, d)
    eta = check_eta(eta)
    return _score(spec, ys, eta, d, prediction_path(ys, eta, d))


def best_in_hindsight(ys, d):
    """Empirical outcome frequencies, the best fixed forecast for any proper loss."""
    ys = check_outcomes(ys, d)
    if ys.size == 0:
        raise ValueError("need at least one outcome")
    return np.bincount(ys, minlength=d) / ys.size


def argmin_oracle(spec, ys, eta, grid_resolution, d):
    """Brute-force minimizer of the regularized cumulative loss on a grid.

    Minimizes ``sum_s loss(p, y_s) + Phi(p) / eta`` over simplex points whose
    coordinates are multiples of ``grid_resolution``; ties go to the
    lexicographically smallest grid point.
    """
    if d > 4:
        raise ValueError("the grid oracle is limited to d <= 4")
    if not 0 < grid_resolution <= 0.1:
        raise ValueError("grid_resolution must lie in (0, 0.1]")
    ys = check_outcomes(ys, d)
    eta = check_eta(eta)
    weights = np.bincount(ys, minlength=d).astype(np.float64)
    if not math.isinf(eta):
        weights += 1.0 / eta
    grid = simplex_grid(d, grid_resolution)
    losses = _loss_matrix(spec, grid)
    objective = np.sum(np.where(weights > 0, weights * losses, 0.0), axis=1)
    return grid[int(np.argmin(objective))]


class FTRLForecaster(BaseEstimator):
    """Online multiclass probability forecaster (FTRL, loss-agnostic).

    Parameters
    ----------
    eta : float, default=1.0
        Learning rate; ``float("inf")`` gives Follow The Leader.
    n_outcomes : int or None
        Number of outcomes. Inferred from the first batch when ``None``.

    Attributes
    ----------
    state_ : FtrlState
    n_outcomes_ : int
    """

    def __init__(self, eta=1.0, n_outcomes=None):
        self.eta = eta
        self.n_outcomes = n_outcomes

    def fit(self, y):
        for attr in ("state_", "n_outcomes_"):
            self.__dict__.pop(attr, None)
        return self.partial_fit(y)

    def partial_fit(self, y):
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        if not hasattr(self, "state_"):
            d = self.n_outcomes
            if d is None:
                d = max(2, int(y.max()) + 1 if y.size else 2)
            self.n_outcomes_ = int(d)
            self.state_ = FtrlState.initial(self.n_outcomes_, check_eta(self.eta))
        y = check_outcomes(y, self.n_outcomes_)
        counts = np.asarray(self.state_.counts) + np.bincount(y, minlength=self.n_outcomes_)
        self.state_ = FtrlState(
            counts=tuple(int(c) for c in counts),
            t=self.state_.t + int(y.size),
            eta=self.state_.eta,
            d=self.n_outcomes_,
        )
        return self

    def predict_proba(self, X=None):
        """Forecast for the next round, shape ``(n_outcomes,)``."""
        check_is_fitted(self, "state_")
        return predict(self.state_)

    def online_predict_proba(self, y):
        """Forecasts made before each outcome of ``y``, continuing from the
        current state without updating it. Shape ``(len(y), n_outcomes)``."""
        check_is_fitted(self, "state_")
        y = check_outcomes(np.asarray(y).reshape(-1), self.n_outcomes_)
        out = np.empty((y.size, self.n_outcomes_))
        state = self.state_
        for t, outcome in enumerate(y):
            out[t] = predict(state)
            state = observe(state, outcome)
        return out

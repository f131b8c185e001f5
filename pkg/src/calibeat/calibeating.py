"""Binned calibeating: replace an external forecaster's predictions, bin by
bin, with an FTRL subgame so the cumulative loss drops by roughly the
forecaster's calibration score.

Bins come from a geometric grid per coordinate with cells
``[(1+eps)^k / T, (1+eps)^(k+1) / T)``; any two forecasts in the same cell
agree coordinate-wise up to a factor ``1 + eps``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import HorizonTooSmall, InvalidEpsilon, OutOfGrid, Unsupported
from .forecaster import FtrlState, observe, predict
from .losses import Family, LossSpec, _bregman, _loss_matrix
from .regret import bound_tsallis
from .validation import check_eta, check_outcomes, check_simplex, relative_residual


@dataclass
class BinRecord:
    representative: np.ndarray
    subgame: FtrlState
    rounds: list = field(default_factory=list)
    outcome_counts: np.ndarray = None

    def __post_init__(self):
        if self.outcome_counts is None:
            self.outcome_counts = np.zeros(self.subgame.d, dtype=np.int64)


@dataclass
class Binning:
    """Geometric grid over the simplex; bins are created on first use."""

    epsilon: float
    T: int
    d: int
    edges: np.ndarray = field(repr=False)
    N: int
    bins: dict = field(default_factory=dict, repr=False)

    @property
    def bin_count_bound(self):
        return (math.log(self.T) / math.log1p(self.epsilon) + 1.0) ** self.d

    def cell_of(self, x):
        """Cell index of a single coordinate in ``[1/T, 1]``."""
        return int(self.cells(np.asarray([x]))[0])

    def cells(self, Q):
        """Per-coordinate cell indices of an array of coordinates in ``[1/T, 1]``.

        The top cell is closed so a coordinate equal to 1 belongs to it.
        """
        Q = np.asarray(Q, dtype=np.float64)
        with np.errstate(divide="ignore"):
            k = np.floor(np.log(Q * self.T) / math.log1p(self.epsilon))
        k = np.clip(k, 0, self.N - 1).astype(np.int64)
        # Repair floating-point misplacement at the cell edges.
        k = np.where((k > 0) & (Q < self.edges[k]), k - 1, k)
        k = np.where((k < self.N - 1) & (Q >= self.edges[np.minimum(k + 1, self.N)]), k + 1, k)
        return k


def build_binning(epsilon, T, d):
    epsilon = float(epsilon)
    if not 0 < epsilon <= 0.5:
        raise InvalidEpsilon(f"epsilon must lie in (0, 1/2], got {epsilon}")
    T = int(T)
    if T < 2:
        raise ValueError("the binning needs a horizon T >= 2")
    if d < 2:
        raise ValueError("d must be at least 2")
    N = max(1, math.ceil(math.log(T) / math.log1p(epsilon)))
    while (1.0 + epsilon) ** N / T < 1.0:
        N += 1
    while N > 1 and (1.0 + epsilon) ** (N - 1) / T >= 1.0:
        N -= 1
    edges = (1.0 + epsilon) ** np.arange(N + 1) / T
    return Binning(epsilon=epsilon, T=T, d=d, edges=edges, N=N)


def clamp_forecast(q, T):
    """Mix ``q`` with the uniform vector just enough that every coordinate
    is at least ``1/T``. Returns ``(clamped, was_clamped)``.

    Works row-wise on a stack of forecasts, returning a boolean mask.
    """
    q = np.asarray(q, dtype=np.float64)
    floor = 1.0 / T
    d = q.shape[-1]
    low = q.min(axis=-1, keepdims=True)
    clamped = low < floor
    if np.any(clamped) and floor > 1.0 / d:
        raise OutOfGrid("cannot clamp: 1/T exceeds 1/d")
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(clamped, (floor - low) / (1.0 / d - low), 0.0)
    out = np.where(clamped, (1.0 - lam) * q + lam / d, q)
    # Rounding may leave the minimum a hair under the floor.
    out = np.where(clamped, np.maximum(out, floor), out)
    clamped = clamped[..., 0]
    return out, (bool(clamped) if clamped.ndim == 0 else clamped)


def assign(binning, q, clamp=True):
    """Bin key (tuple of per-coordinate cell indices) for forecast ``q``.

    Coordinates equal to 1 fall in the top cell. Without ``clamp``, any
    coordinate below ``1/T`` raises :class:`OutOfGrid`.
    """
    q = check_simplex(q, d=binning.d)
    if clamp:
        q, _ = clamp_forecast(q, binning.T)
    elif q.min() < 1.0 / binning.T:
        raise OutOfGrid(f"coordinate {q.min()!r} is below 1/T = {1.0 / binning.T!r}")
    return tuple(binning.cells(q).tolist())


def _assign_all(binning, Q, clamp, eta=1.0):
    """Bin keys for every row of ``Q``; new bins take the (clamped) forecast
    that opened them as representative."""
    if clamp:
        grid_Q, clamped = clamp_forecast(Q, binning.T)
    else:
        if Q.size and Q.min() < 1.0 / binning.T:
            raise OutOfGrid(f"coordinate {Q.min()!r} is below 1/T = {1.0 / binning.T!r}")
        grid_Q, clamped = Q, np.zeros(Q.shape[0], dtype=bool)
    keys = [tuple(row) for row in binning.cells(grid_Q).tolist()]
    for t, key in enumerate(keys):
        if key not in binning.bins:
            binning.bins[key] = BinRecord(
                representative=grid_Q[t].copy(),
                subgame=FtrlState.initial(binning.d, eta),
            )
    return keys, int(np.sum(clamped))


def approx_error_bound(spec, epsilon):
    """Per-round bound on ``|loss(q, y) - loss(rep, y)|`` within one bin."""
    if epsilon > 0.5:
        raise InvalidEpsilon("the bound needs epsilon <= 1/2")
    if spec.family is Family.LOG:
        return float(epsilon)
    if spec.family is Family.UNSCALED_TSALLIS:
        a = spec.alpha
        return 2.0 * a * (3.0 - a) * epsilon
    raise Unsupported(
        f"no binning bound for {spec}; use the unscaled Tsallis loss with alpha = 2"
    )


@dataclass(frozen=True)
class BinTerms:
    key: tuple
    n_rounds: int
    refinement: float
    calibration: float
    approx_error: float
    subgame_regret: float | None = None


@dataclass(frozen=True)
class CalibReport:
    """Loss decomposition of a binned forecaster (and of its calibeater).

    ``base_loss = refinement + calibration + approx_error`` holds exactly for
    fair losses. ``improved_loss`` and ``subgame_regrets`` are set by
    :func:`calibeat` only.
    """

    base_loss: float
    refinement: float
    calibration: float
    approx_error: float
    bins: tuple = field(repr=False)
    improved_loss: float | None = None
    n_clamped: int = 0

    @property
    def residual(self):
        return relative_residual(
            self.base_loss, self.refinement + self.calibration + self.approx_error
        )

    @property
    def subgame_regrets(self):
        return [b.subgame_regret for b in self.bins]

    @property
    def gain(self):
        if self.improved_loss is None:
            return None
        return self.base_loss - self.improved_loss

    @property
    def certified(self):
        """``gain >= certificate`` up to rounding (relative 1e-9).

        The two are equal in exact arithmetic whenever ``approx_error >= 0``.
        """
        if self.improved_loss is None:
            return None
        gain, cert = self.gain, self.certificate
        if math.isnan(gain) or math.isnan(cert):
            return False
        return gain >= cert or relative_residual(gain, cert) <= 1e-9

    @property
    def certificate(self):
        """``calibration - |approx_error| - sum of subgame regrets``."""
        if self.improved_loss is None:
            return None
        return (
            self.calibration
            - abs(self.approx_error)
            - sum(b.subgame_regret for b in self.bins)
        )


def _labels(keys):
    """Dense group labels in order of first appearance, plus the keys."""
    index = {}
    labels = np.fromiter((index.setdefault(k, len(index)) for k in keys), np.int64, len(keys))
    return labels, list(index)


def _group_terms(spec, d, qs, ys, labels, reps):
    """Per-group refinement, calibration and approximation sums.

    ``labels[t]`` is the group of round ``t`` and ``reps[g]`` the
    representative of group ``g``. Returns ``(counts, freq, ref, cal, approx)``.
    """
    B = reps.shape[0]
    joint = np.bincount(labels * d + ys, minlength=B * d).reshape(B, d)
    counts = joint.sum(axis=1)
    freq = joint / np.maximum(counts, 1)[:, None]
    rows = np.arange(ys.size)
    onehots = np.eye(d)[ys]
    refinement = np.bincount(labels, _bregman(spec, onehots, freq[labels]), minlength=B)
    calibration = counts * _bregman(spec, freq, reps)
    base = _loss_matrix(spec, qs)[rows, ys]
    at_rep = _loss_matrix(spec, reps)[labels, ys]
    approx = np.bincount(labels, base - at_rep, minlength=B)
    return counts, freq, refinement, calibration, approx


def _group_regret(spec, ps, ys, labels, freq):
    """Per-group regret of ``ps`` against each group's best fixed forecast."""
    rows = np.arange(ys.size)
    played = _loss_matrix(spec, ps)[rows, ys]
    best = _loss_matrix(spec, freq)[labels, ys]
    return np.bincount(labels, played - best, minlength=freq.shape[0])


def _report(spec, qs, ys, keys, terms, n_clamped=0, improved_loss=None):
    counts, _, ref, cal, approx = terms[:5]
    regrets = terms[5] if len(terms) > 5 else [None] * len(keys)
    bins = tuple(
        BinTerms(k, int(n), float(r), float(c), float(a), None if g is None else float(g))
        for k, n, r, c, a, g in zip(keys, counts, ref, cal, approx, regrets)
    )
    return CalibReport(
        base_loss=float(np.sum(_loss_matrix(spec, qs)[np.arange(ys.size), ys])),
        refinement=float(np.sum(ref)),
        calibration=float(np.sum(cal)),
        approx_error=float(np.sum(approx)),
        bins=bins,
        improved_loss=improved_loss,
        n_clamped=n_clamped,
    )


def _binned_groups(binning, qs, clamp, eta=1.0):
    keys, n_clamped = _assign_all(binning, qs, clamp, eta)
    labels, uniq = _labels(keys)
    reps = np.stack([binning.bins[k].representative for k in uniq]) if uniq else qs[:0]
    return labels, uniq, reps, n_clamped


def _forecast_groups(qs):
    labels, uniq = _labels([q.tobytes() for q in qs])
    first = np.unique(labels, return_index=True)[1]
    return labels, [tuple(qs[i]) for i in first], qs[first]


def binned_decomposition(spec, qs, ys, binning, clamp=True):
    """Refinement, calibration and binning-approximation terms of ``qs``.

    Losses are charged at the actual forecasts; clamping only affects which
    bin a forecast lands in. Each sum is computed on its own.
    """
    qs = check_simplex(np.atleast_2d(qs), d=binning.d)
    ys = check_outcomes(ys, binning.d)
    if qs.shape[0] != ys.size:
        raise ValueError("need one forecast per outcome")
    labels, keys, reps, n_clamped = _binned_groups(binning, qs, clamp)
    terms = _group_terms(spec, binning.d, qs, ys, labels, reps)
    return _report(spec, qs, ys, keys, terms, n_clamped)


def decomposition_by_forecast(spec, qs, ys):
    """The trivial binning: one bin per distinct forecast, represented by it."""
    qs = check_simplex(np.atleast_2d(qs))
    d = qs.shape[1]
    ys = check_outcomes(ys, d)
    labels, keys, reps = _forecast_groups(qs)
    return _report(spec, qs, ys, keys, _group_terms(spec, d, qs, ys, labels, reps))


def calibration_regret_identity(spec, qs, ys, binning=None, clamp=True):
    """Per-bin regret of ``qs`` (lhs) against calibration + approximation (rhs).

    Without a binning, each distinct forecast is its own bin and
    representative, so the approximation term vanishes.
    """
    qs = check_simplex(np.atleast_2d(qs), d=None if binning is None else binning.d)
    d = qs.shape[1]
    ys = check_outcomes(ys, d)
    if binning is None:
        labels, _, reps = _forecast_groups(qs)
    else:
        labels, _, reps, _ = _binned_groups(binning, qs, clamp)
    _, freq, _, cal, approx = _group_terms(spec, d, qs, ys, labels, reps)
    lhs = _group_regret(spec, qs, ys, labels, freq)
    return lhs, cal + approx


def calibeat(spec, qs, ys, epsilon, eta=1.0, clamp=True, binning=None):
    """Run the online calibeating protocol; returns ``(ps, report)``.

    Round ``t``: bin ``q_t``, forecast with that bin's FTRL state, then
    reveal ``y_t`` to that bin only. ``ps[t]`` depends on ``q_1..q_t`` and
    ``y_1..y_{t-1}`` alone.
    """
    qs = check_simplex(np.atleast_2d(qs))
    T, d = qs.shape
    ys = check_outcomes(ys, d)
    if ys.size != T:
        raise ValueError("need one forecast per outcome")
    eta = check_eta(eta, allow_inf=False)
    if binning is None:
        binning = build_binning(epsilon, max(T, 2), d)
    ps = np.empty_like(qs)
    # Assignment only reads q_t, so computing every key up front keeps the
    # protocol causal.
    keys, n_clamped = _assign_all(binning, qs, clamp, eta)
    for t in range(T):
        record = binning.bins[keys[t]]
        ps[t] = predict(record.subgame)
        record.subgame = observe(record.subgame, ys[t])
        record.rounds.append(t)
        record.outcome_counts[ys[t]] += 1

    labels, uniq = _labels(keys)
    reps = np.stack([binning.bins[k].representative for k in uniq])
    terms = _group_terms(spec, d, qs, ys, labels, reps)
    regrets = _group_regret(spec, ps, ys, labels, terms[1])
    improved = float(np.sum(_loss_matrix(spec, ps)[np.arange(T), ys]))
    report = _report(spec, qs, ys, uniq, terms + (regrets,), n_clamped, improved)
    return ps, report


def calibeat_certificate(alpha, d, T, epsilon, N_bins):
    """Explicit slack in the calibeating guarantee under unscaled Tsallis.

    ``T * approx_bound(eps) + N * (FTRL certificate at horizon T / N)``,
    the worst case over how ``T`` rounds spread across ``N`` bins.
    """
    if T < math.e * N_bins:
        raise HorizonTooSmall(f"need T >= e * N_bins, got T={T}, N_bins={N_bins}")
    per_round = approx_error_bound(LossSpec.tsallis(alpha), epsilon)
    per_bin = bound_tsallis(alpha, d, T / N_bins, eta=1.0).total
    return T * per_round + N_bins * per_bin


class Calibeater(BaseEstimator, TransformerMixin):
    """Calibeat a stream of external forecasts.

    ``fit(Q, y)`` plays the online protocol over the rows of ``Q`` and the
    outcomes ``y``; ``fit_transform`` also returns the improved forecasts.
    ``transform(Q)`` forecasts with the bins' current FTRL states without
    updating them.

    Parameters
    ----------
    loss : str, default="squared"
        Loss used for the report, e.g. ``"log"`` or ``"tsallis:1.5"``.
    epsilon : float, default=0.1
    eta : float, default=1.0
    clamp : bool, default=True
    horizon : int or None
        Grid horizon ``T``; the stream length when ``None``.
    """

    def __init__(self, loss="squared", epsilon=0.1, eta=1.0, clamp=True, horizon=None):
        self.loss = loss
        self.epsilon = epsilon
        self.eta = eta
        self.clamp = clamp
        self.horizon = horizon

    def _spec(self):
        return self.loss if isinstance(self.loss, LossSpec) else LossSpec.from_string(self.loss)

    def fit(self, Q, y):
        self.fit_transform(Q, y)
        return self

    def fit_transform(self, Q, y):
        Q = check_simplex(np.atleast_2d(Q))
        horizon = self.horizon if self.horizon is not None else max(Q.shape[0], 2)
        self.binning_ = build_binning(self.epsilon, horizon, Q.shape[1])
        ps, self.report_ = calibeat(
            self._spec(), Q, y, self.epsilon, self.eta, self.clamp, self.binning_
        )
        return ps

    def transform(self, Q):
        check_is_fitted(self, "binning_")
        Q = check_simplex(np.atleast_2d(Q), d=self.binning_.d)
        out = np.empty_like(Q)
        for t, q in enumerate(Q):
            key = assign(self.binning_, q, clamp=self.clamp)
            record = self.binning_.bins.get(key)
            if record is None:
                out[t] = 1.0 / self.binning_.d
            else:
                out[t] = predict(record.subgame)
        return out

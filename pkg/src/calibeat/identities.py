"""Randomized verification of every exact identity in the package.

Each identity is evaluated from two independent code paths on every
instance of a grid (loss x dimension x horizon x learning rate x seed) and
the largest relative residual per identity is reported.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .bregman import (
    WeightedStream,
    genvar_batch,
    genvar_path,
    online_variance_identity,
    three_points_residual,
    total_variance_check,
)
from .calibeating import (
    binned_decomposition,
    build_binning,
    calibration_regret_identity,
    decomposition_by_forecast,
)
from .forecaster import run
from .losses import LossSpec, _bregman
from .regret import btrl_equality, decompose
from .validation import relative_residual

IDENTITY_TOL = 1e-8
NONPOSITIVE_TOL = 1e-12

DEFAULT_SPECS = (
    LossSpec.log(),
    LossSpec.squared(),
    LossSpec.spherical(),
    LossSpec.tsallis(1.25),
    LossSpec.tsallis(1.5),
    LossSpec.tsallis(1.75),
    LossSpec.tsallis(1.5, scaled=True),
)

# Identities that rely on loss(e_y, y) = 0 are skipped for unfair losses.
FAIR_ONLY = {"decomposition", "decomposition_binned"}

IDENTITIES = (
    "three_points",
    "decomposition",
    "calibration_regret",
    "decomposition_binned",
    "calibration_regret_binned",
    "regret_decomposition",
    "btrl_equality",
    "btrl_nonpositive",
    "genvar_update",
    "weighted_sum_divergences",
    "total_variance",
)


@dataclass
class IdentityGrid:
    specs: tuple = DEFAULT_SPECS
    ds: tuple = (2, 3, 5)
    Ts: tuple = (1, 10, 100, 1000)
    etas: tuple = (0.25, 1.0, 4.0)
    n_seeds: int = 20
    epsilon: float = 0.25

    def instances(self):
        return itertools.product(
            range(len(self.specs)), self.ds, self.Ts, self.etas, range(self.n_seeds)
        )

    @property
    def size(self):
        return len(self.specs) * len(self.ds) * len(self.Ts) * len(self.etas) * self.n_seeds


@dataclass
class IdentityStat:
    name: str
    tolerance: float
    checks: int = 0
    max_residual: float = 0.0
    worst: tuple | None = None

    def record(self, residual, where):
        self.checks += 1
        if not residual <= self.max_residual:
            self.max_residual = residual if not math.isnan(residual) else math.inf
            self.worst = where

    @property
    def passed(self):
        return self.max_residual <= self.tolerance


@dataclass
class SuiteResult:
    stats: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(s.passed for s in self.stats.values())

    @property
    def total_checks(self):
        return sum(s.checks for s in self.stats.values())

    def first_failure(self):
        for name in IDENTITIES:
            stat = self.stats.get(name)
            if stat is not None and not stat.passed:
                return stat
        return None


def _rng(*key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def _interior(rng, n, d, floor=1e-3):
    p = rng.dirichlet(np.ones(d), size=n)
    p = (1.0 - d * floor) * p + floor
    return p / p.sum(axis=1, keepdims=True)


def _flip(value, name, fault):
    return -value if fault == name else value


def check_instance(spec, d, T, eta, seed, stats, fault=None, epsilon=0.25, spec_index=0):
    """Evaluate every applicable identity on one grid instance."""
    rng = _rng(seed, spec_index, d, T, int(round(eta * 1000)))
    where = (str(spec), d, T, eta, seed)
    applicable = [n for n in IDENTITIES if spec.is_fair or n not in FAIR_ONLY]

    def record(name, lhs, rhs):
        if name in applicable:
            stats[name].record(relative_residual(lhs, _flip(rhs, name, fault)), where)

    dist = rng.dirichlet(np.ones(d))
    ys = rng.choice(d, size=T, p=dist)
    transcript = run(spec, ys, eta, d)

    p, q, r = _interior(rng, 3, d)
    three = three_points_residual(spec, p, q, r)
    scale = 1.0 + abs(float(_bregman(spec, p, q)))
    if fault == "three_points":
        # The residual is already ~0, so a sign flip alone would go unseen.
        three += scale
    if "three_points" in applicable:
        stats["three_points"].record(abs(three) / scale, where)

    report = decompose(spec, transcript)
    record("regret_decomposition", report.total, report.parts_sum)

    btrl = btrl_equality(spec, transcript)
    if fault == "btrl_equality":
        rhs = btrl.term_pos + btrl.term_prefix + btrl.term_grid - btrl.term_path
        stats["btrl_equality"].record(relative_residual(btrl.lhs, rhs), where)
    else:
        record("btrl_equality", btrl.lhs, btrl.rhs)
    if "btrl_nonpositive" in applicable:
        worst = btrl.max_trailing_term
        stats["btrl_nonpositive"].record(
            max(0.0, _flip(worst, "btrl_nonpositive", fault)), where
        )

    # The stream behind the BTRL equality: uniform prior pseudo-counts first.
    points = np.vstack([np.eye(d), np.eye(d)[ys]])
    weights = np.concatenate([np.full(d, 1.0 / eta), np.ones(T)])
    stream = WeightedStream(points, weights)
    record("weighted_sum_divergences", *online_variance_identity(spec, stream))

    general = WeightedStream(_interior(rng, min(T, 50) + 1, d), rng.uniform(0.05, 2.0, min(T, 50) + 1))
    for s in (stream, general):
        record("genvar_update", genvar_path(spec, s)[-1], genvar_batch(spec, s))

    n_points = min(T, 12) + 2
    support = _interior(rng, n_points, d)
    probs = rng.dirichlet(np.ones(n_points))
    labels = rng.integers(0, 3, size=n_points)
    total, within, between = total_variance_check(spec, support, probs, labels)
    record("total_variance", total, within + between)

    palette = _interior(rng, 4, d)
    qs_finite = palette[rng.integers(0, 4, size=T)]
    trivial = decomposition_by_forecast(spec, qs_finite, ys)
    record(
        "decomposition",
        trivial.base_loss,
        trivial.refinement + trivial.calibration + trivial.approx_error,
    )
    lhs, rhs = calibration_regret_identity(spec, qs_finite, ys)
    for a, b in zip(lhs, rhs):
        record("calibration_regret", a, b)

    qs = rng.dirichlet(np.ones(d), size=T)
    binning = build_binning(epsilon, max(T, 2 * d), d)
    binned = binned_decomposition(spec, qs, ys, binning)
    record(
        "decomposition_binned",
        binned.base_loss,
        binned.refinement + binned.calibration + binned.approx_error,
    )
    lhs, rhs = calibration_regret_identity(spec, qs, ys, binning)
    for a, b in zip(lhs, rhs):
        record("calibration_regret_binned", a, b)


def run_identity_suite(grid=None, fault=None):
    """Run every identity over ``grid``.

    ``fault`` names one identity whose check is deliberately corrupted, to
    test the harness itself: ``btrl_equality`` flips the sign of the path
    term, ``three_points`` offsets the residual, any other negates one side.
    """
    grid = IdentityGrid() if grid is None else grid
    stats = {
        name: IdentityStat(name, NONPOSITIVE_TOL if name == "btrl_nonpositive" else IDENTITY_TOL)
        for name in IDENTITIES
    }
    for spec_index, d, T, eta, seed in grid.instances():
        check_instance(
            grid.specs[spec_index], d, T, eta, seed, stats,
            fault=fault, epsilon=grid.epsilon, spec_index=spec_index,
        )
    return SuiteResult(stats)

"""Outcome sequences, external base forecasters, and their text file formats.

Randomness comes from numpy's Philox counter-based generator seeded with
the run seed, so a (source, seed, T) triple always yields the same stream.

File formats (UTF-8, outcomes 1-based on disk, 0-based in memory)::

    outcomes d=<d> T=<T>        forecasts d=<d> T=<T>
    <y_1>                       <q_1,1> ... <q_1,d>
    ...                         ...
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .validation import check_outcomes, check_simplex

PRNG_NAME = "numpy.random.Philox (4x64, 10 rounds)"


def make_rng(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


# Outcome sources.


@dataclass(frozen=True)
class IID:
    dist: tuple

    @property
    def d(self):
        return len(self.dist)


@dataclass(frozen=True)
class Markov:
    rows: tuple
    start: int = 0

    @property
    def d(self):
        return len(self.rows)


@dataclass(frozen=True)
class FtlKiller:
    """Plays outcome 0 then 1 (so FTL forecasts ``e_0`` and meets outcome 1),
    then the least frequent outcome so far, ties broken at random."""

    d: int = 2


@dataclass(frozen=True)
class FileSource:
    path: str


@dataclass(frozen=True)
class SequenceSource:
    kind: object
    seed: int = 0


def generate(source, T):
    """Outcome sequence of length ``T`` (0-based indices)."""
    if T < 1:
        raise ValueError("T must be at least 1")
    kind = source.kind
    rng = make_rng(source.seed)
    if isinstance(kind, IID):
        dist = check_simplex(kind.dist)
        return rng.choice(dist.size, size=T, p=dist).astype(np.int64)
    if isinstance(kind, Markov):
        rows = check_simplex(np.asarray(kind.rows))
        d = rows.shape[0]
        if rows.shape != (d, d):
            raise ValueError("Markov rows must form a square matrix")
        ys = np.empty(T, dtype=np.int64)
        ys[0] = kind.start
        cdf = np.cumsum(rows, axis=1)
        u = rng.random(T)
        for t in range(1, T):
            nxt = int(np.searchsorted(cdf[ys[t - 1]], u[t], side="right"))
            ys[t] = min(nxt, d - 1)
        return ys
    if isinstance(kind, FtlKiller):
        d = kind.d
        ys = np.empty(T, dtype=np.int64)
        counts = np.zeros(d, dtype=np.int64)
        for t in range(T):
            if t < 2:
                y = t
            else:
                least = np.flatnonzero(counts == counts.min())
                y = int(rng.choice(least))
            ys[t] = y
            counts[y] += 1
        return ys
    if isinstance(kind, FileSource):
        ys, _ = read_outcomes(kind.path)
        if ys.size < T:
            raise ValueError(f"{kind.path} holds {ys.size} outcomes, fewer than T={T}")
        return ys[:T]
    raise TypeError(f"unknown sequence source {kind!r}")


def truth_path(kind, ys):
    """Generating distribution of each round given the past, when known.

    Uniform for sources without a stochastic model.
    """
    T = len(ys)
    if isinstance(kind, IID):
        return np.tile(check_simplex(kind.dist), (T, 1))
    if isinstance(kind, Markov):
        rows = check_simplex(np.asarray(kind.rows))
        out = np.empty((T, rows.shape[0]))
        out[0] = np.eye(rows.shape[0])[kind.start]
        out[1:] = rows[np.asarray(ys[:-1])]
        return out
    d = kind.d if hasattr(kind, "d") else int(np.max(ys)) + 1
    return np.full((T, d), 1.0 / d)


# Base forecasters.


@dataclass(frozen=True)
class Constant:
    q: tuple


@dataclass(frozen=True)
class NoisyTruth:
    """Log-normal noise on the (floored) generating distribution."""

    sigma: float
    floor: float = 0.01


@dataclass(frozen=True)
class Biased:
    """Generating distribution plus a fixed offset, clipped and renormalized."""

    offset: tuple


@dataclass(frozen=True)
class FileForecaster:
    path: str


def forecast_stream(forecaster, ys, seed=0, source=None):
    """Base forecasts ``q_1..q_T`` as rows.

    Forecasters that need the generating distribution read it from
    ``source`` (a :class:`SequenceSource` or bare kind); ``q_t`` only ever
    uses outcomes before round ``t``.
    """
    ys = np.asarray(ys, dtype=np.int64)
    T = ys.size
    kind = source.kind if isinstance(source, SequenceSource) else source
    if isinstance(forecaster, Constant):
        return np.tile(check_simplex(forecaster.q), (T, 1))
    if isinstance(forecaster, FileForecaster):
        qs, _ = read_forecasts(forecaster.path)
        if qs.shape[0] < T:
            raise ValueError(f"{forecaster.path} holds fewer than T={T} forecasts")
        return qs[:T]
    if kind is None:
        raise ValueError(f"{type(forecaster).__name__} needs the generating source")
    truth = truth_path(kind, ys)
    d = truth.shape[1]
    if isinstance(forecaster, NoisyTruth):
        rng = make_rng(seed)
        base = (1.0 - forecaster.floor) * truth + forecaster.floor / d
        noisy = base * np.exp(forecaster.sigma * rng.standard_normal(truth.shape))
        return noisy / noisy.sum(axis=1, keepdims=True)
    if isinstance(forecaster, Biased):
        offset = np.asarray(forecaster.offset, dtype=np.float64)
        shifted = np.clip(truth + offset, 0.0, None)
        return shifted / shifted.sum(axis=1, keepdims=True)
    raise TypeError(f"unknown base forecaster {forecaster!r}")


# File I/O.

_HEADER = re.compile(r"^(outcomes|forecasts)\s+d=(\d+)\s+T=(\d+)\s*$")


def _parse_header(line, expected):
    m = _HEADER.match(line.strip())
    if not m or m.group(1) != expected:
        raise ValueError(f"bad header {line.strip()!r}; expected '{expected} d=<d> T=<T>'")
    return int(m.group(2)), int(m.group(3))


def write_outcomes(path, ys, d):
    ys = check_outcomes(ys, d)
    lines = [f"outcomes d={d} T={ys.size}"] + [str(int(y) + 1) for y in ys]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_outcomes(path):
    """Returns ``(ys, d)`` with 0-based outcomes."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    d, T = _parse_header(lines[0], "outcomes")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != T:
        raise ValueError(f"header promises T={T} outcomes, file has {len(body)}")
    ys = np.asarray([int(ln) - 1 for ln in body], dtype=np.int64)
    return check_outcomes(ys, d), d


def write_forecasts(path, qs):
    qs = np.atleast_2d(np.asarray(qs, dtype=np.float64))
    T, d = qs.shape
    lines = [f"forecasts d={d} T={T}"]
    lines += [" ".join(repr(float(x)) for x in row) for row in qs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_forecasts(path):
    """Returns ``(qs, d)``; values round-trip bit-exactly."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    d, T = _parse_header(lines[0], "forecasts")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != T:
        raise ValueError(f"header promises T={T} forecasts, file has {len(body)}")
    qs = np.asarray([[float(x) for x in ln.split()] for ln in body], dtype=np.float64)
    if qs.shape != (T, d):
        raise ValueError(f"expected {d} coordinates per line")
    return qs, d

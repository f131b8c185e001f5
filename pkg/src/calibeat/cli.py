"""Command-line harness: identity checks, regret curves, calibeating runs,
and sequence generation. Every command writes CSV files plus the resolved
``config.json`` into the output directory.

Exit codes: 0 pass, 1 assertion failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .calibeating import build_binning, calibeat, calibeat_certificate
from .exceptions import CalibeatError, ConfigError
from .forecaster import run
from .identities import IDENTITIES, IdentityGrid, run_identity_suite
from .losses import Family, LossSpec, _loss_matrix, lipschitz_const
from .regret import bound_lipschitz, bound_tsallis, decompose
from .sequences import (
    IID,
    PRNG_NAME,
    Biased,
    Constant,
    FileForecaster,
    FileSource,
    FtlKiller,
    Markov,
    NoisyTruth,
    SequenceSource,
    forecast_stream,
    generate,
    write_forecasts,
    write_outcomes,
)
from .validation import check_simplex

SOURCES = ("iid", "markov", "ftl_killer", "file")
FORECASTERS = ("constant", "noisy", "biased", "file")

REGRET_COLUMNS = (
    "seed", "t", "cumulative_regret", "stability", "btrl", "smoothing", "bound", "within_bound",
)
BIN_COLUMNS = (
    "seed", "bin", "n_rounds", "calibration", "refinement", "approx_error",
    "subgame_regret", "base_loss_infinite",
)
SUMMARY_COLUMNS = (
    "seed", "T", "n_bins", "n_clamped", "base_loss", "improved_loss", "gain",
    "certificate", "explicit_slack", "pass",
)
IDENTITY_COLUMNS = ("identity", "checks", "max_residual", "tolerance", "status")

EPILOG = f"""\
output files (in --out):
  identities   identities.csv: {", ".join(IDENTITY_COLUMNS)}
  regret       regret.csv, or regret_alpha<a>.csv per --alphas entry:
               {", ".join(REGRET_COLUMNS)}
               rows at t = 1, 2, 4, ..., T; bound is the explicit certificate
               at horizon t (nan when none applies)
  calibeat     calibeat_bins.csv: {", ".join(BIN_COLUMNS)}
               calibeat_summary.csv: {", ".join(SUMMARY_COLUMNS)}
               pass means gain >= certificate (relative tolerance 1e-9)
  gen          outcomes_seed<s>.txt and forecasts_seed<s>.txt
  all          config.json with the resolved settings and the PRNG name

Numbers use '.' decimals and shortest round-trip form; infinities are 'inf'.
Outcome indices in files and in the config (start) are 1-based.
exit codes: 0 pass, 1 assertion failure, 2 configuration error
"""


@dataclass
class ExperimentConfig:
    loss: str = "squared"
    alphas: list | None = None
    d: int = 2
    T: int = 1000
    eta: float = 1.0
    epsilon: float = 0.1
    clamp: bool = True
    source: str = "iid"
    dist: list | None = None
    rows: list | None = None
    start: int = 1
    input: str | None = None
    forecaster: str = "constant"
    q: list | None = None
    sigma: float = 0.1
    offset: list | None = None
    forecasts: str | None = None
    seeds: list = field(default_factory=lambda: [0])
    out: str = "."
    # identity grid
    specs: list | None = None
    ds: list = field(default_factory=lambda: [2, 3, 5])
    Ts: list = field(default_factory=lambda: [1, 10, 100, 1000])
    etas: list = field(default_factory=lambda: [0.25, 1.0, 4.0])
    grid_seeds: int = 20
    grid_epsilon: float = 0.25
    inject_fault: str | None = None

    @classmethod
    def from_mapping(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def loss_spec(self):
        try:
            return LossSpec.from_string(self.loss)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad loss {self.loss!r}: {exc}") from exc

    def grid_specs(self):
        texts = self.specs
        if texts is None:
            return IdentityGrid().specs
        try:
            return tuple(LossSpec.from_string(s) for s in texts)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad entry in specs: {exc}") from exc

    def validate(self, command):
        """Check every precondition before any work starts."""
        self.eta = _parse_eta(self.eta)
        if command in ("regret", "calibeat", "gen"):
            if not isinstance(self.d, int) or self.d < 2:
                raise ConfigError("d must be an integer >= 2")
            if not isinstance(self.T, int) or self.T < 1:
                raise ConfigError("T must be a positive integer")
            if not self.seeds or any(not isinstance(s, int) or s < 0 for s in self.seeds):
                raise ConfigError("seeds must be a nonempty list of nonnegative integers")
            self.source_kind()
        if command in ("regret", "calibeat"):
            self.loss_spec()
        if command == "regret" and self.alphas is not None:
            if not self.alphas or any(not 1.0 <= float(a) <= 2.0 for a in self.alphas):
                raise ConfigError("alphas must lie in [1, 2]")
        if command in ("calibeat", "gen"):
            self.base_forecaster()
        if command == "calibeat":
            if not 0 < self.epsilon <= 0.5:
                raise ConfigError("epsilon must lie in (0, 1/2]")
            if math.isinf(self.eta):
                raise ConfigError("calibeating subgames need a finite eta")
            if self.T < 2:
                raise ConfigError("calibeating needs T >= 2")
        if command == "identities":
            self.grid_specs()
            if any(int(d) < 2 for d in self.ds) or any(int(t) < 1 for t in self.Ts):
                raise ConfigError("grid dimensions must be >= 2 and horizons >= 1")
            if any(not float(e) > 0 or math.isinf(float(e)) for e in self.etas):
                raise ConfigError("grid learning rates must be finite and positive")
            if self.grid_seeds < 0:
                raise ConfigError("grid_seeds must be nonnegative")
            if not 0 < self.grid_epsilon <= 0.5:
                raise ConfigError("grid_epsilon must lie in (0, 1/2]")
            if self.inject_fault is not None and self.inject_fault not in IDENTITIES:
                raise ConfigError(f"unknown identity {self.inject_fault!r}")
        return self

    def source_kind(self):
        d = self.d
        try:
            if self.source == "iid":
                dist = self.dist if self.dist is not None else [1.0 / d] * d
                kind = IID(tuple(check_simplex(dist, d=d).tolist()))
            elif self.source == "markov":
                if self.rows is None:
                    raise ConfigError("the markov source needs rows")
                rows = check_simplex(np.asarray(self.rows, dtype=np.float64), d=d)
                if rows.shape != (d, d):
                    raise ConfigError(f"markov rows must be a {d}x{d} matrix")
                if not 1 <= self.start <= d:
                    raise ConfigError(f"start must lie in [1, {d}]")
                kind = Markov(tuple(map(tuple, rows.tolist())), self.start - 1)
            elif self.source == "ftl_killer":
                kind = FtlKiller(d)
            elif self.source == "file":
                if not self.input or not Path(self.input).is_file():
                    raise ConfigError(f"outcome file {self.input!r} not found")
                kind = FileSource(self.input)
            else:
                raise ConfigError(f"source must be one of {', '.join(SOURCES)}")
        except CalibeatError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        return kind

    def base_forecaster(self):
        d = self.d
        try:
            if self.forecaster == "constant":
                q = self.q if self.q is not None else [1.0 / d] * d
                return Constant(tuple(check_simplex(q, d=d).tolist()))
            if self.forecaster == "noisy":
                if not self.sigma >= 0:
                    raise ConfigError("sigma must be nonnegative")
                return NoisyTruth(float(self.sigma))
            if self.forecaster == "biased":
                if self.offset is None or len(self.offset) != d:
                    raise ConfigError(f"the biased forecaster needs {d} offsets")
                return Biased(tuple(float(x) for x in self.offset))
            if self.forecaster == "file":
                if not self.forecasts or not Path(self.forecasts).is_file():
                    raise ConfigError(f"forecast file {self.forecasts!r} not found")
                return FileForecaster(self.forecasts)
        except CalibeatError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        raise ConfigError(f"forecaster must be one of {', '.join(FORECASTERS)}")

    def to_json(self):
        data = dataclasses.asdict(self)
        data["eta"] = _fmt(self.eta)
        data["prng"] = PRNG_NAME
        data["version"] = __version__
        return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _parse_eta(value):
    try:
        eta = float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"eta must be a number or 'inf', got {value!r}") from exc
    if not eta > 0:
        raise ConfigError("eta must be positive")
    return eta


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def _logged_rounds(T):
    rounds = [1 << k for k in range(T.bit_length())]
    if rounds[-1] != T:
        rounds.append(T)
    return rounds


def regret_bound(spec, d, T, eta):
    """Smallest explicit certificate for FTRL regret at horizon ``T``, or nan."""
    candidates = []
    alpha = {Family.LOG: 1.0, Family.SQUARED: 2.0}.get(spec.family, spec.alpha)
    if spec.family in (Family.LOG, Family.SQUARED, Family.UNSCALED_TSALLIS) and eta == 1.0:
        candidates.append(bound_tsallis(alpha, d, T, eta=1.0).total)
    G = lipschitz_const(spec, d)
    if G is not None and (math.isinf(eta) or eta == 1.0):
        # Lipschitz in the l1 norm, whose diameter on the simplex is 2.
        candidates.append(bound_lipschitz(G, 2.0, T, eta, d))
    return min(candidates) if candidates else math.nan


def _regret_rows(spec, transcript, seed):
    rows = []
    for t in _logged_rounds(transcript.T):
        report = decompose(spec, transcript.prefix(t))
        bound = regret_bound(spec, transcript.d, t, transcript.eta)
        within = "na" if math.isnan(bound) else ("true" if report.total <= bound else "false")
        rows.append(
            (seed, t, report.total, report.stability, report.btrl_vs_pT1, report.smoothing,
             bound, within)
        )
    return rows


def cmd_regret(cfg):
    out = Path(cfg.out)
    base = cfg.loss_spec()
    if cfg.alphas is None:
        targets = [("regret.csv", base)]
    else:
        scaled = base.family is Family.SCALED_TSALLIS
        targets = [
            (f"regret_alpha{float(a)!r}.csv", LossSpec.tsallis(float(a), scaled=scaled))
            for a in cfg.alphas
        ]
    tables = {name: [] for name, _ in targets}
    for seed in cfg.seeds:
        ys = generate(SequenceSource(cfg.source_kind(), seed), cfg.T)
        transcript = run(targets[0][1], ys, cfg.eta, cfg.d)
        for name, spec in targets:
            tables[name].extend(_regret_rows(spec, transcript.with_spec(spec), seed))
    failed = []
    for name, rows in tables.items():
        _write_csv(out / name, REGRET_COLUMNS, rows)
        failed += [(name, r[0]) for r in rows if r[1] == cfg.T and r[-1] == "false"]
        for r in rows:
            if r[1] == cfg.T:
                print(f"{name} seed={r[0]} regret={_fmt(r[2])} bound={_fmt(r[6])}")
    if failed:
        name, seed = failed[0]
        print(f"FAIL: final regret exceeds the certificate ({name}, seed {seed})", file=sys.stderr)
        return 1
    return 0


def _bin_label(key):
    return "-".join(str(k) for k in key)


def cmd_calibeat(cfg):
    out = Path(cfg.out)
    spec = cfg.loss_spec()
    forecaster = cfg.base_forecaster()
    bin_rows, summary_rows = [], []
    status = 0
    for seed in cfg.seeds:
        source = SequenceSource(cfg.source_kind(), seed)
        ys = generate(source, cfg.T)
        qs = forecast_stream(forecaster, ys, seed=seed, source=source)
        binning = build_binning(cfg.epsilon, cfg.T, cfg.d)
        ps, report = calibeat(spec, qs, ys, cfg.epsilon, cfg.eta, cfg.clamp, binning)
        base = _loss_matrix(spec, qs)[np.arange(cfg.T), ys]
        for b in report.bins:
            rounds = binning.bins[b.key].rounds
            infinite = bool(np.any(np.isinf(base[rounds])))
            bin_rows.append(
                (seed, _bin_label(b.key), b.n_rounds, b.calibration, b.refinement,
                 b.approx_error, b.subgame_regret, infinite)
            )
        try:
            alpha = 1.0 if spec.family is Family.LOG else spec.alpha
            slack = (
                calibeat_certificate(alpha, cfg.d, cfg.T, cfg.epsilon, len(report.bins))
                if spec.family in (Family.LOG, Family.UNSCALED_TSALLIS)
                else math.nan
            )
        except CalibeatError:
            slack = math.nan
        passed = report.certified
        status = status or (0 if passed else 1)
        summary_rows.append(
            (seed, cfg.T, len(report.bins), report.n_clamped, report.base_loss,
             report.improved_loss, report.gain, report.certificate, slack, passed)
        )
        print(
            f"seed={seed} gain/T={_fmt(report.gain / cfg.T)} "
            f"certificate/T={_fmt(report.certificate / cfg.T)} {'pass' if passed else 'FAIL'}"
        )
    _write_csv(out / "calibeat_bins.csv", BIN_COLUMNS, bin_rows)
    _write_csv(out / "calibeat_summary.csv", SUMMARY_COLUMNS, summary_rows)
    if status:
        print("FAIL: gain below the certificate", file=sys.stderr)
    return status


def cmd_identities(cfg):
    grid = IdentityGrid(
        specs=cfg.grid_specs(),
        ds=tuple(int(d) for d in cfg.ds),
        Ts=tuple(int(t) for t in cfg.Ts),
        etas=tuple(float(e) for e in cfg.etas),
        n_seeds=int(cfg.grid_seeds),
        epsilon=float(cfg.grid_epsilon),
    )
    result = run_identity_suite(grid, fault=cfg.inject_fault)
    rows = []
    for name in IDENTITIES:
        stat = result.stats[name]
        status = "pass" if stat.passed else "fail"
        rows.append((name, stat.checks, stat.max_residual, stat.tolerance, status))
        print(f"{name:28s} checks={stat.checks:6d} max_residual={stat.max_residual:.3e} {status}")
    _write_csv(Path(cfg.out) / "identities.csv", IDENTITY_COLUMNS, rows)
    print(f"total checks: {result.total_checks}")
    failure = result.first_failure()
    if failure is not None:
        print(
            f"FAIL: {failure.name} residual {failure.max_residual:.3e} > {failure.tolerance:g}"
            f" at {failure.worst}",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_gen(cfg):
    out = Path(cfg.out)
    forecaster = cfg.base_forecaster()
    for seed in cfg.seeds:
        source = SequenceSource(cfg.source_kind(), seed)
        ys = generate(source, cfg.T)
        write_outcomes(out / f"outcomes_seed{seed}.txt", ys, cfg.d)
        write_forecasts(
            out / f"forecasts_seed{seed}.txt",
            forecast_stream(forecaster, ys, seed=seed, source=source),
        )
    print(f"wrote {len(cfg.seeds)} stream(s) to {out}")
    return 0


COMMANDS = {
    "identities": cmd_identities,
    "regret": cmd_regret,
    "calibeat": cmd_calibeat,
    "gen": cmd_gen,
}


def _float_list(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _int_list(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _matrix(text):
    return [_float_list(row) for row in text.split(";")]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", default=None, help="JSON file with ExperimentConfig fields")
    common.add_argument("--out", default=S, help="output directory (default: .)")
    common.add_argument("--loss", default=S, help="log | squared | spherical | tsallis:A | scaled_tsallis:A")
    common.add_argument("--d", type=int, default=S, help="number of outcomes")
    common.add_argument("--T", type=int, default=S, help="horizon")
    common.add_argument("--eta", default=S, help="learning rate, or inf for FTL")
    common.add_argument("--seeds", type=_int_list, default=S, help="comma-separated seeds")
    common.add_argument("--source", choices=SOURCES, default=S)
    common.add_argument("--dist", type=_float_list, default=S, help="iid distribution, comma-separated")
    common.add_argument("--rows", type=_matrix, default=S, help="markov rows: '0.9,0.1;0.2,0.8'")
    common.add_argument("--start", type=int, default=S, help="markov start outcome (1-based)")
    common.add_argument("--input", default=S, help="outcome file for --source file")

    parser = argparse.ArgumentParser(
        prog="calibeat",
        description="Calibeating and FTRL regret experiments for proper losses.",
        epilog=EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    kw = dict(parents=[common], epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p = sub.add_parser("identities", help="run the identity suite", **kw)
    p.add_argument("--specs", type=lambda s: s.split(","), default=S, help="comma-separated losses")
    p.add_argument("--ds", type=_int_list, default=S)
    p.add_argument("--Ts", type=_int_list, default=S)
    p.add_argument("--etas", type=_float_list, default=S)
    p.add_argument("--grid-seeds", dest="grid_seeds", type=int, default=S)
    p.add_argument("--grid-epsilon", dest="grid_epsilon", type=float, default=S)
    p.add_argument("--inject-fault", dest="inject_fault", default=S, metavar="IDENTITY",
                   help="test mode: corrupt one identity's check")

    p = sub.add_parser("regret", help="FTRL regret curve against the certificate", **kw)
    p.add_argument("--alphas", type=_float_list, default=S, help="Tsallis sweep, one CSV per alpha")

    for name, text in (("calibeat", "calibeat an external forecaster"),
                       ("gen", "write outcome and forecast files")):
        p = sub.add_parser(name, help=text, **kw)
        p.add_argument("--forecaster", choices=FORECASTERS, default=S)
        p.add_argument("--q", type=_float_list, default=S, help="constant forecast")
        p.add_argument("--sigma", type=float, default=S, help="noise level for 'noisy'")
        p.add_argument("--offset", type=_float_list, default=S, help="offset for 'biased'")
        p.add_argument("--forecasts", default=S, help="forecast file for 'file'")
        if name == "calibeat":
            p.add_argument("--epsilon", type=float, default=S)
            p.add_argument("--clamp", type=_bool, default=S)
    return parser


def load_config(args):
    data = {}
    if args.config is not None:
        try:
            data = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("the config file must hold a JSON object")
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "command")}
    data.update(overrides)
    try:
        cfg = ExperimentConfig.from_mapping(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate(args.command)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    except (ConfigError, OSError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line runner: ``gbessel {heat,estimate,capacity,bessel,verify,all}``.

Settings come from built-in defaults, then an optional YAML/JSON file, then
flags.  Each run writes ``report.json`` (embedding the resolved config),
plot-ready CSV tables, ``schema.json`` describing the CSV columns and
``metadata.json`` with run-time details that are kept out of the report so
that identical inputs give byte-identical reports.

Exit codes: 0 all checks pass, 1 a check failed, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .bessel import (ScaleFault, TruncatedSdeConfig, ito_refinement, k_term_trend, moment_bounds,
                     residual_refinement, scale_function_check, scaling_check)
from .core import BandError, PiecewiseControl, TimeGrid, VolatilityBand, dimension_check
from .gheat import (CFLError, DomainError, HeatProblem, classical_error, heat_solve,
                    decay_bound, verify_decay_bound)
from .montecarlo import (ControlFamily, Payoff, ball_hint, capacity_ball, default_family,
                         estimate_lower, estimate_upper, occupation_integral)
from .verify import beta_suite, equivalence_suite, rotation_suite

COMMANDS = ("heat", "estimate", "capacity", "bessel", "verify", "all")
EXECUTION_KEYS = ("out", "threads")  # do not affect results; kept out of the report


class ConfigError(ValueError):
    """Configuration violates a precondition of the requested command."""


@dataclass
class RunConfig:
    band: tuple = (1.0, 1.0)
    d: int = 3
    t_end: float = 1.0
    n_steps: int = 256
    r: float = 1.0
    start: Optional[list] = None
    a: Optional[list] = None
    payoff: dict = field(default_factory=lambda: {"kind": "norm_power", "power": 2.0})
    family: dict = field(default_factory=lambda: {"n_constant": 9, "n_bang_bang": 32})
    n_paths: int = 2000
    seed: int = 0
    n: Optional[float] = None
    c: Optional[float] = None
    m: float = 1.0
    eps: list = field(default_factory=lambda: [0.2, 0.1, 0.05])
    alpha: float = 0.625
    lam: float = 2.0
    Q: Optional[list] = None
    ds: float = 0.02
    n_time: Optional[int] = None
    levels: list = field(default_factory=lambda: [6, 7, 8, 9, 10])
    refine_paths: int = 256
    ito_ns: list = field(default_factory=lambda: [4, 6, 8])
    out: str = "gbessel-run"
    threads: int = 1

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        data = dict(data)
        grid = data.pop("grid", None)
        if grid is not None:
            if not isinstance(grid, dict):
                raise ConfigError("grid must be a mapping with t_end and n_steps")
            data.update(grid)
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.normalize()
        return cfg

    def normalize(self) -> None:
        try:
            self.band = tuple(float(v) for v in self.band)
            self.d = int(self.d)
            self.t_end = float(self.t_end)
            self.n_steps = int(self.n_steps)
            self.r = float(self.r)
            self.n_paths = int(self.n_paths)
            self.seed = int(self.seed)
            self.threads = int(self.threads)
            self.eps = [float(e) for e in np.atleast_1d(self.eps)]
            self.levels = [int(k) for k in self.levels]
            self.ito_ns = [int(k) for k in self.ito_ns]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config value: {exc}") from None
        if len(self.band) != 2:
            raise ConfigError("band needs two values: sigma_lo, sigma_hi")

    def to_report(self) -> dict:
        out = dataclasses.asdict(self)
        for key in EXECUTION_KEYS:
            out.pop(key)
        return _jsonable(out)

    # derived objects -----------------------------------------------------

    def vol_band(self) -> VolatilityBand:
        try:
            return VolatilityBand(*self.band)
        except BandError as exc:
            raise ConfigError(f"band: {exc}") from None

    def grid(self) -> TimeGrid:
        try:
            return TimeGrid(self.t_end, self.n_steps)
        except ValueError as exc:
            raise ConfigError(f"grid: {exc}") from None

    def point(self, value, default_radius: float) -> np.ndarray:
        if value is None:
            x = np.zeros(self.d)
            x[0] = default_radius
            return x
        x = np.asarray(value, dtype=float).reshape(-1)
        if x.shape != (self.d,):
            raise ConfigError(f"points need {self.d} coordinates, got {x.size}")
        return x

    def make_family(self, band: VolatilityBand, hint=None) -> ControlFamily:
        spec = dict(self.family)
        unknown = set(spec) - {"n_constant", "n_bang_bang", "seed"}
        if unknown:
            raise ConfigError(f"unknown family keys: {sorted(unknown)}")
        return default_family(band, self.t_end, hint=hint, **spec)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


# ---------------------------------------------------------------------------
# results


@dataclass
class Table:
    columns: dict  # column name -> description
    rows: list


@dataclass
class Result:
    report: dict
    tables: dict
    passed: bool


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _require_paths(cfg: RunConfig) -> None:
    _require(cfg.n_paths >= 100, f"n_paths >= 100 required, got {cfg.n_paths}")
    _require(cfg.threads >= 1, "threads must be >= 1")


# ---------------------------------------------------------------------------
# heat


def _prepare_heat(cfg: RunConfig):
    band = cfg.vol_band()
    _require(cfg.d >= 1, "d must be >= 1")
    mode = "line" if cfg.d == 1 else "radial"
    if mode == "radial":
        chk = dimension_check(cfg.d, band)
        _require(chk.passed, f"dimension condition: d={cfg.d} below threshold {chk.threshold}")
    c = float(cfg.d if cfg.c is None else cfg.c)
    _require(0 <= c <= cfg.d, f"c must lie in [0, d], got c={c}")
    try:
        prob = HeatProblem(band, cfg.d, mode, n=1.0 if cfg.n is None else float(cfg.n),
                           ds=cfg.ds, t_end=cfg.t_end, n_time=cfg.n_time)
        prob.validate()
    except (CFLError, DomainError) as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(f"heat problem: {exc}") from None
    return prob, c


def run_heat(cfg: RunConfig, prepared) -> Result:
    prob, c = prepared
    fld = heat_solve(prob)
    rep = verify_decay_bound(fld, prob, c)
    report = {"problem": prob.to_dict(), "decay_bound": rep.to_dict()}
    if prob.band.nu_lo == prob.band.nu_hi:
        report["classical_linf_error"] = classical_error(fld)
    rows = [[t, s, u] for k, t in enumerate(fld.times) for s, u in zip(fld.coords, fld.values[k])]
    bound = decay_bound(fld.times, prob.n, c, prob.band, d=prob.d)
    tables = {
        "heat_field.csv": Table({"t": "time", "s": "offset from the centre (line) or radius",
                                 "u": "numerical solution"}, rows),
        "heat_center.csv": Table({"t": "time", "u_center": "solution at the centre",
                                  "bound": "decay bound (1+nt)^(-c rho)"},
                                 [[t, u, b] for t, u, b in zip(fld.times, fld.at_center(), bound)]),
    }
    return Result(report, tables, rep.passed)


# ---------------------------------------------------------------------------
# estimate


def _build_payoff(spec: dict, d: int, band: VolatilityBand, t_end: float) -> Payoff:
    kind = spec.get("kind")
    if kind == "constant":
        return Payoff.constant(float(spec["value"]))
    if kind == "coordinate_power":
        i, p = int(spec.get("index", 0)), float(spec.get("power", 2.0))
        _require(0 <= i < d, f"payoff index {i} outside 0..{d - 1}")
        return Payoff(lambda x: x[:, i] ** p, bounded=False, name=f"x_{i}^{p:g}")
    if kind == "norm_power":
        p = float(spec.get("power", 2.0))
        return Payoff(lambda x: np.sum(x**2, axis=-1) ** (p / 2), bounded=False,
                      name=f"|x|^{p:g}")
    if kind == "ball":
        a = np.broadcast_to(np.asarray(spec.get("center", 0.0), dtype=float), (d,))
        eps = float(spec["radius"])
        _require(eps > 0, "ball radius must be positive")
        return Payoff(lambda x: (np.sum((x - a) ** 2, axis=-1) < eps**2).astype(float),
                      hint=ball_hint(a, eps, t_end, band, d), name=f"ball({eps:g})")
    raise ConfigError(f"unknown payoff kind {kind!r}; use constant, coordinate_power, "
                      "norm_power or ball")


def _prepare_estimate(cfg: RunConfig):
    band = cfg.vol_band()
    _require_paths(cfg)
    _require(cfg.d >= 1, "d must be >= 1")
    payoff = _build_payoff(dict(cfg.payoff), cfg.d, band, cfg.t_end)
    family = cfg.make_family(band, payoff.hint)
    return payoff, family, cfg.grid(), cfg.point(cfg.start, 0.0)


def run_estimate(cfg: RunConfig, prepared) -> Result:
    payoff, family, grid, x = prepared
    up = estimate_upper(payoff, family, grid, cfg.d, x, cfg.n_paths, cfg.seed, cfg.threads)
    lo = estimate_lower(payoff, family, grid, cfg.d, x, cfg.n_paths, cfg.seed, cfg.threads)
    rows = [[i, json.dumps(p.describe(), sort_keys=True), m, s]
            for i, (p, m, s) in enumerate(zip(family, up.per_policy_means, up.per_policy_stderr))]
    report = {"payoff": payoff.name, "family": family.spec, "upper": up.to_dict(),
              "lower": lo.to_dict(), "ordered": lo.value <= up.value}
    table = Table({"index": "policy index", "policy": "policy description (JSON)",
                   "mean": "sample mean under the policy", "stderr": "standard error"}, rows)
    return Result(report, {"estimate_policies.csv": table}, lo.value <= up.value)


# ---------------------------------------------------------------------------
# capacity


def _prepare_capacity(cfg: RunConfig):
    band = cfg.vol_band()
    _require_paths(cfg)
    _require(cfg.d >= 2, "capacity bounds need d >= 2")
    chk = dimension_check(cfg.d, band)
    _require(chk.passed, f"dimension condition: d={cfg.d} below threshold {chk.threshold}")
    c = float(cfg.d if cfg.c is None else cfg.c)
    _require(0 <= c <= cfg.d, f"c must lie in [0, d], got c={c}")
    _require(all(e > 0 for e in cfg.eps), "eps values must be positive")
    _require(0.5 < cfg.alpha < 1, f"alpha must lie in (1/2, 1), got {cfg.alpha}")
    _require(cfg.alpha <= cfg.d * band.rho() + 1e-12,
             f"alpha={cfg.alpha} exceeds d*rho={cfg.d * band.rho():.4f}")
    # default centre sits off the start so the occupation sum does not begin inside the ball
    return band, c, cfg.make_family(band), cfg.grid(), cfg.point(cfg.start, 0.0), \
        cfg.point(cfg.a, 0.1)


def run_capacity(cfg: RunConfig, prepared) -> Result:
    band, c, family, grid, x, a = prepared
    caps = [capacity_ball(cfg.t_end, a, e, family, grid, cfg.d, cfg.n_paths, cfg.seed, start=x,
                          c=c, threads=cfg.threads) for e in cfg.eps]
    occs = [occupation_integral(cfg.t_end, a, e, family, grid, cfg.d, cfg.n_paths, cfg.seed,
                                cfg.alpha, start=x, threads=cfg.threads) for e in cfg.eps]
    order = np.argsort(cfg.eps)[::-1]
    vals = [occs[i].estimate.value for i in order]
    monotone = all(v2 <= v1 for v1, v2 in zip(vals, vals[1:]))
    passed = all(r.passed for r in caps + occs) and monotone
    report = {"capacity": [r.to_dict() for r in caps], "occupation": [r.to_dict() for r in occs],
              "occupation_monotone": monotone}
    cols = {"eps": "ball radius", "estimate": "upper expectation estimate",
            "stderr": "standard error", "bound": "analytic bound", "pass": "estimate within bound"}
    tables = {
        "capacity.csv": Table(cols, [[e, r.estimate.value, r.estimate.stderr, r.bound, r.passed]
                                     for e, r in zip(cfg.eps, caps)]),
        "occupation.csv": Table(cols, [[e, r.estimate.value, r.estimate.stderr, r.bound, r.passed]
                                       for e, r in zip(cfg.eps, occs)]),
    }
    return Result(report, tables, passed)


# ---------------------------------------------------------------------------
# bessel


def _prepare_bessel(cfg: RunConfig):
    band = cfg.vol_band()
    _require_paths(cfg)
    _require(cfg.d >= 2, "radial processes need d >= 2")
    _require(cfg.r > 0, "r must be positive")
    _require(len(cfg.levels) >= 4, "need at least 4 refinement levels")
    _require(len(cfg.ito_ns) >= 2, "need at least 2 smoothing levels")
    _require(cfg.lam > 0, "lam must be positive")
    level_n = 10 if cfg.n is None else cfg.n
    _require(float(level_n).is_integer() and level_n >= 1, "level n must be an integer >= 1")
    try:
        scfg = TruncatedSdeConfig(cfg.r, cfg.m, int(level_n), band, cfg.grid())
    except ValueError as exc:
        raise ConfigError(f"truncated SDE: {exc}") from None
    policy = PiecewiseControl((cfg.t_end / 2,), (band.nu_hi, band.nu_lo))
    return band, scfg, policy, cfg.make_family(band)


def run_bessel(cfg: RunConfig, prepared) -> Result:
    band, scfg, policy, family = prepared
    grid = scfg.grid
    resid = residual_refinement(band, cfg.d, cfg.r, policy, cfg.t_end, cfg.levels,
                                cfg.refine_paths, cfg.seed)
    ito = ito_refinement(band, cfg.d, cfg.r, policy, cfg.ito_ns[0], cfg.t_end, cfg.levels,
                         cfg.refine_paths, cfg.seed)
    x = cfg.point(cfg.start, cfg.r)
    trend = k_term_trend(x, cfg.ito_ns, family, grid, cfg.n_paths, cfg.seed)
    kvals = [t.value for t in trend]
    k_decreasing = all(b < a for a, b in zip(kvals, kvals[1:]))
    try:
        scale = scale_function_check(scfg, family, cfg.n_paths, seed=cfg.seed)
        scale_dict, scale_pass = scale.to_dict(), scale.passed
    except ScaleFault as exc:
        scale, scale_dict, scale_pass = None, {"error": str(exc), "pass": False}, False
    moments = moment_bounds(scfg, family, cfg.n_paths, cfg.seed)
    scaling = scaling_check(band, cfg.d, cfg.r, cfg.lam, policy, cfg.t_end, cfg.n_steps,
                            cfg.n_paths, cfg.seed)
    scaling_pass = all(c["pass"] for c in scaling)
    checks = {"sde_residual_order": resid.passed, "ito_residual_order": ito.passed,
              "k_term_decreasing": k_decreasing, "scale_function": scale_pass,
              "moment_bounds": moments.passed, "scaling": scaling_pass}
    report = {"truncated": scfg.to_dict(), "sde_residual": resid.to_dict(),
              "ito_residual": ito.to_dict(),
              "k_term": [{"n": n, **t.to_dict()} for n, t in zip(cfg.ito_ns, trend)],
              "scale_function": scale_dict, "moments": moments.to_dict(), "scaling": scaling,
              "checks": checks}
    ref_cols = {"dt": "time step", "median": "median over paths of the sup residual"}
    tables = {
        "sde_residual.csv": Table(ref_cols, [list(r) for r in zip(resid.dts, resid.values)]),
        "ito_residual.csv": Table(ref_cols, [list(r) for r in zip(ito.dts, ito.values)]),
        "k_term.csv": Table({"n": "smoothing level, eps = 2^-n",
                             "estimate": "upper expectation of |K_T|", "stderr": "standard error"},
                            [[n, t.value, t.stderr] for n, t in zip(cfg.ito_ns, trend)]),
    }
    if scale is not None:
        tables["scale.csv"] = Table(
            {"policy": "policy description (JSON)", "mean_h": "mean of h at the stopped time",
             "stderr_h": "standard error", "hit_freq": "frequency of reaching the level",
             "hit_stderr": "standard error", "bound": "hitting bound (nr)^(1-2m)"},
            [[json.dumps(p.policy, sort_keys=True), p.mean_h, p.stderr_h, p.hit_freq,
              p.hit_stderr, p.derived_bound] for p in scale.per_policy])
    return Result(report, tables, all(checks.values()))


# ---------------------------------------------------------------------------
# verify


def _prepare_verify(cfg: RunConfig):
    band = cfg.vol_band()
    _require_paths(cfg)
    _require(cfg.d >= 2, "verification suites need d >= 2")
    _require(cfg.r > 0, "r must be positive")
    _require(cfg.n_steps % 32 == 0, "n_steps must be a multiple of 32 for the refinement suites")
    if cfg.Q is None:
        Q = np.eye(cfg.d)
        Q[:2, :2] = [[0.0, -1.0], [1.0, 0.0]]
    else:
        Q = np.asarray(cfg.Q, dtype=float)
        _require(Q.shape == (cfg.d, cfg.d), f"Q must be {cfg.d}x{cfg.d}")
        _require(np.max(np.abs(Q.T @ Q - np.eye(cfg.d))) <= 1e-12, "Q must be orthogonal")
    return band, Q, cfg.make_family(band), cfg.grid(), cfg.point(cfg.start, cfg.r)


def run_verify(cfg: RunConfig, prepared) -> Result:
    band, Q, family, grid, x = prepared
    suites = [rotation_suite(x, Q, family, grid, cfg.n_paths, cfg.seed),
              equivalence_suite(band, cfg.d, grid, cfg.n_paths, cfg.seed),
              beta_suite(x, family, grid, cfg.n_paths, cfg.seed)]
    rows = [[s.name, c.name, c.statistic, c.threshold, c.passed] for s in suites for c in s.checks]
    table = Table({"suite": "suite name", "check": "check name", "statistic": "observed value",
                   "threshold": "comparison threshold", "pass": "check outcome"}, rows)
    return Result({"suites": [s.to_dict() for s in suites]}, {"verify_checks.csv": table},
                  all(s.passed for s in suites))


# ---------------------------------------------------------------------------
# dispatch

_STAGES = {
    "heat": (_prepare_heat, run_heat),
    "estimate": (_prepare_estimate, run_estimate),
    "capacity": (_prepare_capacity, run_capacity),
    "bessel": (_prepare_bessel, run_bessel),
    "verify": (_prepare_verify, run_verify),
}


def run(command: str, cfg: RunConfig) -> Result:
    """Validate every stage first, then execute; raises :class:`ConfigError` early."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    names = list(_STAGES) if command == "all" else [command]
    prepared = {}
    for name in names:
        try:
            prepared[name] = _STAGES[name][0](cfg)
        except ConfigError as exc:
            raise ConfigError(f"{name}: {exc}") from None
    results = {name: _STAGES[name][1](cfg, prepared[name]) for name in names}
    if command != "all":
        return results[command]
    report = {name: {**r.report, "pass": r.passed} for name, r in results.items()}
    tables = {k: v for r in results.values() for k, v in r.tables.items()}
    return Result(report, tables, all(r.passed for r in results.values()))


def write_outputs(command: str, cfg: RunConfig, result: Result, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    report = {"command": command, "config": cfg.to_report(), "pass": result.passed,
              "result": _jsonable(result.report)}
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    schema = {}
    for name, table in sorted(result.tables.items()):
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(table.columns))
            for row in table.rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                            for v in row])
        schema[name] = [{"name": k, "description": v} for k, v in table.columns.items()]
    (out / "schema.json").write_text(json.dumps(schema, sort_keys=True, indent=2) + "\n")
    meta = {"timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "threads": cfg.threads, "out": str(out), "argv": sys.argv[1:]}
    (out / "metadata.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def _parse_band(text: str) -> list:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("band must be LO,HI")
    return [float(p) for p in parts]


def _parse_floats(text: str) -> list:
    return [float(p) for p in text.split(",") if p]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gbessel", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="YAML or JSON config file")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", type=str)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--paths", dest="n_paths", type=int)
    parser.add_argument("--band", type=_parse_band, help="sigma_lo,sigma_hi")
    parser.add_argument("--d", type=int)
    parser.add_argument("--eps", type=_parse_floats, help="comma-separated radii")
    parser.add_argument("--m", type=float)
    parser.add_argument("--level-n", dest="n", type=float,
                        help="sharpness n (heat) or truncation level n (bessel)")
    parser.add_argument("--c", type=float)
    parser.add_argument("--t-end", dest="t_end", type=float)
    parser.add_argument("--steps", dest="n_steps", type=int)
    parser.add_argument("--n-time", dest="n_time", type=int, help="heat time steps")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    data: dict[str, Any] = {}
    if args.config is not None:
        try:
            loaded = yaml.safe_load(args.config.read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping")
        data.update(loaded or {})
    for key in ("seed", "out", "threads", "n_paths", "band", "d", "eps", "m", "n", "c",
                "t_end", "n_steps", "n_time"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    return RunConfig.from_mapping(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        result = run(args.command, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    write_outputs(args.command, cfg, result, Path(cfg.out))
    print(f"{args.command}: {'PASS' if result.passed else 'FAIL'} -> {cfg.out}/report.json")
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())

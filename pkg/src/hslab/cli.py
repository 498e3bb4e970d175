"""Config-driven experiment runner.

Usage::

    hslab run config.json [--threads N] [--out DIR]
    hslab validate config.json
    hslab version

Exit status is 0 on success, 2 when the config fails validation (the error
list is printed to stderr as JSON) and 3 on a numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema

from . import __version__
from . import applications as apps
from . import sensitivity as sens
from .catalog import model_chain, model_params_from, price_closed, sensitivity_limits
from .errors import HslabError, NumericError, ParameterError
from .montecarlo import SCHEMES, PathConfig, estimate_price_direct

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3
CSV_HEADER = ("T", "value", "std_error", "method", "target_limit", "target_rate")
RATE_TOL = {"delta": 0.05, "combo": 0.10, "gamma": 0.10}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment", "output"],
    "properties": {
        "model": {"enum": ["cir", "three_halves", "cev1", "cev2"]},
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: _num for k in ("a", "b", "sigma", "q", "xi", "mu", "theta", "beta")},
        },
        "experiment": {"enum": ["price", "delta", "gamma", "param", "ratefit", "app", "validate"]},
        "T_grid": {"type": "array", "items": _pos, "minItems": 1},
        "method": {"enum": ["closed", "mc", "pde"]},
        "payoff": {"enum": ["one", "linear"]},
        "statistic": {"enum": ["gamma", "combo"]},
        "param_id": {"type": "string"},
        "mc": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer", "minimum": 0},
                "n_paths": {"type": "integer", "minimum": 2},
                "steps_per_year": _posint,
                "scheme": {"enum": list(SCHEMES)},
            },
        },
        "pde": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_x": {"type": "integer", "minimum": 50},
                "n_t": {"type": "integer", "minimum": 50},
                "coordinate": {"enum": ["native", "log"]},
            },
        },
        "ratefit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "input": {"type": "string"},
                "curve": {"enum": ["delta", "combo"]},
                "window": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
            },
        },
        "app": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind", "params"],
            "properties": {
                "kind": {"enum": ["utility-heston", "utility-threehalves", "utility-cev", "bond-cir",
                                  "bond-threehalves", *apps.ENTROPIC_KINDS]},
                "params": {"type": "object", "additionalProperties": _num},
            },
        },
        "output": {"type": "string", "minLength": 1},
    },
}

_MODEL_FIELDS = {
    "cir": ("a", "b", "sigma", "q", "xi"),
    "three_halves": ("a", "b", "sigma", "q", "xi"),
    "cev1": ("mu", "theta", "sigma", "beta", "q", "xi"),
    "cev2": ("mu", "theta", "sigma", "beta", "q", "xi"),
}


@dataclass
class ExperimentConfig:
    experiment: str
    output: str
    model: str | None = None
    params: dict = field(default_factory=dict)
    T_grid: list = field(default_factory=lambda: [1.0, 2.0, 5.0])
    method: str = "closed"
    payoff: str = "one"
    statistic: str = "gamma"
    param_id: str | None = None
    mc: dict = field(default_factory=dict)
    pde: dict = field(default_factory=dict)
    ratefit: dict = field(default_factory=dict)
    app: dict | None = None

    def model_params(self):
        return model_params_from(self.model, **self.params)


@dataclass(frozen=True)
class ConfigError:
    code: str
    path: str
    message: str

    def as_dict(self) -> dict:
        return {"code": self.code, "path": self.path, "message": self.message}


def _model_violations(kind: str, p: dict) -> list[ConfigError]:
    """Every catalog constraint checked independently."""
    errs = []

    def need(cond, code, path, msg):
        if not cond:
            errs.append(ConfigError(code, path, msg))

    missing = [f for f in _MODEL_FIELDS[kind] if f not in p and f != "xi"]
    for f in missing:
        errs.append(ConfigError("schema", f"params.{f}", f"missing parameter {f!r}"))
    extra = [f for f in p if f not in _MODEL_FIELDS[kind]]
    for f in extra:
        errs.append(ConfigError("schema", f"params.{f}", f"parameter {f!r} not used by {kind}"))
    if missing or extra:
        return errs
    xi = p.get("xi", 1.0)
    need(xi > 0, "domain-violation", "params.xi", "initial state must be positive")
    need(p["q"] > 0, "domain-violation", "params.q", "discount slope q must be positive")
    s = p["sigma"]
    if kind == "cir":
        need(s != 0, "domain-violation", "params.sigma", "sigma must be nonzero")
        need(2 * p["b"] > s * s, "feller-violation", "params.b", "CIR needs 2b > sigma^2")
    elif kind == "three_halves":
        need(s > 0, "domain-violation", "params.sigma", "sigma must be positive")
        need(p["b"] > 0, "domain-violation", "params.b", "b must be positive")
        need(p["a"] > -0.5 * s * s, "domain-violation", "params.a", "3/2 needs a > -sigma^2/2")
    else:
        need(p["mu"] > 0, "domain-violation", "params.mu", "mu must be positive")
        need(p["beta"] > 0, "domain-violation", "params.beta", "beta must be positive")
        need(p["theta"] >= 0, "domain-violation", "params.theta", "theta must be nonnegative")
        need(s != 0, "domain-violation", "params.sigma", "sigma must be nonzero")
        if not errs:
            try:
                model_params_from(kind, **p)
            except ParameterError as exc:
                errs.append(ConfigError(exc.code or "domain-violation", "params", str(exc)))
    return errs


def _app_violations(app: dict) -> list[ConfigError]:
    kind, p = app["kind"], app["params"]
    try:
        build_app(kind, p)
    except ParameterError as exc:
        return [ConfigError(exc.code or "domain-violation", "app.params", str(exc))]
    except (KeyError, TypeError) as exc:
        return [ConfigError("schema", "app.params", f"missing or invalid parameter: {exc}")]
    return []


def validate_config(raw) -> tuple[ExperimentConfig | None, list[ConfigError]]:
    """Schema plus catalog checks; all errors are collected."""
    v = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = [ConfigError("schema", "/".join(str(s) for s in e.absolute_path) or "$", e.message)
              for e in sorted(v.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))]
    if not isinstance(raw, dict):
        return None, errors
    exp = raw.get("experiment")
    needs_model = not (exp == "app" or (exp == "ratefit" and (raw.get("ratefit") or {}).get("input")))
    if needs_model:
        for key in ("model", "params"):
            if key not in raw:
                errors.append(ConfigError("schema", key, f"{exp} experiment needs {key!r}"))
    params = raw.get("params")
    numeric = isinstance(params, dict) and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in params.values())
    if raw.get("model") in _MODEL_FIELDS and numeric:
        errors += _model_violations(raw["model"], params)
    if exp == "param" and not raw.get("param_id"):
        errors.append(ConfigError("schema", "param_id", "param experiment needs param_id"))
    if exp == "param" and raw.get("param_id") and raw.get("model") in _MODEL_FIELDS:
        if raw["param_id"] not in _MODEL_FIELDS[raw["model"]] or raw["param_id"] == "xi":
            errors.append(ConfigError("schema", "param_id", f"unknown parameter {raw['param_id']!r}"))
    if exp == "app":
        if not isinstance(raw.get("app"), dict):
            errors.append(ConfigError("schema", "app", "app experiment needs an app block"))
        elif not [e for e in errors if e.path.startswith("app")] and isinstance(raw["app"].get("params"), dict):
            errors += _app_violations(raw["app"])
    if raw.get("method") == "pde" and exp not in (None, "delta", "gamma", "ratefit", "validate"):
        errors.append(ConfigError("schema", "method", f"pde method not available for {exp}"))
    if raw.get("payoff") == "linear" and raw.get("model") != "cir":
        errors.append(ConfigError("schema", "payoff", "linear payoff closed forms exist for CIR only"))
    if errors:
        return None, errors
    kw = {k: raw[k] for k in raw}
    if "T_grid" in kw:
        kw["T_grid"] = [float(t) for t in kw["T_grid"]]
    return ExperimentConfig(**kw), []


# -- experiment execution ----------------------------------------------------------

def build_app(kind: str, p: dict) -> apps.AppResult:
    if kind == "utility-heston":
        return apps.utility_factor_map(apps.heston_spec(**p))
    if kind == "utility-threehalves":
        return apps.utility_factor_map(apps.three_halves_spec(**p))
    if kind == "utility-cev":
        return apps.utility_cev_map(**p)
    if kind in ("bond-cir", "bond-threehalves"):
        q = dict(p)
        q.setdefault("q", 1.0)
        return apps.bond_map(model_params_from("cir" if kind == "bond-cir" else "three_halves", **q))
    return apps.entropic_map(kind, **p)


def _path_config(cfg: ExperimentConfig, T: float, threads: int) -> PathConfig:
    mc = cfg.mc
    seed = int(os.environ["HSLAB_SEED"]) if os.environ.get("HSLAB_SEED") else mc.get("seed", 0)
    return PathConfig(T=T, n_steps=max(1, int(round(mc.get("steps_per_year", 100) * T))),
                      n_paths=mc.get("n_paths", 100_000), seed=seed,
                      scheme=mc.get("scheme", "cir-exact"), workers=threads)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    v = float(v)
    return "" if math.isnan(v) else format(v, ".17g")


@dataclass
class Report:
    rows: list
    summary: list


def _curve_rows(points, limit, rate):
    return [(p.T, p.value, p.std_error, p.method, limit, rate) for p in points]


def _run_curve(cfg: ExperimentConfig, threads: int) -> Report:
    p = cfg.model_params()
    payoff = cfg.payoff if cfg.payoff != "one" else None
    lim = sensitivity_limits(p, payoff)
    kw = {}
    if cfg.method == "pde":
        kw["pde_size"] = (cfg.pde.get("n_x", 400), cfg.pde.get("n_t", 400))
    summary = []
    if cfg.experiment == "delta":
        pts = []
        for T in cfg.T_grid:
            pc = _path_config(cfg, T, threads) if cfg.method == "mc" else None
            pts += sens.delta_curve(p, [T], cfg.method, payoff, pc, **kw)
        rows = _curve_rows(pts, lim.delta_limit, lim.delta_rate)
    elif cfg.experiment == "gamma":
        pts = []
        for T in cfg.T_grid:
            pc = _path_config(cfg, T, threads) if cfg.method == "mc" else None
            pts += sens.gamma_curve(p, [T], cfg.method, payoff, pc, cfg.statistic, **kw)
        if cfg.statistic == "gamma":
            rows = _curve_rows(pts, lim.gamma_limit, lim.delta_rate)
        else:
            rows = _curve_rows(pts, 0.0, lim.gamma_combo_rate)
    else:  # param
        pid = cfg.param_id
        pts = sens.param_curve(p, pid, cfg.T_grid)
        target = 0.0 if pid in lim.bounded_only else lim.param_limits[pid]
        rows = _curve_rows(pts, target, None)
        if len(pts) >= 4:
            b = sens.boundedness_stat([(q.T, q.value) for q in pts], target)
            summary += [f"sup T|v - limit|: {b.sup:.6g}", f"tail trend slope: {b.trend_slope:.6g}",
                        f"bounded: {'PASS' if b.bounded else 'FAIL'}"]
    if rows and cfg.experiment in ("delta", "gamma") and len(rows) >= 4:
        summary += _fit_summary(rows, cfg.ratefit.get("window"),
                                "combo" if cfg.statistic == "combo" else cfg.experiment)
    return Report(rows, summary)


def _fit_summary(rows, window, curve_kind) -> list[str]:
    limit, target = rows[0][4], rows[0][5]
    errs = [(T, abs(v - limit)) for T, v, *_ in rows if abs(v - limit) > 0]
    if window is None:
        window = sens.COMBO_WINDOW if curve_kind == "combo" else sens.DEFAULT_WINDOW
    try:
        fit = sens.rate_fit(errs, tuple(window))
    except HslabError as exc:
        return [f"rate fit: not available ({exc})"]
    out = [f"fitted rate: {fit.rate:.10g}", f"intercept: {fit.intercept:.10g}",
           f"r_squared: {fit.r_squared:.10g}", f"window: {fit.window[0]:g}..{fit.window[1]:g}",
           f"points: {fit.n_points}"]
    if fit.low_confidence:
        out.append("low-confidence fit (r_squared < 0.9)")
    if target is not None and not (isinstance(target, float) and math.isnan(target)):
        tol = RATE_TOL.get(curve_kind, 0.05)
        ok = abs(fit.rate - target) <= tol * abs(target)
        out += [f"target rate: {float(target):.10g}", f"tolerance: {tol:.0%}",
                f"rate check: {'PASS' if ok else 'FAIL'}"]
    return out


def read_curve_csv(path) -> list[tuple]:
    """Rows of a curve CSV as ``(T, value, std_error, method, target_limit, target_rate)``."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ParameterError(f"unexpected curve header {header}", "schema")
        for row in reader:
            conv = [float(c) if c else None for c in (row[0], row[1], row[2], row[4], row[5])]
            out.append((conv[0], conv[1], conv[2], row[3], conv[3], conv[4]))
    return out


def curve_points(rows) -> list[sens.CurvePoint]:
    return [sens.CurvePoint(T, v, se, m) for T, v, se, m, *_ in rows]


def _run_ratefit(cfg: ExperimentConfig, threads: int) -> Report:
    rf = cfg.ratefit
    kind = rf.get("curve", "delta")
    if rf.get("input"):
        rows = read_curve_csv(rf["input"])
    else:
        sub = replace(cfg, experiment="delta" if kind == "delta" else "gamma",
                      statistic="combo" if kind == "combo" else cfg.statistic)
        rows = _run_curve(sub, threads).rows
    return Report(rows, _fit_summary(rows, rf.get("window"), kind))


def _run_price(cfg: ExperimentConfig, threads: int) -> Report:
    p = cfg.model_params()
    lam = p.lam
    rows = []
    for T in cfg.T_grid:
        if cfg.method == "mc":
            est = estimate_price_direct(model_chain(p).base, p.xi, _path_config(cfg, T, threads))
            rows.append((T, est.mean, est.std_error, "mc", None, lam))
        else:
            rows.append((T, price_closed(p, T, cfg.payoff), None, "closed", None, lam))
    return Report(rows, [f"long-run decay rate lambda: {lam:.10g}"])


def _run_app(cfg: ExperimentConfig, threads: int) -> Report:
    res = build_app(cfg.app["kind"], cfg.app["params"])
    rate = None if res.growth_limit is None else -res.growth_limit
    rows, summary = [], [f"mapped record: {res.params}", f"wrapper: {res.scalar_wrap}",
                         f"growth limit: {res.growth_limit:.10g}"]
    for T in cfg.T_grid:
        p_T = price_closed(res.params, T)
        rows.append((T, res.u_T(p_T, T), None, "closed", None, rate))
        summary.append(f"value at T={T:g}: {res.value(p_T, T):.10g}")
    return Report(rows, summary)


def run_experiment(cfg: ExperimentConfig, out_dir: str | os.PathLike = ".", threads: int = 1) -> list[Path]:
    """Run one experiment and write ``<prefix>_curve.csv`` and ``<prefix>_summary.txt``."""
    if cfg.experiment == "validate":
        report = Report([], ["config valid"])
    elif cfg.experiment in ("delta", "gamma", "param"):
        report = _run_curve(cfg, threads)
    elif cfg.experiment == "ratefit":
        report = _run_ratefit(cfg, threads)
    elif cfg.experiment == "price":
        report = _run_price(cfg, threads)
    else:
        report = _run_app(cfg, threads)
    prefix = Path(out_dir) / cfg.output
    prefix.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in report.rows:
        w.writerow([_fmt(c) for c in row])
    head = [f"hslab {__version__}", f"model: {cfg.model} {json.dumps(cfg.params, sort_keys=True)}",
            f"experiment: {cfg.experiment}", f"method: {cfg.method}"]
    if cfg.model is None:
        head[1] = "model: none"
    if cfg.method == "mc":
        head.append(f"seed: {_path_config(cfg, 1.0, threads).seed}")
    curve = Path(f"{prefix}_curve.csv")
    summary = Path(f"{prefix}_summary.txt")
    atomic_write(curve, buf.getvalue())
    atomic_write(summary, "\n".join(head + report.summary) + "\n")
    return [curve, summary]


def atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load(path: str):
    with open(path) as fh:
        return json.load(fh)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="hslab", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--threads", type=int, default=1, help="worker hint; results do not depend on it")
    run.add_argument("--out", default=".", help="output directory")
    val = sub.add_parser("validate", help="validate a config without running it")
    val.add_argument("config")
    sub.add_parser("version")
    args = parser.parse_args(argv)

    if args.command == "version":
        print(__version__)
        return EXIT_OK
    try:
        raw = _load(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        print(json.dumps([{"code": "schema", "path": "$", "message": str(exc)}]), file=sys.stderr)
        return EXIT_INVALID
    cfg, errors = validate_config(raw)
    if errors:
        print(json.dumps([e.as_dict() for e in errors], indent=1), file=sys.stderr)
        return EXIT_INVALID
    if args.command == "validate":
        print("valid")
        return EXIT_OK
    if args.threads < 1:
        print(json.dumps([{"code": "schema", "path": "--threads", "message": "must be >= 1"}]),
              file=sys.stderr)
        return EXIT_INVALID
    try:
        paths = run_experiment(cfg, args.out, args.threads)
    except (NumericError, ArithmeticError, HslabError, ValueError) as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

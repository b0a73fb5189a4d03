"""Batch command-line front end.

    qextreme validate --config run.json
    qextreme run      --config run.json --out results/ [--seed S] [--format csv|json]
    qextreme sweep    --config sweep.json --out results/ [--jobs N]

Exit codes: 0 success, 1 invalid config, 2 solver failure, 3 I/O failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .lienard import (
    LienardParams,
    SolverError,
    coherence_scaling,
    steady_state_lienard,
)
from .mboson import (
    DivergentMomentError,
    MBosonParams,
    NumberDistribution,
    moment_recurrence,
    predict_tail,
    steady_state,
)
from .phase_space import full_wigner, radial_wigner
from .scaling import classify_divergences
from .stats import default_window, fit_power_law, sample

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3

OUTPUTS = ("distribution", "fit", "moments", "g2", "wigner", "sample", "coherences", "scaling")
_MBOSON_ONLY = {"scaling"}
_LIENARD_ONLY = {"coherences"}

_window = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 2, "maxItems": 2}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model", "parameters", "truncation", "outputs"],
    "properties": {
        "model": {"enum": ["mboson", "lienard", "rwa"]},
        "parameters": {"type": "object"},
        "truncation": {"type": "integer", "minimum": 2},
        "outputs": {"type": "array", "items": {"enum": list(OUTPUTS)}, "minItems": 1, "uniqueItems": True},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output_path": {"type": "string"},
        "format": {"enum": ["csv", "json"]},
        "method": {"type": "string"},
        "n_samples": {"type": "integer", "minimum": 1},
        "fit_window": _window,
        "max_k": {"type": "integer", "minimum": 1, "maximum": 64},
        "offsets": {"type": "array", "items": {"type": "integer", "minimum": 0, "multipleOf": 2}},
        "coherence_window": _window,
        "wigner": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "r_max": {"type": "number", "exclusiveMinimum": 0},
                "points": {"type": "integer", "minimum": 2},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["parameter"],
            "properties": {
                "parameter": {"type": "string"},
                "values": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "scale": {"enum": ["log", "linear"]},
                "start": {"type": "number"},
                "stop": {"type": "number"},
                "num": {"type": "integer", "minimum": 1},
            },
        },
    },
}

_MBOSON_PARAMS = {
    "type": "object",
    "additionalProperties": False,
    "required": ["gamma", "kappa"],
    "properties": {
        "gamma": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "kappa": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "omega0": {"type": "number"},
    },
}
_LIENARD_PARAMS = {
    "type": "object",
    "additionalProperties": False,
    "required": ["k0", "k1", "k2", "k3"],
    "properties": {k: {"type": "number", "minimum": 0} for k in ("k0", "k1", "k2", "k3")},
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config handling


def load_config(path) -> dict:
    """Read JSON; OSError propagates (I/O failure), bad JSON becomes ConfigError."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc}") from exc


def _schema_errors(instance, schema, where=""):
    errs = sorted(jsonschema.Draft202012Validator(schema).iter_errors(instance), key=lambda e: list(e.path))
    return [f"{where}{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errs]


def validate_config(cfg: dict, *, sweep: bool = False) -> dict:
    """Schema and semantic checks; returns the config with defaults filled."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    errors = _schema_errors(cfg, CONFIG_SCHEMA)
    if errors:
        raise ConfigError("; ".join(errors))
    model = cfg["model"]
    pschema = _MBOSON_PARAMS if model == "mboson" else _LIENARD_PARAMS
    errors = _schema_errors(cfg["parameters"], pschema, "parameters/")
    if errors:
        raise ConfigError("; ".join(errors))

    outs = set(cfg["outputs"])
    if model == "mboson" and outs & _LIENARD_ONLY:
        raise ConfigError(f"outputs {sorted(outs & _LIENARD_ONLY)} need model lienard or rwa")
    if model != "mboson" and outs & _MBOSON_ONLY:
        raise ConfigError(f"outputs {sorted(outs & _MBOSON_ONLY)} need model mboson")
    if sweep and "sweep" not in cfg:
        raise ConfigError("sweep requires a 'sweep' section")
    if not sweep and "sweep" in cfg:
        raise ConfigError("'sweep' section is only valid for the sweep command")

    out = copy.deepcopy(cfg)
    out.setdefault("seed", 0)
    out.setdefault("format", "csv")
    out.setdefault("n_samples", 500)
    out.setdefault("max_k", 4)
    out.setdefault("offsets", list(range(0, 17, 2)))
    out.setdefault("method", "levels" if model == "mboson" else "direct")
    allowed = ("levels", "dense") if model == "mboson" else ("direct", "evolve")
    if out["method"] not in allowed:
        raise ConfigError(f"method must be one of {allowed} for model {model}")

    try:
        _build_params(out)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid parameters: {exc}") from exc
    if model == "mboson":
        M = len(out["parameters"]["gamma"])
        if out["truncation"] < 2 * M:
            raise ConfigError(f"truncation must be at least 2M = {2 * M}")
    elif out["truncation"] < 8:
        raise ConfigError("truncation must be at least 8")
    if "scaling" in outs:
        params = _build_params(out)
        if params.M < 2 or params.nu <= 0:
            raise ConfigError("scaling needs M >= 2 and a positive tail exponent")
    if sweep:
        _sweep_values(out)  # raises ConfigError on a bad grid
    return out


def _build_params(cfg):
    p = cfg["parameters"]
    if cfg["model"] == "mboson":
        return MBosonParams(tuple(p["gamma"]), tuple(p["kappa"]), p.get("omega0", 0.0))
    return LienardParams(p["k0"], p["k1"], p["k2"], p["k3"])


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# pipeline


def _num(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


class Table:
    def __init__(self, columns, rows):
        self.columns = list(columns)
        self.rows = rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_num(v) for v in r])
        return buf.getvalue()

    def to_json(self) -> str:
        data = {c: [r[i] for r in self.rows] for i, c in enumerate(self.columns)}
        return json.dumps(_jsonable(data), indent=1) + "\n"


def _solve(cfg):
    params = _build_params(cfg)
    N = cfg["truncation"]
    if cfg["model"] == "mboson":
        dist = steady_state(params, N, method=cfg["method"])
        return params, dist, None, {"steady_state": dist.residual}, list(dist.warnings)
    rho = steady_state_lienard(params, N, method=cfg["method"], rwa=cfg["model"] == "rwa")
    pops = np.clip(rho.populations, 0.0, None)
    dist = NumberDistribution.from_probabilities(pops)
    return params, dist, rho, {"steady_state": rho.residual}, list(rho.warnings)


def _fit(cfg, params, dist):
    if "fit_window" in cfg:
        window = tuple(int(round(v)) for v in cfg["fit_window"])
    elif cfg["model"] == "mboson" and params.M >= 2:
        window = default_window(params, cfg["truncation"])
    else:
        window = (30, max(120, cfg["truncation"] * 6 // 10))
    return fit_power_law(dist, window)


def compute(cfg: dict):
    """Run the pipeline; returns (artifacts, summary, residuals, warnings).

    ``artifacts`` maps output name to a Table (tabular) or dict (record).
    """
    params, dist, rho, residuals, warnings = _solve(cfg)
    arts, summary = {}, {"mean": dist.mean()}
    if cfg["model"] == "mboson":
        summary["tail_mass"] = dist.tail_mass
    else:
        summary["edge_population"] = rho.edge_population

    for name in cfg["outputs"]:
        if name == "distribution":
            arts[name] = Table(["n", "rho_nn"], list(zip(range(dist.truncation + 1), dist.probabilities)))
        elif name == "fit":
            fit = _fit(cfg, params, dist)
            rec = fit.to_dict()
            if cfg["model"] == "mboson" and params.M >= 2:
                tail = predict_tail(params)
                rec["nu_predicted"] = tail.nu
                rec["xi"] = tail.xi
            arts[name] = rec
            summary["nu_hat"] = fit.nu_hat
        elif name == "moments":
            K = cfg["max_k"]
            rows = []
            exact = None
            if cfg["model"] == "mboson" and params.M == 2 and params.is_critical:
                exact = moment_recurrence(params, K)
            for k in range(1, K + 1):
                val = dist.factorial_moment(k)
                ex = float("nan")
                if exact is not None and exact.valid[k]:
                    ex = exact.values[k]
                rows.append((k, val, ex))
                summary[f"moment_{k}"] = val
            arts[name] = Table(["k", "numeric", "closed_form"], rows)
        elif name == "g2":
            g2 = dist.g2()
            rec = {"g2": g2, "mean": dist.mean()}
            if cfg["model"] == "mboson" and params.M == 2 and params.is_critical:
                ms = moment_recurrence(params, 2)
                rec["g2_closed_form"] = ms.values[2] / ms.values[1] ** 2 if ms.valid[2] else None
            arts[name] = rec
            summary["g2"] = g2
        elif name == "wigner":
            arts[name] = _wigner(cfg, dist, rho)
        elif name == "sample":
            rep = sample(dist, cfg["n_samples"], cfg["seed"])
            nz = np.flatnonzero(rep.counts)
            arts[name] = Table(["n", "count"], list(zip(nz, rep.counts[nz])))
            arts["sample_summary"] = rep.to_dict()
            summary.update({"sample_median": rep.median, "sample_p90": rep.p90, "sample_max": rep.max_observed})
        elif name == "coherences":
            window = tuple(int(round(v)) for v in cfg.get("coherence_window", (30, cfg["truncation"] * 6 // 10)))
            fits = coherence_scaling(rho, cfg["offsets"], window)
            rows = [(d, f.nu_hat, f.stderr, f.r_squared) for d, f in fits.items()]
            odd = max((float(np.abs(rho.band(d)).max()) for d in range(1, 17, 2) if d <= rho.truncation), default=0.0)
            arts[name] = Table(["offset", "nu_hat", "stderr", "r_squared"], rows)
            summary["odd_offset_max"] = odd
            for d, f in fits.items():
                summary[f"coherence_nu_{d}"] = f.nu_hat
        elif name == "scaling":
            nu = params.nu if params.M >= 2 else None
            if nu is None or nu <= 0:
                raise ConfigError("scaling needs M >= 2 and a positive tail exponent")
            delta = params.delta if 0 < params.delta < 1 else None
            pred = classify_divergences(nu, cfg["max_k"], delta)
            arts[name] = {
                "nu": nu,
                "delta": delta,
                "A": pred.A,
                "moments": {str(k): {"class": c.describe(), "kind": c.kind} for k, c in pred.moment_classes.items()},
                "proxy_moments": {str(k): v for k, v in pred.moments.items()},
                "g2": {"class": pred.g2_class.describe(), "kind": pred.g2_class.kind,
                       "reconstructed": pred.g2_class.reconstructed},
            }
    return arts, summary, residuals, warnings


def _wigner(cfg, dist, rho):
    w = cfg.get("wigner", {})
    npts = w.get("points", 401 if rho is None else 81)
    if rho is None:
        r_max = w.get("r_max", min(50.0, math.sqrt(cfg["truncation"])))
        radii = np.linspace(0.0, r_max, npts)
        rw = radial_wigner(dist, radii)
        return Table(["r", "R", "W"], list(zip(rw.radii, rw.R, rw.values)))
    q_max = w.get("r_max", 8.0)
    axis = np.linspace(-q_max, q_max, npts)
    grid = full_wigner(rho.elements, axis, axis)
    rows = [(q, p, grid.values[i, j]) for i, q in enumerate(axis) for j, p in enumerate(axis)]
    return Table(["q", "p", "W"], rows)


# ---------------------------------------------------------------------------
# writing


def _write_outputs(out_dir: Path, fmt: str, arts: dict, manifest: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, art in arts.items():
        if isinstance(art, Table):  # records (fit, g2, ...) are always JSON
            path = out_dir / f"{name}.{fmt}"
            text = art.to_csv() if fmt == "csv" else art.to_json()
        else:
            path = out_dir / f"{name}.json"
            text = json.dumps(_jsonable(art), indent=1, sort_keys=True) + "\n"
        path.write_text(text, encoding="utf-8", newline="\n")
        written.append(path.name)
    manifest["files"] = written
    (out_dir / "manifest.json").write_text(
        json.dumps(_jsonable(manifest), indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )


def _manifest(cfg, residuals, warnings, t0, **extra):
    m = {
        "config_hash": config_hash(cfg),
        "version": __version__,
        "residuals": residuals,
        "warnings": warnings,
        "warning_count": len(warnings),
        "wall_time_s": time.perf_counter() - t0,
    }
    m.update(extra)
    return m


# ---------------------------------------------------------------------------
# sweep


def _sweep_values(cfg) -> list[float]:
    sw = cfg["sweep"]
    if "values" in sw:
        return [float(v) for v in sw["values"]]
    try:
        start, stop, num = sw["start"], sw["stop"], sw.get("num", 10)
    except KeyError as exc:
        raise ConfigError("sweep needs 'values' or 'start'/'stop'") from exc
    if sw.get("scale", "log") == "log":
        if start <= 0 or stop <= 0:
            raise ConfigError("log sweep needs positive bounds")
        return np.geomspace(start, stop, num).tolist()
    return np.linspace(start, stop, num).tolist()


def _apply_sweep_value(cfg: dict, name: str, value: float) -> dict:
    point = copy.deepcopy(cfg)
    point.pop("sweep", None)
    p = point["parameters"]
    if name == "truncation":
        point["truncation"] = int(round(value))
    elif cfg["model"] == "mboson":
        if name == "delta":
            p["kappa"][-1] = p["gamma"][-1] * (1.0 - value)
        elif name == "nu":
            M = len(p["gamma"])
            if M < 2:
                raise ConfigError("sweeping nu needs M >= 2")
            p["gamma"][-2] = value * M**2 / (M - 1) * p["gamma"][-1] + p["kappa"][-2]
        elif name.split(".")[0] in ("gamma", "kappa") and name.count(".") == 1:
            key, idx = name.split(".")
            m = int(idx)
            if not 1 <= m <= len(p[key]):
                raise ConfigError(f"index {m} out of range for {key}")
            p[key][m - 1] = value
        else:
            raise ConfigError(f"unknown sweep parameter {name!r}")
    elif name in ("k0", "k1", "k2", "k3"):
        p[name] = value
    else:
        raise ConfigError(f"unknown sweep parameter {name!r}")
    return point


def _sweep_point(args):
    point, value = args
    try:
        _, summary, residuals, warnings = compute(point)
        return value, summary, residuals.get("steady_state", float("nan")), warnings, None
    except (SolverError, ConfigError, ValueError, ArithmeticError) as exc:
        return value, {}, float("nan"), [], f"{type(exc).__name__}: {exc}"


# ---------------------------------------------------------------------------
# entry points


def _resolve(args, sweep=False) -> dict:
    cfg = load_config(args.config)
    if isinstance(cfg, dict):
        if getattr(args, "seed", None) is not None:
            cfg["seed"] = args.seed
        if getattr(args, "format", None) is not None:
            cfg["format"] = args.format
    return validate_config(cfg, sweep=sweep)


def _out_dir(args, cfg) -> Path:
    out = args.out or cfg.get("output_path")
    if not out:
        raise ConfigError("no output directory: pass --out or set output_path")
    return Path(out)


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    validate_config(cfg, sweep=isinstance(cfg, dict) and "sweep" in cfg)
    print("config ok")
    return EXIT_OK


def cmd_run(args) -> int:
    t0 = time.perf_counter()
    cfg = _resolve(args)
    out_dir = _out_dir(args, cfg)
    try:
        arts, summary, residuals, warnings = compute(cfg)
    except ConfigError:
        raise
    except (SolverError, DivergentMomentError, ArithmeticError) as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        # e.g. no usable fit window or a divergent requested moment
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    _write_outputs(out_dir, cfg["format"], arts, _manifest(cfg, residuals, warnings, t0, summary=summary))
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    cfg = _resolve(args, sweep=True)
    out_dir = _out_dir(args, cfg)
    name = cfg["sweep"]["parameter"]
    values = _sweep_values(cfg)
    points = [(_apply_sweep_value(cfg, name, v), v) for v in values]
    for point, _ in points:
        validate_config(point)
    jobs = max(1, int(args.jobs or 1))
    if jobs == 1 or len(points) == 1:
        results = [_sweep_point(p) for p in points]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, points))

    rows, failures, warnings, residuals = [], [], [], {}
    for value, summary, resid, warns, err in results:
        residuals[_num(value)] = resid
        if err is not None:
            failures.append({"value": value, "error": err})
            rows.append((value, "failed", float("nan"), float("nan")))
            continue
        warnings.extend(f"{name}={_num(value)}: {w}" for w in warns)
        for q in sorted(summary):
            rows.append((value, q, summary[q], resid))
    table = Table([name, "quantity", "value", "residual"], rows)
    text = table.to_csv() if cfg["format"] == "csv" else table.to_json()
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"sweep.{cfg['format']}").write_text(text, encoding="utf-8", newline="\n")
    manifest = _manifest(cfg, residuals, warnings, t0, failures=failures, points=len(values),
                         files=[f"sweep.{cfg['format']}"])
    (out_dir / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=1, sort_keys=True) + "\n")
    return EXIT_OK if not failures else EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qextreme", description="Steady states and heavy tails of nonlinear dissipative oscillators.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run one configuration"), ("sweep", "run a parameter sweep"),
                           ("validate", "check a configuration without computing")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="JSON configuration file")
        if name != "validate":
            p.add_argument("--out", help="output directory (overrides output_path)")
            p.add_argument("--seed", type=int, help="64-bit RNG seed (overrides config)")
            p.add_argument("--format", choices=("csv", "json"), help="tabular output format")
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "sweep": cmd_sweep, "validate": cmd_validate}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

"""Command line front end.

Subcommands ``fit``, ``path``, ``tune-cv`` and ``tune-ic`` read a CSV file,
run the estimator pipeline and write a single JSON document. Settings come
from an optional flat ``key = value`` config file; command line flags win.

Exit codes: 0 success, 2 usage, 3 file I/O, 4 data or parse error,
5 invalid or unsupported configuration, 6 numerical failure.
"""
import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone

import numpy as np

from penglm import __version__
from penglm.data import read_csv
from penglm.exceptions import (
    DivergenceError,
    InfeasibleError,
    InvalidInputError,
    UnboundedInterceptError,
    UnsupportedError,
)
from penglm.losses import LossSpec
from penglm.penalties import PenaltySpec
from penglm.pipeline import run_estimator
from penglm.solver import SolverConfig
from penglm.tuning import GridSpec, SelectionCriterion

SCHEMA_VERSION = 1
SUBCOMMANDS = ("fit", "path", "tune-cv", "tune-ic")
_MODE = {"fit": "fit", "path": "path", "tune-cv": "cv", "tune-ic": "ic"}

EXIT_USAGE, EXIT_IO, EXIT_DATA, EXIT_CONFIG, EXIT_NUMERIC = 2, 3, 4, 5, 6


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str = "fit"
    data: str | None = None
    response: str | None = None
    weights_col: str | None = None
    offset_col: str | None = None
    loss: str = "least_squares"
    knot: float = 1.0
    quantile: float = 0.5
    smoothing: float = 0.0
    class_count: int | None = None
    penalty: str = "lasso"
    pen_val: float | None = None
    mix: float = 0.5
    groups: str | None = None
    flavor: str = "convex"
    shape: float | None = None
    adaptive_expon: float = 1.0
    lla_steps: int = 5
    n_points: int = 100
    eps: float = 1e-3
    cv_k: int = 5
    cv_rule: str = "1se"
    seed: int = 0
    criterion: str = "bic"
    ebic_gamma: float = 0.5
    max_iter: int = 2000
    rel_tol: float = 1e-8
    resid_tol: float = 1e-7
    standardize: bool = True
    intercept: bool = True
    n_jobs: int = 1
    out: str | None = None

    def validate(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError(f"unknown subcommand {self.subcommand!r}")
        if self.data is None or self.response is None:
            raise ConfigError("data and response are required")
        if self.subcommand == "tune-cv" and self.cv_k < 2:
            raise ConfigError("tune-cv needs cv_k >= 2")
        if self.cv_rule not in ("min", "1se"):
            raise ConfigError("cv_rule must be min or 1se")
        if self.criterion not in ("aic", "bic", "ebic"):
            raise ConfigError("criterion must be aic, bic or ebic")


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(name, raw):
    typ = _FIELD_TYPES[name]
    text = str(raw).strip()
    if "bool" in str(typ):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {text!r}")
    if text.lower() in ("none", ""):
        return None
    try:
        if "int" in str(typ):
            return int(text)
        if "float" in str(typ):
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r}") from None
    return text


def read_config_file(path):
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, val = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in _FIELD_TYPES or key == "subcommand":
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _convert(key, val)
    return out


def read_groups(path):
    """One group per line, comma separated zero-based column indices."""
    groups = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                groups.append([int(tok) for tok in line.split(",") if tok.strip()])
            except ValueError:
                raise InvalidInputError(f"{path}:{lineno}: bad group line {line!r}") from None
    return groups


def build_parser():
    parser = argparse.ArgumentParser(prog="penglm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--data")
        p.add_argument("--response", help="column name; comma separated for several")
        p.add_argument("--weights-col")
        p.add_argument("--offset-col")
        p.add_argument("--loss")
        p.add_argument("--knot", type=float)
        p.add_argument("--quantile", type=float)
        p.add_argument("--smoothing", type=float)
        p.add_argument("--class-count", type=int)
        p.add_argument("--penalty")
        p.add_argument("--pen-val", type=float)
        p.add_argument("--mix", type=float)
        p.add_argument("--groups", help="file with one comma separated group per line")
        p.add_argument("--flavor", choices=("convex", "adaptive", "scad", "mcp"))
        p.add_argument("--shape", type=float, help="SCAD a or MCP gamma")
        p.add_argument("--adaptive-expon", type=float)
        p.add_argument("--lla-steps", type=int)
        p.add_argument("--n-points", type=int)
        p.add_argument("--eps", type=float)
        p.add_argument("--cv-k", type=int)
        p.add_argument("--cv-rule", choices=("min", "1se"))
        p.add_argument("--seed", type=int)
        p.add_argument("--criterion", choices=("aic", "bic", "ebic"))
        p.add_argument("--ebic-gamma", type=float)
        p.add_argument("--max-iter", type=int)
        p.add_argument("--rel-tol", type=float)
        p.add_argument("--resid-tol", type=float)
        p.add_argument("--no-standardize", dest="standardize", action="store_false",
                       default=None)
        p.add_argument("--no-intercept", dest="intercept", action="store_false", default=None)
        p.add_argument("--n-jobs", type=int)
        p.add_argument("--out")
    return parser


def resolve_config(args):
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    for key, val in vars(args).items():
        if key in _FIELD_TYPES and val is not None:
            values[key] = val
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# JSON output with 17 significant digits

def _encode(obj, indent=0):
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return "null"
        text = format(x, ".17g")
        if text.lstrip("-").isdigit():
            text += ".0"
        return text
    return json.dumps(str(obj))


def dumps(doc):
    return _encode(doc) + "\n"


def _fit_record(lam, res, raw):
    coef_raw, inter_raw = raw
    return {
        "pen_val": lam,
        "coef": coef_raw,
        "intercept": inter_raw,
        "coef_std": res.coef,
        "intercept_std": res.intercept,
        "objective": res.objective,
        "n_iter": res.n_iter,
        "converged": res.converged,
    }


def _penalty_record(pen):
    if isinstance(pen, PenaltySpec):
        return {
            "kind": pen.kind,
            "mix": pen.mix,
            "weights": pen.weights,
            "groups": None if pen.groups is None else [g.tolist() for g in pen.groups],
        }
    return {"kind": pen.kind, "shape": pen.shape}


def run(cfg):
    """Execute a resolved configuration and return the output document."""
    responses = [r.strip() for r in cfg.response.split(",")]
    groups = read_groups(cfg.groups) if cfg.groups else None
    try:
        loss = LossSpec(cfg.loss, knot=cfg.knot, quantile=cfg.quantile,
                        class_count=cfg.class_count, smoothing=cfg.smoothing)
        pen = PenaltySpec(cfg.penalty, mix=cfg.mix, groups=groups)
        solver_cfg = SolverConfig(max_iter=cfg.max_iter, rel_tol=cfg.rel_tol,
                                  resid_tol=cfg.resid_tol)
        grid_spec = GridSpec(n_points=cfg.n_points, eps=cfg.eps)
        crit = SelectionCriterion(cfg.criterion, cfg.ebic_gamma)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    data, names = read_csv(cfg.data, responses if len(responses) > 1 else responses[0],
                           cfg.weights_col, cfg.offset_col)

    est = run_estimator(
        loss, pen, data, mode=_MODE[cfg.subcommand], flavor=cfg.flavor, grid_spec=grid_spec,
        pen_val=cfg.pen_val, cv_k=cfg.cv_k, cv_rule=cfg.cv_rule, seed=cfg.seed,
        criterion=crit, cfg=solver_cfg, do_standardize=cfg.standardize,
        fit_intercept=cfg.intercept, gen_shape=cfg.shape, adaptive_expon=cfg.adaptive_expon,
        lla_steps=cfg.lla_steps, n_jobs=cfg.n_jobs)

    path = est.path
    fits = [_fit_record(lam, res, raw) for lam, res, raw in zip(path.grid, path.fits, est.raw)]
    metrics = {k: v for k, v in path.metrics.items()}
    idx = path.selected_index
    return {
        "schema_version": SCHEMA_VERSION,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "config": asdict(cfg),
        "feature_names": names,
        "n_samples": data.n,
        "penalty": _penalty_record(est.penalty),
        "flavor": est.flavor,
        "objective_kind": "convex" if est.flavor in ("convex", "adaptive") else "nonconvex",
        "lambda_max": est.lmax,
        "lambda_max_exact": est.lmax_exact,
        "grid": path.grid,
        "metrics": metrics,
        "selection_rule": path.selection_rule,
        "selected_index": idx,
        "selected_pen_val": None if idx is None else path.grid[idx],
        "selected": None if idx is None else fits[idx],
        "fits": fits,
        "standardization": {
            "col_means": est.state.col_means,
            "col_scales": est.state.col_scales,
            "y_mean": est.state.y_mean,
        },
        "diagnostics": {
            "all_converged": all(f.converged for f in path.fits),
            "n_converged": sum(bool(f.converged) for f in path.fits),
            "total_iterations": sum(int(f.n_iter) for f in path.fits),
        },
    }


def _fail(code, exc):
    err = {"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": code}}
    sys.stderr.write(json.dumps(err) + "\n")
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        doc = run(cfg)
        text = dumps(doc)
        if cfg.out:
            with open(cfg.out, "w") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    except OSError as exc:
        return _fail(EXIT_IO, exc)
    except (ConfigError, UnsupportedError, InfeasibleError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except (DivergenceError, UnboundedInterceptError) as exc:
        return _fail(EXIT_NUMERIC, exc)
    except (InvalidInputError, ValueError) as exc:
        return _fail(EXIT_DATA, exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())

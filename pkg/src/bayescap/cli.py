"""Command-line interface: ``bayescap {simulate,fit,select,summarize,coverage,dfd-accuracy}``.

Each command reads an optional JSON config, applies flag overrides (flags win),
validates the result against a schema, does its work and writes a
``manifest.json`` next to its outputs.
"""

import argparse
import copy
import csv
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import ingest
from .errors import BayesCapError
from .evaluate import Scenario, coverage_experiment, dfd_accuracy_experiment
from .model import Hyperparameters, TimeSeriesDataset, whiten
from .sampler import HmcConfig, align, fit, order_components, read_draws, summarize, write_draws
from .selection import DEFAULT_CUTOFF, posterior_mean_dfd, select_d
from .simulate import simulate_null, simulate_scenario

log = logging.getLogger("bayescap")

COMMANDS = ("simulate", "fit", "select", "summarize", "coverage", "dfd-accuracy")

_POS_INT = {"type": "integer", "minimum": 1}
_GRID = {
    "type": "array",
    "minItems": 1,
    "items": {
        "type": "object",
        "additionalProperties": False,
        "required": ["n", "T"],
        "properties": {"n": _POS_INT, "T": {"type": "integer", "minimum": 2}},
    },
}


def _block(**props):
    return {"type": "object", "additionalProperties": False, "properties": props}


CONFIG_SCHEMA = _block(
    seed={"type": "integer", "minimum": 0},
    out={"type": "string"},
    jobs=_POS_INT,
    data=_block(
        signals={"type": "string"},
        covariates={"type": "string"},
        add_intercept={"type": "boolean"},
        ess_thin={"type": "boolean"},
        thin_to={"type": ["integer", "null"], "minimum": 2},
        jitter={"type": "number", "minimum": 0},
    ),
    simulate=_block(p={"type": "integer", "minimum": 5}, n=_POS_INT, T={"type": "integer", "minimum": 2}, null={"type": "boolean"}),
    hmc=_block(
        chains=_POS_INT,
        warmup=_POS_INT,
        draws=_POS_INT,
        steps=_POS_INT,
        target_accept={"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        init_starts=_POS_INT,
        max_divergent_frac={"type": "number", "minimum": 0, "maximum": 1},
    ),
    hyper=_block(b_sd={"type": "number", "exclusiveMinimum": 0}, sigma2_rate={"type": "number", "exclusiveMinimum": 0}),
    fit=_block(d=_POS_INT, level={"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}, bonferroni={"type": "boolean"}),
    select=_block(d_max=_POS_INT, cutoff={"type": "number"}),
    summarize=_block(draws_dir={"type": "string"}),
    coverage=_block(
        p={"type": "integer", "minimum": 5},
        grid=_GRID,
        replications={"type": "integer", "minimum": 2},
        level={"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        d=_POS_INT,
    ),
    dfd_accuracy=_block(
        p={"type": "integer", "minimum": 5},
        grid=_GRID,
        replications=_POS_INT,
        d_max=_POS_INT,
        cutoff={"type": "number"},
    ),
)

DEFAULTS = {
    "seed": 0,
    "out": "out",
    "data": {"add_intercept": True, "ess_thin": False, "thin_to": None, "jitter": 0.0},
    "simulate": {"p": 5, "n": 100, "T": 20, "null": False},
    "hmc": {},
    "hyper": {},
    "fit": {"d": 2, "level": 0.95, "bonferroni": False},
    "select": {"d_max": 3, "cutoff": DEFAULT_CUTOFF},
    "summarize": {},
    "coverage": {"p": 5, "grid": [{"n": 100, "T": 20}], "replications": 100, "level": 0.95, "d": 2},
    "dfd_accuracy": {"p": 5, "grid": [{"n": 400, "T": 40}], "replications": 20, "d_max": 3, "cutoff": DEFAULT_CUTOFF},
}

_COMMON_FLAGS = {
    "seed": ("seed",),
    "out": ("out",),
    "jobs": ("jobs",),
    "chains": ("hmc", "chains"),
    "warmup": ("hmc", "warmup"),
    "draws": ("hmc", "draws"),
    "bonferroni": ("fit", "bonferroni"),
    "ess_thin": ("data", "ess_thin"),
    "thin_to": ("data", "thin_to"),
    "signals": ("data", "signals"),
    "covariates": ("data", "covariates"),
    "draws_dir": ("summarize", "draws_dir"),
}


def flag_paths(command):
    """Map of argparse dest to config path for one command."""
    paths = dict(_COMMON_FLAGS)
    if command == "simulate":
        paths.update({k: ("simulate", k) for k in ("p", "n", "T", "null")})
    elif command == "fit":
        paths["d"] = ("fit", "d")
    elif command == "select":
        paths.update(d=("select", "d_max"), cutoff=("select", "cutoff"))
    elif command == "coverage":
        paths.update({k: ("coverage", k) for k in ("d", "p", "replications")})
    elif command == "dfd-accuracy":
        paths.update({k: ("dfd_accuracy", k) for k in ("p", "replications", "cutoff")})
        paths["d"] = ("dfd_accuracy", "d_max")
    return paths


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _plain(o):
    if isinstance(o, dict):
        return {str(k): _plain(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_plain(v) for v in o]
    if isinstance(o, np.ndarray):
        return _plain(o.tolist())
    if isinstance(o, (bool, np.bool_)):
        return bool(o)
    if isinstance(o, (int, np.integer)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        return float(o)
    if isinstance(o, Path):
        return str(o)
    return o


def format_float(x):
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def dumps(obj, indent=1):
    """JSON text with every float written to 17 significant digits."""

    def enc(o, level):
        pad, inner = " " * (indent * level), " " * (indent * (level + 1))
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{inner}{json.dumps(k)}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + pad + "}"
        if isinstance(o, list):
            if not o:
                return "[]"
            if all(not isinstance(v, (dict, list)) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            return "[\n" + ",\n".join(inner + enc(v, level + 1) for v in o) + "\n" + pad + "]"
        if isinstance(o, float):
            return format_float(o)
        return json.dumps(o)

    return enc(_plain(obj), 0) + "\n"


def write_json(obj, path):
    Path(path).write_text(dumps(obj))
    return Path(path)


def write_rows(rows, path, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([format_float(v) if isinstance(v, float) else v for v in (row[c] for c in columns)])
    return Path(path)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set(cfg, path, value):
    node = cfg
    for key in path[:-1]:
        node = node.setdefault(key, {})
    node[path[-1]] = value


def resolve_config(command, args):
    """Defaults, then the config file, then flags; validated before returning."""
    user = {}
    if args.config:
        with open(args.config) as fh:
            user = json.load(fh)
    jsonschema.validate(user, CONFIG_SCHEMA)
    cfg = _merge(DEFAULTS, user)
    for dest, path in flag_paths(command).items():
        value = getattr(args, dest, None)
        if value is not None and value is not False:
            _set(cfg, path, value)
    if cfg.get("jobs") is None:
        cfg["jobs"] = os.cpu_count() or 1
    jsonschema.validate(cfg, CONFIG_SCHEMA)
    return cfg


def config_hash(cfg):
    # output location and worker count do not change results
    plain = {k: v for k, v in _plain(cfg).items() if k not in ("out", "jobs")}
    return hashlib.sha256(json.dumps(plain, sort_keys=True).encode()).hexdigest()


def hmc_config(cfg):
    return HmcConfig(seed=cfg["seed"], **cfg["hmc"])


def hyperparameters(cfg):
    return Hyperparameters(**cfg["hyper"])


def versions():
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {
        "bayescap": pkg,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "jsonschema": metadata.version("jsonschema"),
    }


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _load_data(cfg):
    dcfg = cfg["data"]
    if not dcfg.get("signals") or not dcfg.get("covariates"):
        raise BayesCapError("data.signals and data.covariates are required (or pass --signals/--covariates)")
    data = ingest.load(dcfg["signals"], dcfg["covariates"], add_intercept=dcfg["add_intercept"])
    info = {"n": data.n, "p": data.p, "q": data.q, "T_min": int(data.T.min()), "T_max": int(data.T.max())}
    if dcfg["ess_thin"] and dcfg["thin_to"]:
        raise BayesCapError("pass either --ess-thin or --thin-to, not both")
    if dcfg["ess_thin"]:
        ess = ingest.effective_sample_size(data)
        data = ingest.thin(data, max(ess, 2))
        info.update(ess=ess, T_thinned=int(data.T.min()))
    elif dcfg["thin_to"]:
        data = ingest.thin(data, dcfg["thin_to"])
        info.update(T_thinned=int(data.T.min()))
    return whiten(data, jitter=dcfg["jitter"]), info


def cmd_simulate(cfg, out):
    s = cfg["simulate"]
    paths = [out / "signals.csv", out / "covariates.csv"]
    truth = None
    if s["null"]:
        data = simulate_null(s["p"], s["n"], s["T"], cfg["seed"])
    else:
        data, truth = simulate_scenario(s["p"], s["n"], s["T"], cfg["seed"])
    # the intercept column is not written; load() adds it back by default
    ingest.write(TimeSeriesDataset(data.Y, data.X[:, 1:], data.subject_ids), *paths)
    if truth is not None:
        paths.append(write_json(truth.to_dict(), out / "truth.json"))
    return paths, []


def cmd_fit(cfg, out):
    wd, info = _load_data(cfg)
    f = cfg["fit"]
    if not 1 <= f["d"] <= wd.p:
        raise BayesCapError(f"need 1 <= d <= p, got d={f['d']}, p={wd.p}")
    draws = order_components(fit(wd, f["d"], hyperparameters(cfg), hmc_config(cfg)))
    paths = write_draws(draws, out)
    summary = summarize(draws, level=f["level"], bonferroni=f["bonferroni"]).to_dict()
    summary.update(d=f["d"], dfd_mean=posterior_mean_dfd(draws, wd), data=info)
    paths.append(write_json(summary, out / "summary.json"))
    return paths, []


def cmd_select(cfg, out):
    wd, info = _load_data(cfg)
    s = cfg["select"]
    report = select_d(wd, s["d_max"], s["cutoff"], hyperparameters(cfg), hmc_config(cfg), jobs=cfg["jobs"])
    return [write_json(dict(report.to_dict(), data=info), out / "select.json")], []


def cmd_summarize(cfg, out):
    src = cfg["summarize"].get("draws_dir")
    if not src:
        raise BayesCapError("summarize.draws_dir is required (or pass --draws-dir)")
    paths = sorted(Path(src).glob("draws_chain*.csv"), key=lambda p: int(p.stem.removeprefix("draws_chain")))
    if not paths:
        raise BayesCapError(f"no draws_chain*.csv files in {src}")
    draws = order_components(align(read_draws(paths)))
    f = cfg["fit"]
    summary = summarize(draws, level=f["level"], bonferroni=f["bonferroni"]).to_dict()
    summary.update(d=draws.d, sources=[str(p) for p in paths])
    return [write_json(summary, out / "summary.json")], []


def cmd_coverage(cfg, out):
    c = cfg["coverage"]
    table, metrics, aggregates, failed = [], [], [], []
    for cell in c["grid"]:
        sc = Scenario(p=c["p"], n=cell["n"], T=cell["T"], replications=c["replications"], level=c["level"], d=c["d"])
        res = coverage_experiment(sc, cfg["seed"], hmc_config(cfg), hyperparameters(cfg), cfg["jobs"])
        table += res.table_rows()
        metrics += res.metrics
        aggregates.append(res.aggregate())
        failed += [dict(f, n=sc.n, T=sc.T) for f in res.failed]
    paths = [
        write_rows(table, out / "coverage.csv", ["n", "T", "parameter", "coverage", "replications"]),
        write_rows(metrics, out / "metrics.csv", ["scenario", "replication", "metric", "value"]),
        write_json({"scenarios": aggregates}, out / "coverage.json"),
    ]
    return paths, failed


def cmd_dfd_accuracy(cfg, out):
    c = cfg["dfd_accuracy"]
    rows, results, failed = [], [], []
    for cell in c["grid"]:
        sc = Scenario(p=c["p"], n=cell["n"], T=cell["T"], replications=c["replications"], d=2)
        res = dfd_accuracy_experiment(
            sc, cfg["seed"], c["d_max"], c["cutoff"], hmc_config(cfg), hyperparameters(cfg), cfg["jobs"]
        )
        results.append(res.to_dict())
        failed += [dict(f, n=sc.n, T=sc.T) for f in res.failed]
        for r in res.reports:
            row = {"n": sc.n, "T": sc.T, "replication": r["replication"], "seed": r["seed"], "chosen_d": r["chosen_d"]}
            row.update({f"dfd_{x['d']}": x["dfd_mean"] for x in r["candidates"]})
            rows.append(row)
    columns = ["n", "T", "replication", "seed", "chosen_d"] + [f"dfd_{d}" for d in range(1, c["d_max"] + 1)]
    paths = [
        write_rows(rows, out / "dfd_accuracy.csv", columns),
        write_json({"scenarios": results}, out / "dfd_accuracy.json"),
    ]
    return paths, failed


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "select": cmd_select,
    "summarize": cmd_summarize,
    "coverage": cmd_coverage,
    "dfd-accuracy": cmd_dfd_accuracy,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="bayescap", description="Bayesian covariate-assisted principal regression")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (created if missing)")
        p.add_argument("--jobs", type=int, help="worker processes (default: logical cores)")
        if name not in ("simulate", "summarize"):
            p.add_argument("--chains", type=int)
            p.add_argument("--warmup", type=int)
            p.add_argument("--draws", type=int, help="post-warmup draws per chain")
        if name in ("fit", "summarize"):
            p.add_argument("--bonferroni", action="store_true", help="Bonferroni-corrected loading intervals")
        if name in ("fit", "select"):
            p.add_argument("--signals", help="signals CSV (subject,t,y1..yp)")
            p.add_argument("--covariates", help="covariates CSV (subject,x1..xq)")
            p.add_argument("--ess-thin", action="store_true", help="thin each series to the effective sample size")
            p.add_argument("--thin-to", type=int, help="thin each series to this many time points")
        if name in ("fit", "select", "coverage", "dfd-accuracy"):
            p.add_argument("--d", type=int, help="components (fit, coverage) or largest candidate (select, dfd-accuracy)")
        if name in ("select", "dfd-accuracy"):
            p.add_argument("--cutoff", type=float, help=f"DfD cutoff (default {DEFAULT_CUTOFF})")
        if name in ("coverage", "dfd-accuracy"):
            p.add_argument("--replications", type=int)
            p.add_argument("--p", type=int)
        if name == "simulate":
            p.add_argument("--p", type=int)
            p.add_argument("--n", type=int)
            p.add_argument("--T", type=int)
            p.add_argument("--null", action="store_true", help="pure noise, no covariate effect")
        if name == "summarize":
            p.add_argument("--draws-dir", help="directory holding draws_chain*.csv")
    return parser


def run(command, cfg):
    """Run one command with a resolved config; returns the manifest dict."""
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    start = time.time()
    manifest = {
        "command": command,
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "versions": versions(),
        "argv": sys.argv[1:],
    }
    try:
        paths, failed = HANDLERS[command](cfg, out)
        manifest.update(status="failed" if failed else "ok", outputs=[str(p) for p in paths], failed=failed)
    except Exception as exc:
        manifest.update(status="error", error=f"{type(exc).__name__}: {exc}", outputs=[], failed=[])
        raise
    finally:
        manifest["wall_time_s"] = time.time() - start
        write_json(manifest, out / "manifest.json")
    return manifest


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args.command, args)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    except jsonschema.ValidationError as exc:
        where = "/".join(map(str, exc.absolute_path)) or "<root>"
        print(f"error: invalid config at {where}: {exc.message}", file=sys.stderr)
        return 2
    try:
        manifest = run(args.command, cfg)
    except (BayesCapError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if manifest["failed"]:
        seeds = ", ".join(str(f["seed"]) for f in manifest["failed"])
        print(f"error: {len(manifest['failed'])} replication(s) failed (seeds {seeds})", file=sys.stderr)
        return 1
    for p in manifest["outputs"]:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Every subcommand reads one YAML or JSON config file (``--config``), runs a
pipeline and writes ``<output>.json`` (full report), ``<output>.csv``
(tabular results) and ``<output>.timing.json`` (wall time only, kept apart so
the result files are reproducible byte for byte).

Exit codes: 0 success, 1 numerical failure, 2 invalid config.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import __version__
from .gaussian import GaussianModel, build_tree, limit_value, load_model, variance_schedule
from .mappings import OneStepMapping, ValuationSchedule
from .ordering import compare_filtrations, lemma_check
from .portfolio import (
    PortfolioModel,
    clt_scaling,
    convergence_experiment,
    gaussian_limit_of,
    simulate_many,
)
from .tree import backward_value, load_tree

SCHEMA_VERSION = 1

log = logging.getLogger("mpvaluation")


class ConfigError(Exception):
    """Invalid configuration; the message names the offending key."""


def _parse(key: str, fn: Callable, *args):
    try:
        return fn(*args)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, OSError) as err:
        detail = f"missing key {err}" if isinstance(err, KeyError) else str(err)
        raise ConfigError(f"{key}: {detail}") from None


def _require(cfg: dict, key: str):
    if key not in cfg or cfg[key] is None:
        raise ConfigError(f"{key}: required")
    return cfg[key]


def _resolve_path(base: Path, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config: file not found: {path}")
    text = path.read_text()
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as err:
        raise ConfigError(f"config: cannot parse {path}: {err}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    return data


# ---------------------------------------------------------------------------
# config sections
# ---------------------------------------------------------------------------


def _gaussian_section(cfg: dict, key: str, base: Path) -> GaussianModel:
    section = _require(cfg, key)
    if isinstance(section, str):
        section = {"path": section}
    if not isinstance(section, dict):
        raise ConfigError(f"{key}: expected a file path or a mapping")
    if "path" in section:
        p = _resolve_path(base, section["path"])
        if not p.exists():
            raise ConfigError(f"{key}.path: file not found: {p}")
        return _parse(f"{key}.path", load_model, p)
    for k in ("horizon", "cov"):
        if k not in section:
            raise ConfigError(f"{key}.{k}: required")
    T = _parse(f"{key}.horizon", int, section["horizon"])
    d = _parse(f"{key}.aux_dim", int, section.get("aux_dim", 0))
    mean = section.get("mean", np.zeros(T * (1 + d)).tolist())
    return _parse(key, GaussianModel, T, d, np.asarray(mean, dtype=float), np.asarray(section["cov"], dtype=float))


def _mapping(value, key: str) -> OneStepMapping:
    if not isinstance(value, dict):
        raise ConfigError(f"{key}: expected a mapping with a 'kind'")
    return _parse(key, OneStepMapping.from_dict, value)


def _schedule_section(value, key: str, horizon: int) -> ValuationSchedule:
    if isinstance(value, list):
        sched = ValuationSchedule(_mapping(m, f"{key}[{i}]") for i, m in enumerate(value))
    elif isinstance(value, dict) and "kind" in value:
        sched = ValuationSchedule.constant(_mapping(value, key), horizon)
    else:
        raise ConfigError(f"{key}: expected one mapping or a list of {horizon} mappings")
    if len(sched) != horizon:
        raise ConfigError(f"{key}: has {len(sched)} mappings, horizon is {horizon}")
    return sched


def _branching(cfg: dict, key: str, horizon: int) -> list[int]:
    value = _require(cfg, key)
    b = [value] * horizon if isinstance(value, int) else value
    if not isinstance(b, list) or len(b) != horizon or not all(isinstance(v, int) and v >= 1 for v in b):
        raise ConfigError(f"{key}: expected {horizon} positive integers")
    return b


def _seed(cfg: dict) -> int:
    seed = cfg.get("seed")
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 1 << 64:
        raise ConfigError("seed: expected an integer in [0, 2^64)")
    return seed


def _portfolio_section(cfg: dict) -> PortfolioModel:
    section = cfg.get("portfolio")
    if section is None or section == "default":
        return PortfolioModel.default()
    if not isinstance(section, dict):
        raise ConfigError("portfolio: expected a mapping or 'default'")
    return _parse("portfolio", PortfolioModel.from_dict, section)


def _model_dict(model: GaussianModel) -> dict:
    return {"horizon": model.horizon, "aux_dim": model.aux_dim, "mean": model.mean, "cov": model.cov}


# ---------------------------------------------------------------------------
# pipelines; each returns (resolved config, results, csv header, csv rows)
# ---------------------------------------------------------------------------


def run_value_tree(cfg: dict, base: Path, workers: int):
    p = _resolve_path(base, _require(cfg, "tree"))
    if not p.exists():
        raise ConfigError(f"tree: file not found: {p}")
    tree = _parse("tree", load_tree, p)
    sched = _schedule_section(_require(cfg, "schedule"), "schedule", tree.horizon)
    res = backward_value(tree, sched, workers)
    resolved = {"tree": str(cfg["tree"]), "schedule": sched.to_list()}
    results = {"v0": res.v0, "n_nodes": tree.n_nodes, "horizon": tree.horizon}
    rows = [
        [i, int(tree.depth[i]), tree.x[i], res.node_values[i], res.psi_values[i]] for i in range(tree.n_nodes)
    ]
    return resolved, results, ["id", "depth", "x", "value", "psi"], rows


def run_value_gaussian(cfg: dict, base: Path, workers: int):
    model = _gaussian_section(cfg, "model", base)
    sched = _schedule_section(_require(cfg, "schedule"), "schedule", model.horizon)
    vs = variance_schedule(model)
    v0 = limit_value(model, sched)
    resolved = {"model": _model_dict(model), "schedule": sched.to_list()}
    results = {"v0": v0, "deltas": vs.deltas, "total_variance": vs.total}
    if cfg.get("branching") is not None:
        b = _branching(cfg, "branching", model.horizon)
        seed = _seed(cfg)
        tree = build_tree(model, b, seed, workers)
        v_tree = backward_value(tree, sched, workers).v0
        resolved.update(branching=b, seed=seed)
        results.update(v0_tree=v_tree, relative_error=abs(v_tree - v0) / abs(v0) if v0 else None)
    phis = [m.normal_value() for m in sched]
    rows = [[t + 1, vs.deltas[t], vs.normalized()[t], phis[t]] for t in range(model.horizon)]
    return resolved, results, ["t", "delta", "normalized_delta", "phi_normal"], rows


def run_simulate(cfg: dict, base: Path, workers: int):
    model = _portfolio_section(cfg)
    n = _parse("exposure", int, _require(cfg, "exposure"))
    reps = _parse("replications", int, cfg.get("replications", 1000))
    if n < 1:
        raise ConfigError("exposure: must be a positive integer")
    if reps < 1:
        raise ConfigError("replications: must be a positive integer")
    seed = _seed(cfg)
    c, counts = simulate_many(model, n, seed, reps, workers)
    sc = clt_scaling(model, n)
    x = (c - sc.b_n) / sc.a_n
    limit = gaussian_limit_of(model, counts=False)
    resolved = {"portfolio": model.to_dict(), "exposure": n, "replications": reps, "seed": seed}
    results = {
        "a_n": sc.a_n,
        "b_n": sc.b_n,
        "mean_c": c.mean(axis=0),
        "mean_scaled": x.mean(axis=0),
        "cov_scaled": np.atleast_2d(np.cov(x, rowvar=False)) if reps > 1 else None,
        "cov_limit": limit.cov,
    }
    T = model.horizon
    header = ["n", "seed", "replication"] + [f"c_{t + 1}" for t in range(T)] + [f"counts_{t + 1}" for t in range(T)]
    rows = [[n, seed, r, *c[r], *counts[r]] for r in range(reps)]
    return resolved, results, header, rows


def run_converge(cfg: dict, base: Path, workers: int):
    model = _portfolio_section(cfg)
    exposures = _require(cfg, "exposures")
    if not isinstance(exposures, list) or not exposures or not all(isinstance(n, int) and n >= 1 for n in exposures):
        raise ConfigError("exposures: expected a list of positive integers")
    raw = _require(cfg, "schedules")
    if not isinstance(raw, dict) or not raw:
        raise ConfigError("schedules: expected a mapping from names to schedules")
    schedules = {str(k): _schedule_section(v, f"schedules.{k}", model.horizon) for k, v in raw.items()}
    b = _branching(cfg, "branching", model.horizon)
    reps = _parse("replications", int, cfg.get("replications", 5))
    if reps < 1:
        raise ConfigError("replications: must be a positive integer")
    counts = cfg.get("counts", True)
    if not isinstance(counts, bool):
        raise ConfigError("counts: expected true or false")
    particles = _parse("particles", int, cfg.get("particles", 64))
    seed = _seed(cfg)
    out = convergence_experiment(model, exposures, schedules, b, seed, reps, counts, particles, workers)
    resolved = {
        "portfolio": model.to_dict(),
        "exposures": sorted(exposures),
        "schedules": {k: v.to_list() for k, v in schedules.items()},
        "branching": b,
        "replications": reps,
        "counts": counts,
        "particles": particles,
        "seed": seed,
    }
    summary = {
        name: [{"n": p.n, "gap": p.gap, "std_error": p.std_error} for p in pts]
        for name, pts in out["points"].items()
    }
    results = {"summary": summary, "checks": out["checks"], "total_variance": out["total_variance"]}
    header = ["schedule", "n", "replication", "seed", "v0_c", "v0_x", "approximation", "a_n", "error", "sampling"]
    rows = [[r[k] for k in header] for r in out["rows"]]
    return resolved, results, header, rows


def run_compare(cfg: dict, base: Path, workers: int):
    model_F = _gaussian_section(cfg, "model_F", base)
    model_G = _gaussian_section(cfg, "model_G", base)
    mapping = _mapping(_require(cfg, "mapping"), "mapping")
    coords = cfg.get("f_coords")
    report = _parse("model_G", compare_filtrations, model_F, model_G, mapping, coords)
    resolved = {
        "model_F": _model_dict(model_F),
        "model_G": _model_dict(model_G),
        "mapping": mapping.to_dict(),
        "f_coords": coords,
    }
    rows = [[t + 1, report.deltas_F[t], report.deltas_G[t]] for t in range(model_F.horizon)]
    return resolved, report.to_dict(), ["t", "delta_F", "delta_G"], rows


def run_lemma(cfg: dict, base: Path, workers: int):
    c = _require(cfg, "c")
    if isinstance(c, str):
        c = _parse("c", lambda s: [float(v) for v in s.split(",")], c)
    step = _parse("step", float, _require(cfg, "step"))
    report = _parse("c", lemma_check, c, step)
    resolved = {"c": list(report.c), "step": step}
    rows = [["c", *report.c, report.c_objective], ["argmax", *report.argmax, report.max_found]]
    header = ["point"] + [f"d_{t + 1}" for t in range(len(report.c))] + ["objective"]
    return resolved, report.to_dict(), header, rows


COMMANDS = {
    "value-tree": run_value_tree,
    "value-gaussian": run_value_gaussian,
    "simulate": run_simulate,
    "converge": run_converge,
    "compare-filtrations": run_compare,
    "lemma-check": run_lemma,
}


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _jsonable(obj: Any):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else _jsonable(v) for v in row])
    return buf.getvalue()


def write_outputs(prefix: Path, command: str, resolved: dict, results: dict, header, rows, elapsed: float):
    prefix.parent.mkdir(parents=True, exist_ok=True)
    report = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "command": command,
        "config": resolved,
        "results": results,
    }
    Path(f"{prefix}.json").write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n")
    Path(f"{prefix}.csv").write_text(_csv_text(header, rows))
    Path(f"{prefix}.timing.json").write_text(json.dumps({"wall_time_seconds": elapsed}) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpvaluation", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "lemma-check", help="YAML or JSON config file")
        p.add_argument("--workers", type=int, default=None, help="worker threads (results do not depend on it)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--output", default=None, help="output prefix; overrides the config 'output' key")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "lemma-check":
            p.add_argument("--c", default=None, help="comma separated profile, e.g. 0.5,0.3,0.2")
            p.add_argument("--step", type=float, default=None, help="grid step dividing 1")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else {}
        base = Path(args.config).resolve().parent if args.config else Path.cwd()
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.command == "lemma-check":
            if args.c is not None:
                cfg["c"] = args.c
            if args.step is not None:
                cfg["step"] = args.step
        workers = args.workers if args.workers is not None else cfg.get("workers", 1)
        if not isinstance(workers, int) or workers < 1:
            raise ConfigError("workers: expected a positive integer")
        out = args.output or cfg.get("output") or f"mpvaluation_{args.command.replace('-', '_')}"
        prefix = Path(out) if args.output else _resolve_path(base, out)
        start = time.perf_counter()
        resolved, results, header, rows = COMMANDS[args.command](cfg, base, workers)
        elapsed = time.perf_counter() - start
        resolved.setdefault("seed", cfg.get("seed"))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 1
    write_outputs(prefix, args.command, resolved, results, header, rows, elapsed)
    log.info("wrote %s.json and %s.csv", prefix, prefix)
    return 0


if __name__ == "__main__":
    sys.exit(main())

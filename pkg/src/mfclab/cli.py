"""Experiment orchestration: config parsing, dispatch, CSV/JSON artifacts.

Exit codes: 0 all hard-assert probes passed, 1 runtime failure or a failed
probe, 2 config error. CSV bodies are byte-stable across reruns of the same
config; timestamps live only in the manifest.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from datetime import datetime, timezone

import jsonschema
import numpy as np
import scipy

from . import __version__, verify
from .costs import cost_finite
from .hjb import GridSpec, required_time_steps, riccati_lq_value, solve_hjb
from .measures import _as_atoms
from .models import REGISTRY, model_from_json
from .mollify import (
    SmoothedFunctional,
    convexity_preservation_probe,
    default_test_family,
    functional_registry,
    lipschitz_preservation_probe,
    smooth_eval,
    uniform_convergence_probe,
)
from .simulate import (OpenLoopSchedule, SimConfig, ZeroControl, dump_trajectories,
                       path_statistics, simulate_particles)

PROBES = (
    "convexity-preservation",
    "cost-identity",
    "duplication-consistency",
    "feedback-roundtrip",
    "lipschitz-preservation",
    "permutation-invariance",
    "time-holder",
    "uniform-convergence",
)

_MODEL_SCHEMA = {
    "type": "object",
    "oneOf": [
        {"required": ["registry"]},
        {"required": ["d", "d_prime", "b", "sigma", "l1", "kappa", "UT"]},
    ],
    "properties": {
        "registry": {"type": "string"},
        "name": {"type": "string"},
        "d": {"type": "integer", "minimum": 1},
        "d_prime": {"type": "integer", "minimum": 1},
        "b": {"type": "array", "items": {"type": "string"}},
        "sigma": {"type": "array", "items": {"type": "array", "items": {"type": "string"}}},
        "l1": {"type": "string"},
        "kappa": {"type": "number", "exclusiveMinimum": 0},
        "UT": {"type": "string"},
        "is_affine_lift": {"type": "boolean"},
        "lift_convex": {"type": "boolean"},
    },
    "additionalProperties": False,
}

_SIM_SCHEMA = {
    "type": "object",
    "required": ["t0", "T", "steps", "n_paths"],
    "properties": {
        "t0": {"type": "number"},
        "T": {"type": "number"},
        "steps": {"type": "integer", "minimum": 1},
        "n_paths": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

_GRID_SCHEMA = {
    "type": "object",
    "required": ["axes"],
    "properties": {
        "axes": {
            "type": "array",
            "minItems": 1,
            "maxItems": 3,
            "items": {
                "type": "array",
                "minItems": 3,
                "maxItems": 3,
                "items": {"type": "number"},
            },
        },
        "time_steps": {"type": "integer", "minimum": 1},
        "margin": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["kind", "seed"],
    "properties": {
        "kind": {"enum": ["simulate", "solve-hjb", "verify", "mollify", "sweep"]},
        "seed": {"type": "integer", "minimum": 0},
        "model": _MODEL_SCHEMA,
        "sim": _SIM_SCHEMA,
        "grid": _GRID_SCHEMA,
        "horizon": {
            "type": "object",
            "required": ["t0", "T"],
            "properties": {"t0": {"type": "number"}, "T": {"type": "number"}},
            "additionalProperties": False,
        },
        "x0": {"type": "array"},
        "n": {"type": "integer", "minimum": 1},
        "r": {"type": "number", "minimum": 1, "maximum": 2},
        "probes": {"type": "array", "items": {"type": "object"}},
        "k_list": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "mollify": {"type": "object"},
        "sweep": {"type": "object"},
        "out_dir": {"type": "string"},
        "dump_cadence": {"type": "integer", "minimum": 1},
        "dump_trajectories": {"type": "boolean"},
    },
    "additionalProperties": False,
}


class ConfigError(Exception):
    pass


def _atomic_write(path: str, data: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: str, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    w.writerows(rows)
    _atomic_write(path, buf.getvalue())


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            raw = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON at byte offset {e.pos}: {e.msg}") from e
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"config schema violation at {e.json_path}: {e.message}") from e
    return cfg


def _grid_from_config(block: dict, model, n, horizon) -> GridSpec:
    axes = tuple(tuple(a) for a in block["axes"])
    margin = block.get("margin", 0.25)
    if "time_steps" in block:
        return GridSpec(axes=axes, time_steps=block["time_steps"], margin=margin)
    probe = GridSpec(axes=axes, time_steps=1, margin=margin)
    steps = required_time_steps(model, n, probe, horizon[0], horizon[1])
    return GridSpec(axes=axes, time_steps=steps, margin=margin)


def _run_simulate(cfg, out_dir):
    model = model_from_json(cfg["model"])
    sim = SimConfig(seed=cfg["seed"], **cfg["sim"])
    x0 = _as_atoms(np.asarray(cfg["x0"], dtype=np.float64))
    bundle = simulate_particles(model, sim, x0, ZeroControl())
    if cfg.get("dump_trajectories", False):
        dump_trajectories(bundle, os.path.join(out_dir, "trajectories.csv"))
    stats = path_statistics(bundle, cfg.get("r", 2.0))
    rows = [[k, repr(v[0]), repr(v[1])] if isinstance(v, tuple) else [k, repr(v), ""]
            for k, v in sorted(stats.items())]
    _write_csv(os.path.join(out_dir, "results.csv"), ["statistic", "value", "std_error"], rows)
    est = cost_finite(model, sim, x0, ZeroControl())
    summary = {"statistics": {k: list(v) if isinstance(v, tuple) else v for k, v in stats.items()},
               "zero_control_cost": {"mean": est.mean, "std_error": est.std_error}}
    return summary, []


def _run_solve(cfg, out_dir):
    model = model_from_json(cfg["model"])
    n = cfg.get("n", 1)
    horizon = (cfg["horizon"]["t0"], cfg["horizon"]["T"]) if "horizon" in cfg else (0.0, 1.0)
    grid = _grid_from_config(cfg["grid"], model, n, horizon)
    u = solve_hjb(model, n, grid, horizon[0], horizon[1])
    cadence = cfg.get("dump_cadence", 1)
    rows = []
    for k in range(0, u.values.shape[0], cadence):
        flat = u.values[k].reshape(-1)
        for idx in range(flat.size):
            rows.append([k, idx, repr(float(flat[idx]))])
    _write_csv(os.path.join(out_dir, "results.csv"), ["slice", "node_index", "value"], rows)
    sidecar = {"grid": grid.to_json(), "model": model.name, "n": n,
               "t0": horizon[0], "T": horizon[1], "dump_cadence": cadence,
               "stored_times": u.times.tolist()}
    _atomic_write(os.path.join(out_dir, "grid.json"),
                  json.dumps(sidecar, indent=2, sort_keys=True))
    summary = {
        "grid": grid.to_json(),
        "stored_times": u.times.tolist(),
        "value_at_origin": u.value_at(horizon[0], np.zeros(len(grid.axes))),
    }
    if "x0" in cfg:
        pt = np.asarray(cfg["x0"], dtype=np.float64).reshape(-1)
        summary["value_at_x0"] = u.value_at(horizon[0], pt)
        if model.name == "LQ-decoupled":
            summary["riccati_value_at_x0"] = riccati_lq_value(
                1.0, model.kappa, horizon[1], horizon[0], pt.reshape(n, model.d),
                rk_steps=10 * grid.time_steps)
    return summary, []


def _verify_probe(spec, cfg):
    model = model_from_json(spec.get("model", cfg.get("model", {"registry": "LQ-decoupled"})))
    kind = spec["probe"]
    seed = spec.get("seed", cfg["seed"])
    horizon = (spec.get("t0", 0.0), spec.get("T", 1.0))
    if kind == "cost-identity":
        sim = SimConfig(seed=seed, **spec["sim"])
        x0 = np.asarray(spec["x0"], dtype=np.float64)
        g = np.random.default_rng(seed)
        schedule = g.normal(size=(sim.steps,) + _as_atoms(x0).shape)
        return verify.cost_identity_check(model, sim, x0, OpenLoopSchedule(schedule),
                                          threshold=spec.get("threshold", 1e-12))
    if kind == "duplication-consistency":
        gs = _grid_from_config(spec["grid_small"], model, spec["base_n"], horizon)
        gb = _grid_from_config(spec["grid_big"], model, spec["base_n"] * spec["m"], horizon)
        pts = [np.asarray(p, dtype=np.float64) for p in spec["test_points"]]
        return verify.duplication_consistency(
            model, spec["base_n"], spec["m"], gs, gb, horizon[0], horizon[1], pts,
            threshold=spec.get("threshold", 2e-2))
    if kind == "feedback-roundtrip":
        n = spec.get("n", 1)
        grid = _grid_from_config(spec["grid"], model, n, horizon)
        u = solve_hjb(model, n, grid, horizon[0], horizon[1])
        sim = SimConfig(seed=seed, **spec["sim"])
        return verify.feedback_roundtrip(model, sim, np.asarray(spec["x0"], dtype=np.float64), u)
    if kind == "permutation-invariance":
        grid = _grid_from_config(spec["grid"], model, 2, horizon)
        u = solve_hjb(model, 2, grid, horizon[0], horizon[1])
        return verify.permutation_invariance_probe(u, threshold=spec.get("threshold", 1e-9))
    if kind == "time-holder":
        n = spec.get("n", 1)
        grid = _grid_from_config(spec["grid"], model, n, horizon)
        u = solve_hjb(model, n, grid, horizon[0], horizon[1],
                      max_stored_slices=grid.time_steps + 1)
        return verify.time_holder_probe(u, spec.get("r", 1.0))
    raise ConfigError(f"unknown verify probe {kind!r}")


def _run_verify(cfg, out_dir, jobs):
    probes = cfg.get("probes", [])
    if jobs > 1 and len(probes) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(lambda s: _verify_probe(s, cfg), probes))
    else:
        reports = [_verify_probe(s, cfg) for s in probes]
    return {"probes": [r.to_json() for r in reports]}, reports


def _run_mollify(cfg, out_dir):
    block = cfg.get("mollify", {})
    name = block.get("functional", "mean")
    base = functional_registry()[name]
    k_list = cfg.get("k_list", [4, 16, 64])
    seed = cfg["seed"]
    reports = []
    which = block.get("probes", ["lipschitz", "uniform", "convexity"])
    reps = block.get("mc_reps", 4000)
    if "lipschitz" in which:
        for k in k_list:
            reports.append(lipschitz_preservation_probe(base, k, reps, seed))
    if "uniform" in which:
        fam = default_test_family(seed=seed + 1)
        reports.append(uniform_convergence_probe(base, k_list, fam, reps, seed))
    if "convexity" in which:
        g = np.random.default_rng(seed + 2)
        segs = []
        for _ in range(block.get("segments", 6)):
            segs.append((g.uniform(-1, 1, 1), g.uniform(-1, 1, 1),
                         g.uniform(-2, 2, (4, 1)), g.uniform(-2, 2, (4, 1)),
                         float(g.uniform(0.2, 0.8))))
        reports.append(convexity_preservation_probe(base, k_list[0], reps, seed, segs))
    sf = SmoothedFunctional(base, k_list[-1], reps, seed)
    fam = default_test_family(count=3, seed=seed + 3)
    evals = [{"point": i, "estimate": list(smooth_eval(sf, x, a))} for i, (x, a) in enumerate(fam)]
    return {"probes": [r.to_json() for r in reports], "sample_evaluations": evals}, reports


def _run_sweep(cfg, out_dir):
    block = cfg["sweep"]
    model = model_from_json(cfg["model"])
    horizon = (cfg["horizon"]["t0"], cfg["horizon"]["T"]) if "horizon" in cfg else (0.0, 1.0)
    base = np.asarray(block["base_atoms"], dtype=np.float64)
    fams = {}
    for m in block.get("duplications", [1, 2]):
        arr = np.repeat(_as_atoms(base), m, axis=0)
        fams[arr.shape[0]] = arr
    mc_cfg = None
    if "sim" in block:
        mc_cfg = SimConfig(seed=cfg["seed"], **block["sim"])
    rows = verify.convergence_sweep(model, fams, tuple(block["grid_axis"]),
                                    horizon[0], horizon[1], mc_cfg=mc_cfg)
    csv_rows = [[r["n"], repr(r["value"]), repr(r["std_error"]), r["mode"],
                 "" if r["gap_to_previous"] is None else repr(r["gap_to_previous"])]
                for r in rows]
    _write_csv(os.path.join(out_dir, "results.csv"),
               ["n", "value", "std_error", "mode", "gap_to_previous"], csv_rows)
    return {"sweep": rows}, []


def _cmd_run(args) -> int:
    try:
        cfg = _load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg["seed"] = args.seed
    out_dir = args.out or cfg.get("out_dir", ".")
    os.makedirs(out_dir, exist_ok=True)
    try:
        kind = cfg["kind"]
        if kind == "simulate":
            summary, reports = _run_simulate(cfg, out_dir)
        elif kind == "solve-hjb":
            summary, reports = _run_solve(cfg, out_dir)
        elif kind == "verify":
            summary, reports = _run_verify(cfg, out_dir, args.jobs)
        elif kind == "mollify":
            summary, reports = _run_mollify(cfg, out_dir)
        else:
            summary, reports = _run_sweep(cfg, out_dir)
        if reports:
            buf = io.StringIO()
            write_reports_csv_to = os.path.join(out_dir, "results.csv")
            w = csv.writer(buf)
            w.writerow(["probe", "statistic", "threshold", "pass"])
            for r in reports:
                w.writerow([r.name, repr(r.statistic),
                            "" if r.threshold is None else repr(r.threshold),
                            "true" if r.passed else "false"])
            _atomic_write(write_reports_csv_to, buf.getvalue())
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure contract: exit 1 with diagnostic
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    _atomic_write(os.path.join(out_dir, "summary.json"),
                  json.dumps(summary, indent=2, sort_keys=True, default=float))
    manifest = {
        "config_sha256": hashlib.sha256(
            json.dumps(cfg, sort_keys=True).encode()).hexdigest(),
        "seed": cfg["seed"],
        "versions": {"mfclab": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__,
                     "python": ".".join(map(str, sys.version_info[:3]))},
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    _atomic_write(os.path.join(out_dir, "manifest.json"),
                  json.dumps(manifest, indent=2, sort_keys=True))
    if reports:
        if args.format == "json":
            print(json.dumps([r.to_json() for r in reports], indent=2, sort_keys=True))
        else:
            for r in reports:
                print(f"{r.name},{r.statistic!r},"
                      f"{'' if r.threshold is None else repr(r.threshold)},"
                      f"{'true' if r.passed else 'false'}")
    failed = [r.name for r in reports if not r.passed]
    if failed:
        print(f"failed probes: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _cmd_list(args) -> int:
    models = sorted(REGISTRY)
    functionals = sorted(functional_registry())
    probes = sorted(PROBES)
    if args.format == "json":
        print(json.dumps({"models": models, "functionals": functionals,
                          "probes": probes}, indent=2, sort_keys=True))
    else:
        print("models:")
        for m in models:
            print(f"  {m}")
        print("functionals:")
        for f in functionals:
            print(f"  {f}")
        print("probes:")
        for p in probes:
            print(f"  {p}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfclab",
        description="mean-field control numerics: simulate, solve, verify, mollify",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="execute an experiment config")
    runp.add_argument("--config", required=True, help="JSON experiment config")
    runp.add_argument("--out", default=None, help="output directory")
    runp.add_argument("--seed", type=int, default=None, help="override config seed")
    runp.add_argument("--jobs", type=int, default=1, help="concurrent probes")
    runp.add_argument("--format", choices=["csv", "json"], default="csv")
    runp.set_defaults(fn=_cmd_run)
    listp = sub.add_parser("list", help="print model and probe catalogs")
    listp.add_argument("--format", choices=["csv", "json"], default="csv")
    listp.set_defaults(fn=_cmd_list)
    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())

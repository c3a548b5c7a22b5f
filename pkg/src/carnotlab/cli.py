"""Command line entry: ``carnotlab run <config>``, ``carnotlab list``, ``carnotlab describe <experiment>``.

A config is a JSON object::

    {"experiment": "group-axioms", "group": "engel", "params": {}, "seed": 7, "outdir": "out"}

``group`` is a preset name, ``{"preset": name, ...params}`` or ``{"spec": path}``
(a stratification JSON file, relative to the config).  Several experiments
go in a ``runs`` list sharing the top-level ``seed`` and ``outdir``; each run
writes to its own ``outdir/NN-<experiment>`` directory and may override the
seed.  ``tolerances`` maps check keys to replacement values.

Exit codes: 0 all checks pass, 1 some check failed, 2 invalid config.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from . import group as G
from .experiments import (
    CATALOG,
    ExperimentError,
    catalog_listing,
    get_experiment,
    resolve_params,
    resolve_tolerances,
    run_experiment,
)

RUN_KEYS = {"experiment", "group", "params", "tolerances", "seed"}
TOP_KEYS = RUN_KEYS | {"runs", "outdir"}


class ConfigError(ValueError):
    pass


def load_group(spec, base: Path | None = None) -> G.CarnotGroup:
    if spec is None:
        raise ConfigError("group missing")
    if isinstance(spec, str):
        spec = {"preset": spec}
    if not isinstance(spec, dict):
        raise ConfigError(f"group must be a preset name or an object, got {spec!r}")
    spec = dict(spec)
    if "spec" in spec:
        path = Path(spec.pop("spec"))
        if base is not None and not path.is_absolute():
            path = base / path
        if spec:
            raise ConfigError(f"a spec-file group takes no other fields, got {sorted(spec)}")
        try:
            return G.build_group(G.StratificationSpec.from_json(path.read_text()))
        except OSError as err:
            raise ConfigError(f"cannot read group spec {path}: {err}") from err
        except (G.SpecError, KeyError, json.JSONDecodeError) as err:
            raise ConfigError(f"invalid group spec {path}: {err}") from err
    name = spec.pop("preset", None)
    if name is None:
        raise ConfigError("group object needs 'preset' or 'spec'")
    if name == "heisenberg":
        spec.setdefault("n", 1)
    try:
        return G.preset(name, **spec)
    except TypeError as err:
        raise ConfigError(f"bad parameters for preset {name!r}: {err}") from err


def normalize_config(cfg: dict, base: Path | None = None) -> list[dict]:
    """Validate a config and return one fully resolved run description per experiment.

    Every run is checked (experiment, group, parameters, tolerances) before
    anything executes.
    """
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if "outdir" not in cfg:
        raise ConfigError("outdir missing")
    if "runs" in cfg:
        if "experiment" in cfg:
            raise ConfigError("give either 'experiment' or 'runs', not both")
        runs = cfg["runs"]
        if not isinstance(runs, list) or not runs:
            raise ConfigError("runs must be a nonempty list")
    else:
        runs = [{k: cfg[k] for k in RUN_KEYS if k in cfg}]
    out = []
    for i, run in enumerate(runs):
        if not isinstance(run, dict):
            raise ConfigError(f"run {i} must be an object")
        bad = set(run) - RUN_KEYS
        if bad:
            raise ConfigError(f"run {i}: unknown keys {sorted(bad)}")
        seed = run.get("seed", cfg.get("seed"))
        if seed is None:
            raise ConfigError(f"run {i}: seed is mandatory")
        if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
            raise ConfigError(f"run {i}: seed must be a nonnegative integer, got {seed!r}")
        if "experiment" not in run:
            raise ConfigError(f"run {i}: experiment missing")
        try:
            exp = get_experiment(run["experiment"])
            group_spec = run.get("group", cfg.get("group", exp.default_group))
            g = load_group(group_spec, base)
            resolve_params(exp, g, run.get("params"))
            resolve_tolerances(exp, run.get("tolerances"))
        except (ExperimentError, G.SpecError) as err:
            raise ConfigError(f"run {i}: {err}") from err
        except ValueError as err:
            raise ConfigError(f"run {i}: {err}") from err
        out.append({
            "index": i,
            "experiment": exp.name,
            "group": group_spec,
            "params": run.get("params", {}),
            "tolerances": run.get("tolerances", {}),
            "seed": seed,
        })
    return out


def _execute(run: dict, outdir: str, base: str | None) -> dict:
    g = load_group(run["group"], Path(base) if base else None)
    outcome = run_experiment(run["experiment"], g, run["params"], run["seed"], run["tolerances"])
    target = Path(outdir) / f"{run['index']:02d}-{run['experiment']}"
    files = outcome.write(target)
    return {
        "experiment": run["experiment"],
        "group": g.name,
        "seed": run["seed"],
        "outdir": str(target),
        "files": [str(p.relative_to(target)) for p in files],
        "passed": outcome.passed,
        "checks": [c.to_dict() for c in outcome.checks],
    }


def run_config(path, parallel: int = 1, out=None) -> int:
    out = out or sys.stdout
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    base = path.parent
    runs = normalize_config(cfg, base)
    outdir = Path(cfg["outdir"])
    if not outdir.is_absolute():
        outdir = base / outdir
    outdir.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    if parallel > 1 and len(runs) > 1:
        with ProcessPoolExecutor(min(parallel, len(runs))) as ex:
            results = list(ex.map(_execute, runs, [str(outdir)] * len(runs), [str(base)] * len(runs)))
    else:
        results = [_execute(r, str(outdir), str(base)) for r in runs]
    manifest = {
        "toolkit": "carnotlab",
        "version": __version__,
        "config": cfg,
        "seeds": [r["seed"] for r in runs],
        "wall_clock": {
            "started": started.isoformat(),
            "seconds": round(time.perf_counter() - t0, 3),
        },
        "passed": all(r["passed"] for r in results),
        "runs": results,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for r in results:
        for c in r["checks"]:
            if not c["passed"]:
                rel = "<=" if c["kind"] == "max" else ">="
                print(f"FAIL {r['experiment']} {c['name']}: measured {c['measured']}, required {rel} "
                      f"{c['tolerance']} [{c['anchor']}]", file=out)
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['experiment']} ({r['group']}, seed {r['seed']}) -> {r['outdir']}",
              file=out)
    return 0 if manifest["passed"] else 1


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="carnotlab", description="Run seeded experiment campaigns on Carnot groups.")
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiments named in a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--parallel", type=int, default=1, metavar="N",
                       help="run independent entries in N worker processes")
    p_list = sub.add_parser("list", help="list the experiment catalog")
    p_list.add_argument("--json", action="store_true")
    p_desc = sub.add_parser("describe", help="show an experiment's parameters and tolerances")
    p_desc.add_argument("experiment")
    args = ap.parse_args(argv)

    if args.command == "list":
        if args.json:
            print(json.dumps(catalog_listing(), indent=2))
        else:
            width = max(len(n) for n in CATALOG)
            for e in catalog_listing():
                print(f"{e['name']:<{width}}  {e['anchor']}")
        return 0
    if args.command == "describe":
        try:
            print(get_experiment(args.experiment).describe())
        except ExperimentError as err:
            print(f"error: {err}", file=sys.stderr)
            return 2
        return 0
    try:
        return run_config(args.config, args.parallel)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Usage::

    python -m sacdrop <subcommand> --config run.ini [--seed N] [--out DIR] [--workers N]

Subcommands: ``simulate``, ``compare``, ``scalings``, ``exit-times``,
``droplet-dump``.  Configuration values may be overridden with environment
variables ``SACDROP_<SECTION>_<KEY>``.  Every run directory receives
``config.ini`` (the effective configuration), ``seeds.csv``, ``meta.json``
and the subcommand's reports.  On failure ``error.json`` is written and the
exit status is non-zero.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys

import numpy as np

from . import __version__, kernels
from .config import load, serialize
from .errors import ParseError, SacdropError, ValidationError
from .experiments import (
    EXPERIMENT_IDS,
    compare_paths,
    dump_json,
    exit_time_mc,
    nonincreasing_with_overlap,
    scaling_suite,
    write_exit_histogram,
)
from .manifold import residual_budget

SUBCOMMANDS = ("simulate", "compare", "scalings", "exit-times", "droplet-dump")


def build_parser():
    p = argparse.ArgumentParser(prog="sacdrop", description="Droplet dynamics under the stochastic "
                                "mass-conserving Allen-Cahn equation.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, metavar="PATH", help="configuration file")
        s.add_argument("--seed", type=int, default=None, metavar="N", help="base seed (overrides run.seed)")
        s.add_argument("--out", default=None, metavar="DIR", help="output directory (overrides run.out)")
        s.add_argument("--workers", type=int, default=None, metavar="N", help="worker processes")
    return p


def _versions():
    import scipy

    return {
        "sacdrop": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "kernel_backend": kernels.BACKEND,
    }


def _seed_rows(base, experiment, replicas):
    eid = EXPERIMENT_IDS[experiment]
    rows = []
    for exp_id, rep in replicas:
        ss = np.random.SeedSequence([int(base), int(exp_id), int(rep)])
        rows.append((experiment, exp_id, rep, base, int(ss.generate_state(1, np.uint64)[0])))
    return rows if rows else [(experiment, eid, 0, base, 0)]


def _write_seeds(path, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["experiment", "experiment_id", "replica", "base_seed", "first_state_word"])
        wr.writerows(rows)


def _meta(cfg, problem=None, extra=None):
    meta = {"versions": _versions(), "warnings": list(cfg.warnings)}
    if problem is not None:
        meta.update(
            grid_hash=problem.grid.grid_hash(),
            shape_hash=problem.curve.shape_hash(),
            n_nodes=problem.grid.n_nodes,
            boundary_length=problem.curve.length,
            domain_area=float(problem.grid.weights.sum()),
            residual_budget=residual_budget(problem.builder.build(problem.xi0)),
        )
        if problem.spec is not None:
            meta["noise"] = problem.spec.summary()
    if extra:
        meta.update(extra)
    return meta


# -- subcommands -----------------------------------------------------------------------
def cmd_simulate(cfg, out):
    from .spde import prepare, run

    problem = prepare(cfg)
    rec = run(cfg, problem=problem, replica=0, experiment_id=EXPERIMENT_IDS["simulate"], out_dir=out)
    rec.write_csv(os.path.join(out, "path.csv"))
    if problem.spec is not None:
        problem.spec.write_csv(os.path.join(out, "noise_modes.csv"))
    _write_seeds(os.path.join(out, "seeds.csv"),
                 _seed_rows(cfg.run.seed, "simulate", [(EXPERIMENT_IDS["simulate"], 0)]))
    mass = rec.column("mass")
    report = {
        "status": rec.status,
        "message": rec.message,
        "records": len(rec.rows),
        "mass_drift": float(np.max(np.abs(mass - mass[0]))) if mass.size else 0.0,
        "final": rec.rows[-1] if rec.rows else None,
        "checkpoints": [os.path.basename(c) for c in rec.checkpoints],
    }
    dump_json(os.path.join(out, "report.json"), report)
    dump_json(os.path.join(out, "meta.json"), _meta(cfg, problem))
    return 0 if rec.status == "ok" else 1


def cmd_compare(cfg, out):
    from .spde import prepare

    problem = prepare(cfg)
    rep = compare_paths(cfg, problem=problem)
    rep.write_csv(os.path.join(out, "compare.csv"))
    _write_seeds(os.path.join(out, "seeds.csv"),
                 _seed_rows(cfg.run.seed, "compare", [(EXPERIMENT_IDS["compare"], 0)]))
    dump_json(os.path.join(out, "report.json"), rep.summary)
    dump_json(os.path.join(out, "meta.json"), _meta(cfg, problem))
    return 0 if rep.summary["status"] == "ok" else 1


def cmd_scalings(cfg, out):
    from .geometry import build_boundary

    d = cfg.domain
    curve = build_boundary(d.shape_spec(), d.delta, d.resolution)
    sc = cfg.scalings
    rep = scaling_suite(sc.eps_list, curve, theta0=cfg.initial.theta0, h_over_eps=sc.h_over_eps,
                        enforce_upbound=sc.enforce_upbound, original_area=d.original_area(),
                        bulk_correction=cfg.model.bulk_correction)
    rep.write_csv(os.path.join(out, "scalings.csv"))
    _write_seeds(os.path.join(out, "seeds.csv"), _seed_rows(cfg.run.seed, "scalings", []))
    dump_json(os.path.join(out, "report.json"), rep.summary())
    dump_json(os.path.join(out, "meta.json"), _meta(cfg, None, {"shape_hash": curve.shape_hash()}))
    return 0


def cmd_exit_times(cfg, out):
    from .experiments import _exit_problem

    stats, info = exit_time_mc(cfg)
    problem = _exit_problem(cfg)
    n = cfg.exit.replicas
    seeds = [(300 + s.rung, j) for s in stats if s.amplitude > 0 for j in range(n)]
    _write_seeds(os.path.join(out, "seeds.csv"), _seed_rows(cfg.run.seed, "exit-times", seeds))
    write_exit_histogram(os.path.join(out, "exit_histogram.csv"), stats)
    with open(os.path.join(out, "exit_stats.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["rung", "eta0", "amplitude", "replicas", "exits", "failed", "probability", "wilson_lo",
                     "wilson_hi"])
        for s in stats:
            wr.writerow([s.rung, repr(s.eta0), repr(s.amplitude), s.replicas, s.exits, s.failed,
                         repr(s.probability), repr(s.wilson[0]), repr(s.wilson[1])])
    report = dict(info)
    report["rungs"] = [s.summary() for s in stats]
    report["nonincreasing"] = nonincreasing_with_overlap(stats)
    dump_json(os.path.join(out, "exit_stats.json"), report)
    dump_json(os.path.join(out, "meta.json"), _meta(cfg, problem))
    return 0


def cmd_droplet_dump(cfg, out):
    from .experiments import droplet_norms
    from .fields import write_field_binary, write_field_csv
    from .spde import prepare

    problem = prepare(cfg, need_modes=False)
    drop = problem.builder.build(problem.xi0)
    g = problem.grid
    for name in ("u", "du", "d2u", "d3u"):
        write_field_binary(os.path.join(out, f"droplet_{name}.sacf"), getattr(drop, name), g)
    if g.n_nodes <= 200_000:
        write_field_csv(os.path.join(out, "droplet_u.csv"), drop.u, g)
    report = {
        "xi": drop.xi,
        "rho": drop.rho,
        "h_cut": drop.h_cut,
        "mass_error": abs(g.mass(drop.u) - (g.weights.sum() - np.pi)),
        "norms": {k: float(v) for k, v in droplet_norms(drop).items()},
        "fd_error": drop.fd_error,
    }
    _write_seeds(os.path.join(out, "seeds.csv"), _seed_rows(cfg.run.seed, "droplet-dump", []))
    dump_json(os.path.join(out, "report.json"), report)
    dump_json(os.path.join(out, "meta.json"), _meta(cfg, problem))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "scalings": cmd_scalings,
    "exit-times": cmd_exit_times,
    "droplet-dump": cmd_droplet_dump,
}


def main(argv=None, env=None):
    args = build_parser().parse_args(argv)
    env = dict(os.environ) if env is None else env
    out = args.out
    try:
        cfg = load(args.config, env=env, subcommand=args.command)
        updates = {}
        if args.seed is not None:
            updates["seed"] = args.seed
        if args.out is not None:
            updates["out"] = args.out
        if args.workers is not None:
            updates["workers"] = args.workers
        if updates:
            cfg = cfg.replace(run=updates)
        if cfg.run.workers < 1:
            raise ValidationError([("workers", "workers must be >= 1")])
        out = cfg.run.out
        os.makedirs(out, exist_ok=True)
        stale = os.path.join(out, "error.json")
        if os.path.exists(stale):
            os.remove(stale)
        for w in cfg.warnings:
            print(w, file=sys.stderr)
        # the output location is left out so that reruns elsewhere are byte-identical
        with open(os.path.join(out, "config.ini"), "w") as fh:
            fh.write(serialize(cfg, exclude=("run.out",)))
        return COMMANDS[args.command](cfg, out)
    except (ParseError, ValidationError, SacdropError, OSError) as exc:
        payload = exc.to_dict() if isinstance(exc, SacdropError) else {"error": "io_error", "message": str(exc)}
        print(json.dumps(payload), file=sys.stderr)
        if out:
            try:
                os.makedirs(out, exist_ok=True)
                with open(os.path.join(out, "error.json"), "w") as fh:
                    json.dump(payload, fh, indent=2, sort_keys=True)
            except OSError:
                pass
        return 2 if isinstance(exc, (ParseError, ValidationError)) else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line interface.

Subcommands:
    enumerate   build a configuration space from a resource profile
    solve       compute the optimal fluid state with its certificate
    simulate    run one stochastic simulation
    fluid       integrate the deterministic dynamics
    experiment  sweep scales with replications, write report.json

Each subcommand reads a JSON config via --config.  Results go to the
directory named by --out (or the PACKING_SIM_OUT environment variable);
without one, the main JSON result is printed to stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config_space import ConfigSpaceError, space_from_dict, space_to_dict
from .fluid import integrate
from .optimizer import (
    Demand,
    NonconvergenceError,
    aggregate_objective,
    objective,
    solve_aggregate_optimum,
    solve_optimum,
)
from .harness import Experiment, run_experiment
from .simulator import (
    AltPlacement,
    SimConfig,
    run as run_simulation,
    write_snapshots_csv,
)

_OVERRIDES = ("seed", "alpha", "r", "mode", "discipline")


def _base_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", required=True, help="path to a JSON config file")
    p.add_argument("--out", default=None, help="output directory (default: stdout)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--mode", choices=("open", "closed"), default=None)
    p.add_argument("--discipline", default=None)
    return p


def _load(path: str) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object")
    return cfg


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    for name in _OVERRIDES:
        v = getattr(args, name, None)
        if v is not None:
            cfg[name] = v
    return cfg


def _space(cfg: dict):
    if "space" not in cfg:
        raise ValueError("config needs a 'space' entry")
    return space_from_dict(cfg["space"])


def _demand(cfg: dict) -> Demand:
    try:
        arrival = cfg["arrival"]
        service = cfg["service"]
    except KeyError as exc:
        raise ValueError(f"config needs an {exc.args[0]!r} entry") from None
    return Demand(np.asarray(arrival, dtype=float), np.asarray(service, dtype=float))


def _out_dir(args):
    out = args.out or os.environ.get("PACKING_SIM_OUT")
    if out:
        os.makedirs(out, exist_ok=True)
    return out


def _emit(obj: dict, out, filename: str):
    text = json.dumps(obj, sort_keys=True, indent=2)
    if out:
        path = os.path.join(out, filename)
        with open(path, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote {path}")
    else:
        print(text)


def _sparse_x(space, x) -> dict:
    return {
        ",".join(map(str, space.configs[t])): float(v)
        for t, v in enumerate(x)
        if v
    }


def _sim_config(cfg: dict, args) -> SimConfig:
    cfg = _apply_overrides(cfg, args)
    space = _space(cfg)
    demand = _demand(cfg)
    alt = cfg.get("alt_placement")
    if alt is not None:
        alt = AltPlacement(epsilon=alt["epsilon"], mix=alt.get("mix", 0.0))
    kwargs = {}
    for name in ("horizon", "burn_in", "sample_interval", "token_rate"):
        if cfg.get(name) is not None:
            kwargs[name] = float(cfg[name])
    return SimConfig(
        space=space,
        demand=demand,
        r=float(cfg.get("r", 1.0)),
        alpha=float(cfg.get("alpha", 1.0)),
        mode=cfg.get("mode", "closed"),
        discipline=cfg.get("discipline", "greedy-d"),
        seed=int(cfg.get("seed", 0)),
        alt_placement=alt,
        **kwargs,
    )


def cmd_enumerate(args) -> int:
    cfg = _load(args.config)
    space = _space(cfg)
    out = _out_dir(args)
    doc = space_to_dict(space)
    doc["num_configs"] = space.num_configs
    doc["num_edges"] = space.num_edges
    if space.has_aggregates:
        doc["num_classes"] = space.aggregates.num_classes
    _emit(doc, out, "space.json")
    return 0


def cmd_solve(args) -> int:
    cfg = _apply_overrides(_load(args.config), args)
    space = _space(cfg)
    demand = _demand(cfg)
    alpha = float(cfg.get("alpha", 1.0))
    tol = float(cfg.get("tol", 1e-9))
    state, cert = solve_optimum(space, demand, alpha, tol=tol)
    doc = {
        "x": _sparse_x(space, state.x),
        "eta": [float(v) for v in cert.eta],
        "kkt_residual": float(cert.residual),
        "objective": objective(state),
        "alpha": alpha,
    }
    if space.has_aggregates:
        agg_state, agg_value = solve_aggregate_optimum(space, demand, alpha)
        doc["aggregate"] = {
            "x": _sparse_x(space, agg_state.x),
            "objective": float(agg_value),
        }
    _emit(doc, _out_dir(args), "solution.json")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load(args.config)
    config = _sim_config(cfg, args)
    xstar = None
    phistar = None
    try:
        state, _cert = solve_optimum(config.space, config.demand, config.alpha)
        xstar = state.x
        if config.space.has_aggregates:
            agg_state, _gap = solve_aggregate_optimum(
                config.space, config.demand, config.alpha
            )
            phistar = aggregate_objective(config.space, agg_state)
    except NonconvergenceError:
        pass  # summary simply omits distance-to-optimum fields
    result = run_simulation(config, xstar=xstar, phistar=phistar)
    out = _out_dir(args)
    if out:
        write_snapshots_csv(config.space, result.snapshots, os.path.join(out, "snapshots.csv"))
        print(f"wrote {os.path.join(out, 'snapshots.csv')}")
    _emit(result.summary, out, "summary.json")
    return 0


def cmd_fluid(args) -> int:
    cfg = _apply_overrides(_load(args.config), args)
    space = _space(cfg)
    demand = _demand(cfg)
    alpha = float(cfg.get("alpha", 1.0))
    horizon = args.T if args.T is not None else float(cfg.get("horizon", 50.0))
    dt = args.dt if args.dt is not None else float(cfg.get("dt", 1e-3))
    x0_raw = json.loads(args.x0) if args.x0 is not None else cfg.get("x0")
    if x0_raw is None:
        x0 = np.zeros(space.num_configs)
        rho = demand.rho
        for i in range(space.num_types):
            x0[space.unit_index[i]] = rho[i]
    elif isinstance(x0_raw, dict):
        x0 = np.zeros(space.num_configs)
        for key, v in x0_raw.items():
            k = tuple(int(s) for s in str(key).split(","))
            x0[space.config_index(k)] = float(v)
    else:
        x0 = np.asarray(x0_raw, dtype=float)
    traj = integrate(space, x0, demand, alpha, horizon=horizon, dt=dt)
    out = _out_dir(args)
    if out:
        import csv

        path = os.path.join(out, "trajectory.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "x", "objective"])
            for t, x, f in zip(traj.times, traj.states, traj.objective_values):
                w.writerow([t, json.dumps(_sparse_x(space, x), sort_keys=True), f])
        print(f"wrote {path}")
    doc = {
        "final_t": float(traj.times[-1]),
        "final_x": _sparse_x(space, traj.final),
        "final_objective": float(traj.objective_values[-1]),
        "steps": len(traj.times) - 1,
    }
    _emit(doc, out, "fluid.json")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load(args.config)
    base = _sim_config(cfg, args)
    out = _out_dir(args)
    exp = Experiment(
        base=base,
        r_grid=cfg.get("r_grid", []),
        replications=int(cfg.get("replications", 1)),
        metrics=cfg.get("metrics"),
        output_dir=out,
    )
    report = run_experiment(exp, workers=int(cfg.get("workers", 1)))
    _emit(report, out, "report.json")
    failed = report["partial"] or any(
        v["decreasing"] is False for v in report["verdicts"].values()
    )
    for m, v in sorted(report["verdicts"].items()):
        print(f"verdict {m}: decreasing={v['decreasing']}")
    if args.check and failed:
        return 2
    return 0


def main(argv=None) -> int:
    base = _base_parser()
    parser = argparse.ArgumentParser(
        prog="packing-sim",
        description="simulation and optimization of service systems with packing constraints",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("enumerate", parents=[base]).set_defaults(func=cmd_enumerate)
    sub.add_parser("solve", parents=[base]).set_defaults(func=cmd_solve)
    sub.add_parser("simulate", parents=[base]).set_defaults(func=cmd_simulate)
    pf = sub.add_parser("fluid", parents=[base])
    pf.add_argument("--T", type=float, default=None, help="integration horizon")
    pf.add_argument("--dt", type=float, default=None, help="step size")
    pf.add_argument("--x0", default=None, help="start state as JSON (list or {\"k\": v} map)")
    pf.set_defaults(func=cmd_fluid)
    pe = sub.add_parser("experiment", parents=[base])
    pe.add_argument("--check", action="store_true",
                    help="exit 2 unless every monotonicity verdict holds")
    pe.set_defaults(func=cmd_experiment)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, ConfigSpaceError, NonconvergenceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

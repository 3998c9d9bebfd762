"""Command-line entry point: ``levykr <subcommand> --config <path> [--seed S] [--out dir]``."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import analysis as an
from . import coefficients as co
from . import fpe
from . import rng as _rng
from .errors import LevyKRError
from .experiments import (JUMP_PRESETS, LAW_PRESETS, ExperimentConfig, mollified_field,
                          run_experiment, write_verdicts)
from .jumps import JumpMeasure
from .measure import DiscreteMeasure, InitialLaw
from .sde import SimConfig, simulate
from .transport import CostSpec, distance_report


def _load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _resolve(table, value, build):
    if isinstance(value, dict):
        return build(value)
    if value not in table:
        raise LevyKRError(f"unknown preset {value!r}")
    return build(table[value])


def _nu(cfg):
    return _resolve(JUMP_PRESETS, cfg.get("jump_measure", "annulus"), JumpMeasure.from_dict)


def _law(cfg):
    return _resolve(LAW_PRESETS, cfg.get("initial_law", "gaussian"), InitialLaw.from_dict)


def _field(cfg, nu):
    name = cfg.get("coefficients", "well")
    kwargs = dict(cfg.get("coefficient_params", {}))
    if name != "kink":
        kwargs.setdefault("dim", nu.dim)
    return co.preset(name, **kwargs)


def _out(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def load_measure(path):
    """A measure CSV (x_1..x_d, weight) or a bare point CSV (x_1..x_d, uniform weights)."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
    if header and header[-1] == "weight":
        return DiscreteMeasure.from_csv(path)
    cols = [i for i, h in enumerate(header) if h.startswith("x_")]
    if not cols:
        raise LevyKRError(f"{path}: no x_k columns")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)[:, cols]
    return DiscreteMeasure(data, np.full(len(data), 1.0 / len(data)))


# ------------------------------------------------------------------ subcommands

def cmd_simulate(args):
    cfg = _load_config(args.config)
    nu = _nu(cfg)
    sim = {k: cfg[k] for k in ("horizon", "dt", "particles", "record_times", "safety_box")
           if k in cfg}
    sim["seed"] = args.seed if args.seed is not None else cfg.get("seed", 0)
    traj = simulate(SimConfig.from_dict(sim), _field(cfg, nu), nu, _law(cfg))
    path = _out(args, "trajectory.csv")
    traj.to_csv(path)
    print(f"wrote {path}; escaped particles: {traj.n_escaped}")
    return 0


def cmd_distance(args):
    mu, nu = load_measure(args.first), load_measure(args.second)
    solver = "exact" if args.exact else "entropic" if args.entropic else "auto"
    rep = distance_report(mu, nu, CostSpec(args.cost, args.delta), solver, args.reg)
    print(",".join(["value", "solver", "gap", "wall_time"]))
    print(",".join(rep.csv_row()))
    return 0


def cmd_fpe(args):
    cfg = _load_config(args.config)
    nu = _nu(cfg)
    coeffs = _field(cfg, nu)
    L, h = float(cfg.get("L", 4.0)), float(cfg.get("h", 1.0 / 128))
    rho0 = fpe.DensityGrid.from_law(_law(cfg), L, h)
    fc = fpe.FpeConfig.from_dict({k: cfg[k] for k in ("horizon", "dt", "order", "cfl",
                                                      "record_times") if k in cfg})
    traj = fpe.solve(rho0, coeffs, nu, fc)
    path = _out(args, "density.csv")
    traj.to_csv(path)
    print(f"wrote {path}; escaped mass: {traj.escaped:.3g}")
    return 0


def cmd_mollify(args):
    cfg = _load_config(args.config)
    nu = _nu(cfg)
    base = _field({"coefficients": "kink", **cfg}, nu)
    L, h = float(cfg.get("L", 4.0)), float(cfg.get("h", 1.0 / 256))
    grid = an.AnalysisGrid(L=L, h=h, d=1, horizon=float(cfg.get("horizon", 1.0)))
    spec = an.NormSpec(p=float(cfg.get("p", 2.0)), q=1.0, horizon=grid.horizon)
    path = _out(args, "mollify.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "eps", "delta_n", "drift_gap", "jump_gap2", "jump_gap4"])
        for n in cfg.get("levels", [4, 8, 16, 32]):
            other = mollified_field(base, int(n), L, h)
            g = an.coefficient_gaps(base, other, nu, spec, grid)
            dn = g.drift + g.jump2 ** 0.5 + g.jump4 ** 0.25
            w.writerow([int(n), repr(1.0 / n), repr(dn), repr(g.drift), repr(g.jump2),
                        repr(g.jump4)])
    print(f"wrote {path}")
    return 0


def cmd_terms(args):
    cfg = _load_config(args.config)
    nu = _nu(cfg)
    base = _field(cfg, nu)
    other = co.perturbed(base, drift_amp=float(cfg.get("drift_amp", 0.0)),
                         jump_amp=float(cfg.get("jump_amp", 0.0)))
    grid = an.AnalysisGrid(L=float(cfg.get("L", 4.0)), h=float(cfg.get("h", 1.0 / 256)),
                           d=nu.dim, horizon=float(cfg.get("horizon", 1.0)))
    spec = an.NormSpec(p=float(cfg.get("p", 2.0)), q=1.0, horizon=grid.horizon)
    rho = cfg.get("rho_bounds", [1.0, 1.0])
    rep = an.theorem_terms(base, other, nu, rho, float(cfg.get("delta", 0.1)),
                           float(cfg.get("initial_distance", 0.0)), spec, grid)
    path = _out(args, "terms.csv")
    rep.to_csv(path)
    print(f"wrote {path}")
    return 0


def _experiment_configs(raw, seed):
    items = raw.get("experiments", [raw]) if isinstance(raw, dict) else raw
    out = []
    for item in items:
        item = dict(item)
        if seed is not None:
            n = len(item.get("seeds", ExperimentConfig.from_dict(item).seeds))
            item["seeds"] = _rng.seed_ladder(seed, n)
        out.append(ExperimentConfig.from_dict(item))
    return out


def cmd_validate(args):
    raw = _load_config(args.config)
    if not raw:
        raise LevyKRError("validate needs --config")
    ok = True
    summary = []
    for cfg in _experiment_configs(raw, args.seed):
        rep = run_experiment(cfg)
        rep.write(args.out)
        for v in rep.verdicts:
            print(f"{'PASS' if v.passed else 'FAIL'} {cfg.kind}: {v.name} ({v.detail})")
        summary.extend(rep.verdicts)
        ok &= rep.passed
    write_verdicts(_out(args, "verdicts.csv"), summary)
    return 0 if ok else 1


def build_parser():
    p = argparse.ArgumentParser(prog="levykr", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="JSON config file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed(s)")
        sp.add_argument("--out", default=".", help="output directory")

    common(sub.add_parser("simulate", help="simulate a particle ensemble"))
    d = sub.add_parser("distance", help="log-cost distance between two measure CSVs")
    d.add_argument("first")
    d.add_argument("second")
    d.add_argument("--cost", choices=("tilde", "plain"), default="tilde")
    d.add_argument("--delta", type=float, default=1.0)
    d.add_argument("--reg", type=float, default=None, help="entropic regularization")
    g = d.add_mutually_exclusive_group()
    g.add_argument("--exact", action="store_true")
    g.add_argument("--entropic", action="store_true")
    common(d)
    common(sub.add_parser("fpe", help="solve the 1-d Fokker-Planck equation on a grid"))
    common(sub.add_parser("mollify", help="delta_n along a mollification ladder"))
    common(sub.add_parser("terms", help="bound terms for a coefficient pair"))
    common(sub.add_parser("validate", help="run validation experiments"), True)
    return p


COMMANDS = {"simulate": cmd_simulate, "distance": cmd_distance, "fpe": cmd_fpe,
            "mollify": cmd_mollify, "terms": cmd_terms, "validate": cmd_validate}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (LevyKRError, OSError, ValueError, KeyError) as exc:
        print(f"levykr: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

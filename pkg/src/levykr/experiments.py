"""Configuration-driven validation experiments.

Each ``run_*`` function returns an ExperimentReport. Rows are reproducible
from (config, seed); verdicts are a pure function of the rows and the config
(``verdicts_from_rows``), so stored reports can be re-judged.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from . import analysis as an
from . import coefficients as co
from . import fpe
from . import rng as _rng
from .errors import ConfigurationError, HypothesisViolation
from .jumps import JumpMeasure
from .measure import DiscreteMeasure, InitialLaw, empirical_measure, weak_gap
from .sde import SimConfig, coupled_simulate, moment_diagnostics, simulate
from .transport import CostSpec, distance_report, remark_relations_check

KINDS = ("validate-scaling", "mollify-sweep", "superposition-check", "moment-check",
         "relations-check")

SCALING_NOTE = ("verdicts check scaling and boundedness of the stability estimate, "
                "not the inequality itself: its constants are not known explicitly")

JUMP_PRESETS = {
    "annulus": {"dim": 1, "alpha": 1.0, "inner_cutoff": 0.1, "outer_cutoff": 1.0},
    "annulus-2d": {"dim": 2, "alpha": 1.0, "inner_cutoff": 0.1, "outer_cutoff": 1.0},
    "one-sided": {"dim": 1, "alpha": 1.0, "inner_cutoff": 0.5, "outer_cutoff": 1.0,
                  "sign_mode": "one-sided"},
}

LAW_PRESETS = {
    "gaussian": {"kind": "gaussian", "mean": 0.0, "std": 0.5},
    "gaussian-2d": {"kind": "gaussian", "mean": [0.0, 0.0], "std": 0.5},
    "origin": {"kind": "dirac", "loc": 0.0},
    "unit-point": {"kind": "dirac", "loc": 1.0},
    "uniform": {"kind": "uniform-box", "low": -1.0, "high": 1.0},
}

# per-kind overrides of the ExperimentConfig defaults
KIND_DEFAULTS = {
    "mollify-sweep": {"coefficients": "kink"},
    "superposition-check": {"delta": 0.05, "dt": 1.0 / 256, "record_count": 1},
    "moment-check": {"dt_ladder": (0.01, 0.005)},
    "relations-check": {"particles": 256, "seeds": (0,)},
}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    coefficients: str = "well"
    jump_measure: str = "annulus"
    initial_law: str = "gaussian"
    particles: int = 4096
    dt: float = 0.01
    horizon: float = 1.0
    record_count: int = 5
    seeds: tuple = tuple(range(10))
    delta: float = 0.1
    p: float = 2.0
    ot_batch: int = 512
    amplitudes: tuple = (0.0, 0.1, 0.2, 0.4)
    ladders: tuple = ("drift", "jump")
    mollify_levels: tuple = (4, 8, 16, 32)
    grid_L: float = 4.0
    grid_h: float = 1.0 / 256
    refinement: tuple = ((256, 1.0 / 64), (1024, 1.0 / 128), (4096, 1.0 / 256))
    fpe_courant: float = 0.125
    dt_ladder: tuple = (0.01, 0.005)
    relation_pairs: int = 100
    relation_points: int = 32
    relation_deltas: tuple = (0.05, 0.2, 1.0)
    workers: int = 1
    output: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}")
        if self.coefficients not in co.PRESETS:
            raise ConfigurationError(f"unknown coefficient preset {self.coefficients!r}")
        if self.jump_measure not in JUMP_PRESETS:
            raise ConfigurationError(f"unknown jump measure preset {self.jump_measure!r}")
        if self.initial_law not in LAW_PRESETS:
            raise ConfigurationError(f"unknown initial law preset {self.initial_law!r}")
        for name in ("seeds", "amplitudes", "ladders", "mollify_levels", "dt_ladder",
                     "relation_deltas"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "refinement",
                           tuple((int(n), float(h)) for n, h in self.refinement))
        if not self.seeds:
            raise ConfigurationError("need at least one seed")
        if self.particles < 1 or self.ot_batch < 1 or self.record_count < 1:
            raise ConfigurationError("particles, ot_batch and record_count must be positive")
        if not self.delta > 0 or not self.p > 1:
            raise ConfigurationError("need delta > 0 and p > 1")
        if any(a < 0 for a in self.amplitudes):
            raise ConfigurationError("amplitudes must be nonnegative")
        if any(lad not in ("drift", "jump") for lad in self.ladders):
            raise ConfigurationError("ladders must be 'drift' or 'jump'")
        if any(int(n) < 1 for n in self.mollify_levels):
            raise ConfigurationError("mollification levels must be positive integers")

    @classmethod
    def from_dict(cls, spec):
        spec = dict(spec)
        kind = spec.get("kind")
        if kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {kind!r}")
        known = {f.name for f in fields(cls)}
        extra = set(spec) - known
        if extra:
            raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
        merged = dict(KIND_DEFAULTS.get(kind, {}))
        merged.update(spec)
        return cls(**merged)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        out = asdict(self)
        out.pop("workers")
        out.pop("output")
        return out

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    # -- resolved objects
    def nu(self):
        return JumpMeasure.from_dict(JUMP_PRESETS[self.jump_measure])

    def law(self):
        return InitialLaw.from_dict(LAW_PRESETS[self.initial_law])

    def base_field(self):
        dim = self.nu().dim
        if self.coefficients == "kink":
            return co.preset("kink")
        return co.preset(self.coefficients, dim=dim)

    def record_times(self):
        k = self.record_count
        return tuple(self.horizon * (i + 1) / k for i in range(k))

    def sim(self, seed, dt=None, particles=None):
        return SimConfig(horizon=self.horizon, dt=dt or self.dt,
                         particles=particles or self.particles, seed=int(seed),
                         record_times=self.record_times())


@dataclass(frozen=True)
class Verdict:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentReport:
    kind: str
    columns: tuple
    rows: list
    verdicts: list
    provenance: dict
    notes: tuple = ()
    attachments: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(v.passed for v in self.verdicts)

    def header_lines(self):
        lines = [f"experiment: {self.kind}"] + list(self.notes)
        lines.append("provenance: " + json.dumps(self.provenance, sort_keys=True, default=list))
        return lines

    def write(self, out_dir):
        """Write ``<kind>.csv`` (rows) and ``<kind>_verdicts.csv``; return their paths."""
        os.makedirs(out_dir, exist_ok=True)
        rows_path = os.path.join(out_dir, f"{self.kind}.csv")
        with open(rows_path, "w", newline="") as fh:
            for line in self.header_lines():
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([_fmt(v) for v in r])
        ver_path = os.path.join(out_dir, f"{self.kind}_verdicts.csv")
        write_verdicts(ver_path, self.verdicts)
        for name, meas in sorted(self.attachments.items()):
            meas.to_csv(os.path.join(out_dir, name))
        return rows_path, ver_path


def write_verdicts(path, verdicts):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["verdict", "passed", "detail"])
        for v in verdicts:
            w.writerow([v.name, "pass" if v.passed else "fail", v.detail])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _parse(v):
    if v in ("True", "False"):
        return v == "True"
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


def read_rows(path):
    """(columns, rows) of a report CSV written by ExperimentReport.write."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    columns = tuple(next(reader))
    return columns, [tuple(_parse(v) for v in r) for r in reader]


def _fan_out(func, tasks, workers):
    """Map ``func`` over ``tasks``; results come back in task order for any worker count."""
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks))


def _provenance(cfg, fields_=()):
    out = {"version": __version__, "config": cfg.digest(), "seeds": list(cfg.seeds),
           "jump_measure": JUMP_PRESETS[cfg.jump_measure],
           "initial_law": LAW_PRESETS[cfg.initial_law]}
    for f in fields_:
        out[f"field:{f.name}"] = f.fingerprint
    return out


# ------------------------------------------------------------------ distances

def ensemble_distance(x, y, delta, batch):
    """Exact D~_delta between the empirical laws of x and y, averaged over blocks.

    Rows of x and y are split into aligned consecutive blocks of ``batch``
    particles and the exact distance of each block pair is averaged. With
    ``batch >= len(x)`` this is the exact distance of the full ensembles.
    """
    spec = CostSpec("tilde", delta)
    n = len(x)
    b = min(int(batch), n)
    vals = []
    for s in range(0, n - b + 1, b):
        mu = empirical_measure(x[s:s + b])
        nu = empirical_measure(y[s:s + b])
        vals.append(distance_report(mu, nu, spec).value)
    return float(np.mean(vals))


def coupling_cost(x, y, delta):
    """E log(1 + |Y1 - Y2|^2 / delta^2) under the simulated coupling; bounds D~ above."""
    return float(np.mean(np.log1p(np.sum((x - y) ** 2, axis=1) / delta ** 2)))


# ------------------------------------------------------------------ validate-scaling

SCALING_COLUMNS = ("ladder", "amplitude", "seed", "time", "kr_tilde", "coupling_cost",
                   "weak_gap", "term_b", "term_g2", "term_g4", "bound_bracket")


def _scaled_field(cfg, ladder, amp):
    base = cfg.base_field()
    if amp == 0:
        return base
    if ladder == "drift":
        return co.perturbed(base, drift_amp=amp)
    return co.perturbed(base, jump_amp=amp)


def _scaling_task(task):
    cfg, ladder, amp, seed = task
    base = cfg.base_field()
    other = _scaled_field(cfg, ladder, amp)
    pair = coupled_simulate(cfg.sim(seed), base, other, cfg.nu(), cfg.law())
    out = []
    for t in pair.times:
        x, y = pair.first.at(t).positions, pair.second.at(t).positions
        out.append((t, ensemble_distance(x, y, cfg.delta, cfg.ot_batch),
                    coupling_cost(x, y, cfg.delta),
                    weak_gap(empirical_measure(x), empirical_measure(y))))
    return out


def _bound_terms(cfg, ladder, amp):
    base = cfg.base_field()
    other = _scaled_field(cfg, ladder, amp)
    nu = cfg.nu()
    grid = an.AnalysisGrid(L=cfg.grid_L, h=cfg.grid_h, d=nu.dim, horizon=cfg.horizon)
    spec = an.NormSpec(p=cfg.p, q=1.0, horizon=cfg.horizon)
    rep = an.theorem_terms(base, other, nu, (1.0, 1.0), cfg.delta, 0.0, spec, grid)
    return rep.term_b, rep.term_g2, rep.term_g4, rep.difference_bracket


def run_validate_scaling(cfg):
    base = cfg.base_field()
    nu = cfg.nu()
    grid = an.AnalysisGrid(L=cfg.grid_L, h=cfg.grid_h, d=nu.dim, horizon=cfg.horizon)
    an.check_hypotheses(base, nu, an.NormSpec(p=cfg.p), grid)
    tasks = [(cfg, lad, float(a), int(s)) for lad in cfg.ladders
             for a in cfg.amplitudes for s in cfg.seeds]
    results = _fan_out(_scaling_task, tasks, cfg.workers)
    terms = {(lad, float(a)): _bound_terms(cfg, lad, float(a))
             for lad in cfg.ladders for a in cfg.amplitudes}
    rows = []
    for (_, lad, amp, seed), res in zip(tasks, results):
        for t, d, cc, wg in res:
            rows.append((lad, amp, seed, t, d, cc, wg) + terms[(lad, amp)])
    fields_ = [base] + [_scaled_field(cfg, lad, float(a)) for lad in cfg.ladders
                        for a in cfg.amplitudes if a]
    return ExperimentReport(
        "validate-scaling", SCALING_COLUMNS, rows,
        verdicts_from_rows("validate-scaling", SCALING_COLUMNS, rows, cfg),
        _provenance(cfg, fields_),
        notes=(SCALING_NOTE,
               f"kr_tilde: exact distance averaged over aligned blocks of {cfg.ot_batch} "
               "particles; bound terms are unscaled by constants"))


# ------------------------------------------------------------------ mollify-sweep

MOLLIFY_COLUMNS = ("level", "seed", "time", "delta_n", "kr_tilde", "weak_gap", "status")

# below this, the mollified field is indistinguishable from the base at grid resolution
DELTA_FLOOR = 1e-10


def mollified_field(base, level, L=4.0, h=1.0 / 256):
    """1-d field whose drift and jump profile are the base ones convolved with chi_{1/level}."""
    if base.dim != 1:
        raise ConfigurationError("mollify sweep is one-dimensional")
    eps = 1.0 / level
    b = an.scalar_grid(lambda x: base.drift(0.0, x)[:, 0], L, h, 1)
    prof = None
    if base.jump_profile is not None:
        sigma = base.jump_profile[0]
        prof = an.mollify(an.scalar_grid(sigma, L, h, 1), eps)
    elif not base.jump_is_zero:
        raise ConfigurationError("mollify sweep needs a separable jump coefficient")
    return co.grid_field(f"{base.name}*chi_1/{level}", an.mollify(b, eps), prof,
                         {"base": base.name, "level": int(level), "L": L, "h": h})


def _mollify_task(task):
    cfg, level, seed = task
    base = cfg.base_field()
    other = mollified_field(base, level, cfg.grid_L, cfg.grid_h)
    nu = cfg.nu()
    grid = an.AnalysisGrid(L=cfg.grid_L, h=cfg.grid_h, d=1, horizon=cfg.horizon)
    dn = an.delta_n(base, other, nu, an.NormSpec(p=cfg.p, q=1.0, horizon=cfg.horizon), grid)
    if dn <= DELTA_FLOOR:
        return dn, [(t, 0.0, 0.0, "exact") for t in cfg.record_times()]
    pair = coupled_simulate(cfg.sim(seed), base, other, nu, cfg.law())
    out = []
    for t in pair.times:
        x, y = pair.first.at(t).positions, pair.second.at(t).positions
        out.append((t, ensemble_distance(x, y, dn, cfg.ot_batch),
                    weak_gap(empirical_measure(x), empirical_measure(y)), "measured"))
    return dn, out


def run_mollify_sweep(cfg):
    base = cfg.base_field()
    an.check_hypotheses(base, cfg.nu(), an.NormSpec(p=cfg.p),
                        an.AnalysisGrid(L=cfg.grid_L, h=cfg.grid_h, d=1, horizon=cfg.horizon))
    tasks = [(cfg, int(n), int(s)) for n in cfg.mollify_levels for s in cfg.seeds]
    results = _fan_out(_mollify_task, tasks, cfg.workers)
    rows = []
    for (_, level, seed), (dn, res) in zip(tasks, results):
        for t, d, wg, status in res:
            rows.append((level, seed, t, dn, d, wg, status))
    return ExperimentReport(
        "mollify-sweep", MOLLIFY_COLUMNS, rows,
        verdicts_from_rows("mollify-sweep", MOLLIFY_COLUMNS, rows, cfg),
        _provenance(cfg, [base]),
        notes=(SCALING_NOTE, "kr_tilde is evaluated at delta = delta_n of its rung"))


# ------------------------------------------------------------------ superposition-check

SUPERPOSITION_COLUMNS = ("particles", "h", "seed", "time", "kr_tilde", "escaped")


def _grid_dt(cfg, h, field_, nu):
    vmax = float(np.max(np.abs(fpe.effective_drift(field_, nu)(
        -cfg.grid_L + h * np.arange(int(round(2 * cfg.grid_L / h)) + 1)))))
    dt = cfg.horizon
    while dt * max(vmax, 1e-300) > cfg.fpe_courant * h or dt * nu.total_mass > 0.5:
        dt /= 2.0
    return dt


def grid_solution(cfg, h):
    """Grid densities at the recorded times for the config's coefficients."""
    base, nu = cfg.base_field(), cfg.nu()
    rho0 = fpe.DensityGrid.from_law(cfg.law(), cfg.grid_L, h)
    fc = fpe.FpeConfig(horizon=cfg.horizon, dt=_grid_dt(cfg, h, base, nu),
                       record_times=cfg.record_times())
    return fpe.solve(rho0, base, nu, fc)


def _superposition_task(task):
    cfg, n, h, seed, traj = task
    ens = simulate(cfg.sim(seed, particles=n), cfg.base_field(), cfg.nu(), cfg.law())
    out = []
    for t in cfg.record_times():
        rho = traj.at(t)
        atoms = fpe.density_to_measure(rho, n).support
        d = distance_report(empirical_measure(ens.at(t).positions),
                            DiscreteMeasure(atoms, np.full(n, 1.0 / n)),
                            CostSpec("tilde", cfg.delta)).value
        out.append((t, d, rho.escaped))
    return out


def run_superposition_check(cfg):
    if cfg.nu().dim != 1:
        raise ConfigurationError("superposition check is one-dimensional")
    grids = {h: grid_solution(cfg, h) for _, h in cfg.refinement}
    tasks = [(cfg, n, h, int(s), grids[h]) for n, h in cfg.refinement for s in cfg.seeds]
    results = _fan_out(_superposition_task, tasks, cfg.workers)
    rows = []
    for (_, n, h, seed, _g), res in zip(tasks, results):
        for t, d, esc in res:
            rows.append((n, h, seed, t, d, esc))
    return ExperimentReport(
        "superposition-check", SUPERPOSITION_COLUMNS, rows,
        verdicts_from_rows("superposition-check", SUPERPOSITION_COLUMNS, rows, cfg),
        _provenance(cfg, [cfg.base_field()]),
        notes=("grid measure: N equal atoms at the quantiles of the grid density",))


# ------------------------------------------------------------------ moment-check

MOMENT_COLUMNS = ("dt", "seed", "sup_abs", "sup_log", "initial_abs", "initial_log")


def _moment_task(task):
    cfg, dt, seed = task
    sc = SimConfig(horizon=cfg.horizon, dt=dt, particles=cfg.particles, seed=seed,
                   record_times=(0.0,) + cfg.record_times())
    rep = moment_diagnostics(simulate(sc, cfg.base_field(), cfg.nu(), cfg.law()))
    return rep.sup_abs, rep.sup_log, float(rep.mean_abs[0]), float(rep.mean_log[0])


def run_moment_check(cfg):
    tasks = [(cfg, float(dt), int(s)) for dt in cfg.dt_ladder for s in cfg.seeds]
    results = _fan_out(_moment_task, tasks, cfg.workers)
    rows = [(dt, seed) + res for (_, dt, seed), res in zip(tasks, results)]
    return ExperimentReport(
        "moment-check", MOMENT_COLUMNS, rows,
        verdicts_from_rows("moment-check", MOMENT_COLUMNS, rows, cfg),
        _provenance(cfg, [cfg.base_field()]))


# ------------------------------------------------------------------ relations-check

RELATION_COLUMNS = ("instance", "source", "delta", "tilde", "plain", "upper_slack",
                    "lower_slack")


def random_pair(seed, index, n_points, dim):
    """Two random discrete measures with n_points atoms and random weights."""
    gen = _rng.stream(seed, _rng.MISC, index)
    out = []
    for _ in range(2):
        pts = gen.normal(scale=gen.uniform(0.1, 3.0), size=(n_points, dim)) + \
            gen.normal(size=dim)
        w = gen.dirichlet(np.ones(n_points))
        out.append(DiscreteMeasure.normalized(pts, w))
    return out


def run_relations_check(cfg):
    seed = int(cfg.seeds[0])
    cases = []
    for i in range(cfg.relation_pairs):
        mu, nu = random_pair(seed, i, cfg.relation_points, 1 + i % 2)
        cases.append((f"random-{i}", "random", mu, nu))
    mu, _ = random_pair(seed, cfg.relation_pairs, cfg.relation_points, 1)
    cases.append(("equal-0", "equal", mu, mu))
    base = cfg.base_field()
    other = co.perturbed(base, drift_amp=0.2)
    pair = coupled_simulate(cfg.sim(seed), base, other, cfg.nu(), cfg.law())
    t = cfg.horizon
    cases.append(("sde-T", "sde", empirical_measure(pair.first.at(t).positions),
                  empirical_measure(pair.second.at(t).positions)))
    rows, attachments = [], {}
    for name, src, a, b in cases:
        bad = False
        for d in sorted(cfg.relation_deltas):
            rep = remark_relations_check(a, b, d)
            rows.append((name, src, float(d), rep.tilde, rep.plain, rep.upper_slack,
                         rep.lower_slack))
            bad |= not rep.ok
        if bad:
            attachments[f"violation_{name}_first.csv"] = a
            attachments[f"violation_{name}_second.csv"] = b
    report = ExperimentReport(
        "relations-check", RELATION_COLUMNS, rows,
        verdicts_from_rows("relations-check", RELATION_COLUMNS, rows, cfg),
        _provenance(cfg, [base, other]), attachments=attachments)
    return report


# ------------------------------------------------------------------ verdicts

RELATION_TOL = 1e-9


def _table(columns, rows):
    return {c: np.array([r[i] for r in rows], dtype=object) for i, c in enumerate(columns)}


def _median(vals):
    return float(np.median(np.asarray(vals, dtype=float)))


def _slope(xs, ys):
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def _scaling_verdicts(tab, cfg):
    out = []
    amps = sorted({float(a) for a in tab["amplitude"]})
    times = sorted({float(t) for t in tab["time"]})
    for lad in cfg.ladders:
        sel = tab["ladder"] == lad
        zero = sel & (tab["amplitude"] == 0.0)
        if zero.any():
            worst = float(max(tab["kr_tilde"][zero]))
            out.append(Verdict(f"{lad}: zero perturbation gives zero distance", worst == 0.0,
                               f"max distance {worst!r}"))
        pos = [a for a in amps if a > 0]
        med = {(a, t): _median(tab["kr_tilde"][sel & (tab["amplitude"] == a) &
                                                 (tab["time"] == t)])
               for a in pos for t in times}
        mono = all(med[(a, t)] < med[(b, t)] for t in times for a, b in zip(pos, pos[1:]))
        out.append(Verdict(f"{lad}: median distance increases with amplitude", mono,
                           "; ".join(f"t={t:g}: " + ",".join(f"{med[(a, t)]:.4g}" for a in pos)
                                     for t in times)))
        if lad == "drift" and len(pos) >= 2:
            t = times[-1]
            s = _slope(pos, [med[(a, t)] for a in pos])
            out.append(Verdict("drift: log-log slope of distance in [0.5, 1.5]",
                               0.5 <= s <= 1.5, f"slope {s:.4f} at t={t:g}"))
    return out


def _mollify_verdicts(tab, cfg):
    levels = sorted({int(n) for n in tab["level"]})
    dn = [float(tab["delta_n"][tab["level"] == n][0]) for n in levels]
    out = []
    ratios = [b / a for a, b in zip(dn, dn[1:]) if a > 0]
    out.append(Verdict("delta_n decreases with ratio in [0.3, 0.7]",
                       all(0.3 <= r <= 0.7 for r in ratios) and len(ratios) == len(dn) - 1,
                       "ratios " + ",".join(f"{r:.4f}" for r in ratios)))
    meas = tab["status"] == "measured"
    t_last = max(float(t) for t in tab["time"])
    sup_d, wg = [], []
    for n in levels:
        sel = meas & (tab["level"] == n)
        if not sel.any():
            continue
        times = sorted({float(t) for t in tab["time"][sel]})
        sup_d.append(max(_median(tab["kr_tilde"][sel & (tab["time"] == t)]) for t in times))
        wg.append(_median(tab["weak_gap"][sel & (tab["time"] == t_last)]))
    if sup_d:
        ratio = max(sup_d) / min(sup_d) if min(sup_d) > 0 else np.inf
        out.append(Verdict("distance at delta_n bounded across levels (max/min < 4)",
                           ratio < 4.0, f"max/min {ratio:.4f}; sup_t medians " +
                           ",".join(f"{v:.4g}" for v in sup_d)))
        dec = all(b < a for a, b in zip(wg, wg[1:]))
        out.append(Verdict("weak gap decreases with level", dec,
                           "medians " + ",".join(f"{v:.4g}" for v in wg)))
    return out


def _superposition_verdicts(tab, cfg):
    rungs = [(int(n), float(h)) for n, h in cfg.refinement]
    t = max(float(v) for v in tab["time"])
    med = []
    for n, h in rungs:
        sel = (tab["particles"] == n) & (tab["h"] == h) & (tab["time"] == t)
        med.append(_median(tab["kr_tilde"][sel]))
    detail = ",".join(f"{v:.4g}" for v in med)
    esc = max(float(v) for v in tab["escaped"])
    return [
        Verdict("distance decreases along the refinement ladder",
                all(b < a for a, b in zip(med, med[1:])), detail),
        Verdict("finest rung below half the coarsest", med[-1] < med[0] / 2, detail),
        Verdict("escaped grid mass within tolerance", esc <= fpe.ESCAPE_REJECT,
                f"max escaped {esc:.3g}"),
    ]


def _moment_verdicts(tab, cfg):
    out = []
    finite = all(np.isfinite(float(v)) for c in ("sup_abs", "sup_log") for v in tab[c])
    out.append(Verdict("moments finite", finite))
    dts = sorted({float(v) for v in tab["dt"]}, reverse=True)
    for col in ("sup_abs", "sup_log"):
        meds = [_median(tab[col][tab["dt"] == dt]) for dt in dts]
        change = max(abs(b - a) / abs(a) if a else abs(b - a) for a, b in zip(meds, meds[1:])) \
            if len(meds) > 1 else 0.0
        out.append(Verdict(f"{col} stable under dt halving (< 10%)", change < 0.10,
                           f"medians {','.join(f'{m:.5g}' for m in meds)}"))
        spreads = []
        for dt in dts:
            v = np.asarray(tab[col][tab["dt"] == dt], dtype=float)
            m = float(np.median(v))
            spreads.append((v.max() - v.min()) / m if m else float(v.max() - v.min()))
        out.append(Verdict(f"{col} stable across seeds (< 20% spread)", max(spreads) < 0.20,
                           f"spreads {','.join(f'{s:.4f}' for s in spreads)}"))
    return out


def _relations_verdicts(tab, cfg):
    up = np.asarray(tab["upper_slack"], dtype=float)
    lo = np.asarray(tab["lower_slack"], dtype=float)
    bad = sorted({str(n) for n, u, w in zip(tab["instance"], up, lo)
                  if u < -RELATION_TOL or w < -RELATION_TOL})
    out = [Verdict("log-cost relations hold on every instance", not bad,
                   f"{len(bad)} violating instances" + (": " + ",".join(bad) if bad else ""))]
    mono_bad = []
    for name in sorted({str(n) for n in tab["instance"]}):
        sel = tab["instance"] == name
        ds = np.asarray(tab["delta"][sel], dtype=float)
        vals = np.asarray(tab["tilde"][sel], dtype=float)[np.argsort(ds)]
        if np.any(np.diff(vals) > RELATION_TOL):
            mono_bad.append(name)
    out.append(Verdict("tilde distance non-increasing in delta", not mono_bad,
                       f"{len(mono_bad)} violating instances"))
    eq = tab["source"] == "equal"
    if eq.any():
        zero = all(float(v) == 0.0 for c in ("tilde", "plain") for v in tab[c][eq])
        out.append(Verdict("equal measures give zero distances", zero))
    sde_rows = tab["source"] == "sde"
    if sde_rows.any():
        ok = bool(np.all(up[sde_rows] >= -RELATION_TOL) and np.all(lo[sde_rows] >= -RELATION_TOL))
        out.append(Verdict("relations hold on the simulated pair", ok))
    return out


_VERDICTS = {
    "validate-scaling": _scaling_verdicts,
    "mollify-sweep": _mollify_verdicts,
    "superposition-check": _superposition_verdicts,
    "moment-check": _moment_verdicts,
    "relations-check": _relations_verdicts,
}


def verdicts_from_rows(kind, columns, rows, cfg):
    """Recompute verdicts from stored rows; pure in (rows, cfg)."""
    if not rows:
        return [Verdict("report has rows", False)]
    return _VERDICTS[kind](_table(columns, rows), cfg)


RUNNERS = {
    "validate-scaling": run_validate_scaling,
    "mollify-sweep": run_mollify_sweep,
    "superposition-check": run_superposition_check,
    "moment-check": run_moment_check,
    "relations-check": run_relations_check,
}


def run_experiment(cfg):
    try:
        return RUNNERS[cfg.kind](cfg)
    except HypothesisViolation as exc:
        return ExperimentReport(cfg.kind, ("error",), [(str(exc),)],
                                [Verdict("coefficients satisfy the bound hypotheses", False,
                                         str(exc))], _provenance(cfg))

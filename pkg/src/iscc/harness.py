"""Seeded simulation harness: single trials, multi-trial experiments, sweeps.

Every trial is a pure function of (configuration, seed), so runs are
reproducible and safely parallelizable; multi-trial experiments fan out
over seeds with a process pool and reduce in seed order, which makes the
output byte-identical regardless of worker count.
"""

from concurrent.futures import ProcessPoolExecutor
import csv
import json

import numpy as np

from . import baselines, ttpm, wopm
from .scenario import SystemConfig, desk_config, generate_channels
from .ttpm import Infeasible, QosSpec


def run_wopm_trial(cfg: SystemConfig, seed: int, scheme: str = "optimized",
                   opt: wopm.WopmOptions | None = None, limits=None) -> dict:
    """One weighted-performance trial; returns a flat record of scalars."""
    if scheme == "optimized":
        res = wopm.solve(cfg, seed=seed, opt=opt, limits=limits)
    else:
        res = baselines.wopm_baseline(scheme, cfg, seed=seed, opt=opt,
                                      limits=limits)
    rep = res.report
    ch = generate_channels(cfg, seed)
    f1, f2, f3 = wopm.raw_objectives(cfg, ch, res.tx, res.rx)
    return {
        "scheme": scheme,
        "seed": seed,
        "objective": float(res.psi_trace[-1]),
        "sens_mse": f1,
        "comp_mse": f2,
        "sum_rate": f3,
        "total_power_w": rep.total_power_w,
        "n_outer": res.n_outer,
        "converged": int(res.converged),
    }


def run_ttpm_trial(cfg: SystemConfig, qos: QosSpec, seed: int,
                   scheme: str = "optimized",
                   opt: ttpm.TtpmOptions | None = None) -> dict:
    """One power-minimization trial; an infeasible QoS yields a flagged record."""
    try:
        if scheme == "optimized":
            res = ttpm.solve(cfg, qos, seed=seed, opt=opt)
        else:
            res = baselines.ttpm_baseline(scheme, cfg, qos, seed=seed, opt=opt)
    except Infeasible:
        return {"scheme": scheme, "seed": seed, "feasible": 0,
                "total_power_w": float("nan"), "n_outer": 0, "converged": 0,
                "sens_mse": float("nan"), "comp_mse": float("nan"),
                "min_sinr": float("nan"), "rank_violations": 0}
    rep = res.report
    return {
        "scheme": scheme,
        "seed": seed,
        "feasible": 1,
        "total_power_w": rep.total_power_w,
        "n_outer": res.n_outer,
        "converged": int(res.converged),
        "sens_mse": float(rep.mse_sens.max()),
        "comp_mse": float(rep.mse_comp.max()),
        "min_sinr": float(rep.sinr.min()),
        "rank_violations": len(res.rank_violations),
    }


def run_wopm_trace(cfg: SystemConfig, seed: int) -> list:
    """Per-iteration objective records for one weighted-performance trial."""
    res = wopm.solve(cfg, seed=seed)
    return [{"experiment": "convergence", "solver": "wopm", "seed": seed,
             "iteration": i + 1, "objective": float(v)}
            for i, v in enumerate(res.psi_trace)]


def run_ttpm_trace(cfg: SystemConfig, qos: QosSpec, seed: int) -> list:
    """Per-iteration power records for one power-minimization trial."""
    try:
        res = ttpm.solve(cfg, qos, seed=seed)
    except Infeasible:
        return [{"experiment": "convergence", "solver": "ttpm", "seed": seed,
                 "iteration": 0, "objective": float("nan")}]
    return [{"experiment": "convergence", "solver": "ttpm", "seed": seed,
             "iteration": i + 1, "objective": float(p)}
            for i, p in enumerate(res.power_trace)]


def run_priority_trial(cfg: SystemConfig, alpha3_values, seed: int) -> list:
    """One seed across a grid of communication priorities.

    The single-objective normalization limits depend only on the channel
    draw, so they are computed once and shared across the grid."""
    ch = generate_channels(cfg, seed)
    limits, _ = wopm.compute_limits(cfg, ch)
    out = []
    for a3 in alpha3_values:
        rest = (1.0 - a3) / 2.0
        opt = wopm.WopmOptions(alpha=np.array([rest, rest, a3]))
        res = wopm.solve(cfg, ch, opt=opt, limits=limits)
        f1, f2, f3 = wopm.raw_objectives(cfg, ch, res.tx, res.rx)
        out.append({"alpha3": a3, "seed": seed, "sens_mse": f1,
                    "comp_mse": f2, "sum_rate": f3,
                    "objective": float(res.psi_trace[-1])})
    return out


def run_wopm_compare_trial(cfg: SystemConfig, schemes, seed: int) -> list:
    """One seed across schemes, sharing the same normalization limits so the
    weighted objectives are directly comparable."""
    ch = generate_channels(cfg, seed)
    limits, _ = wopm.compute_limits(cfg, ch)
    out = []
    for scheme in schemes:
        if scheme == "optimized":
            res = wopm.solve(cfg, ch, limits=limits)
        else:
            res = baselines.wopm_baseline(scheme, cfg, ch, limits=limits)
        f1, f2, f3 = wopm.raw_objectives(cfg, ch, res.tx, res.rx)
        out.append({"scheme": scheme, "seed": seed,
                    "objective": float(res.psi_trace[-1]),
                    "sens_mse": f1, "comp_mse": f2, "sum_rate": f3})
    return out


# --- parallel fan-out --------------------------------------------------------

def _call(args):
    fn, a, kw = args
    return fn(*a, **kw)


def run_trials(fn, common_args, seeds, jobs=1, **kwargs):
    """fn(*common_args, seed, **kwargs) per seed, results in seed order."""
    tasks = [(fn, (*common_args, int(s)), kwargs) for s in sorted(int(s) for s in seeds)]
    if jobs <= 1:
        return [_call(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_call, tasks))


def summarize(records, keys):
    """Median and mean of each numeric key over records, ignoring NaNs."""
    out = {"n_trials": len(records),
           "n_feasible": sum(r.get("feasible", 1) for r in records)}
    for key in keys:
        vals = np.array([r[key] for r in records], dtype=float)
        good = vals[np.isfinite(vals)]
        out[f"median_{key}"] = float(np.median(good)) if good.size else float("nan")
        out[f"mean_{key}"] = float(good.mean()) if good.size else float("nan")
    return out


# --- sweep definitions -------------------------------------------------------

PRIORITY_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
CHI_GRID = (0.005, 0.01, 0.02, 0.05)
GAMMA_DB_GRID = (0.1, 1.0, 2.0, 3.0)


def _zf_profile(**overrides):
    """Comparison profile with enough sensor antennas for zero forcing."""
    base = dict(n_bs_antennas=12, n_sensor_antennas=3, n_sensors=3)
    base.update(overrides)
    return desk_config(**base)


def _zf_ttpm_options():
    """Interior-point settings for the larger comparison profile: restart
    the barrier schedule high on warm iterations and cap the centering
    effort.  The power orderings these sweeps measure have
    orders-of-magnitude margins, so the cheaper settings do not affect the
    conclusions."""
    return ttpm.TtpmOptions(barrier_warm_init=100.0, max_newton_iter=80)


def sweep_convergence(trials, seed0, jobs=1, full=False,
                      cfg: SystemConfig | None = None):
    """Per-iteration traces of both solvers, one row per iteration."""
    c = cfg or desk_config()
    rows = []
    for recs in run_trials(run_wopm_trace, (c,),
                           range(seed0, seed0 + trials), jobs):
        rows += recs
    qos = QosSpec()
    for recs in run_trials(run_ttpm_trace, (c, qos),
                           range(seed0, seed0 + trials), jobs):
        rows += recs
    return rows


def sweep_priority(trials, seed0, jobs=1, full=False,
                   cfg: SystemConfig | None = None):
    """Weighted-design metrics versus the communication priority weight."""
    c = cfg or desk_config()
    per_seed = run_trials(run_priority_trial, (c, PRIORITY_GRID),
                          range(seed0, seed0 + trials), jobs)
    rows = []
    for a3 in PRIORITY_GRID:
        recs = [r for rs in per_seed for r in rs if r["alpha3"] == a3]
        row = {"experiment": "priority_sweep", "alpha3": a3}
        row.update(summarize(recs, ["sens_mse", "comp_mse", "sum_rate",
                                    "objective"]))
        rows.append(row)
    return rows


def sweep_kn(trials, seed0, jobs=1, full=False,
             cfg: SystemConfig | None = None):
    """Weighted-design metrics versus the number of sensors.

    Five sensors with two antennas each need at least ten receive antennas,
    so the axis runs at two enlarged array sizes instead of the default."""
    rows = []
    for N in (10, 14):
        for K in (2, 3, 4, 5):
            c = (cfg or desk_config()).with_updates(n_sensors=K,
                                                    n_bs_antennas=N)
            recs = run_trials(run_wopm_trial, (c,),
                              range(seed0, seed0 + trials), jobs)
            row = {"experiment": "kn_sweep", "n_sensors": K,
                   "n_bs_antennas": N}
            row.update(summarize(recs, ["sens_mse", "comp_mse", "sum_rate",
                                        "n_outer"]))
            rows.append(row)
    return rows


def sweep_qos(trials, seed0, jobs=1, full=False,
              cfg: SystemConfig | None = None):
    """Minimized power versus the computation cap and versus the SINR floor.

    The SINR axis also runs every baseline scheme for comparison."""
    rows = []
    c = cfg or desk_config()
    for chi in CHI_GRID:
        qos = QosSpec(delta=2.0, chi=chi)
        recs = run_trials(run_ttpm_trial, (c, qos),
                          range(seed0, seed0 + trials), jobs)
        row = {"experiment": "qos_sweep", "parameter": "chi", "value": chi,
               "scheme": "optimized"}
        row.update(summarize(recs, ["total_power_w", "n_outer"]))
        rows.append(row)
    cz = cfg or _zf_profile()
    for gamma_db in GAMMA_DB_GRID:
        qos = QosSpec(gamma_db=gamma_db)
        for scheme in ("optimized",) + baselines.BASELINE_NAMES:
            recs = run_trials(run_ttpm_trial, (cz, qos),
                              range(seed0, seed0 + trials), jobs,
                              scheme=scheme, opt=_zf_ttpm_options())
            row = {"experiment": "qos_sweep", "parameter": "gamma_db",
                   "value": gamma_db, "scheme": scheme}
            row.update(summarize(recs, ["total_power_w", "n_outer"]))
            rows.append(row)
    return rows


def sweep_clutter(trials, seed0, jobs=1, full=False,
                  cfg: SystemConfig | None = None):
    """Minimized power versus the number of clutters."""
    rows = []
    qos = QosSpec(delta=0.9)
    for n_clutters in (0, 1, 2):
        c = (cfg or desk_config()).with_updates(n_clutters=n_clutters)
        recs = run_trials(run_ttpm_trial, (c, qos),
                          range(seed0, seed0 + trials), jobs)
        row = {"experiment": "clutter_sweep", "n_clutters": n_clutters}
        row.update(summarize(recs, ["total_power_w", "n_outer"]))
        rows.append(row)
    return rows


def sweep_baseline_compare(trials, seed0, jobs=1, full=False,
                           cfg: SystemConfig | None = None):
    """Weighted objective of the optimized design against every baseline."""
    c = cfg or _zf_profile()
    schemes = ("optimized",) + baselines.BASELINE_NAMES
    per_seed = run_trials(run_wopm_compare_trial, (c, schemes),
                          range(seed0, seed0 + trials), jobs)
    rows = []
    for scheme in schemes:
        recs = [r for rs in per_seed for r in rs if r["scheme"] == scheme]
        row = {"experiment": "baseline_compare", "scheme": scheme}
        row.update(summarize(recs, ["objective", "sens_mse", "comp_mse",
                                    "sum_rate"]))
        rows.append(row)
    return rows


SWEEPS = {
    "convergence": sweep_convergence,
    "priority_sweep": sweep_priority,
    "kn_sweep": sweep_kn,
    "qos_sweep": sweep_qos,
    "clutter_sweep": sweep_clutter,
    "baseline_compare": sweep_baseline_compare,
}


# --- output ------------------------------------------------------------------

def write_rows(rows, path, fmt="csv"):
    """Write a list of flat record dicts as CSV (union of columns) or JSON."""
    if fmt == "json":
        text = json.dumps(rows, indent=2, sort_keys=True, allow_nan=True)
        _write(path, text + "\n")
    elif fmt == "csv":
        cols = []
        for r in rows:
            cols += [c for c in r if c not in cols]
        import io
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=cols, restval="")
        writer.writeheader()
        writer.writerows(rows)
        _write(path, buf.getvalue())
    else:
        raise ValueError(f"unknown output format {fmt!r}")


def _write(path, text):
    if path in (None, "-"):
        import sys
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)

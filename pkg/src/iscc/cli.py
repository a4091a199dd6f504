"""Command-line entry point.

Subcommands: `wopm` and `ttpm` run seeded trials of the two optimizers,
`baseline` runs a reference scheme, `sweep` runs a named experiment grid,
and `oracle-check` cross-validates the closed-form metrics against the
signal-level Monte-Carlo estimator.  Exit codes: 0 success, 2 when a QoS
target is infeasible on every trial, 1 on error.  Set ISCC_LOG=DEBUG (or
another level name) for diagnostics.
"""

import argparse
import logging
import os
import sys

import numpy as np

from . import baselines, harness, metrics, ttpm, wopm
from .receivers import update_receivers
from .scenario import SystemConfig, desk_config, generate_channels, read_config
from .ttpm import QosSpec

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


def _load_config(args) -> SystemConfig:
    return read_config(args.config) if args.config else desk_config()


def _add_common(sub):
    sub.add_argument("--config", help="flat key = value config file")
    sub.add_argument("--seed", type=int, default=0, help="first trial seed")
    sub.add_argument("--trials", type=int, default=1)
    sub.add_argument("--jobs", type=int, default=1, help="worker processes")
    sub.add_argument("--out", default="-", help="output path, '-' for stdout")
    sub.add_argument("--format", choices=("csv", "json"), default="csv")


def _add_qos(sub):
    sub.add_argument("--delta", type=float, default=0.9, help="sensing MSE cap")
    sub.add_argument("--chi", type=float, default=0.05, help="computation MSE cap")
    sub.add_argument("--gamma-db", type=float, default=0.1, help="SINR floor (dB)")


def build_parser():
    p = argparse.ArgumentParser(prog="iscc")
    sub = p.add_subparsers(dest="command", required=True)

    w = sub.add_parser("wopm", help="weighted overall-performance maximization")
    _add_common(w)
    w.add_argument("--alpha", default="1/3,1/3,1/3",
                   help="comma-separated sensing,computing,comm weights")

    t = sub.add_parser("ttpm", help="total transmit-power minimization")
    _add_common(t)
    _add_qos(t)

    b = sub.add_parser("baseline", help="run a reference scheme")
    _add_common(b)
    _add_qos(b)
    b.add_argument("--solver", choices=("wopm", "ttpm"), default="ttpm")
    b.add_argument("--baseline", choices=baselines.BASELINE_NAMES, required=True)

    s = sub.add_parser("sweep", help="run a named experiment grid")
    _add_common(s)
    s.add_argument("--name", choices=sorted(harness.SWEEPS), required=True)
    s.add_argument("--full", action="store_true",
                   help="paper-scale profile instead of the desk profile (slow)")

    o = sub.add_parser("oracle-check",
                       help="closed-form metrics vs Monte-Carlo synthesis")
    _add_common(o)
    o.add_argument("--draws", type=int, default=200_000)
    return p


def _parse_alpha(text):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError("--alpha needs three comma-separated values")
    vals = []
    for p in parts:
        if "/" in p:
            num, den = p.split("/", 1)
            vals.append(float(num) / float(den))
        else:
            vals.append(float(p))
    return np.array(vals)


def cmd_wopm(args):
    cfg = _load_config(args)
    opt = wopm.WopmOptions(alpha=_parse_alpha(args.alpha))
    rows = harness.run_trials(harness.run_wopm_trial, (cfg,),
                              range(args.seed, args.seed + args.trials),
                              args.jobs, opt=opt)
    harness.write_rows(rows, args.out, args.format)
    return EXIT_OK


def cmd_ttpm(args, scheme="optimized"):
    cfg = _load_config(args)
    qos = QosSpec(delta=args.delta, chi=args.chi, gamma_db=args.gamma_db)
    rows = harness.run_trials(harness.run_ttpm_trial, (cfg, qos),
                              range(args.seed, args.seed + args.trials),
                              args.jobs, scheme=scheme)
    harness.write_rows(rows, args.out, args.format)
    if not any(r["feasible"] for r in rows):
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_baseline(args):
    if args.solver == "ttpm":
        return cmd_ttpm(args, scheme=args.baseline)
    cfg = _load_config(args)
    rows = harness.run_trials(harness.run_wopm_trial, (cfg,),
                              range(args.seed, args.seed + args.trials),
                              args.jobs, scheme=args.baseline)
    harness.write_rows(rows, args.out, args.format)
    return EXIT_OK


def cmd_sweep(args):
    cfg = read_config(args.config) if args.config else None
    if args.full:
        from .scenario import table3_config
        cfg = table3_config()
    rows = harness.SWEEPS[args.name](args.trials, args.seed, args.jobs,
                                     full=args.full, cfg=cfg)
    harness.write_rows(rows, args.out, args.format)
    return EXIT_OK


def cmd_oracle_check(args):
    cfg = _load_config(args)
    rows = []
    worst = 0.0
    for trial in range(args.trials):
        seed = args.seed + trial
        ch = generate_channels(cfg, seed)
        tx = metrics.TxBeams.algorithm_init(
            cfg.n_sensors, cfg.n_targets, cfg.n_model_params,
            cfg.n_comm_streams, cfg.n_sensor_antennas, cfg.tx_power_budget_w)
        rx = update_receivers(ch, tx)
        analytic = metrics.evaluate(ch, tx, rx)
        batch = metrics.draw_signal_batch(ch, args.draws, seed + 10_000,
                                          cfg.n_model_params, cfg.n_comm_streams)
        emp = metrics.monte_carlo_report(ch, tx, rx, batch)
        for name, ana, est, se in (
                ("mse_sens", analytic.mse_sens, emp.mse_sens, emp.se_sens),
                ("mse_comp", analytic.mse_comp, emp.mse_comp, emp.se_comp),
                ("mse_comm", analytic.mse_comm.ravel(), emp.mse_comm.ravel(),
                 emp.se_comm.ravel())):
            for idx, (a, e, s) in enumerate(zip(ana, est, se)):
                z = abs(a - e) / s if s > 0 else 0.0
                worst = max(worst, z)
                rows.append({"seed": seed, "metric": name, "index": idx,
                             "analytic": float(a), "empirical": float(e),
                             "stderr": float(s), "z": float(z)})
    harness.write_rows(rows, args.out, args.format)
    print(f"worst |analytic - empirical| = {worst:.2f} standard errors",
          file=sys.stderr)
    return EXIT_OK if worst <= 4.0 else EXIT_ERROR


def main(argv=None):
    level = os.environ.get("ISCC_LOG")
    if level:
        logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO))
    args = build_parser().parse_args(argv)
    handlers = {"wopm": cmd_wopm, "ttpm": cmd_ttpm, "baseline": cmd_baseline,
                "sweep": cmd_sweep, "oracle-check": cmd_oracle_check}
    try:
        return handlers[args.command](args)
    except ttpm.Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as exc:  # argparse errors exit on their own
        print(f"error: {exc}", file=sys.stderr)
        if level:
            raise
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

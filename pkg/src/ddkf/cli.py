"""Command-line entry point: ``ddkf <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys as _sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bounds import bounds_report, compute_epsilon1, compute_epsilon2, epsilon0_from_params, params_from_system
from .control import (
    average_cost,
    breve_matrices,
    closed_loop_ensemble,
    construct_QK_via_lqr,
    dynamic_gain,
    lqg_gain,
    lyapunov_certificate,
    static_candidate,
    static_gain,
    steady_filter_gain,
)
from .data import collect_batch, load_batch, save_batch
from .errors import DDKFError
from .experiments import (
    ExperimentConfig,
    read_inputs_csv,
    run_asee_sweep,
    run_compare,
    run_lqg_table,
    run_noise_sweep,
    run_tracking,
    write_csv,
)
from .filtering import run_filter
from .identification import IdentifiedModel, identify
from .seeding import CLOSED_LOOP, ONLINE, child_rng
from .system import LtiSystem, dc_motor_preset, draw_noise_ensemble, simulate_trajectory


def _system(spec):
    if spec in (None, "dc_motor"):
        return dc_motor_preset()
    return LtiSystem.load_json(spec)


def _config(args):
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    if changes:
        config = replace(config, **changes)
    if args.full_scale:
        config = config.with_full_scale()
    if args.trials is not None:
        config = replace(config, trials=args.trials, control_trials=args.trials)
    return config


def cmd_collect(args):
    sys = _system(args.system)
    if args.noise_free:
        sys = sys.noise_free()
    batch = collect_batch(sys, args.N, args.L, args.sigma_x0, args.sigma_u, rng=args.seed, keep_noise=args.keep_noise)
    save_batch(batch, args.out)
    return {"out": args.out, "dims": list(batch.dims)}


def cmd_identify(args):
    model = identify(load_batch(args.batch))
    model.save_json(args.out)
    return {"out": args.out, **model.diagnostics}


def cmd_filter(args):
    sys = _system(args.system)
    u = read_inputs_csv(args.inputs)
    if args.mode == "ddkf":
        model = identify(load_batch(args.batch))
    else:
        model = sys
    rng = child_rng(args.seed, ONLINE, 0)
    x0 = sys.x0_mean + sys.factor("P0") @ rng.standard_normal(sys.n)
    traj = simulate_trajectory(sys, u, x0, rng)
    est = run_filter(model, sys.Q, sys.R, sys.x0_mean, sys.P0, traj.inputs, traj.outputs)
    err = np.sum((traj.states - est) ** 2, axis=1)
    n = sys.n
    header = ["k"] + [f"x{i + 1}" for i in range(n)] + [f"xhat{i + 1}" for i in range(n)] + ["sq_err"]
    rows = ([k, *traj.states[k], *est[k], err[k]] for k in range(len(est)))
    config = replace(ExperimentConfig(), seed=args.seed, extra={"mode": args.mode, "batch": args.batch})
    write_csv(args.out, header, rows, config, "filter")
    return {"out": args.out, "mean_sq_err": float(err.mean())}


def _gain(kind, model, S1, S2):
    if kind == "lqg":
        return lqg_gain(model, S1, S2)
    if kind == "dynamic":
        Q1, Q2, _ = construct_QK_via_lqr(model, S1, S2)
        return dynamic_gain(Q1, Q2, model)
    K0 = static_candidate(model, S1, S2)
    Q1, Q2, Delta = lyapunov_certificate(model, K0 @ np.atleast_2d(model.C))
    return static_gain(Q1, Q2, model, Delta=Delta)


def cmd_control(args):
    sys = _system(args.system)
    S1, S2 = np.eye(sys.n), np.eye(sys.m)
    model = identify(load_batch(args.batch))
    gain = _gain(args.kind, model, S1, S2)
    xi, W, V = draw_noise_ensemble(sys, args.horizon + 1, args.trials, args.seed, stream=CLOSED_LOOP)
    costs, *_ = closed_loop_ensemble(sys, gain, args.horizon, S1, S2, sys.x0_mean + xi, W[:, : args.horizon], V,
                                     filter_model=model)
    rows = [(t, costs[t]) for t in range(args.trials)] + [("J_ave", average_cost(costs))]
    config = replace(ExperimentConfig(), seed=args.seed, extra={"kind": args.kind, "batch": args.batch})
    write_csv(args.out, ["trial", "cost"], rows, config, "control")
    return {"out": args.out, "J_ave": average_cost(costs), "spectral_radius": gain.spectral_radius}


def cmd_bounds(args):
    sys = _system(args.system)
    params = params_from_system(sys, args.L, args.sigma_x0, args.sigma_u)
    eps1 = eps2 = None
    truth = IdentifiedModel.from_matrices(sys.A, sys.B, sys.C, L=args.L)
    S1, S2 = np.eye(sys.n), np.eye(sys.m)
    eps0 = epsilon0_from_params(params)
    try:
        K0 = static_candidate(truth, S1, S2)
        Q1, _, Delta = lyapunov_certificate(truth, K0 @ sys.C)
        eps1 = compute_epsilon1(truth, K0, Q1, Delta, epsilon0=eps0)
        Kd = lqg_gain(truth, S1, S2).K
        L = steady_filter_gain(truth, sys.Q, sys.R)
        A1, _ = breve_matrices(sys, truth, Kd, L)
        eps2 = compute_epsilon2(A1, L, sys.C, eps0)
    except DDKFError as exc:
        print(f"warning: controller margins unavailable: {exc}", file=_sys.stderr)
    report = bounds_report(params, args.epsilon, args.delta, epsilon_G=args.epsilon_g, epsilon1=eps1, epsilon2=eps2)
    text = report.to_json(args.out)
    if args.out is None:
        print(text)
        return None
    return {"out": args.out}


def _experiment(runner, name):
    def cmd(args):
        config = _config(args)
        out = Path(args.out or config.out_dir)
        result = runner(config, out_dir=out)
        if isinstance(result, dict):
            return {k: v for k, v in result.items() if isinstance(v, (int, float, str))}
        return {"rows": result}

    cmd.__name__ = f"cmd_{name}"
    return cmd


def build_parser():
    parser = argparse.ArgumentParser(prog="ddkf", description="Data-driven Kalman filtering toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="generate a pre-collected batch")
    p.add_argument("--system", default="dc_motor", help="'dc_motor' or a system JSON file")
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--L", type=int, default=20)
    p.add_argument("--sigma-x0", type=float, default=100.0)
    p.add_argument("--sigma-u", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--keep-noise", action="store_true")
    p.add_argument("--noise-free", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("identify", help="identify (A#, B#, C#) from a batch")
    p.add_argument("--batch", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("filter", help="run the MBKF or DDKF on one simulated trajectory")
    p.add_argument("--batch", required=True)
    p.add_argument("--inputs", required=True, help="CSV with one row of inputs per step")
    p.add_argument("--mode", choices=["mbkf", "ddkf"], default="ddkf")
    p.add_argument("--system", default="dc_motor")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("control", help="design a data-driven controller and simulate it")
    p.add_argument("--batch", required=True)
    p.add_argument("--kind", choices=["static", "dynamic", "lqg"], default="lqg")
    p.add_argument("--system", default="dc_motor")
    p.add_argument("--horizon", type=int, default=50)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("bounds", help="evaluate the sample-complexity constants")
    p.add_argument("--system", default="dc_motor")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--epsilon-g", type=float, default=None)
    p.add_argument("--L", type=int, default=20)
    p.add_argument("--sigma-x0", type=float, default=100.0)
    p.add_argument("--sigma-u", type=float, default=100.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bounds)

    experiments = [
        ("track", run_tracking, "single tracking run (true vs estimated states)"),
        ("asee", run_asee_sweep, "ASEE versus number of trajectories N"),
        ("noise", run_noise_sweep, "steady MSE versus noise scale"),
        ("compare", run_compare, "per-step MSE of MBKF and DDKF"),
        ("lqg-table", run_lqg_table, "average LQG cost of model-based and data-driven designs"),
    ]
    for name, runner, help_text in experiments:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--trials", type=int, default=None)
        p.add_argument("--full-scale", action="store_true")
        p.set_defaults(func=_experiment(runner, name))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except (DDKFError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 1
    if result:
        print(json.dumps(result, default=float))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

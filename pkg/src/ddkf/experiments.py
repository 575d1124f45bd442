"""DC-motor experiments: tracking run, ASEE-vs-N sweep, noise sweep,
MBKF/DDKF comparison and the LQG cost table.

Every random stream is derived from the master seed by key path
(see :mod:`ddkf.seeding`):

* online trial t: ``(seed, ONLINE, t)``, shared by every method and sweep
  point (common random numbers);
* identification batch for trial t at size N: ``(seed, BATCH, N, t)``;
* closed-loop trial t: ``(seed, CLOSED_LOOP, t)``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .control import ControllerGain, average_cost, closed_loop_ensemble, lqg_gain
from .data import collect_batch
from .filtering import Matrices, asee, asee_window, filter_ensemble, mse_curve
from .identification import identify
from .seeding import BATCH, CLOSED_LOOP, ONLINE, child_rng
from .system import LtiSystem, dc_motor_preset, draw_noise_ensemble, simulate_ensemble

FULL_TRIALS = 2000
FULL_HORIZON = 2000


@dataclass(frozen=True)
class ExperimentConfig:
    system: str = "dc_motor"
    N: int = 1000
    L: int = 20
    sigma_x0: float = 100.0
    sigma_u: float = 100.0
    horizon: int = 2000
    trials: int = 200
    N_list: tuple = (20, 100, 1000)
    noise_scales: tuple = (0.5, 1.0, 2.0)
    inputs: str = "fig1"
    noise_free: bool = False
    online_x0_mean: tuple | None = None
    control_kind: str = "lqg"
    S1: tuple = ((1.0, 0.0), (0.0, 1.0))
    S2: tuple = ((1.0, 0.0), (0.0, 1.0))
    control_horizon: int = 50
    control_trials: int = 1000
    control_N: int = 500
    control_x0: tuple = (100.0, 10.0)
    # "data": filter prior N(0, sigma_x0^2 I) as for the batch experiments;
    # "plant": the plant's x0_mean and P0
    control_prior: str = "data"
    seed: int = 0
    out_dir: str = "results"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("N_list", "noise_scales", "S1", "S2", "control_x0"):
            object.__setattr__(self, name, _tuplify(getattr(self, name)))
        if self.online_x0_mean is not None:
            object.__setattr__(self, "online_x0_mean", tuple(float(v) for v in self.online_x0_mean))
        if self.N < 1 or any(int(n) < 1 for n in self.N_list) or self.control_N < 1:
            raise ValueError("every N must be at least 1")
        if any(float(f) <= 0.0 for f in self.noise_scales):
            raise ValueError("noise scale factors must be positive")
        if self.horizon < 1 or self.control_horizon < 1:
            raise ValueError("horizons must be at least 1")
        if self.trials < 1 or self.control_trials < 1:
            raise ValueError("trial counts must be at least 1")
        if self.control_kind not in ("lqg", "dynamic", "static"):
            raise ValueError(f"unknown control kind {self.control_kind!r}")
        if self.control_prior not in ("data", "plant"):
            raise ValueError(f"unknown control prior {self.control_prior!r}")

    def to_dict(self):
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def with_full_scale(self):
        return replace(self, trials=FULL_TRIALS, horizon=FULL_HORIZON, control_trials=1000)

    def digest(self):
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _tuplify(v):
    if isinstance(v, (list, tuple)):
        return tuple(_tuplify(x) for x in v)
    return v


def load_system(config: ExperimentConfig) -> LtiSystem:
    if config.system == "dc_motor":
        sys = dc_motor_preset()
    else:
        sys = LtiSystem.load_json(config.system)
    if config.online_x0_mean is not None:
        sys = sys.replace(x0_mean=np.array(config.online_x0_mean))
    return sys


def fig1_inputs(horizon, torque=(0.0, 0.5, 1.0, 0.25), voltage=(10.0, 25.0, 15.0),
                voltage_breaks=(0.15, 0.6)):
    """Piecewise-constant (load torque, voltage) stand-in for the motor test signal.

    Torque steps at 1/4, 1/2 and 3/4 of the horizon; voltage steps at the
    given fractions.

    Returns:
        (horizon, 2) array of inputs u_0..u_{horizon-1}.
    """
    frac = np.arange(horizon) / max(horizon, 1)
    tl = np.asarray(torque, dtype=float)[np.minimum((frac * len(torque)).astype(int), len(torque) - 1)]
    va = np.asarray(voltage, dtype=float)[np.searchsorted(np.asarray(voltage_breaks), frac, side="right")]
    return np.column_stack([tl, va])


def load_inputs(spec, horizon, m):
    if spec == "fig1":
        u = fig1_inputs(horizon)
    elif spec == "zero":
        u = np.zeros((horizon, m))
    else:
        u = read_inputs_csv(spec)
        if len(u) < horizon:
            raise ValueError(f"input file {spec} has {len(u)} rows, horizon is {horizon}")
        u = u[:horizon]
    if u.shape[1] != m:
        raise ValueError(f"inputs have {u.shape[1]} columns, the system has m={m}")
    return u


def read_inputs_csv(path):
    """Numeric CSV of inputs, one row per step; an optional header row is skipped."""
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    except ValueError:
        return np.loadtxt(path, delimiter=",", ndmin=2, comments="#", skiprows=1)


def effective_L(N, L, n, m):
    """Shorten L when N cannot excite ``n + Lm`` directions with a 2x margin."""
    if N >= 2 * (n + L * m):
        return L
    return max(n, (N // 2 - n) // m)


@dataclass
class OnlineData:
    inputs: np.ndarray
    states: np.ndarray
    outputs: np.ndarray


def online_data(config, sys, trials=None, horizon=None) -> OnlineData:
    """Shared online trajectories: trial t always sees stream ``(seed, ONLINE, t)``."""
    trials = config.trials if trials is None else trials
    horizon = config.horizon if horizon is None else horizon
    inputs = load_inputs(config.inputs, horizon, sys.m)
    plant = sys.noise_free() if config.noise_free else sys
    xi, W, V = draw_noise_ensemble(plant, horizon, trials, config.seed, stream=ONLINE)
    states, outputs = simulate_ensemble(plant, plant.x0_mean + xi, inputs, W, V)
    return OnlineData(inputs, states, outputs)


def identified_models(config, sys, N, trials, L=None):
    """One fresh batch and identification per trial.

    Returns:
        stacked (A#, B#, C#) with a leading trial axis, and the L used.
    """
    L = effective_L(N, config.L, sys.n, sys.m) if L is None else L
    plant = sys.noise_free() if config.noise_free else sys
    As, Bs, Cs = [], [], []
    for t in range(trials):
        batch = collect_batch(plant, N, L, config.sigma_x0, config.sigma_u, rng=child_rng(config.seed, BATCH, N, t))
        model = identify(batch)
        As.append(model.A)
        Bs.append(model.B)
        Cs.append(model.C)
    return (np.array(As), np.array(Bs), np.array(Cs)), L


def _run_filters(sys, data, mats):
    A, B, C = mats
    return filter_ensemble(A, B, C, sys.Q, sys.R, sys.x0_mean, sys.P0, data.inputs, data.outputs)


def write_csv(path, header, rows, config, command):
    """CSV with a leading comment line carrying the config hash and seed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# command={command} config_hash={config.digest()} seed={config.seed}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path):
    """Inverse of :func:`write_csv`: (meta dict, header, rows as strings)."""
    lines = Path(path).read_text().splitlines()
    meta = dict(item.split("=", 1) for item in lines[0].lstrip("# ").split())
    reader = csv.reader(lines[1:])
    header = next(reader)
    return meta, header, list(reader)


def write_manifest(out_dir, config, command, outputs, summary):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "version": __version__,
        "seed": config.seed,
        "config_hash": config.digest(),
        "config": config.to_dict(),
        "outputs": [str(Path(p).name) for p in outputs],
        "summary": summary,
    }
    path = out_dir / f"{command}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def run_tracking(config: ExperimentConfig, out_dir=None):
    """One online run with the DDKF (and the MBKF for reference).

    Returns:
        summary dict; writes ``tracking.csv`` when ``out_dir`` is given.
    """
    sys = load_system(config)
    data = online_data(config, sys, trials=1)
    mats, L = identified_models(config, sys, config.N, 1)
    est_dd = _run_filters(sys, data, mats)[0]
    est_mb = _run_filters(sys, data, (sys.A, sys.B, sys.C))[0]
    x = data.states[0]
    err_dd = np.linalg.norm(x - est_dd, axis=1)
    err_mb = np.linalg.norm(x - est_mb, axis=1)
    n = sys.n
    summary = {
        "N": config.N,
        "L": L,
        "horizon": config.horizon,
        "max_error_ddkf": float(err_dd.max()),
        "max_error_after_start": float(err_dd[1:].max()) if len(err_dd) > 1 else 0.0,
        "mean_sq_error_ddkf": float(np.mean(err_dd**2)),
        "mean_sq_error_mbkf": float(np.mean(err_mb**2)),
    }
    if out_dir is not None:
        header = (["k"] + [f"x{i + 1}" for i in range(n)] + [f"xhat{i + 1}" for i in range(n)]
                  + ["err_norm_ddkf", "sq_err_ddkf", "err_norm_mbkf"])
        rows = ([k, *x[k], *est_dd[k], err_dd[k], err_dd[k] ** 2, err_mb[k]] for k in range(len(x)))
        path = write_csv(Path(out_dir) / "tracking.csv", header, rows, config, "track")
        write_manifest(out_dir, config, "track", [path], summary)
    return summary


def run_asee_sweep(config: ExperimentConfig, out_dir=None):
    """ASEE of the DDKF for each N in ``config.N_list`` plus the MBKF reference.

    Returns:
        list of rows (N, L, trials, asee_ddkf, asee_mbkf).
    """
    sys = load_system(config)
    data = online_data(config, sys)
    window = asee_window(config.horizon)
    est_mb = _run_filters(sys, data, (sys.A, sys.B, sys.C))
    ref = asee(data.states, est_mb, window=window)
    rows = []
    for N in config.N_list:
        mats, L = identified_models(config, sys, int(N), config.trials)
        est = _run_filters(sys, data, mats)
        rows.append((int(N), L, config.trials, asee(data.states, est, window=window), ref))
    if out_dir is not None:
        path = write_csv(Path(out_dir) / "asee.csv", ["N", "L", "trials", "asee_ddkf", "asee_mbkf"], rows, config, "asee")
        write_manifest(out_dir, config, "asee", [path], {"window": list(window), "rows": rows})
    return rows


def run_noise_sweep(config: ExperimentConfig, out_dir=None):
    """Steady-window MSE of the DDKF at N = ``config.N`` for each noise scale.

    Q, R and P0 (of the plant, the batch and the filter) are multiplied by
    the scale, so every noise source shrinks together; the underlying
    standard-normal draws are shared across scales.

    Returns:
        list of rows (scale, asee_ddkf, asee_mbkf, final_mse_ddkf).
    """
    base = load_system(config)
    window = asee_window(config.horizon)
    rows = []
    for f in config.noise_scales:
        sys = base.scaled_noise(float(f), include_initial=True)
        data = online_data(config, sys)
        mats, _ = identified_models(config, sys, config.N, config.trials)
        est = _run_filters(sys, data, mats)
        est_mb = _run_filters(sys, data, (sys.A, sys.B, sys.C))
        curve = mse_curve(data.states, est)
        rows.append((float(f), asee(data.states, est, window=window), asee(data.states, est_mb, window=window),
                     float(curve[-1])))
    if out_dir is not None:
        path = write_csv(Path(out_dir) / "noise.csv", ["scale", "asee_ddkf", "asee_mbkf", "final_mse_ddkf"],
                         rows, config, "noise")
        write_manifest(out_dir, config, "noise", [path], {"window": list(window), "rows": rows})
    return rows


def run_compare(config: ExperimentConfig, out_dir=None):
    """Per-step MSE of the MBKF and the DDKF (N = ``config.N``) on shared noise.

    Returns:
        dict with the two MSE curves and their steady-window averages.
    """
    sys = load_system(config)
    data = online_data(config, sys)
    window = asee_window(config.horizon)
    mats, L = identified_models(config, sys, config.N, config.trials)
    est_dd = _run_filters(sys, data, mats)
    est_mb = _run_filters(sys, data, (sys.A, sys.B, sys.C))
    mse_dd = mse_curve(data.states, est_dd)
    mse_mb = mse_curve(data.states, est_mb)
    result = {
        "N": config.N,
        "L": L,
        "mse_mbkf": mse_mb,
        "mse_ddkf": mse_dd,
        "steady_mbkf": asee(data.states, est_mb, window=window),
        "steady_ddkf": asee(data.states, est_dd, window=window),
    }
    if out_dir is not None:
        rows = ((k, mse_mb[k], mse_dd[k]) for k in range(len(mse_mb)))
        path = write_csv(Path(out_dir) / "compare.csv", ["k", "mse_mbkf", "mse_ddkf"], rows, config, "compare")
        summary = {k: v for k, v in result.items() if not isinstance(v, np.ndarray)}
        write_manifest(out_dir, config, "compare", [path], summary)
    return result


def _control_prior(config, sys):
    if config.control_prior == "plant":
        return sys.x0_mean, sys.P0
    return np.zeros(sys.n), config.sigma_x0**2 * np.eye(sys.n)


def closed_loop_noise(config, sys, trials, horizon):
    plant = sys.noise_free() if config.noise_free else sys
    _, W, V = draw_noise_ensemble(plant, horizon + 1, trials, config.seed, stream=CLOSED_LOOP)
    return W[:, :horizon], V


def run_lqg_table(config: ExperimentConfig, out_dir=None):
    """Average finite-horizon LQG cost of the model-based and data-driven designs.

    The true initial state is ``config.control_x0`` in every trial; both
    controllers see the same noise. The data-driven design identifies a
    fresh batch of ``config.control_N`` trajectories per trial.

    Returns:
        dict method -> J_ave, plus per-trial cost arrays under ``costs``.
    """
    sys = load_system(config)
    S1 = np.array(config.S1, dtype=float)
    S2 = np.array(config.S2, dtype=float)
    T, H = config.control_trials, config.control_horizon
    W, V = closed_loop_noise(config, sys, T, H)
    x0 = np.tile(np.asarray(config.control_x0, dtype=float), (T, 1))
    prior_x, prior_P = _control_prior(config, sys)
    plant = sys.noise_free() if config.noise_free else sys

    mb = lqg_gain(sys, S1, S2)
    cost_mb, *_ = closed_loop_ensemble(plant, mb, H, S1, S2, x0, W, V, filter_model=sys,
                                       filter_x0=prior_x, filter_P0=prior_P, Q=sys.Q, R=sys.R)
    (As, Bs, Cs), _ = identified_models(config, sys, config.control_N, T)
    Ks = np.array([lqg_gain(Matrices(a, b, c), S1, S2).K for a, b, c in zip(As, Bs, Cs)])
    dd = ControllerGain("lqg", Ks)
    cost_dd, *_ = closed_loop_ensemble(plant, dd, H, S1, S2, x0, W, V, filter_model=Matrices(As, Bs, Cs),
                                       filter_x0=prior_x, filter_P0=prior_P, Q=sys.Q, R=sys.R)
    result = {
        "MBLQG": average_cost(cost_mb),
        "DDLQG": average_cost(cost_dd),
        "trials": T,
        "costs": {"MBLQG": cost_mb, "DDLQG": cost_dd},
    }
    result["ratio"] = result["DDLQG"] / result["MBLQG"] if result["MBLQG"] > 0 else float("nan")
    if out_dir is not None:
        rows = [("MBLQG", result["MBLQG"], T), ("DDLQG", result["DDLQG"], T)]
        path = write_csv(Path(out_dir) / "lqg_table.csv", ["method", "J_ave", "trials"], rows, config, "lqg-table")
        write_manifest(out_dir, config, "lqg-table", [path],
                       {"MBLQG": result["MBLQG"], "DDLQG": result["DDLQG"], "ratio": result["ratio"]})
    return result

"""Command-line front end and experiment orchestrator.

Subcommands:

  simulate    one monitored trajectory -> trajectory.csv, lyapunov.csv,
              summary.json
  sweep       grid of (beta, eta) runs with replicas -> sweep.csv,
              sweep_medians.csv
  mismatch    generate a record, replay it through filters with perturbed
              parameters -> mismatch.csv
  classical   classical flow oracle -> classical_trajectory.csv,
              classical_exponents.json

Exit codes: 0 success, 2 configuration error, 3 numerical instability,
4 partial sweep failure. Every output embeds the fully resolved
configuration, so re-running from the embedded config reproduces the file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from statistics import median

import numpy as np

from .duffing_model import FrameOffset, LINDBLAD_KINDS, ModelParams
from .errors import ConfigError, SimulationError
from .fock_linalg import displacement, hermitize, trace_distance, vacuum_dm
from .lyapunov import (
    TWO_PI,
    LyapunovSchedule,
    classical_lyapunov,
    integrate_classical,
    quantum_lyapunov,
    write_series_csv,
)
from .moving_basis import RecenterPolicy
from .sme_engine import StepSchedule, simulate_trajectory


def default_dim(beta: float) -> int:
    """Basis size by regime: deeper in the classical limit the state needs
    more levels even with the moving basis."""
    if beta >= 0.5:
        return 80
    if beta >= 0.2:
        return 150
    return 200


def default_steps_per_cycle(beta: float) -> int:
    """Time resolution by regime; the near-classical runs need finer steps."""
    return 3000 if beta >= 0.3 else 6000


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved configuration of a single trajectory run.

    ``dim``, ``steps_per_cycle`` and ``output_stride`` may be left None in
    input and are then resolved from beta; ``dt`` may be given instead of
    ``steps_per_cycle`` but must correspond to an integer number of steps
    per drive cycle (within one part in 1e9).
    """

    beta: float = 0.1
    g: float = 0.3
    gamma: float = 0.125
    eta: float = 0.4
    drive_phase: float = 0.0
    lindblad_kind: str = "annihilation"
    dim: int | None = None
    steps_per_cycle: int | None = None
    dt: float | None = None
    cycles: int = 100
    seed: int = 0
    recenter_threshold: float = 0.5
    tail_levels: int = 5
    tail_tolerance: float = 1e-6
    epsilon: float = 1e-3
    renorm_stride: int = 10
    burn_in_cycles: float = 10.0
    output_stride: int | None = None
    output_dir: str = "."


CONFIG_FIELDS = tuple(RunConfig.__dataclass_fields__)


def resolve_config(cfg: RunConfig) -> RunConfig:
    """Fill in beta-dependent defaults and validate every invariant.

    Raises ConfigError naming the offending field.
    """
    try:
        params = ModelParams(beta=cfg.beta, g=cfg.g, gamma=cfg.gamma, eta=cfg.eta,
                             drive_phase=cfg.drive_phase,
                             lindblad_kind=cfg.lindblad_kind)
    except ValueError as exc:
        for name in ("beta", "gamma", "g", "eta", "drive_phase", "lindblad_kind"):
            if str(exc).startswith(name):
                raise ConfigError(str(exc), field=name) from None
        raise ConfigError(str(exc)) from None
    del params

    spc = cfg.steps_per_cycle
    if spc is None and cfg.dt is not None:
        spc_f = TWO_PI / cfg.dt
        spc = int(round(spc_f))
        if spc < 1 or abs(spc_f - spc) > 1e-9 * spc:
            raise ConfigError(
                f"dt={cfg.dt} is not an integer divider of the drive period",
                field="dt")
    if spc is None:
        spc = default_steps_per_cycle(cfg.beta)
    if spc < 1:
        raise ConfigError("steps_per_cycle must be >= 1", field="steps_per_cycle")
    dt = TWO_PI / spc
    if cfg.dt is not None and abs(cfg.dt - dt) > 1e-9 * dt:
        raise ConfigError(
            f"dt={cfg.dt} inconsistent with steps_per_cycle={spc}", field="dt")

    dim = cfg.dim if cfg.dim is not None else default_dim(cfg.beta)
    if dim < 2:
        raise ConfigError("dim must be >= 2", field="dim")
    if cfg.cycles < 1:
        raise ConfigError("cycles must be >= 1", field="cycles")
    if not (cfg.recenter_threshold > 0):
        raise ConfigError("recenter_threshold must be > 0",
                          field="recenter_threshold")
    if cfg.tail_levels < 1 or cfg.tail_levels >= dim:
        raise ConfigError("tail_levels must be in [1, dim)", field="tail_levels")
    if not (0.0 < cfg.tail_tolerance < 1.0):
        raise ConfigError("tail_tolerance must be in (0, 1)",
                          field="tail_tolerance")
    if not (cfg.epsilon > 0):
        raise ConfigError("epsilon must be > 0", field="epsilon")
    if cfg.renorm_stride < 1:
        raise ConfigError("renorm_stride must be >= 1", field="renorm_stride")
    if not (0 <= cfg.burn_in_cycles < cfg.cycles):
        raise ConfigError("burn_in_cycles must be in [0, cycles)",
                          field="burn_in_cycles")
    out_stride = cfg.output_stride
    if out_stride is None:
        out_stride = max(1, spc // 60)
    if out_stride < 1:
        raise ConfigError("output_stride must be >= 1", field="output_stride")
    return replace(cfg, dim=dim, steps_per_cycle=spc, dt=dt,
                   output_stride=out_stride)


def load_config(path) -> RunConfig:
    """Parse a flat JSON document with exactly the RunConfig field names.

    The returned config is validated but keeps None for the fields that
    auto-resolve from beta, so a later beta override re-resolves them.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
        data = json.loads(text)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - set(CONFIG_FIELDS)
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"unknown config key: {name}", field=name)
    cfg = RunConfig(**data)
    resolve_config(cfg)  # validate now so errors name the field
    return cfg


def model_params(cfg: RunConfig) -> ModelParams:
    return ModelParams(beta=cfg.beta, g=cfg.g, gamma=cfg.gamma, eta=cfg.eta,
                       drive_phase=cfg.drive_phase,
                       lindblad_kind=cfg.lindblad_kind)


def initial_state(cfg: RunConfig) -> tuple[np.ndarray, FrameOffset]:
    """Default initial condition: a coherent state at the right well
    minimum, i.e. the local vacuum in a frame displaced to q = 1/beta."""
    return vacuum_dm(cfg.dim), FrameOffset(1.0 / cfg.beta, 0.0)


def step_schedule(cfg: RunConfig) -> StepSchedule:
    return StepSchedule(
        dt=cfg.dt, n_steps=cfg.cycles * cfg.steps_per_cycle,
        recenter=RecenterPolicy(threshold=cfg.recenter_threshold,
                                tail_levels=cfg.tail_levels,
                                tail_tolerance=cfg.tail_tolerance),
        output_stride=cfg.output_stride)


def lyap_schedule(cfg: RunConfig) -> LyapunovSchedule:
    return LyapunovSchedule(epsilon=cfg.epsilon, renorm_stride=cfg.renorm_stride,
                            burn_in_cycles=cfg.burn_in_cycles)


def _post_burn_in_mean(times: np.ndarray, values: np.ndarray,
                       burn_in_time: float) -> float:
    mask = times > burn_in_time
    if not np.any(mask):
        return float("nan")
    return float(np.mean(values[mask]))


def run_quantum(cfg: RunConfig, stream: int = 0, record_full: bool = False):
    """One trajectory with Lyapunov tracking; returns the result object."""
    rho0, frame0 = initial_state(cfg)
    return quantum_lyapunov(rho0, frame0, model_params(cfg), step_schedule(cfg),
                            lyap_schedule(cfg), seed=(cfg.seed, stream),
                            record_full=record_full)


def _summary_metrics(cfg: RunConfig, result) -> dict:
    burn_time = cfg.burn_in_cycles * TWO_PI
    rec = result.record
    return {
        "lambda_plus": result.lambda_plus,
        "lambda_minus": result.lambda_minus,
        "mean_purity": _post_burn_in_mean(rec.times, rec.purity, burn_time),
        "final_purity": float(rec.purity[-1]),
        "max_tail_population": rec.max_tail_population,
    }


def _config_echo(cfg: RunConfig) -> str:
    return json.dumps(asdict(cfg), sort_keys=True)


def write_trajectory_csv(path, cfg: RunConfig, record) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# config = {_config_echo(cfg)}\n")
        f.write("t,dy,mean_q,mean_p,purity,q0,p0,dim_used\n")
        for i in range(len(record.times)):
            cells = (record.times[i], record.dy[i], record.mean_q[i],
                     record.mean_p[i], record.purity[i], record.q0[i],
                     record.p0[i])
            f.write(",".join(repr(float(c)) for c in cells)
                    + f",{record.dim}\n")


def cmd_simulate(cfg: RunConfig) -> int:
    """Run one trajectory and write trajectory.csv, lyapunov.csv, summary.json."""
    cfg = resolve_config(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run_quantum(cfg, stream=0)
    write_trajectory_csv(out / "trajectory.csv", cfg, result.record)
    write_series_csv(out / "lyapunov.csv", result)
    summary = _summary_metrics(cfg, result)
    summary["seed"] = cfg.seed
    summary["config"] = asdict(cfg)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True)
                                      + "\n", encoding="utf-8")
    print(f"simulate: lambda_plus={summary['lambda_plus']:.6f} "
          f"lambda_minus={summary['lambda_minus']:.6f} "
          f"mean_purity={summary['mean_purity']:.6f} -> {out}")
    return 0


@dataclass(frozen=True)
class SweepSpec:
    """Grid of (beta, eta) points with replicated trajectories."""

    beta_list: tuple = (1.0, 0.5, 0.4, 0.3, 0.2, 0.1)
    eta_list: tuple = (1.0, 0.6, 0.2)
    trajectories_per_point: int = 4
    base_seed: int = 0

    def __post_init__(self):
        if not self.beta_list or not self.eta_list:
            raise ConfigError("beta_list and eta_list must be non-empty",
                              field="beta_list")
        if any(not (b > 0) for b in self.beta_list):
            raise ConfigError("all beta values must be > 0", field="beta_list")
        if any(not (0.0 <= e <= 1.0) for e in self.eta_list):
            raise ConfigError("all eta values must be in [0, 1]",
                              field="eta_list")
        if self.trajectories_per_point < 1:
            raise ConfigError("trajectories_per_point must be >= 1",
                              field="trajectories_per_point")


def _sweep_tasks(spec: SweepSpec, base: RunConfig):
    """Per-point resolved configs; dim and steps auto-resolve per beta
    unless the base config pinned them explicitly."""
    tasks = []
    index = 0
    for beta in spec.beta_list:
        for eta in spec.eta_list:
            for _ in range(spec.trajectories_per_point):
                cfg = resolve_config(replace(
                    base, beta=beta, eta=eta, seed=spec.base_seed, dt=None))
                tasks.append((cfg, index))
                index += 1
    return tasks


def _sweep_worker(task):
    cfg, stream = task
    try:
        result = run_quantum(cfg, stream=stream)
        metrics = _summary_metrics(cfg, result)
        return {"beta": cfg.beta, "eta": cfg.eta, "seed": stream,
                "lambda_plus": metrics["lambda_plus"],
                "lambda_minus": metrics["lambda_minus"],
                "mean_purity": metrics["mean_purity"], "status": "ok"}
    except SimulationError as exc:
        return {"beta": cfg.beta, "eta": cfg.eta, "seed": stream,
                "lambda_plus": float("nan"), "lambda_minus": float("nan"),
                "mean_purity": float("nan"),
                "status": f"error:{type(exc).__name__}"}


def _parallel_map(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def cmd_sweep(spec: SweepSpec, base: RunConfig, workers: int = 1) -> int:
    """Run the grid and write per-run rows plus per-point medians."""
    out = Path(base.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = _sweep_tasks(spec, base)
    rows = _parallel_map(_sweep_worker, tasks, workers)

    echo = json.dumps({"sweep": asdict(spec), "base": asdict(base)},
                      sort_keys=True)
    cols = ("beta", "eta", "seed", "lambda_plus", "lambda_minus",
            "mean_purity", "status")
    with open(out / "sweep.csv", "w", encoding="utf-8") as f:
        f.write(f"# config = {echo}\n")
        f.write(",".join(cols) + "\n")
        for r in rows:
            f.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                             for c in cols) + "\n")

    with open(out / "sweep_medians.csv", "w", encoding="utf-8") as f:
        f.write(f"# config = {echo}\n")
        f.write("beta,eta,n_ok,lambda_plus_median,lambda_minus_median,"
                "mean_purity_median\n")
        for beta in spec.beta_list:
            for eta in spec.eta_list:
                ok = [r for r in rows
                      if r["beta"] == beta and r["eta"] == eta
                      and r["status"] == "ok"]
                if ok:
                    f.write(f"{beta!r},{eta!r},{len(ok)},"
                            f"{median(r['lambda_plus'] for r in ok)!r},"
                            f"{median(r['lambda_minus'] for r in ok)!r},"
                            f"{median(r['mean_purity'] for r in ok)!r}\n")
                else:
                    f.write(f"{beta!r},{eta!r},0,nan,nan,nan\n")

    n_ok = sum(r["status"] == "ok" for r in rows)
    frac = n_ok / len(rows)
    print(f"sweep: {n_ok}/{len(rows)} runs succeeded -> {out}")
    return 0 if frac >= 0.9 else 4


@dataclass(frozen=True)
class MismatchSpec:
    """Truth run plus per-parameter relative filter errors.

    Each error is applied one parameter at a time (both signs) and once
    jointly to all parameters. The drive_phase entry is applied as an
    absolute offset in radians (a relative error of an exactly zero phase
    would be empty).
    """

    truth: RunConfig
    filter_errors: dict = field(default_factory=lambda: {
        "g": 0.05, "beta": 0.05, "gamma": 0.05, "eta": 0.05,
        "drive_phase": 0.05})

    def __post_init__(self):
        for name, err in self.filter_errors.items():
            if name not in ("g", "beta", "gamma", "eta", "drive_phase"):
                raise ConfigError(f"unknown mismatch parameter: {name}",
                                  field=name)
            if abs(err) > 0.5:
                raise ConfigError(f"relative error for {name} exceeds 0.5",
                                  field=name)


def perturbed_params(truth: ModelParams, errors: dict[str, float]) -> ModelParams:
    """Apply relative errors (absolute for drive_phase); eta is clipped
    into [0, 1]."""
    kw = {}
    for name, rel in errors.items():
        if name == "drive_phase":
            kw[name] = truth.drive_phase + rel
        elif name == "eta":
            kw[name] = min(1.0, max(0.0, truth.eta * (1.0 + rel)))
        else:
            kw[name] = getattr(truth, name) * (1.0 + rel)
    return replace(truth, **kw)


class _SnapshotObserver:
    """Collect (rho, frame) every ``stride`` steps from t >= t_min."""

    def __init__(self, stride: int, t_min: float):
        self.stride = stride
        self.t_min = t_min
        self.states: list[tuple[np.ndarray, FrameOffset]] = []
        self._n = 0

    def observe(self, lane, t):
        if self._n % self.stride == 0 and t >= self.t_min:
            self.states.append((lane.density(), lane.frame))
        self._n += 1

    def finish(self, t):
        pass


def _frame_distance(state_a, state_b) -> float:
    """Trace distance of two states given in possibly different frames."""
    rho_a, frame_a = state_a
    rho_b, frame_b = state_b
    rel = frame_b.alpha - frame_a.alpha
    if rel != 0:
        d = displacement(rel, rho_b.shape[0])
        rho_b = hermitize(d @ rho_b @ d.conj().T)
    return trace_distance(rho_a, rho_b)


def _mismatch_worker(task):
    """Replay the stored record through one perturbed filter.

    Truth states come from memory-mapped snapshot files written once by
    the parent (the matched replay is bit-identical to the generating
    run), so no per-worker truth recomputation is needed.
    """
    cfg, label, rel, errors, record_path, states_path, frames_path = task
    burn_time = cfg.burn_in_cycles * TWO_PI
    stride = max(1, cfg.steps_per_cycle // 4)
    row = {"perturbed_parameter": label, "relative_error": rel,
           "lambda_plus_filter": float("nan"),
           "lambda_minus_filter": float("nan"),
           "mean_trace_distance": float("nan"), "status": "ok"}
    record = np.load(record_path, mmap_mode="r")
    truth_states = np.load(states_path, mmap_mode="r")
    truth_frames = np.load(frames_path)
    rho0, frame0 = initial_state(cfg)
    try:
        fparams = perturbed_params(model_params(cfg), errors)
        filt_snap = _SnapshotObserver(stride, burn_time)
        result = quantum_lyapunov(rho0, frame0, fparams, step_schedule(cfg),
                                  lyap_schedule(cfg), seed=(cfg.seed, 0),
                                  replay_record=record,
                                  extra_observer=filt_snap)
    except (SimulationError, ValueError) as exc:
        row["status"] = f"error:{type(exc).__name__}"
        return row
    dists = [
        _frame_distance((np.asarray(truth_states[i]),
                         FrameOffset(truth_frames[i, 0], truth_frames[i, 1])),
                        fs)
        for i, fs in enumerate(filt_snap.states)
    ]
    row["lambda_plus_filter"] = result.lambda_plus
    row["lambda_minus_filter"] = result.lambda_minus
    row["mean_trace_distance"] = float(np.mean(dists)) if dists else float("nan")
    return row


def cmd_mismatch(spec: MismatchSpec, workers: int = 1) -> int:
    """Generate a record with the truth parameters, replay it through
    mismatched filters, and write mismatch.csv."""
    import tempfile

    cfg = resolve_config(spec.truth)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    burn_time = cfg.burn_in_cycles * TWO_PI
    stride = max(1, cfg.steps_per_cycle // 4)

    rho0, frame0 = initial_state(cfg)
    truth_snap = _SnapshotObserver(stride, burn_time)
    truth = quantum_lyapunov(rho0, frame0, model_params(cfg), step_schedule(cfg),
                             lyap_schedule(cfg), seed=(cfg.seed, 0),
                             record_full=True, extra_observer=truth_snap)

    cases = [("none", 0.0, {})]
    for name, err in spec.filter_errors.items():
        cases.append((name, err, {name: err}))
        cases.append((name, -err, {name: -err}))
    if spec.filter_errors:
        joint = max(spec.filter_errors.values())
        cases.append(("joint", joint, dict(spec.filter_errors)))
        cases.append(("joint", -joint,
                      {k: -v for k, v in spec.filter_errors.items()}))

    with tempfile.TemporaryDirectory(prefix="qduffing_mismatch_") as tmp:
        record_path = str(Path(tmp) / "record.npy")
        states_path = str(Path(tmp) / "truth_states.npy")
        frames_path = str(Path(tmp) / "truth_frames.npy")
        np.save(record_path, truth.record.record)
        np.save(states_path,
                np.stack([s for s, _ in truth_snap.states])
                if truth_snap.states else np.zeros((0, cfg.dim, cfg.dim),
                                                   dtype=complex))
        np.save(frames_path,
                np.array([[f.q0, f.p0] for _, f in truth_snap.states])
                if truth_snap.states else np.zeros((0, 2)))

        tasks = [(cfg, label, rel, errors, record_path, states_path,
                  frames_path) for label, rel, errors in cases]
        rows = _parallel_map(_mismatch_worker, tasks, workers)

    echo = json.dumps({"truth": asdict(cfg), "filter_errors": spec.filter_errors},
                      sort_keys=True)
    cols = ("perturbed_parameter", "relative_error", "lambda_plus_filter",
            "lambda_minus_filter", "mean_trace_distance", "status")
    with open(out / "mismatch.csv", "w", encoding="utf-8") as f:
        f.write(f"# config = {echo}\n")
        f.write(f"# truth_lambda_plus = {truth.lambda_plus!r}\n")
        f.write(f"# truth_lambda_minus = {truth.lambda_minus!r}\n")
        f.write(",".join(cols) + "\n")
        for r in rows:
            f.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                             for c in cols) + "\n")
    n_ok = sum(r["status"] == "ok" for r in rows)
    print(f"mismatch: {n_ok}/{len(rows)} filters succeeded, "
          f"truth lambda_plus={truth.lambda_plus:.6f} -> {out}")
    return 0 if n_ok == len(rows) else 3


def cmd_classical(params: ModelParams, cycles: float, output_dir: str,
                  dt: float = TWO_PI / 400.0) -> int:
    """Integrate the classical oracle and write trajectory + exponents."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    total_time = cycles * TWO_PI
    n_steps = int(round(total_time / dt))
    sample_stride = max(1, n_steps // 20000)
    ts, xs, ys = integrate_classical(params, total_time, dt,
                                     sample_stride=sample_stride)
    lam_p, lam_m = classical_lyapunov(params, total_time, dt)
    echo = {"g": params.g, "gamma": params.gamma,
            "drive_phase": params.drive_phase, "cycles": cycles, "dt": dt}
    with open(out / "classical_trajectory.csv", "w", encoding="utf-8") as f:
        f.write(f"# config = {json.dumps(echo, sort_keys=True)}\n")
        f.write("t,x,y\n")
        for t, x, y in zip(ts, xs, ys):
            f.write(f"{float(t)!r},{float(x)!r},{float(y)!r}\n")
    payload = {"lambda_plus": lam_p, "lambda_minus": lam_m, "config": echo}
    (out / "classical_exponents.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"classical: lambda_plus={lam_p:.6f} lambda_minus={lam_m:.6f} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _resolve_workers(value) -> int:
    if value is not None:
        return max(1, int(value))
    env = os.environ.get("QDUFFING_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError("QDUFFING_WORKERS must be an integer",
                              field="workers") from None
    return max(1, os.cpu_count() or 1)


def _add_override_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", type=str, default=None,
                   help="flat JSON config file (RunConfig field names)")
    p.add_argument("--beta", type=float, default=None,
                   help="classicality scale (> 0)")
    p.add_argument("--eta", type=float, default=None,
                   help="measurement efficiency in [0, 1]")
    p.add_argument("--g", type=float, default=None, help="drive coefficient")
    p.add_argument("--gamma", type=float, default=None,
                   help="damping/measurement rate")
    p.add_argument("--drive-phase", type=float, default=None,
                   help="phase offset of the cosine drive (radians)")
    p.add_argument("--lindblad-kind", choices=LINDBLAD_KINDS, default=None)
    p.add_argument("--dim", type=int, default=None,
                   help="Fock basis size (default: by beta regime)")
    p.add_argument("--dt-steps-per-cycle", type=int, default=None,
                   help="time steps per drive cycle (default: by beta regime)")
    p.add_argument("--cycles", type=int, default=None,
                   help="drive cycles to integrate")
    p.add_argument("--burn-in-cycles", type=float, default=None,
                   help="cycles discarded before exponent/purity averaging")
    p.add_argument("--seed", type=int, default=None, help="base RNG seed")
    p.add_argument("--out", type=str, default=None, help="output directory")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel workers (env QDUFFING_WORKERS as fallback)")


_OVERRIDE_MAP = {
    "beta": "beta", "eta": "eta", "g": "g", "gamma": "gamma",
    "drive_phase": "drive_phase", "lindblad_kind": "lindblad_kind",
    "dim": "dim", "dt_steps_per_cycle": "steps_per_cycle", "cycles": "cycles",
    "burn_in_cycles": "burn_in_cycles", "seed": "seed", "out": "output_dir",
}


def _config_from_args(args) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    overrides = {}
    for arg_name, field_name in _OVERRIDE_MAP.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            overrides[field_name] = value
    if "steps_per_cycle" in overrides:
        overrides["dt"] = None
    raw = replace(cfg, **overrides)
    resolve_config(raw)  # validate eagerly; commands resolve per use
    return raw


def _parse_float_list(text: str, field_name: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"cannot parse number list: {text}",
                          field=field_name) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qduffing",
        description="Monitored quantum Duffing oscillator: trajectories, "
                    "Lyapunov exponents, parameter sweeps.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="one trajectory")
    _add_override_flags(p_sim)

    p_sweep = sub.add_parser("sweep", help="grid of (beta, eta) runs")
    _add_override_flags(p_sweep)
    p_sweep.add_argument("--betas", type=str, default=None,
                         help="comma-separated beta grid "
                              "(default 1.0,0.5,0.4,0.3,0.2,0.1)")
    p_sweep.add_argument("--etas", type=str, default=None,
                         help="comma-separated eta grid (default 1.0,0.6,0.2)")
    p_sweep.add_argument("--replicas", type=int, default=4,
                         help="trajectories per grid point")

    p_mis = sub.add_parser("mismatch", help="filter with parameter errors")
    _add_override_flags(p_mis)
    p_mis.add_argument("--error", type=float, default=0.05,
                       help="relative error magnitude per parameter "
                            "(absolute radians for the drive phase)")

    p_cls = sub.add_parser("classical", help="classical flow oracle")
    p_cls.add_argument("--g", type=float, default=0.3)
    p_cls.add_argument("--gamma", type=float, default=0.125)
    p_cls.add_argument("--drive-phase", type=float, default=0.0)
    p_cls.add_argument("--cycles", type=float, default=1000.0)
    p_cls.add_argument("--steps-per-cycle", type=int, default=400)
    p_cls.add_argument("--out", type=str, default=".")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            cfg = _config_from_args(args)
            return cmd_simulate(cfg)
        if args.command == "sweep":
            cfg = _config_from_args(args)
            spec = SweepSpec(
                beta_list=(_parse_float_list(args.betas, "beta_list")
                           if args.betas else SweepSpec.beta_list),
                eta_list=(_parse_float_list(args.etas, "eta_list")
                          if args.etas else SweepSpec.eta_list),
                trajectories_per_point=args.replicas,
                base_seed=cfg.seed)
            return cmd_sweep(spec, cfg, workers=_resolve_workers(args.workers))
        if args.command == "mismatch":
            cfg = _config_from_args(args)
            err = args.error
            spec = MismatchSpec(truth=cfg, filter_errors={
                "g": err, "beta": err, "gamma": err, "eta": err,
                "drive_phase": err})
            return cmd_mismatch(spec, workers=_resolve_workers(args.workers))
        if args.command == "classical":
            try:
                params = ModelParams(beta=1.0, g=args.g, gamma=args.gamma,
                                     eta=1.0, drive_phase=args.drive_phase)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            if args.cycles <= 0:
                raise ConfigError("cycles must be > 0", field="cycles")
            return cmd_classical(params, args.cycles, args.out,
                                 dt=TWO_PI / args.steps_per_cycle)
        raise ConfigError(f"unknown command {args.command}")
    except ConfigError as exc:
        name = f" (field: {exc.field})" if exc.field else ""
        print(f"configuration error{name}: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"numerical instability: {exc}\n"
              f"try a larger --dim or more --dt-steps-per-cycle",
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

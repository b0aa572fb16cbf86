"""Experiment harness: seeded truth simulation, paired filter runs, artifacts.

A run simulates the complete benchmark with RK4 under a sine excitation,
derives noisy measurements of the first state, and feeds the identical
measurement sequence to a traditional square-root UKF (built on the
deliberately incomplete model) and to the sparse joint filter (incomplete
model plus library coefficients). Traces, error metrics and plot scripts are
written as CSV/gnuplot artifacts.
"""

import csv
import dataclasses
import io
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from .library import CoefficientReport, FunctionLibrary, builtin_library, dominant_terms, library_from_names
from .models import (
    Benchmark,
    DiscreteModel,
    PartialModel,
    benchmark_by_name,
    euler_discretize,
    euler_discretize_slot,
    first_state_observation,
    make_joint_model,
    rk4_step,
)
from .sparse import SparseJointUKF, SparsityConfig, active_count
from .sqrtlinalg import DowndateFailure, NotPositiveDefinite, RankDeficient, SingularFactor
from .squkf import NoiseSpec, SquareRootUKF, compute_weights, initial_state

__all__ = [
    "ConfigError",
    "EmptyWindow",
    "ExperimentConfig",
    "TruthData",
    "RunTrace",
    "MetricsSummary",
    "load_config",
    "default_duffing_config",
    "default_golf_config",
    "simulate_truth",
    "run_experiment",
    "compute_rmse",
    "export_trace",
]

_NUMERICAL_ERRORS = (DowndateFailure, NotPositiveDefinite, RankDeficient, SingularFactor)


class ConfigError(ValueError):
    """Experiment configuration is malformed; the message names the field."""


class EmptyWindow(ValueError):
    """Requested metrics window contains no trace records."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one seeded experiment run."""

    benchmark: str
    library: object  # builtin key or tuple of term names
    seed: int
    dt: float = 0.01
    horizon: float = 20.0
    excitation_amplitude: float = 1.0
    excitation_frequency: float = 1.0
    truth_x0: tuple = (1.0, 0.0)
    estimate_offset: tuple = (0.5, 0.5)
    theta0: float = 1e-3
    q_x: float = 1e-6
    q_theta: float = 1e-4
    r: float = 1e-4
    process_noise_on_truth: bool = False
    alpha: float = 1e-3
    beta: float = 2.0
    kappa: float = 0.0
    weight_mode: str = "standard"
    sparsity: SparsityConfig = field(default_factory=SparsityConfig)
    benchmark_params: Optional[tuple] = None
    out_dir: Optional[str] = None

    @property
    def n_steps(self):
        return int(round(self.horizon / self.dt))

    def resolve_benchmark(self) -> Benchmark:
        return benchmark_by_name(self.benchmark, self.benchmark_params)

    def resolve_library(self) -> FunctionLibrary:
        if isinstance(self.library, str):
            return builtin_library(self.library)
        return library_from_names(list(self.library), n_x=len(self.truth_x0))

    def validate(self):
        """Raise ConfigError naming the first offending field."""
        try:
            bench = self.resolve_benchmark()
        except KeyError as exc:
            raise ConfigError(f"benchmark: {exc.args[0]}") from None
        try:
            lib = self.resolve_library()
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"library: {exc}") from None
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed: must be a non-negative integer, got {self.seed!r}")
        if self.dt <= 0:
            raise ConfigError(f"dt: must be positive, got {self.dt}")
        if self.horizon < self.dt:
            raise ConfigError(f"horizon: must cover at least one step of dt={self.dt}")
        if len(self.truth_x0) != bench.n_x:
            raise ConfigError(
                f"initial.truth: expected {bench.n_x} components, got {len(self.truth_x0)}"
            )
        if len(self.estimate_offset) != bench.n_x:
            raise ConfigError(
                f"initial.estimate_offset: expected {bench.n_x} components, got {len(self.estimate_offset)}"
            )
        for name in ("q_x", "q_theta", "r"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"noise.{name}: must be positive, got {getattr(self, name)}")
        if self.weight_mode not in ("standard", "paper"):
            raise ConfigError(f"ut.weight_mode: must be 'standard' or 'paper', got {self.weight_mode!r}")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"ut.alpha: must be in (0, 1], got {self.alpha}")
        if self.sparsity.n_theta_act > lib.n_theta:
            raise ConfigError(
                f"sparsity.n_theta_act: {self.sparsity.n_theta_act} exceeds the "
                f"{lib.n_theta} library terms"
            )
        if self.benchmark_params is not None and len(self.benchmark_params) != len(bench.params):
            raise ConfigError(
                f"benchmark_params: expected {len(bench.params)} values, got {len(self.benchmark_params)}"
            )
        return self


# --- config parsing -----------------------------------------------------------

_TOP_KEYS = {
    "benchmark", "library", "seed", "dt", "horizon", "excitation", "initial",
    "noise", "ut", "sparsity", "benchmark_params", "out_dir",
}
_SECTION_KEYS = {
    "excitation": {"amplitude", "frequency"},
    "initial": {"truth", "estimate_offset", "theta0"},
    "noise": {"q_x", "q_theta", "r", "process_noise_on_truth"},
    "ut": {"alpha", "beta", "kappa", "weight_mode"},
    "sparsity": {"lambda_tilde", "n_theta_act", "max_pseudo_iters", "gamma", "r_pm", "pseudo_predict"},
}


def _check_keys(mapping, allowed, section):
    for key in mapping:
        if key not in allowed:
            where = f" in section '{section}'" if section else ""
            raise ConfigError(f"unknown key '{key}'{where}")


def _section(data, name):
    sec = data.get(name, {})
    if sec is None:
        sec = {}
    if not isinstance(sec, dict):
        raise ConfigError(f"{name}: expected a mapping, got {type(sec).__name__}")
    _check_keys(sec, _SECTION_KEYS[name], name)
    return sec


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"config root: expected a mapping, got {type(data).__name__}")
    _check_keys(data, _TOP_KEYS, "")
    for required in ("benchmark", "library", "seed"):
        if required not in data:
            raise ConfigError(f"{required}: missing required key")

    library = data["library"]
    if isinstance(library, dict):
        _check_keys(library, {"terms"}, "library")
        if "terms" not in library:
            raise ConfigError("library.terms: missing for inline library")
        library = tuple(library["terms"])
    elif isinstance(library, (list, tuple)):
        library = tuple(library)
    elif not isinstance(library, str):
        raise ConfigError(f"library: expected a key string, list of terms or mapping, got {library!r}")

    exc = _section(data, "excitation")
    ini = _section(data, "initial")
    noi = _section(data, "noise")
    ut = _section(data, "ut")
    spa = _section(data, "sparsity")

    kwargs = dict(benchmark=data["benchmark"], library=library, seed=data["seed"])
    for key in ("dt", "horizon"):
        if key in data:
            kwargs[key] = float(data[key])
    if data.get("benchmark_params") is not None:
        kwargs["benchmark_params"] = tuple(float(v) for v in data["benchmark_params"])
    if data.get("out_dir") is not None:
        kwargs["out_dir"] = str(data["out_dir"])
    if "amplitude" in exc:
        kwargs["excitation_amplitude"] = float(exc["amplitude"])
    if "frequency" in exc:
        kwargs["excitation_frequency"] = float(exc["frequency"])
    if "truth" in ini:
        kwargs["truth_x0"] = tuple(float(v) for v in ini["truth"])
    if "estimate_offset" in ini:
        kwargs["estimate_offset"] = tuple(float(v) for v in ini["estimate_offset"])
    if "theta0" in ini:
        kwargs["theta0"] = float(ini["theta0"])
    for key in ("q_x", "q_theta", "r"):
        if key in noi:
            kwargs[key] = float(noi[key])
    if "process_noise_on_truth" in noi:
        kwargs["process_noise_on_truth"] = bool(noi["process_noise_on_truth"])
    for key in ("alpha", "beta", "kappa"):
        if key in ut:
            kwargs[key] = float(ut[key])
    if "weight_mode" in ut:
        kwargs["weight_mode"] = str(ut["weight_mode"])
    if spa:
        defaults = SparsityConfig()
        try:
            kwargs["sparsity"] = dataclasses.replace(defaults, **spa)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"sparsity: {err}") from None

    try:
        cfg = ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    """Parse and validate a YAML experiment config file."""
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = yaml.safe_load(handle)
        except yaml.YAMLError as err:
            raise ConfigError(f"config file {path}: {err}") from None
    return config_from_dict(data if data is not None else {})


def default_duffing_config(seed=0, library="duffing_psi1", out_dir=None) -> ExperimentConfig:
    """Duffing oscillator setup with the cubic stiffness treated as unknown."""
    return ExperimentConfig(
        benchmark="duffing",
        library=library,
        seed=seed,
        dt=0.01,
        horizon=20.0,
        excitation_amplitude=1.0,
        excitation_frequency=1.0,
        truth_x0=(1.0, 0.0),
        estimate_offset=(0.5, 0.5),
        out_dir=out_dir,
    ).validate()


def default_golf_config(seed=0, out_dir=None) -> ExperimentConfig:
    """Golf-robot setup with the friction torque treated as unknown."""
    return ExperimentConfig(
        benchmark="golf",
        library="golf_psi",
        seed=seed,
        dt=0.01,
        horizon=20.0,
        excitation_amplitude=1.0,
        excitation_frequency=2.0,
        truth_x0=(0.0, 0.0),
        estimate_offset=(0.3, 0.0),
        out_dir=out_dir,
    ).validate()


# --- simulation ----------------------------------------------------------------


@dataclass(frozen=True)
class TruthData:
    """Seeded ground truth: times, inputs, states and noisy measurements."""

    t: np.ndarray
    u: np.ndarray
    x: np.ndarray
    y: np.ndarray


def simulate_truth(config: ExperimentConfig) -> TruthData:
    """Integrate the complete benchmark with RK4 and draw noisy measurements.

    The excitation is zero-order held over each step; measurement noise is
    drawn for every record from the seeded generator. Optional process noise
    on the truth is injected after each step and defaults to off, so model
    mismatch stays the only disturbance.
    """
    config.validate()
    bench = config.resolve_benchmark()
    rng = np.random.default_rng(config.seed)
    n = config.n_steps
    t = np.arange(n + 1) * config.dt
    u = config.excitation_amplitude * np.sin(config.excitation_frequency * t[:n])

    # Measurement noise first so the draw sequence does not depend on the
    # process-noise flag.
    v = rng.normal(0.0, np.sqrt(config.r), size=n + 1)

    x = np.empty((n + 1, bench.n_x))
    x[0] = config.truth_x0
    for k in range(n):
        x[k + 1] = rk4_step(bench.complete, x[k], u[k], config.dt)
        if config.process_noise_on_truth:
            x[k + 1] += rng.normal(0.0, np.sqrt(config.q_x), size=bench.n_x)
    if not np.isfinite(x).all():
        raise ConfigError("simulation diverged; check benchmark_params/excitation scales")
    y = x[:, 0] + v
    return TruthData(t=t, u=u, x=x, y=y)


@dataclass
class RunTrace:
    """Synchronized per-step records of one paired filter run."""

    config: ExperimentConfig
    term_names: tuple
    t: np.ndarray
    truth: np.ndarray
    y: np.ndarray
    sq_est: np.ndarray
    jsq_est: np.ndarray
    theta: np.ndarray
    active_count: np.ndarray
    pseudo_iters: np.ndarray
    aborted_reason: Optional[str] = None
    sq_recoveries: int = 0
    jsq_recoveries: int = 0

    @property
    def n_records(self):
        return self.t.shape[0]

    @property
    def n_x(self):
        return self.truth.shape[1]

    @property
    def n_theta(self):
        return self.theta.shape[1]


@dataclass(frozen=True)
class MetricsSummary:
    """Per-filter, per-component RMSE plus the final coefficient report."""

    window_start: float
    window_end: float
    rmse_full_squkf: np.ndarray
    rmse_full_jsqukf: np.ndarray
    rmse_window_squkf: np.ndarray
    rmse_window_jsqukf: np.ndarray
    final_report: CoefficientReport


def _rmse(estimate, truth):
    return np.sqrt(np.mean((estimate - truth) ** 2, axis=0))


def compute_rmse(trace: RunTrace, window=None) -> MetricsSummary:
    """RMSE over the full horizon and over a (start, end] time window.

    The window defaults to the final half of the horizon, after the
    identification transient.
    """
    if window is None:
        window = (trace.config.horizon / 2.0, trace.config.horizon)
    start, end = float(window[0]), float(window[1])
    mask = (trace.t > start) & (trace.t <= end)
    if not mask.any():
        raise EmptyWindow(f"no trace records in window ({start}, {end}]")

    final_report = dominant_terms(
        trace.config.resolve_library(),
        trace.theta[-1],
        trace.config.sparsity.lambda_tilde,
        step=trace.n_records - 1,
    )
    return MetricsSummary(
        window_start=start,
        window_end=end,
        rmse_full_squkf=_rmse(trace.sq_est, trace.truth),
        rmse_full_jsqukf=_rmse(trace.jsq_est, trace.truth),
        rmse_window_squkf=_rmse(trace.sq_est[mask], trace.truth[mask]),
        rmse_window_jsqukf=_rmse(trace.jsq_est[mask], trace.truth[mask]),
        final_report=final_report,
    )


def run_experiment(config: ExperimentConfig):
    """Run both filters against one seeded truth realization.

    Returns (RunTrace, MetricsSummary). Both filters see the same
    measurement sequence; the traditional filter runs the incomplete model,
    the joint filter the library-augmented one. A numerically irrecoverable
    step aborts the run with a diagnostic instead of truncating silently.
    """
    config.validate()
    bench = config.resolve_benchmark()
    lib = config.resolve_library()
    truth = simulate_truth(config)

    n_x, n_theta = bench.n_x, lib.n_theta
    dt = config.dt
    n = config.n_steps

    incomplete = DiscreteModel(
        n_x=n_x, m=1,
        transition=euler_discretize(bench.incomplete, dt),
        observation=first_state_observation,
    )
    partial = PartialModel(
        n_x=n_x, m=1,
        transition=euler_discretize_slot(bench.slot_derivative, dt),
        observation=first_state_observation,
    )
    joint = make_joint_model(partial, lib)

    noise = NoiseSpec(
        q_x=config.q_x * np.eye(n_x),
        q_theta=config.q_theta * np.eye(n_theta),
        r=config.r * np.eye(1),
    )
    sq_filter = SquareRootUKF(
        incomplete, noise.q_x, noise.r,
        compute_weights(config.alpha, config.beta, config.kappa, n_x, config.weight_mode),
    )
    jsq_filter = SparseJointUKF(
        joint, n_x, noise.q_joint, noise.r,
        compute_weights(config.alpha, config.beta, config.kappa, n_x + n_theta, config.weight_mode),
        config.sparsity,
    )

    x0_est = np.asarray(config.truth_x0, dtype=float) + np.asarray(config.estimate_offset, dtype=float)
    sq_state = initial_state(x0_est, noise.q_x)
    jsq_state = initial_state(
        np.concatenate([x0_est, np.full(n_theta, config.theta0)]), noise.q_joint
    )

    sq_est = np.empty((n + 1, n_x))
    jsq_est = np.empty((n + 1, n_x))
    theta = np.empty((n + 1, n_theta))
    active = np.zeros(n + 1, dtype=int)
    pseudo = np.zeros(n + 1, dtype=int)

    sq_est[0] = sq_state.x
    jsq_est[0] = jsq_state.x[:n_x]
    theta[0] = jsq_state.x[n_x:]
    active[0] = active_count(theta[0], config.sparsity.lambda_tilde)

    aborted = None
    records = n + 1
    for k in range(1, n + 1):
        u_k, y_k = truth.u[k - 1], truth.y[k]
        try:
            sq_state = sq_filter.step(sq_state, u_k, y_k)
            jsq_state, diag = jsq_filter.step(jsq_state, u_k, y_k)
        except _NUMERICAL_ERRORS as err:
            aborted = f"step {k}: {type(err).__name__}: {err}"
            records = k
            break
        if not (np.isfinite(sq_state.x).all() and np.isfinite(jsq_state.x).all()):
            aborted = f"step {k}: non-finite filter state"
            records = k
            break
        sq_est[k] = sq_state.x
        jsq_est[k] = jsq_state.x[:n_x]
        theta[k] = jsq_state.x[n_x:]
        active[k] = active_count(theta[k], config.sparsity.lambda_tilde)
        pseudo[k] = diag.iterations

    trace = RunTrace(
        config=config,
        term_names=lib.names,
        t=truth.t[:records],
        truth=truth.x[:records],
        y=truth.y[:records],
        sq_est=sq_est[:records],
        jsq_est=jsq_est[:records],
        theta=theta[:records],
        active_count=active[:records],
        pseudo_iters=pseudo[:records],
        aborted_reason=aborted,
        sq_recoveries=sq_filter.downdate_recoveries,
        jsq_recoveries=jsq_filter.filter.downdate_recoveries + jsq_filter.pseudo_filter.downdate_recoveries,
    )
    window = (config.horizon / 2.0, config.horizon)
    metrics = compute_rmse(trace, window) if records > 1 else None
    return trace, metrics


# --- artifact export ------------------------------------------------------------


def _fmt(value):
    return repr(float(value))


def trace_header(trace: RunTrace):
    cols = ["t"]
    cols += [f"truth_x{i + 1}" for i in range(trace.n_x)]
    cols += ["y"]
    cols += [f"sq_x{i + 1}" for i in range(trace.n_x)]
    cols += [f"jsq_x{i + 1}" for i in range(trace.n_x)]
    cols += [f"theta_{i + 1}" for i in range(trace.n_theta)]
    cols += ["active_count", "pseudo_iters"]
    return cols


def export_trace(trace: RunTrace, directory, metrics: Optional[MetricsSummary] = None):
    """Write trace.csv, metrics.csv, report.txt and plots.gp into a directory.

    Returns the list of written paths. Numeric CSV cells use repr floats so a
    parse round-trip is exact.
    """
    os.makedirs(directory, exist_ok=True)
    written = []

    header = trace_header(trace)
    expected = 3 * trace.n_x + trace.n_theta + 4
    assert len(header) == expected, f"column count {len(header)} != {expected}"

    trace_path = os.path.join(directory, "trace.csv")
    with open(trace_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for k in range(trace.n_records):
            row = [_fmt(trace.t[k])]
            row += [_fmt(v) for v in trace.truth[k]]
            row += [_fmt(trace.y[k])]
            row += [_fmt(v) for v in trace.sq_est[k]]
            row += [_fmt(v) for v in trace.jsq_est[k]]
            row += [_fmt(v) for v in trace.theta[k]]
            row += [str(int(trace.active_count[k])), str(int(trace.pseudo_iters[k]))]
            writer.writerow(row)
    written.append(trace_path)

    metrics_path = os.path.join(directory, "metrics.csv")
    with open(metrics_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["filter", "component", "window", "rmse"])
        if metrics is not None:
            for name, full, win in (
                ("squkf", metrics.rmse_full_squkf, metrics.rmse_window_squkf),
                ("jsqukf", metrics.rmse_full_jsqukf, metrics.rmse_window_jsqukf),
            ):
                for i in range(trace.n_x):
                    writer.writerow([name, f"x{i + 1}", "full", _fmt(full[i])])
                    writer.writerow([name, f"x{i + 1}", "post_transient", _fmt(win[i])])
    written.append(metrics_path)

    report_path = os.path.join(directory, "report.txt")
    with open(report_path, "w", encoding="utf-8") as handle:
        handle.write(_render_report(trace, metrics))
    written.append(report_path)

    plots_path = os.path.join(directory, "plots.gp")
    with open(plots_path, "w", encoding="utf-8") as handle:
        handle.write(_render_gnuplot(trace))
    written.append(plots_path)
    return written


def _render_report(trace: RunTrace, metrics: Optional[MetricsSummary]) -> str:
    cfg = trace.config
    out = io.StringIO()
    out.write("sparseukf experiment report\n")
    out.write(f"benchmark: {cfg.benchmark}   library: {cfg.library}   seed: {cfg.seed}\n")
    out.write(f"dt: {cfg.dt}   horizon: {cfg.horizon}   records: {trace.n_records}\n")
    if trace.aborted_reason:
        out.write(f"RUN ABORTED: {trace.aborted_reason}\n")
    if metrics is not None:
        out.write(f"\nrmse, full horizon (per state):\n")
        out.write(f"  squkf : {np.array2string(metrics.rmse_full_squkf, precision=6)}\n")
        out.write(f"  jsqukf: {np.array2string(metrics.rmse_full_jsqukf, precision=6)}\n")
        out.write(
            f"rmse, post-transient window ({metrics.window_start:g}, {metrics.window_end:g}]:\n"
        )
        out.write(f"  squkf : {np.array2string(metrics.rmse_window_squkf, precision=6)}\n")
        out.write(f"  jsqukf: {np.array2string(metrics.rmse_window_jsqukf, precision=6)}\n")
        report = metrics.final_report
        out.write(f"\nfinal coefficients (barrier {report.threshold:g}):\n")
        for entry in report.entries:
            flag = "ACTIVE" if entry.active else "      "
            out.write(f"  theta_{entry.index:<2d} {entry.name:<10s} {entry.value:+.6f}  {flag}\n")
        dom = report.dominant
        out.write(f"dominant term: theta_{dom.index} ({dom.name}) = {dom.value:+.6f}\n")
    out.write(f"\npseudo iterations: mean {trace.pseudo_iters.mean():.3f}, max {trace.pseudo_iters.max()}\n")
    out.write(f"downdate recoveries: squkf {trace.sq_recoveries}, jsqukf {trace.jsq_recoveries}\n")
    return out.getvalue()


def _render_gnuplot(trace: RunTrace) -> str:
    n_x, n_theta = trace.n_x, trace.n_theta
    lam = trace.config.sparsity.lambda_tilde
    horizon = float(trace.t[-1]) if trace.n_records else trace.config.horizon
    lines = [
        "# gnuplot script regenerating the state-comparison and coefficient plots",
        "# usage: gnuplot plots.gp   (expects trace.csv alongside)",
        "set datafile separator ','",
        "set key outside right",
        "set xlabel 't [s]'",
        "set terminal pngcairo size 1000,700",
        "",
        "set output 'states.png'",
        f"set multiplot layout {n_x},1 title 'truth vs. filters'",
    ]
    for i in range(n_x):
        cols = (1, 1 + i + 1, 1 + n_x + 1, 1 + n_x + 1 + i + 1, 1 + 2 * n_x + 1 + i + 1)
        plot = [
            f"'trace.csv' using 1:{cols[1]} with lines lw 2 title 'truth x{i + 1}'",
            f"'trace.csv' using 1:{cols[3]} with lines dt 3 lw 2 title 'squkf x{i + 1}'",
            f"'trace.csv' using 1:{cols[4]} with lines dt 2 lw 2 title 'jsqukf x{i + 1}'",
        ]
        if i == 0:
            plot.insert(1, f"'trace.csv' using 1:{cols[2]} every 20 with points pt 7 ps 0.2 title 'y'")
        lines += [f"set ylabel 'x{i + 1}'", "plot " + ", \\\n     ".join(plot)]
    lines += [
        "unset multiplot",
        "",
        "set output 'theta.png'",
        "set ylabel 'theta_i'",
        f"set object 1 rectangle from 0,{-lam} to {horizon},{lam} fc rgb 'gray' fs transparent solid 0.3 noborder",
        "plot \\",
    ]
    theta_plots = []
    for i in range(n_theta):
        col = 3 * n_x + 2 + i + 1
        name = trace.term_names[i] if i < len(trace.term_names) else f"theta_{i + 1}"
        theta_plots.append(f"  'trace.csv' using 1:{col} with lines title 'theta_{i + 1}: {name}'")
    lines.append(", \\\n".join(theta_plots))
    lines.append("unset output\n")
    return "\n".join(lines)

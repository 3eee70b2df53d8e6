"""Batch front end: ``cavmem <config> [--out PREFIX] [--threads N] [--grid-scale K]``.

A config is a flat text file of ``key = value`` lines; ``#`` starts a
comment. Lists are comma separated. Each run writes ``<prefix>_meta.txt``
plus ``<prefix>_trajectory.csv`` and/or ``<prefix>_scan.csv``.

Exit codes: 0 success, 1 failed scan check, 2 config error, 3 convergence
or integration error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .adiabatic import (
    DEFAULT_EPSILON,
    TRUNCATION_FRACTION,
    adiabatic_storage_amplitude,
    adiabaticity_margins,
    retrieval_control_for_mode,
    storage_control_for_mode,
)
from .core import (
    CavmemError,
    ConvergenceError,
    DomainError,
    Envelope,
    IntegrationError,
    PhysicalParams,
    TimeGrid,
    make_chirped_gaussian_mode,
    make_exponential_mode,
    make_gaussian_like_mode,
    make_square_mode,
    mode_overlap,
)
from .dynamics import DEFAULT_TOL, Trajectory, simulate_retrieval, simulate_storage
from .experiments import (
    CONTROL_SHAPES,
    ControlSpec,
    ScanCheckError,
    ScanTable,
    bad_cavity_scan,
    breakdown_scan,
    retrieval_universality_scan,
    time_reversal_scan,
)
from .fast import PiPulseSpec, optimal_fast_input, simulate_fast_protocol

log = logging.getLogger(__name__)

COMMANDS = ("store", "retrieve", "fast", "shape", "scan-breakdown", "scan-universality",
            "scan-timereversal", "scan-badcavity")
BUILTIN_MODES = ("gaussian", "square", "exponential", "chirped", "fast")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_IO = 0, 1, 2, 3, 4


class ConfigError(CavmemError, ValueError):
    """The run configuration is malformed or incomplete."""


def _floats(text: str) -> tuple[float, ...]:
    items = [x.strip() for x in text.split(",")]
    if not all(items):
        raise ValueError(f"empty item in list {text!r}")
    return tuple(float(x) for x in items)


def _names(text: str) -> tuple[str, ...]:
    items = tuple(x.strip() for x in text.split(","))
    if not all(items):
        raise ValueError(f"empty item in list {text!r}")
    return items


def _int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


# key -> (parser, default); a default of None means "required where used"
SCHEMA: dict[str, tuple[Callable, object]] = {
    "command": (str, None),
    "C": (float, None),
    "gamma": (float, 1.0),
    "delta": (float, 0.0),
    "gamma_s": (float, 0.0),
    "kappa": (float, None),
    "gN": (float, None),
    "mode": (str, None),
    "mode_rate": (float, 1.0),
    "mode_chirp": (float, 0.0),
    "T": (float, None),
    "n": (_int, None),
    "output": (str, "cavmem_run"),
    "tol": (float, DEFAULT_TOL),
    "epsilon": (float, DEFAULT_EPSILON),
    "truncation_fraction": (float, TRUNCATION_FRACTION),
    "truncate": (str, "true"),
    "direction": (str, "storage"),
    "control": (str, "shaped"),
    "omega": (float, None),
    "omega_pi": (float, None),
    "margin": (float, 20.0),
    "peak_fraction": (float, 0.2),
    "C_list": (_floats, None),
    "delta_list": (_floats, (0.0,)),
    "tcgamma_min": (float, 0.1),
    "tcgamma_max": (float, 1000.0),
    "tcgamma_points": (_int, 41),
    "grid_tol": (float, DEFAULT_TOL),
    "controls": (_names, ("constant", "ramp", "gaussian")),
    "modes": (_names, ("gaussian", "square")),
    "ratios": (_floats, (3.0, 10.0, 30.0, 100.0)),
}

REQUIRED = {
    "store": ("C", "mode", "T", "n"),
    "shape": ("C", "mode", "T", "n"),
    "retrieve": ("C", "T", "n"),
    "fast": ("C", "T", "n"),
    "scan-breakdown": (),
    "scan-universality": (),
    "scan-timereversal": (),
    "scan-badcavity": (),
}

SCAN_DEFAULTS = {
    "scan-breakdown": {"C_list": (1.0, 10.0, 100.0, 1000.0), "n": 2001},
    "scan-universality": {"C_list": (0.1, 1.0, 10.0, 100.0),
                          "delta_list": (0.0, 10.0, 100.0), "n": 2001},
    "scan-timereversal": {"C_list": (1.0, 10.0), "T": 100.0, "n": 4001},
    "scan-badcavity": {"C": 1.0, "omega": 1.0, "n": 2001},
}


@dataclass(frozen=True)
class RunConfig:
    """A validated run: the command, its physics and every resolved setting.

    ``values`` holds all settings after defaults were filled in; it is
    echoed into the metadata file so a run can be repeated exactly.
    """

    command: str
    params: PhysicalParams | None
    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def output(self) -> str:
        return self.values["output"]

    @property
    def tolerances(self) -> dict:
        return {k: self.values[k] for k in ("tol", "epsilon", "truncation_fraction", "grid_tol")}

    def with_overrides(self, **changes) -> "RunConfig":
        return RunConfig(self.command, self.params, {**self.values, **changes})


def parse_config(text: str) -> RunConfig:
    """Parse and validate ``key = value`` text.

    Raises :class:`ConfigError` naming the line for unknown keys, bad
    values and duplicates, and listing every missing required key.
    Physical parameters are checked by :class:`PhysicalParams`, whose
    :class:`DomainError` propagates unchanged.
    """
    given: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in given:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        parser = SCHEMA[key][0]
        try:
            given[key] = parser(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: malformed value {value!r} for {key!r}") from None
        if isinstance(given[key], float) and not math.isfinite(given[key]):
            raise ConfigError(f"line {lineno}: {key} must be finite")
    command = given.get("command")
    if command is None:
        raise ConfigError("missing required keys: command")
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    missing = [k for k in REQUIRED[command] if k not in given]
    if command == "retrieve" and given.get("control", "shaped") == "shaped" and "mode" not in given:
        missing.append("mode")
    if missing:
        raise ConfigError(f"missing required keys for {command}: {', '.join(missing)}")

    values = {k: default for k, (_, default) in SCHEMA.items()}
    values.update(SCAN_DEFAULTS.get(command, {}))
    values.update(given)
    _check_choices(values)
    for key in ("T", "tol", "epsilon", "grid_tol", "margin", "peak_fraction"):
        if values[key] is not None and not values[key] > 0:
            raise ConfigError(f"{key} must be > 0, got {values[key]}")
    if values["n"] is not None and values["n"] < 4:
        raise ConfigError(f"n must be >= 4, got {values['n']}")
    params = None
    if values["C"] is not None:
        params = PhysicalParams(C=values["C"], gamma=values["gamma"], delta=values["delta"],
                                gamma_s=values["gamma_s"], kappa=values["kappa"],
                                gN=values["gN"])
    for C in values["C_list"] or ():
        PhysicalParams(C=C, gamma=values["gamma"])
    return RunConfig(command, params, values)


def _check_choices(values: dict) -> None:
    mode = values["mode"]
    if mode is not None and mode not in BUILTIN_MODES and not mode.endswith(".csv"):
        raise ConfigError(f"mode must be one of {', '.join(BUILTIN_MODES)} or a .csv path, "
                          f"got {mode!r}")
    if values["truncate"] not in ("true", "false"):
        raise ConfigError(f"truncate must be true or false, got {values['truncate']!r}")
    if values["direction"] not in ("storage", "retrieval"):
        raise ConfigError(f"direction must be storage or retrieval, got {values['direction']!r}")
    shapes = ("shaped",) + tuple(CONTROL_SHAPES)
    if values["control"] not in shapes:
        raise ConfigError(f"control must be one of {', '.join(shapes)}")
    for name in values["controls"]:
        if name not in CONTROL_SHAPES:
            raise ConfigError(f"unknown control shape {name!r} in controls")
    for name in values["modes"]:
        if name not in BUILTIN_MODES or name == "fast":
            raise ConfigError(f"unknown mode {name!r} in modes")


# --- modes -----------------------------------------------------------------

def read_mode_csv(path: str | Path) -> np.ndarray:
    """Complex samples from a two-column (re, im) CSV; a header row is optional."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or rec[0].lstrip().startswith("#"):
                continue
            if len(rec) != 2:
                raise ConfigError(f"{path}:{lineno}: expected 2 columns, got {len(rec)}")
            try:
                rows.append(complex(float(rec[0]), float(rec[1])))
            except ValueError:
                if rows or lineno > 1:
                    raise ConfigError(f"{path}:{lineno}: malformed number") from None
    if len(rows) < 2:
        raise ConfigError(f"{path}: need at least 2 samples")
    return np.array(rows)


def resample_mode(samples: np.ndarray, grid: TimeGrid) -> Envelope:
    """Linear resampling of uniformly spaced samples onto ``grid``, renormalized."""
    src = np.linspace(grid.t0, grid.t1, len(samples))
    t = grid.times
    values = np.interp(t, src, samples.real) + 1j * np.interp(t, src, samples.imag)
    return Envelope(grid, values, "input_field").normalized()


def build_mode(config: RunConfig, name: str | None = None, T: float | None = None,
               n: int | None = None) -> Envelope:
    name = config["mode"] if name is None else name
    T = config["T"] if T is None else T
    n = config["n"] if n is None else n
    grid = TimeGrid.span(T, n)
    if name == "gaussian":
        return make_gaussian_like_mode(T, grid)
    if name == "square":
        return make_square_mode(T, grid)
    if name == "exponential":
        return make_exponential_mode(T, config["mode_rate"], grid)
    if name == "chirped":
        return make_chirped_gaussian_mode(T, config["mode_chirp"], grid)
    if name == "fast":
        if config.params is None:
            raise ConfigError("mode = fast needs C")
        return optimal_fast_input(config.params, T, grid).mode
    return resample_mode(read_mode_csv(name), grid)


# --- CSV output --------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def _csv_text(columns: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _footer(metadata: dict) -> str:
    """Trailing ``# key = value`` lines; the header stays on the first line."""
    return "".join(f"# {key} = {_fmt(value)}\n" for key, value in metadata.items())


def trajectory_csv(traj: Trajectory, control: Envelope | None) -> str:
    series: list[tuple[str, np.ndarray]] = [("E_in", traj.E_in)]
    if control is not None:
        series.append(("control", np.asarray(control.values)))
    series += [("P", traj.P), ("S", traj.S), ("E_out", traj.E_out)]
    if traj.E_cav is not None:
        series.append(("E_cav", traj.E_cav))
    columns = ["t"]
    for name, _ in series:
        columns += [f"{name}_re", f"{name}_im"]
    columns.append("photons")
    t = traj.times
    rows = []
    for k in range(len(t)):
        row = [float(t[k])]
        for _, arr in series:
            row += [float(arr[k].real), float(arr[k].imag)]
        row.append(float(traj.photons[k]))
        rows.append(row)
    return _csv_text(columns, rows)


def envelope_csv(envs: list[tuple[str, Envelope]]) -> str:
    columns = ["t"]
    for name, _ in envs:
        columns += [f"{name}_re", f"{name}_im"]
    t = envs[0][1].times
    rows = []
    for k in range(len(t)):
        row = [float(t[k])]
        for _, env in envs:
            row += [float(env.values[k].real), float(env.values[k].imag)]
        rows.append(row)
    return _csv_text(columns, rows)


def scan_csv(table: ScanTable) -> str:
    return _csv_text(list(table.columns), [list(r) for r in table.rows])


# --- commands ------------------------------------------------------------------

@dataclass
class RunOutput:
    trajectory: str | None = None
    scan: str | None = None
    report: dict = field(default_factory=dict)


def _convergence(traj: Trajectory) -> dict:
    return {"substeps": traj.substeps, "converged": traj.converged,
            "refinement_change": traj.refinement_change, "flags": ";".join(traj.flags)}


def _shaped(config: RunConfig, mode: Envelope, direction: str):
    kwargs = dict(epsilon=config["epsilon"], truncate=config["truncate"] == "true",
                  fraction=config["truncation_fraction"])
    if direction == "storage":
        return storage_control_for_mode(config.params, mode, **kwargs)
    return retrieval_control_for_mode(config.params, mode, **kwargs)


def _run_store(config: RunConfig, threads: int) -> RunOutput:
    params = config.params
    mode = build_mode(config)
    shaped = _shaped(config, mode, "storage")
    traj = simulate_storage(params, shaped.control, mode, tol=config["tol"])
    predicted = abs(adiabatic_storage_amplitude(params, shaped.control, mode)) ** 2
    margins = adiabaticity_margins(params, shaped.control, mode)
    table = ScanTable("store", ("C", "delta", "T", "n", "eta_s", "eta_s_adiabatic",
                                "eta_s_predicted", "eta_tot", "adiabatic", "converged"),
                      [(params.C, params.delta, config["T"], config["n"], traj.eta_s,
                        min(predicted, 1.0), shaped.predicted_efficiency,
                        traj.eta_s * params.max_efficiency, margins.adiabatic,
                        traj.converged)])
    return RunOutput(trajectory_csv(traj, shaped.control), scan_csv(table),
                     {**_convergence(traj), **{f"margin_{k}": v
                                               for k, v in margins.as_dict().items()}})


def _retrieval_control(config: RunConfig) -> Envelope:
    params = config.params
    if config["control"] == "shaped":
        return _shaped(config, build_mode(config), "retrieval").control
    grid = TimeGrid.span(config["T"], config["n"])
    shape = CONTROL_SHAPES[config["control"]](grid.times / grid.duration)
    omega = config["omega"]
    if omega is None:
        # scale to the requested completeness margin h/K
        h = float(np.trapezoid(shape**2, dx=grid.dt))
        omega = math.sqrt(config["margin"] * params.h_scale / h)
    return Envelope(grid, omega * shape, "control")


def _run_retrieve(config: RunConfig, threads: int) -> RunOutput:
    params = config.params
    control = _retrieval_control(config)
    traj = simulate_retrieval(params, control, tol=config["tol"])
    overlap = math.nan
    if config["control"] == "shaped" and traj.eta_r > 0:
        target = build_mode(config)
        overlap = abs(mode_overlap(target, traj.output_envelope().normalized())) ** 2
    residual = traj.diagnostics["residual_excitation"]
    table = ScanTable("retrieve", ("C", "delta", "control", "T", "n", "eta_r", "eta_r_limit",
                                   "residual_excitation", "mode_overlap", "complete",
                                   "converged"),
                      [(params.C, params.delta, config["control"], config["T"], config["n"],
                        traj.eta_r, params.max_efficiency, residual, overlap,
                        "incomplete_retrieval" not in traj.flags, traj.converged)])
    return RunOutput(trajectory_csv(traj, control), scan_csv(table), _convergence(traj))


def _run_fast(config: RunConfig, threads: int) -> RunOutput:
    params = config.params
    T = config["T"]
    mode = build_mode(config, name=config["mode"] or "fast")
    omega_pi = config["omega_pi"] or 1e3 * params.C * params.gamma
    result = simulate_fast_protocol(params, mode, PiPulseSpec(omega_pi), tol=config["tol"])
    norm2 = optimal_fast_input(params, T, mode.grid).norm2
    table = ScanTable("fast", ("C", "T", "omega_pi", "eta_s", "eta_s_ideal_pulse",
                               "eta_s_optimal", "deviation", "converged"),
                      [(params.C, T, omega_pi, result.eta_s, result.ideal_eta_s,
                        params.max_efficiency * norm2, result.deviation,
                        result.storage.converged and result.pulse.converged)])
    return RunOutput(trajectory_csv(result.storage, None), scan_csv(table),
                     _convergence(result.storage))


def _run_shape(config: RunConfig, threads: int) -> RunOutput:
    mode = build_mode(config)
    shaped = _shaped(config, mode, config["direction"])
    margins = adiabaticity_margins(config.params, shaped.control, mode)
    envs = [("mode", mode), ("control", shaped.control), ("control_untruncated",
                                                          shaped.untruncated)]
    columns = ("direction", "predicted_efficiency", "epsilon_boundary", "truncated",
               *(f"margin_{k}" for k in margins.as_dict()))
    table = ScanTable("shape", columns, [(config["direction"], shaped.predicted_efficiency,
                                          shaped.epsilon_boundary, shaped.truncated,
                                          *margins.as_dict().values())])
    return RunOutput(envelope_csv(envs), scan_csv(table), {})


def _tcg_grid(config: RunConfig) -> tuple[float, ...]:
    lo, hi, k = config["tcgamma_min"], config["tcgamma_max"], config["tcgamma_points"]
    if not 0 < lo < hi or k < 2:
        raise ConfigError("need 0 < tcgamma_min < tcgamma_max and tcgamma_points >= 2")
    return tuple(np.logspace(math.log10(lo), math.log10(hi), k))


def _run_breakdown(config: RunConfig, threads: int) -> RunOutput:
    table = breakdown_scan(config["C_list"], config["delta_list"], _tcg_grid(config),
                           gamma=config["gamma"], n=config["n"], epsilon=config["epsilon"],
                           fraction=config["truncation_fraction"], tol=config["tol"],
                           grid_tol=config["grid_tol"], threads=threads)
    failed = sum(1 for rec in table.records() if rec["error"])
    return RunOutput(None, scan_csv(table), {"failed_rows": failed})


def _run_universality(config: RunConfig, threads: int) -> RunOutput:
    family = tuple(ControlSpec(name, name, config["margin"], config["peak_fraction"])
                   for name in config["controls"])
    table = retrieval_universality_scan(config["C_list"], config["delta_list"], family,
                                        gamma=config["gamma"], points_per_pulse=config["n"],
                                        tol=config["tol"], threads=threads)
    return RunOutput(None, scan_csv(table), {})


def _run_timereversal(config: RunConfig, threads: int) -> RunOutput:
    modes = {name: build_mode(config, name=name) for name in config["modes"]}
    table = time_reversal_scan(config["C_list"], modes, delta=config["delta"],
                               gamma_s=config["gamma_s"], gamma=config["gamma"],
                               epsilon=config["epsilon"], tol=config["tol"], threads=threads)
    return RunOutput(None, scan_csv(table), {})


def _run_badcavity(config: RunConfig, threads: int) -> RunOutput:
    table = bad_cavity_scan(config["ratios"], C=config["C"], gamma=config["gamma"],
                            omega=config["omega"], margin=config["margin"],
                            points=config["n"], tol=config["tol"], threads=threads)
    return RunOutput(None, scan_csv(table), {})


RUNNERS = {
    "store": _run_store,
    "retrieve": _run_retrieve,
    "fast": _run_fast,
    "shape": _run_shape,
    "scan-breakdown": _run_breakdown,
    "scan-universality": _run_universality,
    "scan-timereversal": _run_timereversal,
    "scan-badcavity": _run_badcavity,
}


def _meta_lines(config: RunConfig, report: dict, threads: int) -> dict:
    meta = {"code_version": f"cavmem {__version__}", "command": config.command}
    for key in SCHEMA:
        if key == "command":
            continue
        value = config.values[key]
        if value is None:
            continue
        if isinstance(value, tuple):
            value = ",".join(_fmt(v) for v in value)
        meta[f"config.{key}"] = value
    meta["threads"] = threads
    for key, value in report.items():
        meta[f"report.{key}"] = value
    return meta


def run(config: RunConfig, threads: int = 1) -> dict[str, Path]:
    """Execute ``config`` and write its output files; returns their paths.

    Files are only written once the whole computation has succeeded.
    """
    result = RUNNERS[config.command](config, threads)
    meta = _meta_lines(config, result.report, threads)
    footer = {"code_version": meta["code_version"], "command": config.command,
              **{k: v for k, v in meta.items()
                 if k.startswith("config.") and k != "config.output"}}
    prefix = config.output
    files = {}
    if result.trajectory is not None:
        files["trajectory"] = (Path(f"{prefix}_trajectory.csv"),
                               result.trajectory + _footer(footer))
    if result.scan is not None:
        files["scan"] = (Path(f"{prefix}_scan.csv"),
                         result.scan + _footer(footer))
    files["meta"] = (Path(f"{prefix}_meta.txt"),
                     "".join(f"{k} = {_fmt(v)}\n" for k, v in meta.items()))
    written = {}
    for name, (path, text) in files.items():
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        written[name] = path
    return written


def _scale_grid(config: RunConfig, k: int) -> RunConfig:
    if k == 1 or config["n"] is None:
        return config
    return config.with_overrides(n=(config["n"] - 1) * k + 1)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="cavmem", description=__doc__.splitlines()[0])
    ap.add_argument("config", help="path of a key = value run configuration")
    ap.add_argument("--out", help="output path prefix (overrides the config's output key)")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for scans")
    ap.add_argument("--grid-scale", type=int, default=1,
                    help="multiply the number of grid intervals by this factor")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="cavmem: %(message)s")
    if args.threads < 1 or args.grid_scale < 1:
        print("cavmem: --threads and --grid-scale must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"cavmem: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        config = parse_config(text)
        if args.out:
            config = config.with_overrides(output=args.out)
        config = _scale_grid(config, args.grid_scale)
    except (ConfigError, DomainError) as exc:
        print(f"cavmem: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        written = run(config, args.threads)
    except (ConfigError, DomainError) as exc:
        print(f"cavmem: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, IntegrationError) as exc:
        print(f"cavmem: {config.command}: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except ScanCheckError as exc:
        print(f"cavmem: {config.command}: check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except OSError as exc:
        print(f"cavmem: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for path in written.values():
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

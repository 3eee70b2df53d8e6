"""Reproduction scans: storage breakdown, retrieval universality, time-reversal
duality and convergence of the full cavity model to the bad-cavity limit.

Each scan returns a :class:`ScanTable`. Rows are evaluated independently,
optionally on a thread pool (the integrators release the GIL), and always
come back in the order of the sweep definition.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__
from .adiabatic import (
    DEFAULT_EPSILON,
    TRUNCATION_FRACTION,
    adiabatic_retrieval_efficiency,
    adiabatic_storage_amplitude,
    adiabaticity_margins,
    retrieval_completeness,
    retrieval_control_for_mode,
    storage_control_for_mode,
)
from .core import (
    CavmemError,
    DomainError,
    Envelope,
    PhysicalParams,
    TimeGrid,
    make_gaussian_like_mode,
    make_square_mode,
    time_reverse,
)
from .dynamics import DEFAULT_TOL, simulate_full_cavity, simulate_retrieval, simulate_storage

EFFICIENCY_SLACK = 1e-6
UNIVERSALITY_SPREAD = 2e-3
TIME_REVERSAL_TOL = 5e-3
BAD_CAVITY_TOL = 1e-2
PLATEAU_FRACTION = 0.9
DEFAULT_TCGAMMA = tuple(np.logspace(-1.0, 3.0, 41))
MAX_GRID_POINTS = (1 << 17) + 1


class ScanCheckError(CavmemError, AssertionError):
    """A scan's built-in consistency check failed."""


@dataclass(frozen=True)
class ScanTable:
    """Rows of one sweep sharing a fixed column schema.

    Columns whose name starts with ``eta`` hold efficiencies and must lie in
    [0, 1 + 1e-6] (NaN marks a row that failed).
    """

    name: str
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise DomainError(f"row {i} has {len(row)} fields, expected {width}")
        for j, name in enumerate(self.columns):
            if not name.startswith("eta"):
                continue
            for i, row in enumerate(self.rows):
                v = row[j]
                if v is None or (isinstance(v, float) and math.isnan(v)):
                    continue
                if not -EFFICIENCY_SLACK <= v <= 1.0 + EFFICIENCY_SLACK:
                    raise DomainError(f"row {i}: {name}={v} outside [0, 1]")

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([row[j] for row in self.rows])

    def records(self) -> list[dict]:
        return [dict(zip(self.columns, row)) for row in self.rows]

    def select(self, **match) -> "ScanTable":
        """Rows whose named columns equal the given values."""
        idx = [self.columns.index(k) for k in match]
        keep = [r for r in self.rows
                if all(r[j] == v for j, v in zip(idx, match.values()))]
        return ScanTable(self.name, self.columns, keep, dict(self.metadata))


def _map_rows(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _meta(**extra) -> dict:
    return {"code_version": f"cavmem {__version__}", **extra}


# --- storage breakdown ---------------------------------------------------

BREAKDOWN_COLUMNS = ("C", "delta", "TCgamma", "T", "eta_s", "eta_tot", "eta_s_adiabatic",
                     "max_margin_ratio", "adiabatic", "n", "substeps", "converged", "error")


def breakdown_scan(C_list: Iterable[float] = (1.0, 10.0, 100.0, 1000.0),
                   delta_list: Iterable[float] = (0.0,),
                   TCgamma_grid: Iterable[float] = DEFAULT_TCGAMMA, *,
                   gamma: float = 1.0, n: int = 2001, epsilon: float = DEFAULT_EPSILON,
                   fraction: float = TRUNCATION_FRACTION, tol: float = DEFAULT_TOL,
                   grid_tol: float = DEFAULT_TOL, max_n: int = MAX_GRID_POINTS,
                   threads: int = 1) -> ScanTable:
    """Optimal storage of the Gaussian-like mode against pulse duration.

    For every (C, delta, T C gamma) the storage control is shaped in the
    adiabatic limit, clamped for t < T/100, and run through the exact
    equations. ``eta_tot`` multiplies the exact ``eta_s`` by the
    shape-independent retrieval efficiency C/(1+C). Failures are recorded
    in the ``error`` column instead of aborting the scan.

    Starting from ``n`` samples, the mode grid is refined by halving dt
    until eta_s moves by less than ``grid_tol``; the ``n`` column records
    the grid used and ``converged`` is false if ``max_n`` was reached first.
    """
    grid_tcg = [float(x) for x in TCgamma_grid]
    if not grid_tcg or min(grid_tcg) > 0.1 * (1 + 1e-9) or max(grid_tcg) < 1000 * (1 - 1e-9):
        raise DomainError("TCgamma_grid must span at least [0.1, 1000]")
    if min(grid_tcg) <= 0:
        raise DomainError("TCgamma values must be > 0")
    points = [(float(C), float(d), x) for C in C_list for d in delta_list for x in grid_tcg]

    def run(params, T, size):
        mode = make_gaussian_like_mode(T, n=size)
        shaped = storage_control_for_mode(params, mode, epsilon=epsilon, fraction=fraction)
        return mode, shaped, simulate_storage(params, shaped.control, mode, tol=tol)

    def row(point):
        C, delta, tcg = point
        params = PhysicalParams(C=C, gamma=gamma, delta=delta)
        T = tcg / (C * gamma)
        try:
            size = n
            mode, shaped, traj = run(params, T, size)
            change = math.inf
            # the control phase turns by about delta/(2 gamma (1+C)) * ln(1/epsilon)
            # radians, so large detunings need finer sampling than the default
            while change >= grid_tol and 2 * size - 1 <= max_n:
                size = 2 * size - 1
                fine = run(params, T, size)
                change = abs(fine[2].eta_s - traj.eta_s)
                mode, shaped, traj = fine
            margins = adiabaticity_margins(params, shaped.control, mode)
            ratio = max(margins.control_power, margins.control_bandwidth,
                        margins.input_bandwidth, margins.magnitude_rate, margins.phase_rate)
            predicted = abs(adiabatic_storage_amplitude(params, shaped.control, mode)) ** 2
        except CavmemError as exc:
            nan = math.nan
            return (C, delta, tcg, T, nan, nan, nan, nan, False, 0, 0, False,
                    f"{type(exc).__name__}: {exc}")
        return (C, delta, tcg, T, traj.eta_s, traj.eta_s * params.max_efficiency,
                min(predicted, 1.0), ratio, margins.adiabatic, size, traj.substeps,
                traj.converged and change < grid_tol, "")

    rows = _map_rows(row, points, threads)
    return ScanTable("breakdown", BREAKDOWN_COLUMNS, rows,
                     _meta(gamma=gamma, n=n, epsilon=epsilon, truncation_fraction=fraction,
                           tol=tol, grid_tol=grid_tol, max_n=max_n))


def breakdown_curve(table: ScanTable, C: float, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """(T C gamma, eta_tot) of one curve, sorted by T C gamma."""
    sub = table.select(C=float(C), delta=float(delta))
    if not len(sub):
        raise DomainError(f"no rows for C={C}, delta={delta}")
    x = sub.column("TCgamma").astype(float)
    y = sub.column("eta_tot").astype(float)
    order = np.argsort(x)
    return x[order], y[order]


def plateau_crossing(table: ScanTable, C: float, delta: float,
                     fraction: float = PLATEAU_FRACTION) -> float:
    """Smallest T C gamma at which eta_tot reaches ``fraction`` of its plateau.

    The plateau is eta_tot at the largest T C gamma; the crossing is
    interpolated linearly in log(T C gamma). This is an operational
    definition of where adiabatic storage breaks down.
    """
    x, y = breakdown_curve(table, C, delta)
    if np.any(~np.isfinite(y)):
        raise DomainError("curve contains failed rows")
    level = fraction * y[-1]
    above = np.flatnonzero(y >= level)
    k = int(above[0])
    if k == 0:
        return float(x[0])
    lx0, lx1 = math.log(x[k - 1]), math.log(x[k])
    s = (level - y[k - 1]) / (y[k] - y[k - 1])
    return float(math.exp(lx0 + s * (lx1 - lx0)))


# --- retrieval universality ----------------------------------------------

@dataclass(frozen=True)
class ControlSpec:
    """A retrieval control shape scaled to a given completeness margin.

    ``margin`` is h(0, inf)/K, the exponent in the leftover spin-wave
    population exp(-h/K). The peak |Omega| is ``peak_fraction`` of
    |gamma(1+C) + i delta| and the pulse length follows from the margin.
    """

    name: str
    shape: str = "constant"
    margin: float = 20.0
    peak_fraction: float = 0.2

    def __post_init__(self) -> None:
        if self.shape not in CONTROL_SHAPES:
            raise DomainError(f"unknown control shape {self.shape!r}; "
                              f"expected one of {sorted(CONTROL_SHAPES)}")
        if not self.margin > 0 or not self.peak_fraction > 0:
            raise DomainError("margin and peak_fraction must be > 0")


def _constant(x: np.ndarray) -> np.ndarray:
    return np.ones_like(x)


def _ramp(x: np.ndarray) -> np.ndarray:
    return x.copy()


def _bump(x: np.ndarray) -> np.ndarray:
    # shifted down so it starts and ends at exactly zero
    floor = math.exp(-4.5)
    return (np.exp(-18.0 * (x - 0.5) ** 2) - floor) / (1.0 - floor)


CONTROL_SHAPES = {"constant": _constant, "ramp": _ramp, "gaussian": _bump}
_UNIT = np.linspace(0.0, 1.0, 10001)
# mean of shape^2 over [0, 1]
_SHAPE_ENERGY = {k: float(np.trapezoid(f(_UNIT) ** 2, _UNIT)) for k, f in CONTROL_SHAPES.items()}

DEFAULT_CONTROL_FAMILY = (ControlSpec("constant", "constant"),
                          ControlSpec("ramp", "ramp"),
                          ControlSpec("gaussian", "gaussian"))

# Far from complete, and weak enough that the adiabatic finite-h efficiency
# applies to about 2e-4.
WEAK_CONTROL = ControlSpec("weak", "constant", margin=1.0, peak_fraction=0.02)


def build_retrieval_control(params: PhysicalParams, spec: ControlSpec,
                            points_per_pulse: int = 2001,
                            tail_lifetimes: float = 20.0) -> Envelope:
    """Sample ``spec`` on [0, T_w] followed by a control-free tail.

    The tail of ``tail_lifetimes`` polarization lifetimes lets the
    remaining P radiate into the output before the run ends.
    """
    peak = spec.peak_fraction * abs(params.complex_decay)
    width = spec.margin * params.h_scale / (peak**2 * _SHAPE_ENERGY[spec.shape])
    tail = tail_lifetimes / params.total_decay
    dt = width / (points_per_pulse - 1)
    n_tail = math.ceil(tail / dt)
    grid = TimeGrid(0.0, width + n_tail * dt, points_per_pulse + n_tail)
    x = grid.times / width
    values = np.where(x <= 1.0 + 1e-12, CONTROL_SHAPES[spec.shape](np.minimum(x, 1.0)), 0.0)
    env = Envelope(grid, peak * values, "control")
    # rescale so the trapezoid energy hits the margin exactly
    h = float(np.trapezoid(np.abs(env.values) ** 2, dx=grid.dt))
    return env.scaled(math.sqrt(spec.margin * params.h_scale / h))


UNIVERSALITY_COLUMNS = ("C", "delta", "control", "completeness", "eta_r", "eta_r_adiabatic",
                        "eta_r_limit", "residual_excitation", "complete", "substeps",
                        "converged", "error")


def retrieval_universality_scan(C_list: Iterable[float] = (0.1, 1.0, 10.0, 100.0),
                                delta_list: Iterable[float] = (0.0, 10.0, 100.0),
                                control_family: Sequence[ControlSpec] = DEFAULT_CONTROL_FAMILY,
                                *, gamma: float = 1.0, points_per_pulse: int = 2001,
                                tol: float = DEFAULT_TOL, check: bool = True,
                                threads: int = 1) -> ScanTable:
    """Exact retrieval efficiency for several control shapes and detunings.

    Rows leaving more than 1e-4 of excitation behind are marked incomplete
    and excluded from the check. With ``check`` set, the spread of the
    complete rows' eta_r within each C must stay below 2e-3 and each must be
    within 2e-3 of C/(1+C); otherwise :class:`ScanCheckError` is raised.
    """
    points = [(float(C), float(d), spec) for C in C_list for d in delta_list
              for spec in control_family]

    def row(point):
        C, delta, spec = point
        params = PhysicalParams(C=C, gamma=gamma, delta=delta)
        try:
            control = build_retrieval_control(params, spec, points_per_pulse)
            h = float(np.trapezoid(np.abs(control.values) ** 2, dx=control.grid.dt))
            traj = simulate_retrieval(params, control, tol=tol)
        except CavmemError as exc:
            nan = math.nan
            return (C, delta, spec.name, nan, nan, nan, params.max_efficiency, nan, False, 0,
                    False, f"{type(exc).__name__}: {exc}")
        residual = traj.diagnostics["residual_excitation"]
        return (C, delta, spec.name, retrieval_completeness(params, h), traj.eta_r,
                adiabatic_retrieval_efficiency(params, h), params.max_efficiency, residual,
                "incomplete_retrieval" not in traj.flags, traj.substeps, traj.converged, "")

    rows = _map_rows(row, points, threads)
    table = ScanTable("universality", UNIVERSALITY_COLUMNS, rows,
                      _meta(gamma=gamma, points_per_pulse=points_per_pulse, tol=tol,
                            controls=[(s.name, s.shape, s.margin, s.peak_fraction)
                                      for s in control_family]))
    if check:
        check_universality(table)
    return table


def universality_spread(table: ScanTable) -> dict[float, float]:
    """Max minus min eta_r over the complete rows of each C."""
    out = {}
    for rec in table.records():
        if rec["complete"] and not rec["error"]:
            lo, hi = out.get(rec["C"], (math.inf, -math.inf))
            out[rec["C"]] = (min(lo, rec["eta_r"]), max(hi, rec["eta_r"]))
    return {C: hi - lo for C, (lo, hi) in out.items()}


def check_universality(table: ScanTable, tol: float = UNIVERSALITY_SPREAD) -> None:
    for C, spread in universality_spread(table).items():
        if spread >= tol:
            raise ScanCheckError(f"eta_r spread {spread:.3e} at C={C} exceeds {tol}")
    for rec in table.records():
        if rec["complete"] and not rec["error"]:
            dev = abs(rec["eta_r"] - rec["eta_r_limit"])
            if dev >= tol:
                raise ScanCheckError(f"C={rec['C']}, delta={rec['delta']}, "
                                     f"control={rec['control']}: eta_r off C/(1+C) by {dev:.3e}")


# --- time-reversal duality -----------------------------------------------

TIME_REVERSAL_COLUMNS = ("C", "delta", "gamma_s", "mode", "eta_r", "eta_s", "difference",
                         "control_mismatch", "asserted")


def default_modes(T: float = 100.0, n: int = 4001) -> dict[str, Envelope]:
    return {"gaussian": make_gaussian_like_mode(T, n=n), "square": make_square_mode(T, n=n)}


def time_reversal_scan(C_list: Iterable[float] = (1.0, 10.0),
                       modes: dict[str, Envelope] | None = None, *,
                       delta: float = 0.0, gamma_s: float = 0.0, gamma: float = 1.0,
                       epsilon: float = DEFAULT_EPSILON, tol: float = DEFAULT_TOL,
                       check: bool = True, threads: int = 1) -> ScanTable:
    """Compare retrieval into e(t) with storage of the time-reversed output.

    Retrieval uses the shaped control for ``e``; storage then takes the
    normalized E_out*(T - t) as input and Omega*(T - t) as control, both
    through the exact equations. ``control_mismatch`` is the largest
    pointwise gap between that reversed control and the storage control
    shaped directly for e*(T - t). Modes that fail the adiabaticity check
    are rejected up front. The equality is not asserted when gamma_s > 0,
    where the two controls are no longer time reverses of each other.
    """
    modes = default_modes() if modes is None else modes
    points = [(float(C), name, env) for C in C_list for name, env in modes.items()]
    for C, name, env in points:
        params = PhysicalParams(C=C, gamma=gamma, delta=delta, gamma_s=gamma_s)
        shaped = retrieval_control_for_mode(params, env, epsilon=epsilon)
        margins = adiabaticity_margins(params, shaped.control, env)
        if not margins.adiabatic:
            raise DomainError(f"mode {name!r} at C={C} is not adiabatic: {margins.as_dict()}")
    asserted = gamma_s == 0

    def row(point):
        C, name, env = point
        params = PhysicalParams(C=C, gamma=gamma, delta=delta, gamma_s=gamma_s)
        shaped = retrieval_control_for_mode(params, env, epsilon=epsilon)
        out = simulate_retrieval(params, shaped.control, tol=tol)
        reversed_control = time_reverse(shaped.control)
        stored = simulate_storage(params, reversed_control,
                                  time_reverse(out.output_envelope()).normalized(), tol=tol)
        direct = storage_control_for_mode(params, time_reverse(env), epsilon=epsilon)
        mismatch = float(np.max(np.abs(direct.control.values - reversed_control.values)))
        return (C, delta, gamma_s, name, out.eta_r, stored.eta_s,
                stored.eta_s - out.eta_r, mismatch, asserted)

    rows = _map_rows(row, points, threads)
    table = ScanTable("time_reversal", TIME_REVERSAL_COLUMNS, rows,
                      _meta(gamma=gamma, epsilon=epsilon, tol=tol,
                            grids={k: (v.grid.t0, v.grid.t1, v.grid.n) for k, v in modes.items()}))
    if check and asserted:
        for rec in table.records():
            if abs(rec["difference"]) >= TIME_REVERSAL_TOL:
                raise ScanCheckError(f"mode {rec['mode']} at C={rec['C']}: "
                                     f"|eta_s - eta_r| = {abs(rec['difference']):.3e}")
    return table


# --- bad-cavity convergence -----------------------------------------------

BAD_CAVITY_COLUMNS = ("kappa_over_gN", "C", "kappa", "gN", "eta_r_full", "eta_r_bad_cavity",
                      "deviation", "substeps_full")


def bad_cavity_scan(ratio_list: Iterable[float] = (3.0, 10.0, 30.0, 100.0), *,
                    C: float = 1.0, gamma: float = 1.0, omega: float = 1.0,
                    margin: float = 20.0, points: int = 2001, tol: float = DEFAULT_TOL,
                    check: bool = True, threads: int = 1) -> ScanTable:
    """Retrieval in the full cavity model against the eliminated model.

    C is held fixed by setting gN = C gamma r and kappa = C gamma r^2 for
    each r = kappa/gN. Both models are driven by the same constant control
    ``omega`` long enough that exp(-margin) of the spin wave remains, and
    both are integrated exactly. With ``check`` set the deviation must fall
    monotonically in r and be below 1% at r = 100.
    """
    ratios = sorted(float(r) for r in ratio_list)
    if not ratios or ratios[0] <= 0:
        raise DomainError("kappa/gN ratios must be > 0")
    base = PhysicalParams(C=C, gamma=gamma)
    width = margin * base.h_scale / omega**2 + 20.0 / base.total_decay
    grid = TimeGrid.span(width, points)
    control = Envelope.constant(grid, omega)
    reference = simulate_retrieval(base, control, tol=tol).eta_r

    def row(r):
        gN = C * gamma * r
        kappa = C * gamma * r * r
        params = PhysicalParams.from_cavity(kappa, gN, gamma)
        full = simulate_full_cavity(params, control, tol=tol)
        return (r, params.C, kappa, gN, full.eta_r, reference, abs(full.eta_r - reference),
                full.substeps)

    rows = _map_rows(row, ratios, threads)
    table = ScanTable("bad_cavity", BAD_CAVITY_COLUMNS, rows,
                      _meta(C=C, gamma=gamma, omega=omega, margin=margin,
                            grid=(grid.t0, grid.t1, grid.n), tol=tol))
    if check:
        dev = table.column("deviation")
        if np.any(np.diff(dev) >= 0):
            raise ScanCheckError(f"deviation not decreasing in kappa/gN: {dev.tolist()}")
        r_arr = table.column("kappa_over_gN")
        at100 = dev[np.isclose(r_arr, 100.0)]
        if at100.size and at100[0] >= BAD_CAVITY_TOL:
            raise ScanCheckError(f"deviation {at100[0]:.3e} at kappa/gN = 100")
    return table


# --- excitation balance -------------------------------------------------------

CONSERVATION_COLUMNS = ("C", "delta", "control", "points_per_pulse", "residual",
                        "residual_coarse", "order", "eta_r")


def conservation_scan(C_list: Iterable[float] = (0.1, 1.0, 10.0, 100.0),
                      delta_list: Iterable[float] = (0.0, 10.0, 100.0),
                      control_family: Sequence[ControlSpec] = DEFAULT_CONTROL_FAMILY, *,
                      target: float = 1e-6, pilot_points: int = 8001,
                      max_points: int = 1 << 23, gamma: float = 1.0,
                      tol: float = DEFAULT_TOL, threads: int = 1) -> ScanTable:
    """Recording resolution at which the excitation balance residual meets ``target``.

    The central-difference residual falls as dt^2, so each run predicts
    the number of samples needed; a few such steps reach the target. The
    final resolution is then also run at half the samples; ``order`` is
    log2 of the residual ratio between the two and should be close to 2.
    """
    from .dynamics import conservation_residual

    points = [(float(C), float(d), spec) for C in C_list for d in delta_list
              for spec in control_family]

    def residual_at(params, spec, ppp):
        control = build_retrieval_control(params, spec, ppp)
        traj = simulate_retrieval(params, control, tol=tol)
        return conservation_residual(traj, params), traj.eta_r

    def row(point):
        C, delta, spec = point
        params = PhysicalParams(C=C, gamma=gamma, delta=delta)
        ppp = pilot_points
        fine, eta = residual_at(params, spec, ppp)
        for _ in range(4):
            if fine < target or ppp >= max_points:
                break
            need = ppp * math.sqrt(fine / target) * 1.25
            ppp = int(min(max(need, 2 * ppp), max_points)) | 1
            fine, eta = residual_at(params, spec, ppp)
        coarse, _ = residual_at(params, spec, (ppp + 1) // 2)
        order = math.log2(coarse / fine) if fine > 0 and coarse > 0 else math.nan
        return (C, delta, spec.name, ppp, fine, coarse, order, eta)

    rows = _map_rows(row, points, threads)
    return ScanTable("conservation", CONSERVATION_COLUMNS, rows,
                     _meta(gamma=gamma, target=target, pilot_points=pilot_points, tol=tol))

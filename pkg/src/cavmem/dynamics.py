"""Exact integration of the bad-cavity and full three-mode cavity equations.

The integrator is classical RK4. Each interval of the recording grid is split
into ``substeps`` RK4 steps, chosen so that ``h * rate < STEP_BUDGET`` where
``rate`` bounds the magnitude of the system's eigenvalues; the number of
substeps is then doubled until the reported efficiency changes by less than
``tol``. The emitted photon number is integrated alongside (P, S), so
efficiencies are fourth-order accurate independently of the recording grid.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import rk4_bad_cavity, rk4_full_cavity
from .core import (
    AtomicState,
    ConvergenceError,
    DomainError,
    Envelope,
    IntegrationError,
    PhysicalParams,
    TimeGrid,
    trapezoid,
)

log = logging.getLogger(__name__)

STEP_BUDGET = 0.1
DEFAULT_TOL = 1e-6
MAX_SUBSTEPS = 1 << 14
INCOMPLETE_RETRIEVAL = 1e-4


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution of one run plus its efficiencies.

    ``photons`` is the running integral of |E_out|^2. For retrieval runs
    ``eta_r`` is its final value; for storage runs ``eta_s = |S(T)|^2``.
    """

    kind: str
    grid: TimeGrid
    P: np.ndarray
    S: np.ndarray
    E_out: np.ndarray
    photons: np.ndarray
    E_in: np.ndarray
    E_cav: np.ndarray | None = None
    eta_s: float | None = None
    eta_r: float | None = None
    eta_tot: float | None = None
    substeps: int = 1
    converged: bool = True
    refinement_change: float = 0.0
    flags: tuple[str, ...] = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def initial_state(self) -> AtomicState:
        return AtomicState(complex(self.P[0]), complex(self.S[0]))

    @property
    def final_state(self) -> AtomicState:
        return AtomicState(complex(self.P[-1]), complex(self.S[-1]))

    @property
    def residual_excitation(self) -> float:
        return self.final_state.excitation

    @property
    def photon_number(self) -> float:
        return float(self.photons[-1])

    def quadrature_photon_number(self) -> float:
        """Trapezoid sum of |E_out|^2 on the recording grid."""
        return float(trapezoid(np.abs(self.E_out) ** 2, self.grid.dt))

    def output_envelope(self) -> Envelope:
        return Envelope(self.grid, self.E_out, "output_field")


def _check_finite(name: str, values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise IntegrationError(f"{name} contains non-finite samples")


def _drive(env: Envelope | None, grid: TimeGrid, name: str) -> np.ndarray:
    if env is None:
        return np.zeros(grid.n, dtype=complex)
    if env.grid != grid:
        raise DomainError(f"{name} is sampled on {env.grid}, expected {grid}")
    vals = np.ascontiguousarray(env.values, dtype=np.complex128)
    _check_finite(name, vals)
    return vals


def _storage_metric(out) -> tuple[float, float]:
    return abs(out[1][-1]) ** 2, abs(out[0][-1]) ** 2


def _retrieval_metric(out) -> tuple[float, float]:
    return out[3][-1], abs(out[1][-1]) ** 2


def _initial_substeps(rate: float, dt: float) -> int:
    return max(1, math.ceil(dt * rate / STEP_BUDGET))


def _refine(run, metric, m0: int, tol: float, max_substeps: int):
    """Double the substep count until ``metric`` settles to ``tol``."""
    coarse = run(m0)
    m = m0
    change = math.inf
    while True:
        if 2 * m > max_substeps:
            return coarse, m, False, change
        fine = run(2 * m)
        change = float(np.max(np.abs(np.subtract(metric(fine), metric(coarse)))))
        m *= 2
        if change < tol:
            return fine, m, True, change
        coarse = fine


def _finish(result, grid: TimeGrid, tol: float, strict: bool, what: str):
    out, m, ok, change = result
    for name, arr in zip(("P", "S", "E_out"), out[:3]):
        _check_finite(name, arr)
    if not ok:
        msg = (f"{what}: refinement change {change:.3e} above tol {tol:.1e} "
               f"at {m} substeps per interval of {grid}")
        if strict:
            raise ConvergenceError(msg)
        log.warning(msg)
    return out, m, ok, change


def _bad_cavity(params: PhysicalParams, omega: np.ndarray, e_in: np.ndarray,
                grid: TimeGrid, initial: AtomicState, tol: float,
                substeps: int | None, max_substeps: int, cubic: bool,
                metric, strict: bool, what: str):
    rate = (abs(params.complex_decay) + float(np.max(np.abs(omega), initial=0.0))
            + params.gamma_s)
    m0 = substeps or _initial_substeps(rate, grid.dt)

    def run(m):
        return rk4_bad_cavity(complex(initial.P), complex(initial.S), omega, e_in,
                              grid.n, m, grid.dt / m, params.complex_decay,
                              params.coupling, params.gamma_s, cubic)

    if substeps is not None:
        out = run(substeps)
        return _finish((out, substeps, True, 0.0), grid, tol, strict, what)
    return _finish(_refine(run, metric, m0, tol, max(max_substeps, 2 * m0)),
                   grid, tol, strict, what)


def simulate_storage(params: PhysicalParams, control: Envelope, input: Envelope,
                     grid: TimeGrid | None = None, *, tol: float = DEFAULT_TOL,
                     substeps: int | None = None, max_substeps: int = MAX_SUBSTEPS,
                     interpolation: str = "cubic", strict: bool = True) -> Trajectory:
    """Store ``input`` with ``control`` starting from P = S = 0.

    Returns the trajectory with ``eta_s = |S(T)|^2``. With ``substeps`` unset
    the substep count is refined until ``eta_s`` moves by less than ``tol``;
    failure raises :class:`ConvergenceError` unless ``strict`` is false.
    """
    grid = input.grid if grid is None else grid
    omega = _drive(control, grid, "control")
    e_in = _drive(input, grid, "input")
    out, m, ok, change = _bad_cavity(
        params, omega, e_in, grid, AtomicState(), tol, substeps, max_substeps,
        interpolation == "cubic", _storage_metric, strict, "storage")
    P, S, E_out, N = out
    eta_s = float(abs(S[-1]) ** 2)
    return Trajectory("storage", grid, P, S, E_out, N, e_in, eta_s=eta_s,
                      substeps=m, converged=ok, refinement_change=change)


def simulate_retrieval(params: PhysicalParams, control: Envelope,
                       grid: TimeGrid | None = None, *,
                       initial: AtomicState = AtomicState(0j, 1 + 0j),
                       tol: float = DEFAULT_TOL, substeps: int | None = None,
                       max_substeps: int = MAX_SUBSTEPS, interpolation: str = "cubic",
                       strict: bool = True) -> Trajectory:
    """Retrieve from ``initial`` (S = 1 by default) with no input field.

    ``eta_r`` is the integrated |E_out|^2. Runs leaving more than 1e-4 of
    excitation in the atoms carry the ``incomplete_retrieval`` flag.
    """
    grid = control.grid if grid is None else grid
    omega = _drive(control, grid, "control")
    e_in = np.zeros(grid.n, dtype=complex)
    out, m, ok, change = _bad_cavity(
        params, omega, e_in, grid, initial, tol, substeps, max_substeps,
        interpolation == "cubic", _retrieval_metric, strict, "retrieval")
    P, S, E_out, N = out
    residual = float(abs(P[-1]) ** 2 + abs(S[-1]) ** 2)
    flags = ("incomplete_retrieval",) if residual > INCOMPLETE_RETRIEVAL else ()
    return Trajectory("retrieval", grid, P, S, E_out, N, e_in, eta_r=float(N[-1]),
                      substeps=m, converged=ok, refinement_change=change, flags=flags,
                      diagnostics={"residual_excitation": residual})


def storage_then_retrieval(params: PhysicalParams, storage_control: Envelope,
                           input: Envelope, retrieval_control: Envelope,
                           hold_time: float = 0.0, **kwargs) -> Trajectory:
    """Store, hold for ``hold_time`` with the control off, then retrieve.

    The polarization left at the end of storage is dropped (it decays at
    rate gamma during any hold) and the spin wave decays by
    exp(-gamma_s * hold_time) in amplitude. ``eta_tot`` is the number of
    retrieved photons per incoming photon.
    """
    if hold_time < 0:
        raise DomainError("hold_time must be >= 0")
    stored = simulate_storage(params, storage_control, input, **kwargs)
    S_r = stored.S[-1] * math.exp(-params.gamma_s * hold_time)
    out = simulate_retrieval(params, retrieval_control, initial=AtomicState(0j, S_r),
                             **kwargs)
    return Trajectory(out.kind, out.grid, out.P, out.S, out.E_out, out.photons,
                      out.E_in, eta_s=stored.eta_s, eta_r=out.eta_r,
                      eta_tot=out.photon_number, substeps=out.substeps,
                      converged=out.converged and stored.converged,
                      refinement_change=max(out.refinement_change, stored.refinement_change),
                      flags=out.flags, diagnostics={"hold_time": hold_time, **out.diagnostics})


def simulate_full_cavity(params: PhysicalParams, control: Envelope,
                         input: Envelope | None = None, grid: TimeGrid | None = None, *,
                         initial: AtomicState | None = None, tol: float = DEFAULT_TOL,
                         substeps: int | None = None, max_substeps: int = MAX_SUBSTEPS,
                         interpolation: str = "cubic", strict: bool = True) -> Trajectory:
    """Integrate the cavity field E together with P and S.

    Without ``input`` this is a retrieval run from S = 1; with ``input`` it
    is a storage run from the empty state. The trajectory carries the
    intracavity field in ``E_cav`` and the ratio kappa/gN in ``diagnostics``.
    """
    if not params.has_cavity:
        raise DomainError("full-cavity model needs kappa and gN")
    grid = control.grid if grid is None else grid
    omega = _drive(control, grid, "control")
    e_in = _drive(input, grid, "input")
    retrieval = input is None
    if initial is None:
        initial = AtomicState(0j, 1 + 0j) if retrieval else AtomicState()
    kappa, gN = float(params.kappa), float(params.gN)
    rate = (kappa + gN + abs(complex(params.gamma, params.delta))
            + float(np.max(np.abs(omega), initial=0.0)) + params.gamma_s)
    m0 = substeps or _initial_substeps(rate, grid.dt)
    cubic = interpolation == "cubic"

    def run(m):
        E_cav, P, S, E_out, N = rk4_full_cavity(
            0j, complex(initial.P), complex(initial.S), omega, e_in, grid.n, m,
            grid.dt / m, kappa, gN, params.gamma, params.delta, params.gamma_s, cubic)
        return P, S, E_out, N, E_cav

    metric = _retrieval_metric if retrieval else _storage_metric
    if substeps is not None:
        result = (run(substeps), substeps, True, 0.0)
    else:
        result = _refine(run, metric, m0, tol, max(max_substeps, 2 * m0))
    out, m, ok, change = _finish(result, grid, tol, strict, "full cavity")
    P, S, E_out, N, E_cav = out
    residual = float(abs(P[-1]) ** 2 + abs(S[-1]) ** 2 + abs(E_cav[-1]) ** 2)
    flags = ("incomplete_retrieval",) if retrieval and residual > INCOMPLETE_RETRIEVAL else ()
    diagnostics = {"kappa_over_gN": kappa / gN, "residual_excitation": residual}
    if retrieval:
        return Trajectory("full_cavity_retrieval", grid, P, S, E_out, N, e_in, E_cav=E_cav,
                          eta_r=float(N[-1]), substeps=m, converged=ok,
                          refinement_change=change, flags=flags, diagnostics=diagnostics)
    return Trajectory("full_cavity_storage", grid, P, S, E_out, N, e_in, E_cav=E_cav,
                      eta_s=float(abs(S[-1]) ** 2), substeps=m, converged=ok,
                      refinement_change=change, diagnostics=diagnostics)


def _central_diff(y: np.ndarray, dt: float) -> np.ndarray:
    return (y[2:] - y[:-2]) / (2.0 * dt)


def conservation_residual(traj: Trajectory, params: PhysicalParams) -> float:
    """Max over interior grid points of |d/dt(|P|^2+|S|^2) + 2 gamma (1+C) |P|^2|.

    The derivative is a central difference on the recording grid, so the
    residual of an accurate trajectory falls as dt^2.
    """
    if traj.kind != "retrieval":
        raise DomainError("the excitation balance only holds for retrieval runs")
    if np.any(traj.E_in != 0):
        raise DomainError("the excitation balance needs E_in = 0")
    if params.gamma_s != 0:
        raise DomainError("the excitation balance needs gamma_s = 0")
    if traj.grid.n < 3:
        raise DomainError("need at least 3 grid points")
    excitation = np.abs(traj.P) ** 2 + np.abs(traj.S) ** 2
    rate = _central_diff(excitation, traj.grid.dt)
    loss = 2.0 * params.total_decay * np.abs(traj.P[1:-1]) ** 2
    return float(np.max(np.abs(rate + loss)))


def second_order_residual(traj: Trajectory, params: PhysicalParams, control: Envelope,
                          threshold: float = 1e-6) -> float:
    """Residual of the single second-order equation for S along a trajectory.

    Evaluates |S'' - (Om*'/Om*) S' + (gamma(1+C) + i delta) S' + |Om|^2 S
    + Om* sqrt(2 gamma C) E_in| with central differences, restricted to
    points where |Om| exceeds ``threshold`` times its maximum.
    """
    if params.gamma_s != 0:
        raise DomainError("the second-order form assumes gamma_s = 0")
    if traj.kind not in ("storage", "retrieval"):
        raise DomainError("needs a bad-cavity trajectory")
    if control.grid != traj.grid:
        raise DomainError("control and trajectory grids differ")
    dt = traj.grid.dt
    om = np.asarray(control.values)
    S = traj.S
    dS = _central_diff(S, dt)
    d2S = (S[2:] - 2.0 * S[1:-1] + S[:-2]) / dt**2
    om_c = np.conj(om[1:-1])
    d_om_c = np.conj(_central_diff(om, dt))
    keep = np.abs(om_c) > threshold * np.max(np.abs(om))
    if not np.any(keep):
        raise DomainError("control vanishes on the whole grid")
    res = (d2S[keep] - d_om_c[keep] / om_c[keep] * dS[keep]
           + params.complex_decay * dS[keep] + np.abs(om_c[keep]) ** 2 * S[1:-1][keep]
           + om_c[keep] * params.coupling * traj.E_in[1:-1][keep])
    return float(np.max(np.abs(res)))

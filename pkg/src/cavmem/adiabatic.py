"""Adiabatic-limit solutions, optimal control shaping and adiabaticity checks.

With P adiabatically eliminated, a control Omega(t) acts only through its
running energy h(t, t') = int_t^t' |Omega|^2. Writing ``a = gamma(1+C) + i
delta`` and ``K = |a|^2 / (2 gamma (1+C))``, the spin wave left after area
h is exp(-h/K), which is what the shaping formulas invert.

Shaped controls diverge where the remaining (or accumulated) mode energy
vanishes. Two things keep them finite: an energy floor ``epsilon`` added
under the logarithm, which costs a relative efficiency of about
``epsilon``, and clamping of |Omega| over the last (retrieval) or first
(storage) hundredth of the pulse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    DomainError,
    Envelope,
    PhysicalParams,
    TimeGrid,
    cumulative_trapezoid,
    tail_trapezoid,
    trapezoid,
)

DEFAULT_EPSILON = 1e-4
TRUNCATION_FRACTION = 0.01
ADIABATIC_TCG = 10.0
ADIABATIC_RATIO = 1.5


@dataclass(frozen=True)
class ShapingResult:
    """A shaped control and the bookkeeping that produced it.

    ``h_profile`` is h(0, t) for retrieval and h(t, T) for storage, before
    truncation. ``retained`` marks the grid points where |Omega| was left
    as computed; ``target`` is the mode actually shaped for (after the
    spin-decay reweighting, if any).
    """

    control: Envelope
    h_profile: np.ndarray
    truncated: bool
    epsilon_boundary: float
    predicted_efficiency: float
    target: Envelope
    retained: np.ndarray
    untruncated: Envelope

    @property
    def efficiency_deficit(self) -> float:
        """Efficiency lost to the energy floor, about epsilon * C/(1+C)."""
        return self.predicted_efficiency * self.epsilon_boundary


def _running_h(control: Envelope) -> np.ndarray:
    return cumulative_trapezoid(np.abs(control.values) ** 2, control.grid.dt)


def _h_at(control: Envelope, running: np.ndarray, t: float) -> float:
    grid = control.grid
    tol = 1e-12 * max(1.0, abs(grid.t0), abs(grid.t1))
    if t < grid.t0 - tol or t > grid.t1 + tol:
        raise DomainError(f"t={t} outside grid [{grid.t0}, {grid.t1}]")
    u = min(max((t - grid.t0) / grid.dt, 0.0), grid.n - 1.0)
    k = min(int(math.floor(u)), grid.n - 2)
    s = u - k
    w = np.abs(control.values[k:k + 2]) ** 2
    # exact integral of the linear interpolant of |Omega|^2 over [t_k, t]
    partial = grid.dt * (w[0] * s + 0.5 * (w[1] - w[0]) * s * s)
    return float(running[k] + partial)


def h_integral(control: Envelope, t: float, t1: float) -> float:
    """Control energy int_t^t1 |Omega|^2 by the trapezoid rule."""
    if t > t1:
        raise DomainError(f"h_integral needs t <= t1, got {t} > {t1}")
    running = _running_h(control)
    return _h_at(control, running, t1) - _h_at(control, running, t)


def adiabatic_retrieval_efficiency(params: PhysicalParams, h_total: float) -> float:
    """C/(1+C) * (1 - exp(-h/K)) for a control of total energy ``h_total``."""
    return params.max_efficiency * (1.0 - math.exp(-h_total / params.h_scale))


def retrieval_completeness(params: PhysicalParams, h_total: float) -> float:
    """The exponent h/K; complete retrieval needs this to be large."""
    return h_total / params.h_scale


def adiabatic_retrieval_output(params: PhysicalParams, control: Envelope) -> Envelope:
    """Output field of adiabatic retrieval from S(0) = 1.

    E_out(t) = -sqrt(2 gamma C) Omega(t)/a * exp(-h(0, t)/a).
    """
    a = params.complex_decay
    h = _running_h(control)
    values = -params.coupling * np.asarray(control.values) / a * np.exp(-h / a)
    return Envelope(control.grid, values, "output_field")


def stark_shift(params: PhysicalParams, control: Envelope) -> np.ndarray:
    """Instantaneous ac Stark shift -|Omega|^2 delta / |a|^2.

    This is a frequency in the exp(-i w t) convention; the phase of the
    factor exp(-h/a) therefore advances at minus this rate.
    """
    return -np.abs(control.values) ** 2 * params.delta / abs(params.complex_decay) ** 2


def _normalized_target(mode: Envelope) -> Envelope:
    n2 = mode.norm2
    if not n2 > 0 or not math.isfinite(n2):
        raise DomainError("cannot shape a control for a mode with zero norm")
    return mode.with_values(np.asarray(mode.values) / math.sqrt(n2))


def _truncation_index(grid: TimeGrid, fraction: float) -> int:
    return grid.index_at(grid.t0 + fraction * grid.duration)


def _phase(values: np.ndarray) -> np.ndarray:
    """Unit phasors of ``values``; zero samples borrow the next nonzero phase."""
    nz = np.flatnonzero(values)
    if nz.size == 0:
        return np.ones(len(values), dtype=complex)
    nearest = nz[np.minimum(np.searchsorted(nz, np.arange(len(values))), nz.size - 1)]
    src = values[nearest]
    return src / np.abs(src)


def _clamp_magnitude(values: np.ndarray, idx: slice, ref: int) -> np.ndarray:
    out = values.copy()
    out[idx] = abs(values[ref]) * _phase(values)[idx]
    return out


def retrieval_control_for_mode(params: PhysicalParams, e: Envelope,
                               gamma_s: float | None = None, *,
                               epsilon: float = DEFAULT_EPSILON, truncate: bool = True,
                               fraction: float = TRUNCATION_FRACTION) -> ShapingResult:
    """Control that retrieves a spin wave S(0) = 1 into the mode ``e``.

    Retrieval is taken to start at the first grid point. With spin decay
    the control is shaped for e(t) exp(gamma_s t), renormalized, and the
    expected efficiency drops by 1 / int |e|^2 exp(2 gamma_s t).
    """
    gamma_s = params.gamma_s if gamma_s is None else gamma_s
    if epsilon <= 0:
        raise DomainError("epsilon must be > 0")
    e = _normalized_target(e)
    grid = e.grid
    decay_weight = 1.0
    if gamma_s > 0:
        boost = np.exp(gamma_s * (grid.times - grid.t0))
        decay_weight = float(trapezoid(np.abs(e.values) ** 2 * boost**2, grid.dt))
        e = e.with_values(np.asarray(e.values) * boost / math.sqrt(decay_weight))
    a = params.complex_decay
    K = params.h_scale
    remaining = tail_trapezoid(np.abs(e.values) ** 2, grid.dt)
    total = remaining[0]
    h = -K * np.log((remaining + epsilon) / (total + epsilon))
    values = (-a / math.sqrt(2.0 * params.total_decay) * np.asarray(e.values)
              / np.sqrt(remaining + epsilon)
              * np.exp(-1j * params.delta * h / abs(a) ** 2))
    untruncated = Envelope(grid, values, "control")
    retained = np.ones(grid.n, dtype=bool)
    if truncate:
        kc = grid.n - 1 - _truncation_index(grid, fraction)
        values = _clamp_magnitude(values, slice(kc + 1, None), kc)
        retained[kc + 1:] = False
    predicted = params.max_efficiency * total / (total + epsilon) / decay_weight
    return ShapingResult(Envelope(grid, values, "control"), h, truncate,
                         epsilon / (total + epsilon), predicted, e.with_values(e.values, "spin_mode"),
                         retained, untruncated)


def storage_kernel(params: PhysicalParams, control: Envelope,
                   gamma_s: float | None = None) -> Envelope:
    """The function f(t) with S(T) = sqrt(C/(1+C)) int f E_in dt.

    f(t) = -conj(Omega) sqrt(2 gamma (1+C))/a * exp(-h(t, T)/a), with an
    extra exp(-gamma_s (T - t)) when the spin wave decays.
    """
    gamma_s = params.gamma_s if gamma_s is None else gamma_s
    a = params.complex_decay
    grid = control.grid
    h_tail = tail_trapezoid(np.abs(control.values) ** 2, grid.dt)
    f = (-np.conj(control.values) * math.sqrt(2.0 * params.total_decay) / a
         * np.exp(-h_tail / a))
    if gamma_s > 0:
        f = f * np.exp(-gamma_s * (grid.t1 - grid.times))
    return Envelope(grid, f, "spin_mode")


def adiabatic_storage_amplitude(params: PhysicalParams, control: Envelope,
                                input: Envelope) -> complex:
    """Spin-wave amplitude S(T) after adiabatic storage of ``input``."""
    if control.grid != input.grid:
        raise DomainError("control and input must share a grid")
    f = storage_kernel(params, control)
    overlap = trapezoid(np.asarray(f.values) * np.asarray(input.values), control.grid.dt)
    return complex(math.sqrt(params.max_efficiency) * overlap)


def storage_control_for_mode(params: PhysicalParams, input: Envelope,
                             gamma_s: float | None = None, *,
                             epsilon: float = DEFAULT_EPSILON, truncate: bool = True,
                             fraction: float = TRUNCATION_FRACTION) -> ShapingResult:
    """Control that stores ``input`` with the largest possible efficiency.

    |Omega| is clamped to |Omega(T/100)| for t < T/100 when ``truncate`` is
    set. With spin decay the control is shaped for the renormalized
    E_in(t) exp(-gamma_s (T - t)) and the expected efficiency is multiplied
    by int |E_in|^2 exp(-2 gamma_s (T - t)).
    """
    gamma_s = params.gamma_s if gamma_s is None else gamma_s
    if epsilon <= 0:
        raise DomainError("epsilon must be > 0")
    mode = _normalized_target(input)
    grid = mode.grid
    decay_weight = 1.0
    if gamma_s > 0:
        damp = np.exp(-gamma_s * (grid.t1 - grid.times))
        decay_weight = float(trapezoid(np.abs(mode.values) ** 2 * damp**2, grid.dt))
        mode = mode.with_values(np.asarray(mode.values) * damp / math.sqrt(decay_weight))
    a = params.complex_decay
    K = params.h_scale
    accumulated = cumulative_trapezoid(np.abs(mode.values) ** 2, grid.dt)
    total = accumulated[-1]
    h = -K * np.log((accumulated + epsilon) / (total + epsilon))
    values = (-np.conj(a) / math.sqrt(2.0 * params.total_decay) * np.asarray(mode.values)
              / np.sqrt(accumulated + epsilon)
              * np.exp(1j * params.delta * h / abs(a) ** 2))
    untruncated = Envelope(grid, values, "control")
    retained = np.ones(grid.n, dtype=bool)
    if truncate:
        kc = _truncation_index(grid, fraction)
        values = _clamp_magnitude(values, slice(0, kc), kc)
        retained[:kc] = False
    predicted = params.max_efficiency * total / (total + epsilon) * decay_weight
    return ShapingResult(Envelope(grid, values, "control"), h, truncate,
                         epsilon / (total + epsilon), predicted, mode, retained, untruncated)


@dataclass(frozen=True)
class AdiabaticityMargins:
    """Dimensionless adiabaticity ratios, each to be well below 1.

    Rates are compared with |gamma C + i delta|. Logarithmic derivatives
    are taken only where the field exceeds 1e-3 of its maximum.
    """

    control_power: float
    control_bandwidth: float
    input_bandwidth: float
    magnitude_rate: float
    phase_rate: float
    TCgamma: float
    adiabatic: bool

    def as_dict(self) -> dict:
        return {
            "control_power": self.control_power,
            "control_bandwidth": self.control_bandwidth,
            "input_bandwidth": self.input_bandwidth,
            "magnitude_rate": self.magnitude_rate,
            "phase_rate": self.phase_rate,
            "TCgamma": self.TCgamma,
            "adiabatic": self.adiabatic,
        }


def _log_rate(values: np.ndarray, dt: float, floor: float = 1e-3) -> float:
    mag = np.abs(values)
    top = mag.max(initial=0.0)
    if top == 0:
        return 0.0
    keep = mag > floor * top
    rate = np.abs(np.gradient(values, dt)[keep]) / mag[keep]
    return float(rate.max(initial=0.0))


def adiabaticity_margins(params: PhysicalParams, control: Envelope,
                         input: Envelope | None = None, T: float | None = None, *,
                         tcg_min: float = ADIABATIC_TCG,
                         ratio_max: float = ADIABATIC_RATIO) -> AdiabaticityMargins:
    """Check the power, bandwidth and duration conditions for eliminating P.

    ``T`` defaults to the input duration (or the control duration). The
    run counts as adiabatic when T C gamma >= ``tcg_min`` and every ratio
    is at most ``ratio_max``.
    """
    scale = abs(complex(params.gamma * params.C, params.delta))
    dt = control.grid.dt
    om = np.asarray(control.values)
    mag = np.abs(om)
    power = float(mag.max(initial=0.0)) / scale
    bandwidth = _log_rate(om, dt) / scale
    keep = mag > 1e-3 * mag.max(initial=0.0)
    if np.any(keep):
        mag_rate = float((np.abs(np.gradient(mag, dt)[keep]) / mag[keep]).max()) / scale
        phase = np.unwrap(np.angle(om))
        phase_rate = float(np.abs(np.gradient(phase, dt)[keep]).max()) / scale
    else:
        mag_rate = phase_rate = 0.0
    in_rate = 0.0
    if input is not None:
        in_rate = _log_rate(np.asarray(input.values), input.grid.dt) / scale
    if T is None:
        T = (input.grid if input is not None else control.grid).duration
    tcg = T * params.C * params.gamma
    ratios = (power, bandwidth, in_rate, mag_rate, phase_rate)
    ok = tcg >= tcg_min and all(r <= ratio_max for r in ratios)
    return AdiabaticityMargins(power, bandwidth, in_rate, mag_rate, phase_rate, tcg, ok)


def output_duration_estimate(params: PhysicalParams, omega_scale: float) -> float:
    """Rough output length (gamma^2 C^2 + delta^2) / (gamma C |Omega|^2)."""
    if not omega_scale > 0:
        raise DomainError(f"omega_scale must be > 0, got {omega_scale}")
    g = params.gamma * params.C
    return (g**2 + params.delta**2) / (g * omega_scale**2)

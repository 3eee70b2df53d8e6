"""Domain types, envelope algebra and test-mode constructors.

Units: the optical polarization decay rate ``gamma`` sets the time unit and is
1 by default, so rates are in units of gamma and times in units of 1/gamma.
All norms and overlaps use trapezoidal quadrature on uniform grids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

Role = Literal["input_field", "output_field", "control", "spin_mode"]


class CavmemError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(CavmemError, ValueError):
    """An argument lies outside the domain of an operation."""


class IntegrationError(CavmemError, ArithmeticError):
    """The integrator met non-finite data."""


class ConvergenceError(CavmemError, ArithmeticError):
    """Grid refinement did not reach the requested tolerance."""


@dataclass(frozen=True)
class PhysicalParams:
    """Fixed physics of a run.

    ``C`` is the cooperativity, ``delta`` the one-photon detuning and
    ``gamma_s`` the spin-wave decay rate. ``kappa`` and ``gN`` (cavity
    half-width and collective coupling) are only needed by the full
    three-mode cavity model; when both are given they must reproduce ``C``.
    """

    C: float
    gamma: float = 1.0
    delta: float = 0.0
    gamma_s: float = 0.0
    kappa: float | None = None
    gN: float | None = None

    def __post_init__(self) -> None:
        for name in ("C", "gamma", "delta", "gamma_s"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if self.C <= 0:
            raise DomainError(f"cooperativity C must be > 0, got {self.C}")
        if self.gamma <= 0:
            raise DomainError(f"gamma must be > 0, got {self.gamma}")
        if self.gamma_s < 0:
            raise DomainError(f"gamma_s must be >= 0, got {self.gamma_s}")
        if self.kappa is not None and self.kappa <= 0:
            raise DomainError(f"kappa must be > 0, got {self.kappa}")
        if self.gN is not None and self.gN <= 0:
            raise DomainError(f"gN must be > 0, got {self.gN}")
        if self.kappa is not None and self.gN is not None:
            implied = self.gN**2 / (self.kappa * self.gamma)
            if abs(implied - self.C) > 1e-12 * max(abs(self.C), abs(implied)):
                raise DomainError(
                    f"C={self.C!r} inconsistent with gN^2/(kappa*gamma)={implied!r}"
                )

    @classmethod
    def from_cavity(cls, kappa: float, gN: float, gamma: float = 1.0,
                    delta: float = 0.0, gamma_s: float = 0.0) -> "PhysicalParams":
        return cls(C=gN**2 / (kappa * gamma), gamma=gamma, delta=delta,
                   gamma_s=gamma_s, kappa=kappa, gN=gN)

    @property
    def has_cavity(self) -> bool:
        return self.kappa is not None and self.gN is not None

    @property
    def total_decay(self) -> float:
        """gamma*(1+C): polarization decay including emission into the cavity."""
        return self.gamma * (1.0 + self.C)

    @property
    def complex_decay(self) -> complex:
        return complex(self.total_decay, self.delta)

    @property
    def coupling(self) -> float:
        """sqrt(2*gamma*C), the polarization-to-output amplitude."""
        return math.sqrt(2.0 * self.gamma * self.C)

    @property
    def h_scale(self) -> float:
        """(gamma^2(1+C)^2 + delta^2) / (2 gamma (1+C)).

        exp(-h/h_scale) is the fraction of spin wave left after a control
        pulse of area h in the adiabatic limit.
        """
        return abs(self.complex_decay) ** 2 / (2.0 * self.total_decay)

    @property
    def max_efficiency(self) -> float:
        return self.C / (1.0 + self.C)

    def replace(self, **changes) -> "PhysicalParams":
        values = {k: getattr(self, k) for k in
                  ("C", "gamma", "delta", "gamma_s", "kappa", "gN")}
        values.update(changes)
        return PhysicalParams(**values)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t1: float
    n: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t0) and math.isfinite(self.t1)):
            raise DomainError("grid endpoints must be finite")
        if int(self.n) != self.n or self.n < 2:
            raise DomainError(f"grid needs n >= 2 points, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if not self.t1 > self.t0:
            raise DomainError(f"grid needs t1 > t0, got [{self.t0}, {self.t1}]")

    @classmethod
    def span(cls, duration: float, n: int) -> "TimeGrid":
        return cls(0.0, float(duration), n)

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / (self.n - 1)

    @property
    def duration(self) -> float:
        return self.t1 - self.t0

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.n)

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t0, self.t1, (self.n - 1) * factor + 1)

    def index_at(self, t: float) -> int:
        """Index of the first grid point at or after ``t`` (rounding tolerant)."""
        x = (t - self.t0) / self.dt
        k = math.ceil(x - 1e-9)
        return min(max(k, 0), self.n - 1)


def trapezoid(values: np.ndarray, dt: float) -> complex | float:
    return np.trapezoid(values, dx=dt)


def cumulative_trapezoid(values: np.ndarray, dt: float) -> np.ndarray:
    """Running trapezoid integral starting at 0 on the first sample."""
    out = np.zeros(len(values), dtype=np.result_type(values, float))
    out[1:] = np.cumsum(0.5 * (values[1:] + values[:-1]) * dt)
    return out


def tail_trapezoid(values: np.ndarray, dt: float) -> np.ndarray:
    """Running trapezoid integral from each sample to the end of the grid."""
    out = np.zeros(len(values), dtype=np.result_type(values, float))
    seg = 0.5 * (values[1:] + values[:-1]) * dt
    out[:-1] = np.cumsum(seg[::-1])[::-1]
    return out


@dataclass(frozen=True)
class Envelope:
    """Complex samples of a field, control or mode on a uniform grid."""

    grid: TimeGrid
    values: np.ndarray
    role: Role = "input_field"

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=complex)
        if vals.shape != (self.grid.n,):
            raise DomainError(
                f"expected {self.grid.n} samples, got shape {vals.shape}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def norm2(self) -> float:
        return float(trapezoid(np.abs(self.values) ** 2, self.grid.dt))

    @property
    def norm(self) -> float:
        return math.sqrt(self.norm2)

    def normalized(self) -> "Envelope":
        n2 = self.norm2
        if not n2 > 0 or not math.isfinite(n2):
            raise DomainError("cannot normalize an envelope with zero norm")
        return Envelope(self.grid, self.values / math.sqrt(n2), self.role)

    def with_values(self, values: np.ndarray, role: Role | None = None) -> "Envelope":
        return Envelope(self.grid, values, self.role if role is None else role)

    def scaled(self, factor: complex) -> "Envelope":
        return self.with_values(self.values * factor)

    def cumulative_norm2(self) -> np.ndarray:
        return cumulative_trapezoid(np.abs(self.values) ** 2, self.grid.dt)

    def tail_norm2(self) -> np.ndarray:
        return tail_trapezoid(np.abs(self.values) ** 2, self.grid.dt)

    @classmethod
    def constant(cls, grid: TimeGrid, value: complex, role: Role = "control") -> "Envelope":
        return cls(grid, np.full(grid.n, value, dtype=complex), role)

    @classmethod
    def zeros(cls, grid: TimeGrid, role: Role = "control") -> "Envelope":
        return cls(grid, np.zeros(grid.n, dtype=complex), role)


@dataclass(frozen=True)
class AtomicState:
    """Polarization and spin-wave amplitudes of a single excitation."""

    P: complex = 0j
    S: complex = 0j

    @property
    def excitation(self) -> float:
        return abs(self.P) ** 2 + abs(self.S) ** 2


def _check_spans(grid: TimeGrid, T: float) -> None:
    tol = 1e-12 * max(1.0, abs(T))
    if abs(grid.t0) > tol or abs(grid.t1 - T) > tol:
        raise DomainError(f"grid [{grid.t0}, {grid.t1}] must span [0, {T}]")


GAUSSIAN_WIDTH = 30.0


def _gaussian_like_raw(T: float, grid: TimeGrid) -> np.ndarray:
    # built from the sample index so that x is exactly antisymmetric
    k = np.arange(grid.n, dtype=float)
    x = (k - 0.5 * (grid.n - 1)) / (grid.n - 1)
    raw = (np.exp(-GAUSSIAN_WIDTH * x**2) - math.exp(-GAUSSIAN_WIDTH / 4)) / math.sqrt(T)
    raw[0] = raw[-1] = 0.0
    return raw


def gaussian_like_amplitude(T: float, grid: TimeGrid | None = None, n: int = 2001) -> float:
    """Normalization constant A of :func:`make_gaussian_like_mode` on ``grid``."""
    grid = TimeGrid.span(T, n) if grid is None else grid
    raw = _gaussian_like_raw(T, grid)
    return 1.0 / math.sqrt(float(trapezoid(raw**2, grid.dt)))


def make_gaussian_like_mode(T: float, grid: TimeGrid | None = None, n: int = 2001) -> Envelope:
    """Gaussian pulse on [0, T] shifted down so it vanishes at both ends.

    A(exp(-30 (t/T - 1/2)^2) - exp(-7.5)) / sqrt(T), with A fixed by the
    trapezoidal norm on ``grid`` (A is close to 2.09 for any T).
    """
    if not T > 0:
        raise DomainError(f"mode duration must be > 0, got {T}")
    grid = TimeGrid.span(T, n) if grid is None else grid
    _check_spans(grid, T)
    return Envelope(grid, gaussian_like_amplitude(T, grid) * _gaussian_like_raw(T, grid),
                    "input_field")


def make_square_mode(T: float, grid: TimeGrid | None = None, n: int = 2001) -> Envelope:
    grid = TimeGrid.span(T, n) if grid is None else grid
    _check_spans(grid, T)
    return Envelope(grid, np.full(grid.n, 1.0 / math.sqrt(T)), "input_field").normalized()


def make_exponential_mode(T: float, rate: float, grid: TimeGrid | None = None,
                          n: int = 2001) -> Envelope:
    """exp(-rate * t) on [0, T], normalized. Negative rates give rising pulses."""
    grid = TimeGrid.span(T, n) if grid is None else grid
    _check_spans(grid, T)
    return Envelope(grid, np.exp(-rate * grid.times), "input_field").normalized()


def make_chirped_gaussian_mode(T: float, chirp: float, grid: TimeGrid | None = None,
                               n: int = 2001) -> Envelope:
    """Gaussian-like mode times a quadratic phase exp(i chirp (t/T - 1/2)^2)."""
    base = make_gaussian_like_mode(T, grid, n)
    x = base.times / T - 0.5
    return base.with_values(base.values * np.exp(1j * chirp * x**2))


def time_reverse(env: Envelope, T: float | None = None) -> Envelope:
    """Conjugated, time-flipped copy: E(t) -> E*(T - t) on the same grid."""
    if T is not None:
        _check_spans(env.grid, T)
    return env.with_values(np.conj(env.values[::-1]))


def mode_overlap(a: Envelope, b: Envelope) -> complex:
    """Inner product <a, b> = integral of a*(t) b(t) dt."""
    if a.grid != b.grid:
        raise DomainError("mode_overlap needs both envelopes on the same grid")
    return complex(trapezoid(np.conj(a.values) * b.values, a.grid.dt))


def fidelity_from_efficiency(eta: float) -> float:
    """Fidelity (1 + eta)/2 of a stored half of an entangled pair."""
    if not 0.0 <= eta <= 1.0:
        raise DomainError(f"efficiency must lie in [0, 1], got {eta}")
    return (1.0 + eta) / 2.0

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavmem.core import (
    AtomicState,
    DomainError,
    Envelope,
    PhysicalParams,
    TimeGrid,
    cumulative_trapezoid,
    fidelity_from_efficiency,
    gaussian_like_amplitude,
    make_chirped_gaussian_mode,
    make_exponential_mode,
    make_gaussian_like_mode,
    make_square_mode,
    mode_overlap,
    tail_trapezoid,
    time_reverse,
    trapezoid,
)


class TestPhysicalParams:
    def test_derived_rates(self):
        p = PhysicalParams(C=10.0, delta=3.0)
        assert p.total_decay == 11.0
        assert p.complex_decay == complex(11.0, 3.0)
        assert p.coupling == pytest.approx(math.sqrt(20.0))
        assert p.h_scale == pytest.approx((121.0 + 9.0) / 22.0)
        assert p.max_efficiency == pytest.approx(10.0 / 11.0)

    @pytest.mark.parametrize("kw", [dict(C=0.0), dict(C=-1.0), dict(C=1.0, gamma=0.0),
                                    dict(C=1.0, gamma_s=-0.1), dict(C=1.0, kappa=-1.0),
                                    dict(C=float("nan")), dict(C=1.0, delta=float("inf"))])
    def test_invalid(self, kw):
        with pytest.raises(DomainError):
            PhysicalParams(**kw)

    def test_cavity_consistency(self):
        p = PhysicalParams.from_cavity(kappa=100.0, gN=10.0)
        assert p.C == 1.0 and p.has_cavity
        PhysicalParams(C=1.0, kappa=100.0, gN=10.0)
        with pytest.raises(DomainError):
            PhysicalParams(C=2.0, kappa=100.0, gN=10.0)
        with pytest.raises(DomainError):
            PhysicalParams(C=1.0 + 1e-10, kappa=100.0, gN=10.0)

    def test_replace(self):
        p = PhysicalParams(C=1.0).replace(delta=5.0)
        assert p.delta == 5.0 and p.C == 1.0


class TestTimeGrid:
    def test_basic(self):
        g = TimeGrid(0.0, 2.0, 5)
        assert g.dt == 0.5
        np.testing.assert_array_equal(g.times, [0, 0.5, 1, 1.5, 2])
        assert g.refined(2).n == 9

    @pytest.mark.parametrize("args", [(0.0, 0.0, 5), (1.0, 0.0, 5), (0.0, 1.0, 1),
                                      (0.0, float("inf"), 5)])
    def test_invalid(self, args):
        with pytest.raises(DomainError):
            TimeGrid(*args)

    def test_index_at(self):
        g = TimeGrid.span(1.0, 101)
        assert g.index_at(0.01) == 1
        assert g.index_at(0.0100000000001) == 1
        assert g.index_at(0.015) == 2
        assert g.index_at(5.0) == 100


class TestQuadrature:
    def test_cumulative_and_tail(self):
        dt = 0.1
        y = np.arange(11.0)
        cum = cumulative_trapezoid(y, dt)
        tail = tail_trapezoid(y, dt)
        total = trapezoid(y, dt)
        assert cum[-1] == pytest.approx(total)
        assert tail[0] == pytest.approx(total)
        np.testing.assert_allclose(cum + tail, total, rtol=1e-14)

    def test_tail_of_reverse_is_reverse_of_cumulative(self):
        y = np.random.default_rng(0).random(50)
        np.testing.assert_array_equal(tail_trapezoid(y[::-1], 0.3), cumulative_trapezoid(y, 0.3)[::-1])


class TestEnvelope:
    def test_read_only(self):
        env = Envelope.constant(TimeGrid.span(1.0, 3), 1.0)
        with pytest.raises(ValueError):
            env.values[0] = 2.0

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            Envelope(TimeGrid.span(1.0, 3), np.ones(4))

    def test_normalize_zero(self):
        with pytest.raises(DomainError):
            Envelope.zeros(TimeGrid.span(1.0, 3)).normalized()


class TestModes:
    def test_gaussian_like_endpoints_and_norm(self):
        m = make_gaussian_like_mode(1.0, n=2001)
        assert m.values[0] == 0 and m.values[-1] == 0
        assert abs(m.norm2 - 1.0) < 1e-9

    def test_gaussian_like_amplitude(self):
        # continuum value of A from the integral of (exp(-30 x^2) - exp(-7.5))^2
        x = np.linspace(-0.5, 0.5, 1_000_001)
        raw = np.exp(-30 * x**2) - math.exp(-7.5)
        A = 1.0 / math.sqrt(np.trapezoid(raw**2, x))
        assert A == pytest.approx(2.09, abs=0.005)
        assert gaussian_like_amplitude(1.0, n=2001) == pytest.approx(A, rel=1e-9)
        # A does not depend on T
        assert gaussian_like_amplitude(37.0, n=2001) == pytest.approx(A, rel=1e-9)

    def test_gaussian_grid_must_span(self):
        with pytest.raises(DomainError):
            make_gaussian_like_mode(1.0, TimeGrid(0.0, 2.0, 11))
        with pytest.raises(DomainError):
            make_gaussian_like_mode(-1.0)

    @pytest.mark.parametrize("mode", [
        make_square_mode(3.0), make_exponential_mode(2.0, 1.5), make_exponential_mode(2.0, -1.0),
        make_chirped_gaussian_mode(5.0, 4.0), make_gaussian_like_mode(0.01)])
    def test_constructors_normalized(self, mode):
        assert abs(mode.norm2 - 1.0) < 1e-9

    def test_gaussian_is_time_symmetric(self):
        m = make_gaussian_like_mode(1.0)
        assert np.max(np.abs(time_reverse(m).values - m.values)) == 0.0

    def test_time_reverse_negates_phase_slope(self):
        g = make_gaussian_like_mode(1.0)
        w = 7.0
        chirp = g.with_values(g.values * np.exp(1j * w * g.times))
        rev = time_reverse(chirp, 1.0)
        np.testing.assert_allclose(rev.values, g.values * np.exp(1j * w * (g.times - 1.0)),
                                   atol=1e-14)
        np.testing.assert_array_equal(time_reverse(rev).values, chirp.values)
        assert rev.norm2 == chirp.norm2


class TestOverlap:
    def test_self_overlap(self):
        m = make_chirped_gaussian_mode(2.0, 3.0)
        assert mode_overlap(m, m) == pytest.approx(m.norm2)

    def test_disjoint(self):
        g = TimeGrid.span(1.0, 101)
        a = Envelope(g, np.where(g.times < 0.4, 1.0, 0.0))
        b = Envelope(g, np.where(g.times > 0.6, 1.0, 0.0))
        assert mode_overlap(a, b) == 0

    def test_grid_mismatch(self):
        with pytest.raises(DomainError):
            mode_overlap(make_square_mode(1.0, n=11), make_square_mode(1.0, n=12))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_hermitian_and_reversal(self, seed):
        rng = np.random.default_rng(seed)
        g = TimeGrid.span(1.0, 33)
        a = Envelope(g, rng.normal(size=33) + 1j * rng.normal(size=33))
        b = Envelope(g, rng.normal(size=33) + 1j * rng.normal(size=33))
        ab = mode_overlap(a, b)
        assert mode_overlap(b, a) == pytest.approx(ab.conjugate())
        assert mode_overlap(time_reverse(a), time_reverse(b)) == pytest.approx(mode_overlap(b, a))
        assert abs(ab) <= a.norm * b.norm * (1 + 1e-12)


class TestFidelity:
    @pytest.mark.parametrize("eta, F", [(1.0, 1.0), (0.0, 0.5), (0.5, 0.75)])
    def test_values(self, eta, F):
        assert fidelity_from_efficiency(eta) == F

    @pytest.mark.parametrize("eta", [-0.1, 1.1])
    def test_domain(self, eta):
        with pytest.raises(DomainError):
            fidelity_from_efficiency(eta)


def test_atomic_state_excitation():
    assert AtomicState(0.6, 0.8j).excitation == pytest.approx(1.0)

"""Compiled RK4 steppers for the bad-cavity and full-cavity equations.

Drives are given as samples on the recording grid; values between samples
come from a local four-point Lagrange interpolant (or linear, on request),
which keeps the scheme fourth order for smooth drives.
"""

import math

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def _interp(samples, u, cubic):
    # u is the position in units of the sample spacing.
    n = samples.shape[0]
    if u <= 0.0:
        return samples[0]
    if u >= n - 1:
        return samples[n - 1]
    i = int(math.floor(u))
    if not cubic or n < 4:
        s = u - i
        return samples[i] * (1.0 - s) + samples[i + 1] * s
    base = i - 1
    if base < 0:
        base = 0
    elif base > n - 4:
        base = n - 4
    s = u - (base + 1)
    w0 = -s * (s - 1.0) * (s - 2.0) / 6.0
    w1 = (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0
    w2 = -(s + 1.0) * s * (s - 2.0) / 2.0
    w3 = (s + 1.0) * s * (s - 1.0) / 6.0
    return (w0 * samples[base] + w1 * samples[base + 1]
            + w2 * samples[base + 2] + w3 * samples[base + 3])


@numba.njit(cache=True, nogil=True)
def _abs2(z):
    return z.real * z.real + z.imag * z.imag


@numba.njit(cache=True, nogil=True)
def rk4_bad_cavity(P0, S0, omega, e_in, n_grid, substeps, h, decay, coupling,
                   gamma_s, cubic):
    """Integrate dP = -decay P + i Om S + i g E_in, dS = i Om* P - gamma_s S.

    Also integrates N = int |E_out|^2 with E_out = E_in + i g P. Returns
    P, S, E_out and N sampled on the n_grid recording points.
    """
    P_out = np.empty(n_grid, dtype=np.complex128)
    S_out = np.empty(n_grid, dtype=np.complex128)
    E_out = np.empty(n_grid, dtype=np.complex128)
    N_out = np.empty(n_grid, dtype=np.float64)
    P = P0
    S = S0
    N = 0.0
    ig = 1j * coupling
    inv_m = 1.0 / substeps
    P_out[0] = P
    S_out[0] = S
    E_out[0] = e_in[0] + ig * P
    N_out[0] = 0.0
    om_a = omega[0]
    e_a = e_in[0]
    for k in range(n_grid - 1):
        for j in range(substeps):
            u = k + j * inv_m
            om_b = _interp(omega, u + 0.5 * inv_m, cubic)
            e_b = _interp(e_in, u + 0.5 * inv_m, cubic)
            if j == substeps - 1:
                om_c = omega[k + 1]
                e_c = e_in[k + 1]
            else:
                om_c = _interp(omega, u + inv_m, cubic)
                e_c = _interp(e_in, u + inv_m, cubic)

            k1p = -decay * P + 1j * om_a * S + ig * e_a
            k1s = 1j * np.conj(om_a) * P - gamma_s * S
            k1n = _abs2(e_a + ig * P)

            P2 = P + 0.5 * h * k1p
            S2 = S + 0.5 * h * k1s
            k2p = -decay * P2 + 1j * om_b * S2 + ig * e_b
            k2s = 1j * np.conj(om_b) * P2 - gamma_s * S2
            k2n = _abs2(e_b + ig * P2)

            P3 = P + 0.5 * h * k2p
            S3 = S + 0.5 * h * k2s
            k3p = -decay * P3 + 1j * om_b * S3 + ig * e_b
            k3s = 1j * np.conj(om_b) * P3 - gamma_s * S3
            k3n = _abs2(e_b + ig * P3)

            P4 = P + h * k3p
            S4 = S + h * k3s
            k4p = -decay * P4 + 1j * om_c * S4 + ig * e_c
            k4s = 1j * np.conj(om_c) * P4 - gamma_s * S4
            k4n = _abs2(e_c + ig * P4)

            P = P + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
            S = S + h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
            N = N + h / 6.0 * (k1n + 2.0 * k2n + 2.0 * k3n + k4n)
            om_a = om_c
            e_a = e_c
        P_out[k + 1] = P
        S_out[k + 1] = S
        E_out[k + 1] = e_in[k + 1] + ig * P
        N_out[k + 1] = N
    return P_out, S_out, E_out, N_out


@numba.njit(cache=True, nogil=True)
def rk4_full_cavity(E0, P0, S0, omega, e_in, n_grid, substeps, h, kappa, gN,
                    gamma, delta, gamma_s, cubic):
    """Three-mode cavity equations with E_out = sqrt(2 kappa) E - E_in."""
    E_cav = np.empty(n_grid, dtype=np.complex128)
    P_out = np.empty(n_grid, dtype=np.complex128)
    S_out = np.empty(n_grid, dtype=np.complex128)
    E_out = np.empty(n_grid, dtype=np.complex128)
    N_out = np.empty(n_grid, dtype=np.float64)
    E = E0
    P = P0
    S = S0
    N = 0.0
    r = math.sqrt(2.0 * kappa)
    igN = 1j * gN
    decay = gamma + 1j * delta
    inv_m = 1.0 / substeps
    E_cav[0] = E
    P_out[0] = P
    S_out[0] = S
    E_out[0] = r * E - e_in[0]
    N_out[0] = 0.0
    om_a = omega[0]
    e_a = e_in[0]
    for k in range(n_grid - 1):
        for j in range(substeps):
            u = k + j * inv_m
            om_b = _interp(omega, u + 0.5 * inv_m, cubic)
            e_b = _interp(e_in, u + 0.5 * inv_m, cubic)
            if j == substeps - 1:
                om_c = omega[k + 1]
                e_c = e_in[k + 1]
            else:
                om_c = _interp(omega, u + inv_m, cubic)
                e_c = _interp(e_in, u + inv_m, cubic)

            k1e = -kappa * E + igN * P + r * e_a
            k1p = -decay * P + igN * E + 1j * om_a * S
            k1s = 1j * np.conj(om_a) * P - gamma_s * S
            k1n = _abs2(r * E - e_a)

            E2 = E + 0.5 * h * k1e
            P2 = P + 0.5 * h * k1p
            S2 = S + 0.5 * h * k1s
            k2e = -kappa * E2 + igN * P2 + r * e_b
            k2p = -decay * P2 + igN * E2 + 1j * om_b * S2
            k2s = 1j * np.conj(om_b) * P2 - gamma_s * S2
            k2n = _abs2(r * E2 - e_b)

            E3 = E + 0.5 * h * k2e
            P3 = P + 0.5 * h * k2p
            S3 = S + 0.5 * h * k2s
            k3e = -kappa * E3 + igN * P3 + r * e_b
            k3p = -decay * P3 + igN * E3 + 1j * om_b * S3
            k3s = 1j * np.conj(om_b) * P3 - gamma_s * S3
            k3n = _abs2(r * E3 - e_b)

            E4 = E + h * k3e
            P4 = P + h * k3p
            S4 = S + h * k3s
            k4e = -kappa * E4 + igN * P4 + r * e_c
            k4p = -decay * P4 + igN * E4 + 1j * om_c * S4
            k4s = 1j * np.conj(om_c) * P4 - gamma_s * S4
            k4n = _abs2(r * E4 - e_c)

            E = E + h / 6.0 * (k1e + 2.0 * k2e + 2.0 * k3e + k4e)
            P = P + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
            S = S + h / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
            N = N + h / 6.0 * (k1n + 2.0 * k2n + 2.0 * k3n + k4n)
            om_a = om_c
            e_a = e_c
        E_cav[k + 1] = E
        P_out[k + 1] = P
        S_out[k + 1] = S
        E_out[k + 1] = r * E - e_in[k + 1]
        N_out[k + 1] = N
    return E_cav, P_out, S_out, E_out, N_out

"""Low-level numeric kernels for the integrator hot path.

Fock-basis operators built from polynomials in (q, p) are banded: the
Duffing Hamiltonian has bandwidth 4, the damping operator bandwidth 1.
Every kernel here therefore works on a diagonal-band representation

    offsets : int64 (nb,)      sorted diagonal offsets k
    drow    : complex (nb, n)  drow[b, r] = A[r, r + offsets[b]], zero-padded

which turns each integrator step into O(bandwidth * n^2) work instead of
the O(n^3) of dense products.

Kernels are numba-compiled when numba is importable; each has a pure-numpy
twin (suffix ``_np``) used as fallback and as an independent reference in
the tests.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    NUMBA_ENABLED = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_ENABLED = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def band_left_np(offsets, drow, x, out):
    """out = A @ x for banded A."""
    n = x.shape[0]
    out[:, :] = 0.0
    for b, k in enumerate(offsets):
        if k >= 0:
            out[: n - k, :] += drow[b, : n - k, None] * x[k:, :]
        else:
            m = -k
            out[m:, :] += drow[b, m:, None] * x[: n - m, :]
    return out


def band_right_dag_np(offsets, drow, x, out):
    """out = x @ A^dagger for banded A."""
    n = x.shape[0]
    out[:, :] = 0.0
    for b, k in enumerate(offsets):
        if k >= 0:
            out[:, : n - k] += x[:, k:] * drow[b, : n - k].conj()[None, :]
        else:
            m = -k
            out[:, m:] += x[:, : n - m] * drow[b, m:].conj()[None, :]
    return out


def band_trace_np(offsets, drow, x):
    """Tr[A @ x] for banded A."""
    n = x.shape[0]
    total = 0.0 + 0.0j
    for b, k in enumerate(offsets):
        if k >= 0:
            total += np.dot(drow[b, : n - k], np.diagonal(x, -k))
        else:
            m = -k
            total += np.dot(drow[b, m:], np.diagonal(x, m))
    return total


def hermitize_scale_np(y, s):
    """In place y <- s * (y + y^dagger) / 2, with an exactly Hermitian result."""
    n = y.shape[0]
    upper = (y + y.conj().T) * (0.5 * s)
    y[:, :] = np.triu(upper)
    y[:, :] += np.triu(upper, 1).conj().T
    idx = np.arange(n)
    y[idx, idx] = y[idx, idx].real
    return y


def gs_step_np(tangent, jmat, logs, accumulate):
    """Apply jmat to the tangent columns and re-orthonormalize (2D Gram-Schmidt).

    Returns the two stretching factors; adds their logs to ``logs`` when
    ``accumulate`` is true. ``tangent`` is updated in place.
    """
    v1x = jmat[0, 0] * tangent[0, 0] + jmat[0, 1] * tangent[1, 0]
    v1y = jmat[1, 0] * tangent[0, 0] + jmat[1, 1] * tangent[1, 0]
    v2x = jmat[0, 0] * tangent[0, 1] + jmat[0, 1] * tangent[1, 1]
    v2y = jmat[1, 0] * tangent[0, 1] + jmat[1, 1] * tangent[1, 1]
    r1 = math.hypot(v1x, v1y)
    if r1 <= 0.0:
        return 0.0, 0.0
    u1x = v1x / r1
    u1y = v1y / r1
    proj = u1x * v2x + u1y * v2y
    w2x = v2x - proj * u1x
    w2y = v2y - proj * u1y
    r2 = math.hypot(w2x, w2y)
    if r2 <= 0.0:
        return r1, 0.0
    tangent[0, 0] = u1x
    tangent[1, 0] = u1y
    tangent[0, 1] = w2x / r2
    tangent[1, 1] = w2y / r2
    if accumulate:
        logs[0] += math.log(r1)
        logs[1] += math.log(r2)
    return r1, r2


def _classical_rhs(x, y, t, g, two_gamma, phi):
    return y, x - x * x * x - two_gamma * y - g * math.cos(t + phi)


def classical_stride_np(x, y, t0, dt, k_steps, g, gamma, phi):
    """Advance the classical flow and its tangent propagator over k_steps.

    Integrates the joint system (state, W) with one-step 4th order
    Runge-Kutta, W starting from the identity; returns
    (x, y, w00, w01, w10, w11) where W is the stride propagator.
    """
    tg = 2.0 * gamma
    w00, w01, w10, w11 = 1.0, 0.0, 0.0, 1.0
    for m in range(k_steps):
        t = t0 + m * dt
        # stage 1
        a1 = 1.0 - 3.0 * x * x
        k1x, k1y = _classical_rhs(x, y, t, g, tg, phi)
        K100, K101 = w10, w11
        K110 = a1 * w00 - tg * w10
        K111 = a1 * w01 - tg * w11
        # stage 2
        x2 = x + 0.5 * dt * k1x
        y2 = y + 0.5 * dt * k1y
        a2 = 1.0 - 3.0 * x2 * x2
        k2x, k2y = _classical_rhs(x2, y2, t + 0.5 * dt, g, tg, phi)
        b00 = w00 + 0.5 * dt * K100
        b01 = w01 + 0.5 * dt * K101
        b10 = w10 + 0.5 * dt * K110
        b11 = w11 + 0.5 * dt * K111
        K200, K201 = b10, b11
        K210 = a2 * b00 - tg * b10
        K211 = a2 * b01 - tg * b11
        # stage 3
        x3 = x + 0.5 * dt * k2x
        y3 = y + 0.5 * dt * k2y
        a3 = 1.0 - 3.0 * x3 * x3
        k3x, k3y = _classical_rhs(x3, y3, t + 0.5 * dt, g, tg, phi)
        c00 = w00 + 0.5 * dt * K200
        c01 = w01 + 0.5 * dt * K201
        c10 = w10 + 0.5 * dt * K210
        c11 = w11 + 0.5 * dt * K211
        K300, K301 = c10, c11
        K310 = a3 * c00 - tg * c10
        K311 = a3 * c01 - tg * c11
        # stage 4
        x4 = x + dt * k3x
        y4 = y + dt * k3y
        a4 = 1.0 - 3.0 * x4 * x4
        k4x, k4y = _classical_rhs(x4, y4, t + dt, g, tg, phi)
        d00 = w00 + dt * K300
        d01 = w01 + dt * K301
        d10 = w10 + dt * K310
        d11 = w11 + dt * K311
        K400, K401 = d10, d11
        K410 = a4 * d00 - tg * d10
        K411 = a4 * d01 - tg * d11
        # combine
        x = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        y = y + (dt / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        w00 = w00 + (dt / 6.0) * (K100 + 2.0 * K200 + 2.0 * K300 + K400)
        w01 = w01 + (dt / 6.0) * (K101 + 2.0 * K201 + 2.0 * K301 + K401)
        w10 = w10 + (dt / 6.0) * (K110 + 2.0 * K210 + 2.0 * K310 + K410)
        w11 = w11 + (dt / 6.0) * (K111 + 2.0 * K211 + 2.0 * K311 + K411)
    return x, y, w00, w01, w10, w11


def classical_path_np(x, y, t0, dt, n_steps, g, gamma, phi, xs, ys):
    """Classical flow only (no tangent); fills xs/ys with the state after
    every step. Returns the final (x, y)."""
    tg = 2.0 * gamma
    for m in range(n_steps):
        t = t0 + m * dt
        k1x, k1y = _classical_rhs(x, y, t, g, tg, phi)
        k2x, k2y = _classical_rhs(x + 0.5 * dt * k1x, y + 0.5 * dt * k1y,
                                  t + 0.5 * dt, g, tg, phi)
        k3x, k3y = _classical_rhs(x + 0.5 * dt * k2x, y + 0.5 * dt * k2y,
                                  t + 0.5 * dt, g, tg, phi)
        k4x, k4y = _classical_rhs(x + dt * k3x, y + dt * k3y,
                                  t + dt, g, tg, phi)
        x = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        y = y + (dt / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        xs[m] = x
        ys[m] = y
    return x, y


# ---------------------------------------------------------------------------
# numba-compiled versions
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:

    @njit(cache=True, fastmath=True)
    def band_left(offsets, drow, x, out):
        nb = offsets.shape[0]
        n = x.shape[0]
        for r in range(n):
            for j in range(n):
                out[r, j] = 0.0
            for b in range(nb):
                k = offsets[b]
                src = r + k
                if src < 0 or src >= n:
                    continue
                d = drow[b, r]
                if d != 0.0:
                    for j in range(n):
                        out[r, j] += d * x[src, j]
        return out

    @njit(cache=True, fastmath=True)
    def band_right_dag(offsets, drow, x, out):
        nb = offsets.shape[0]
        n = x.shape[0]
        for i in range(n):
            for c in range(n):
                out[i, c] = 0.0
            for b in range(nb):
                k = offsets[b]
                lo = 0 if k >= 0 else -k
                hi = n - k if k >= 0 else n
                for c in range(lo, hi):
                    out[i, c] += x[i, c + k] * np.conj(drow[b, c])
        return out

    @njit(cache=True, fastmath=True)
    def band_trace(offsets, drow, x):
        nb = offsets.shape[0]
        n = x.shape[0]
        total = 0.0 + 0.0j
        for b in range(nb):
            k = offsets[b]
            lo = 0 if k >= 0 else -k
            hi = n - k if k >= 0 else n
            for r in range(lo, hi):
                total += drow[b, r] * x[r + k, r]
        return total

    @njit(cache=True, fastmath=True)
    def hermitize_scale(y, s):
        n = y.shape[0]
        h = 0.5 * s
        for i in range(n):
            y[i, i] = complex(y[i, i].real * s, 0.0)
            for j in range(i + 1, n):
                v = (y[i, j] + np.conj(y[j, i])) * h
                y[i, j] = v
                y[j, i] = np.conj(v)
        return y

    @njit(cache=True, fastmath=True)
    def k_mean_traces(offsets, drow, bt, q_rot, p_rot):
        nb = offsets.shape[0]
        n = bt.shape[0]
        den = 0.0 + 0.0j
        numq = 0.0 + 0.0j
        nump = 0.0 + 0.0j
        for b in range(nb):
            k = offsets[b]
            lo = 0 if k >= 0 else -k
            hi = n - k if k >= 0 else n
            for i in range(lo, hi):
                mc = np.conj(drow[b, i])
                if mc == 0.0:
                    continue
                den += mc * bt[i + k, i]
                accq = 0.0 + 0.0j
                accp = 0.0 + 0.0j
                for m in range(n):
                    accq += q_rot[i, m] * bt[i + k, m]
                    accp += p_rot[i, m] * bt[i + k, m]
                numq += mc * accq
                nump += mc * accp
        return den, numq, nump

    gs_step = njit(cache=True)(gs_step_np)

    @njit(cache=True)
    def classical_stride(x, y, t0, dt, k_steps, g, gamma, phi):
        tg = 2.0 * gamma
        w00, w01, w10, w11 = 1.0, 0.0, 0.0, 1.0
        for m in range(k_steps):
            t = t0 + m * dt
            a1 = 1.0 - 3.0 * x * x
            k1x = y
            k1y = x - x * x * x - tg * y - g * math.cos(t + phi)
            K100, K101 = w10, w11
            K110 = a1 * w00 - tg * w10
            K111 = a1 * w01 - tg * w11
            x2 = x + 0.5 * dt * k1x
            y2 = y + 0.5 * dt * k1y
            a2 = 1.0 - 3.0 * x2 * x2
            k2x = y2
            k2y = x2 - x2 * x2 * x2 - tg * y2 - g * math.cos(t + 0.5 * dt + phi)
            b00 = w00 + 0.5 * dt * K100
            b01 = w01 + 0.5 * dt * K101
            b10 = w10 + 0.5 * dt * K110
            b11 = w11 + 0.5 * dt * K111
            K200, K201 = b10, b11
            K210 = a2 * b00 - tg * b10
            K211 = a2 * b01 - tg * b11
            x3 = x + 0.5 * dt * k2x
            y3 = y + 0.5 * dt * k2y
            a3 = 1.0 - 3.0 * x3 * x3
            k3x = y3
            k3y = x3 - x3 * x3 * x3 - tg * y3 - g * math.cos(t + 0.5 * dt + phi)
            c00 = w00 + 0.5 * dt * K200
            c01 = w01 + 0.5 * dt * K201
            c10 = w10 + 0.5 * dt * K210
            c11 = w11 + 0.5 * dt * K211
            K300, K301 = c10, c11
            K310 = a3 * c00 - tg * c10
            K311 = a3 * c01 - tg * c11
            x4 = x + dt * k3x
            y4 = y + dt * k3y
            a4 = 1.0 - 3.0 * x4 * x4
            k4x = y4
            k4y = x4 - x4 * x4 * x4 - tg * y4 - g * math.cos(t + dt + phi)
            d00 = w00 + dt * K300
            d01 = w01 + dt * K301
            d10 = w10 + dt * K310
            d11 = w11 + dt * K311
            K400, K401 = d10, d11
            K410 = a4 * d00 - tg * d10
            K411 = a4 * d01 - tg * d11
            x = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            y = y + (dt / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
            w00 = w00 + (dt / 6.0) * (K100 + 2.0 * K200 + 2.0 * K300 + K400)
            w01 = w01 + (dt / 6.0) * (K101 + 2.0 * K201 + 2.0 * K301 + K401)
            w10 = w10 + (dt / 6.0) * (K110 + 2.0 * K210 + 2.0 * K310 + K410)
            w11 = w11 + (dt / 6.0) * (K111 + 2.0 * K211 + 2.0 * K311 + K411)
        return x, y, w00, w01, w10, w11

    @njit(cache=True)
    def classical_path(x, y, t0, dt, n_steps, g, gamma, phi, xs, ys):
        tg = 2.0 * gamma
        for m in range(n_steps):
            t = t0 + m * dt
            k1x = y
            k1y = x - x ** 3 - tg * y - g * math.cos(t + phi)
            xa = x + 0.5 * dt * k1x
            ya = y + 0.5 * dt * k1y
            k2x = ya
            k2y = xa - xa ** 3 - tg * ya - g * math.cos(t + 0.5 * dt + phi)
            xb = x + 0.5 * dt * k2x
            yb = y + 0.5 * dt * k2y
            k3x = yb
            k3y = xb - xb ** 3 - tg * yb - g * math.cos(t + 0.5 * dt + phi)
            xc = x + dt * k3x
            yc = y + dt * k3y
            k4x = yc
            k4y = xc - xc ** 3 - tg * yc - g * math.cos(t + dt + phi)
            x = x + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            y = y + (dt / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
            xs[m] = x
            ys[m] = y
        return x, y

else:  # pragma: no cover - exercised only without numba
    band_left = band_left_np
    band_right_dag = band_right_dag_np
    band_trace = band_trace_np
    hermitize_scale = hermitize_scale_np
    k_mean_traces = k_mean_traces_np
    gs_step = gs_step_np
    classical_stride = classical_stride_np
    classical_path = classical_path_np

"""Compiled RK4 stepping loop shared by every simulation entry point.

The arithmetic mirrors ``dynamics._accel`` operation by operation so that the
compiled path and the numpy reference agree to the last bit in practice; the
test suite checks the two against each other.
"""

import numpy as np
from numba import njit

# status codes
OK = 0
NEAR_COLLISION = 1


@njit(cache=True)
def _accel_row(x, v, mu, L, lam, vs, scale, eps, out):
    """Feedback accelerations of one platoon into ``out``; returns the min spacing."""
    n = x.shape[0]
    prev = 0.0
    gmin = np.inf
    two_eps = 2.0 * eps
    for i in range(n):
        nxt = 0.0
        if i < n - 1:
            s = x[i] - x[i + 1]
            if s < gmin:
                gmin = s
            if s < lam:
                d = lam - s
                e = s - L
                nxt = -3.0 * d * d / e - d * d * d / (e * e)
        term = prev - nxt
        if term >= 0.0:
            f = (eps * eps + 2.0 * eps * term) / two_eps
        elif term > -eps:
            f = ((term + eps) * (term + eps)) / two_eps
        else:
            f = 0.0
        k = mu[i] + (scale * f - term / vs)
        out[i] = -k * (v[i] - vs) + term
        prev = nxt
    return gmin


@njit(cache=True, nogil=True)
def run_batch(x0, v0, mu, L, lam, vs, vmax, eps, dt, steps, margin,
              record, rec_x, rec_v, rec_a,
              cost, a_hi, a_lo, status, fail_step, omega, v_final):
    """Integrate every row of ``x0``/``v0`` (shape (B, n)) for ``steps`` steps.

    ``mu`` has shape (B, n). When ``record`` is true the states and
    accelerations of row 0 are written to ``rec_*`` (shape (steps+1, n)).
    """
    B, n = x0.shape
    scale = vmax / (vs * (vmax - vs))
    h = 0.5 * dt
    w = dt / 6.0
    limit = L + margin
    x = np.empty(n)
    v = np.empty(n)
    x2 = np.empty(n)
    v2 = np.empty(n)
    x3 = np.empty(n)
    v3 = np.empty(n)
    x4 = np.empty(n)
    v4 = np.empty(n)
    a1 = np.empty(n)
    a2 = np.empty(n)
    a3 = np.empty(n)
    a4 = np.empty(n)
    for b in range(B):
        m = mu[b]
        for i in range(n):
            x[i] = x0[b, i]
            v[i] = v0[b, i]
        total = 0.0
        first = 0.0
        last = 0.0
        hi = -np.inf
        lo = np.inf
        inside = True
        status[b] = OK
        fail_step[b] = -1
        for step in range(steps + 1):
            gap = _accel_row(x, v, m, L, lam, vs, scale, eps, a1)
            if gap <= L:
                inside = False
            f = 0.0
            for i in range(n):
                f += a1[i] * a1[i]
                if v[i] > vmax or v[i] < 0.0:
                    inside = False
                if a1[i] > hi:
                    hi = a1[i]
                if a1[i] < lo:
                    lo = a1[i]
            if step == 0:
                first = f
            total += f
            if record and b == 0:
                for i in range(n):
                    rec_x[step, i] = x[i]
                    rec_v[step, i] = v[i]
                    rec_a[step, i] = a1[i]
            if step == steps:
                last = f
                break
            for i in range(n):
                x2[i] = x[i] + h * v[i]
                v2[i] = v[i] + h * a1[i]
            g2 = _accel_row(x2, v2, m, L, lam, vs, scale, eps, a2)
            for i in range(n):
                x3[i] = x[i] + h * v2[i]
                v3[i] = v[i] + h * a2[i]
            g3 = _accel_row(x3, v3, m, L, lam, vs, scale, eps, a3)
            for i in range(n):
                x4[i] = x[i] + dt * v3[i]
                v4[i] = v[i] + dt * a3[i]
            g4 = _accel_row(x4, v4, m, L, lam, vs, scale, eps, a4)
            if min(min(gap, g2), min(g3, g4)) <= limit:
                status[b] = NEAR_COLLISION
                fail_step[b] = step
                break
            for i in range(n):
                x[i] = x[i] + w * (v[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i])
                v[i] = v[i] + w * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i])
        if status[b] == OK:
            cost[b] = dt * (total - 0.5 * (first + last))
        else:
            cost[b] = np.inf
            inside = False
        a_hi[b] = hi
        a_lo[b] = lo
        omega[b] = inside
        for i in range(n):
            v_final[b, i] = v[i]


@njit(cache=True)
def trapezoid_cost(acc, dt):
    """Same quadrature and summation order as ``run_batch``."""
    T, n = acc.shape
    total = 0.0
    first = 0.0
    last = 0.0
    for k in range(T):
        f = 0.0
        for i in range(n):
            f += acc[k, i] * acc[k, i]
        if k == 0:
            first = f
        last = f
        total += f
    return dt * (total - 0.5 * (first + last))

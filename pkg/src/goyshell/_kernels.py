"""Compiled kernels: Dormand-Prince 5(4) stepping, dense interpolation,
and the shell-model forward/adjoint vector fields.

Everything here operates on flat float64 arrays in the interleaved
(Re, Im) view.  Vector fields share the signature

    rhs(t, y, out, args) -> None

with ``args`` a tuple of read-only scalars/arrays (plus per-solve
scratch buffers, so a field instance is safe to evaluate concurrently
from independent solves).  The drivers take the field as a first-class
jitted function and specialize per (field, args) type.

Status codes returned by the adaptive driver:
    0 success, 1 step budget exhausted, 2 non-finite state,
    3 step size underflow.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Dormand-Prince 5(4) tableau.  B are the 5th-order weights (also the
# last stage row, giving the FSAL property), E = B - B_hat is applied
# to the stages directly for the embedded error estimate, and P maps
# stages onto the quartic dense-output polynomial.
C_NODES = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])

A_COEF = np.zeros((7, 7))
A_COEF[1, 0] = 1 / 5
A_COEF[2, :2] = (3 / 40, 9 / 40)
A_COEF[3, :3] = (44 / 45, -56 / 15, 32 / 9)
A_COEF[4, :4] = (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729)
A_COEF[5, :5] = (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656)
A_COEF[6, :6] = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)

B_HIGH = A_COEF[6].copy()

E_DIFF = np.array(
    [
        71 / 57600,
        0.0,
        -71 / 16695,
        71 / 1920,
        -17253 / 339200,
        22 / 525,
        -1 / 40,
    ]
)

P_DENSE = np.array(
    [
        [
            1.0,
            -8048581381 / 2820520608,
            8663915743 / 2820520608,
            -12715105075 / 11282082432,
        ],
        [0.0, 0.0, 0.0, 0.0],
        [
            0.0,
            131558114200 / 32700410799,
            -68118460800 / 10900136933,
            87487479700 / 32700410799,
        ],
        [
            0.0,
            -1754552775 / 470086768,
            14199869525 / 1410260304,
            -10690763975 / 1880347072,
        ],
        [
            0.0,
            127303824393 / 49829197408,
            -318862633887 / 49829197408,
            701980252875 / 199316789632,
        ],
        [
            0.0,
            -282668133 / 205662961,
            2019193451 / 616988883,
            -1453857185 / 822651844,
        ],
        [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
    ]
)

STATUS_OK = 0
STATUS_MAX_STEPS = 1
STATUS_NON_FINITE = 2
STATUS_UNDERFLOW = 3

MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


@njit(cache=True)
def _all_finite(x):
    for i in range(x.shape[0]):
        if not np.isfinite(x[i]):
            return False
    return True


@njit(cache=True)
def rk45_solve(
    rhs,
    args,
    x0,
    t0,
    t_end,
    rtol,
    atol,
    h0,
    h_min,
    max_steps,
    safety,
    dense,
):
    """Adaptive DP5(4) integration of dy/dt = rhs(t, y) over [t0, t_end].

    Returns (status, t_fail, n_accepted, n_rejected, smallest_h,
    knot_times, knot_states, dense_coeffs).  On success t_fail == t_end
    and the last knot lands on t_end exactly.  dense_coeffs has one
    (dim, 4) block per accepted step when ``dense``, else zero rows.
    """
    dim = x0.shape[0]
    K = np.empty((7, dim))
    y = x0.copy()
    y_stage = np.empty(dim)
    y_new = np.empty(dim)

    cap = 512
    ts = np.empty(cap + 1)
    ys = np.empty((cap + 1, dim))
    if dense:
        qs = np.empty((cap, dim, 4))
    else:
        qs = np.empty((0, dim, 4))

    ts[0] = t0
    ys[0, :] = y
    n_acc = 0
    n_rej = 0
    smallest_h = np.inf
    t = t0

    rhs(t, y, K[0], args)
    if not _all_finite(K[0]):
        return (STATUS_NON_FINITE, t, 0, 0, smallest_h, ts[:1], ys[:1], qs[:0])

    h = h0
    status = STATUS_OK
    t_fail = t_end

    while t < t_end:
        if n_acc + n_rej >= max_steps:
            status = STATUS_MAX_STEPS
            t_fail = t
            break

        last = t + h >= t_end
        h_use = t_end - t if last else h

        for s in range(1, 7):
            for i in range(dim):
                acc = 0.0
                for j in range(s):
                    aa = A_COEF[s, j]
                    if aa != 0.0:
                        acc += aa * K[j, i]
                y_stage[i] = y[i] + h_use * acc
            rhs(t + C_NODES[s] * h_use, y_stage, K[s], args)
        # FSAL: the 7th stage sits at (t + h, y_new), so y_stage is the
        # 5th-order solution after the loop.
        for i in range(dim):
            y_new[i] = y_stage[i]

        err_sq = 0.0
        finite = True
        for i in range(dim):
            e = 0.0
            for j in range(7):
                ee = E_DIFF[j]
                if ee != 0.0:
                    e += ee * K[j, i]
            e *= h_use
            sc_y = abs(y[i])
            sc_n = abs(y_new[i])
            sc = atol + rtol * (sc_y if sc_y > sc_n else sc_n)
            r = e / sc
            err_sq += r * r
            if not np.isfinite(y_new[i]):
                finite = False
        err_norm = np.sqrt(err_sq / dim)
        if not np.isfinite(err_norm):
            finite = False

        accepted = finite and err_norm <= 1.0
        if accepted:
            n_acc += 1
            if h_use < smallest_h:
                smallest_h = h_use
            if n_acc > cap:
                new_cap = cap * 2
                new_ts = np.empty(new_cap + 1)
                new_ys = np.empty((new_cap + 1, dim))
                new_ts[: cap + 1] = ts[: cap + 1]
                new_ys[: cap + 1] = ys[: cap + 1]
                ts = new_ts
                ys = new_ys
                if dense:
                    new_qs = np.empty((new_cap, dim, 4))
                    new_qs[:cap] = qs[:cap]
                    qs = new_qs
                cap = new_cap
            t_new = t_end if last else t + h_use
            ts[n_acc] = t_new
            ys[n_acc, :] = y_new
            if dense:
                for i in range(dim):
                    for m in range(4):
                        acc = 0.0
                        for j in range(7):
                            pp = P_DENSE[j, m]
                            if pp != 0.0:
                                acc += K[j, i] * pp
                        qs[n_acc - 1, i, m] = acc
            for i in range(dim):
                y[i] = y_new[i]
                K[0, i] = K[6, i]
            t = t_new
            if t >= t_end:
                break
        else:
            n_rej += 1

        if finite and err_norm > 0.0:
            factor = safety * err_norm ** -0.2
            if factor < MIN_FACTOR:
                factor = MIN_FACTOR
            elif factor > MAX_FACTOR:
                factor = MAX_FACTOR
        elif finite:
            factor = MAX_FACTOR
        else:
            factor = MIN_FACTOR
        h = h_use * factor
        if h < h_min:
            status = STATUS_UNDERFLOW
            t_fail = t
            break

    if status == STATUS_OK and t < t_end:
        # loop can only exit early through a break that set a status
        status = STATUS_MAX_STEPS
        t_fail = t

    n_keep = n_acc
    return (
        status,
        t_fail,
        n_acc,
        n_rej,
        smallest_h,
        ts[: n_keep + 1].copy(),
        ys[: n_keep + 1].copy(),
        qs[:n_keep].copy() if dense else qs[:0],
    )


@njit(cache=True)
def rk45_fixed(rhs, args, x0, t0, h, n_steps):
    """Fixed-step DP5 propagation (no error control); verification only."""
    dim = x0.shape[0]
    K = np.empty((7, dim))
    y = x0.copy()
    y_stage = np.empty(dim)
    t = t0
    rhs(t, y, K[0], args)
    for step in range(n_steps):
        for s in range(1, 7):
            for i in range(dim):
                acc = 0.0
                for j in range(s):
                    aa = A_COEF[s, j]
                    if aa != 0.0:
                        acc += aa * K[j, i]
                y_stage[i] = y[i] + h * acc
            rhs(t + C_NODES[s] * h, y_stage, K[s], args)
        for i in range(dim):
            y[i] = y_stage[i]
            K[0, i] = K[6, i]
        t = t0 + (step + 1) * h
    return y


@njit(cache=True)
def dense_eval(ts, ys, qs, t, out):
    """Evaluate the dense interpolant at interior time t.

    Knot times return the stored states bit-for-bit; between knots the
    quartic y(theta) = y_left + h * sum_m q_m theta^(m+1) is used.
    """
    n = qs.shape[0]
    dim = ys.shape[1]
    if n == 0 or t <= ts[0]:
        for i in range(dim):
            out[i] = ys[0, i]
        return
    if t >= ts[n]:
        for i in range(dim):
            out[i] = ys[n, i]
        return
    lo = 0
    hi = n
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ts[mid] <= t:
            lo = mid
        else:
            hi = mid
    if t == ts[lo]:
        for i in range(dim):
            out[i] = ys[lo, i]
        return
    h = ts[lo + 1] - ts[lo]
    th = (t - ts[lo]) / h
    th2 = th * th
    th3 = th2 * th
    th4 = th3 * th
    for i in range(dim):
        out[i] = ys[lo, i] + h * (
            qs[lo, i, 0] * th
            + qs[lo, i, 1] * th2
            + qs[lo, i, 2] * th3
            + qs[lo, i, 3] * th4
        )


@njit(cache=True)
def goy_rhs(t, y, out, args):
    """GOY right-hand side in the real view.

    args = (a, b, c, k2, coeff, f_re, f_im, f_idx, conj_buf) with the
    coupling prefactors from ``coupling_coefficients``, k2 = k_i^2, the
    dissipation coefficient (nu or theta), forcing components, 0-based
    forcing shell, and a complex scratch buffer of length n+4 whose
    first/last two entries stay zero (the boundary closure).
    """
    a, b, c, k2, coeff, f_re, f_im, f_idx, up = args
    n = k2.shape[0]
    for s in range(n):
        up[2 + s] = complex(y[2 * s], -y[2 * s + 1])
    for s in range(n):
        cs = (
            a[s] * up[s + 3] * up[s + 4]
            + b[s] * up[s + 1] * up[s + 3]
            + c[s] * up[s + 1] * up[s]
        )
        d = coeff * k2[s]
        out[2 * s] = -cs.imag - d * y[2 * s]
        out[2 * s + 1] = cs.real - d * y[2 * s + 1]
    out[2 * f_idx] += f_re
    out[2 * f_idx + 1] += f_im


@njit(cache=True)
def goy_adjoint_rhs(s_time, y, out, args):
    """Adjoint system integrated forward in reversed time s = t1 - t.

    State layout: y[:2n] is the costate, y[2n] accumulates the
    parameter gradient.  The costate obeys dlam/ds = +J^T lam with J
    the real Jacobian of the modified field at the interpolated
    forward state; the quadrature component integrates
    lam . d(rhs)/d(theta) so that its endpoint value is the loss
    gradient with respect to theta.

    args = (t1, ts, ys, qs, a, b, c, k2, theta, u_buf).
    """
    t1, ts, ys, qs, a, b, c, k2, theta, u_buf = args
    n = k2.shape[0]
    dim = 2 * n
    dense_eval(ts, ys, qs, t1 - s_time, u_buf)

    for i in range(dim + 1):
        out[i] = 0.0
    qdot = 0.0
    for s in range(n):
        lx = y[2 * s]
        ly = y[2 * s + 1]
        d = theta * k2[s]
        out[2 * s] -= d * lx
        out[2 * s + 1] -= d * ly
        # six bilinear blocks of row s: alpha * B(u_q) at column p,
        # with symmetric B(z) = [[Im z, Re z], [Re z, -Im z]]
        if lx != 0.0 or ly != 0.0:
            for variant in range(6):
                if variant == 0:
                    al = a[s]
                    p_ = s + 1
                    q_ = s + 2
                elif variant == 1:
                    al = a[s]
                    p_ = s + 2
                    q_ = s + 1
                elif variant == 2:
                    al = b[s]
                    p_ = s - 1
                    q_ = s + 1
                elif variant == 3:
                    al = b[s]
                    p_ = s + 1
                    q_ = s - 1
                elif variant == 4:
                    al = c[s]
                    p_ = s - 1
                    q_ = s - 2
                else:
                    al = c[s]
                    p_ = s - 2
                    q_ = s - 1
                if 0 <= p_ < n and 0 <= q_ < n:
                    zre = u_buf[2 * q_]
                    zim = u_buf[2 * q_ + 1]
                    out[2 * p_] += al * (zim * lx + zre * ly)
                    out[2 * p_ + 1] += al * (zre * lx - zim * ly)
        qdot -= k2[s] * (u_buf[2 * s] * lx + u_buf[2 * s + 1] * ly)
    out[dim] = qdot


@njit(cache=True)
def decay_rhs(t, y, out, args):
    """Componentwise linear decay dy/dt = -rate * y (verification field)."""
    (rates,) = args
    for i in range(y.shape[0]):
        out[i] = -rates[i] * y[i]


@njit(cache=True)
def rotation_rhs(t, y, out, args):
    """Planar rotation d(x, y)/dt = (-w y, w x) (verification field)."""
    (omega,) = args
    out[0] = -omega * y[1]
    out[1] = omega * y[0]


@njit(cache=True)
def constant_rhs(t, y, out, args):
    """Constant slope dy/dt = c (verification field)."""
    (slopes,) = args
    for i in range(y.shape[0]):
        out[i] = slopes[i]

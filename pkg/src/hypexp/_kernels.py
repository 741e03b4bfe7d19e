"""Compiled inner loops for long orbits.

Scalar replicas of the chart, shear and step logic of `systems` and
`perturbation`, plus the orbit recorders and QR accumulators built on
them.  Everything is nopython numba with nogil so the experiment layer
can run orbits on threads; results are deterministic because each task
touches only its own preallocated output arrays.

The plateau function comes in through its integral table (breakpoints
plus local cubic coefficients); first derivatives use the closed-form
integrand.  Norms inside the Gram-Schmidt pass special-case
axis-aligned columns so block-diagonal derivatives accumulate exact
logarithms.
"""

import numpy as np
from numba import njit

BIG_SLOPE = 1e30


@njit(cache=True, nogil=True, inline="always")
def _step_eval(u, xtab, ctab):
    if u <= 0.0:
        return 0.0
    if u >= 1.0:
        return 1.0
    i = np.searchsorted(xtab, u) - 1
    if i < 0:
        i = 0
    last = ctab.shape[1] - 1
    if i > last:
        i = last
    dx = u - xtab[i]
    return ((ctab[0, i] * dx + ctab[1, i]) * dx + ctab[2, i]) * dx \
        + ctab[3, i]


@njit(cache=True, nogil=True, inline="always")
def _eta1_eval(u):
    if u <= 0.0 or u >= 1.0:
        return 0.0
    v = 1.0 - u
    return np.exp(-1.0 / (u * u)) * np.exp(-1.0 / (v * v))


@njit(cache=True, nogil=True, inline="always")
def _phi_eval(s, xtab, ctab):
    return _step_eval(s + 2.0, xtab, ctab) * _step_eval(2.0 - s, xtab, ctab)


@njit(cache=True, nogil=True, inline="always")
def _phi_d1(s, xtab, ctab, cnorm):
    return (_eta1_eval(s + 2.0) * _step_eval(2.0 - s, xtab, ctab)
            - _step_eval(s + 2.0, xtab, ctab) * _eta1_eval(2.0 - s)) / cnorm


@njit(cache=True, nogil=True, inline="always")
def _wrap01(v):
    y = v - np.floor(v)
    if y >= 1.0 - 1e-15:
        return 0.0
    return y


@njit(cache=True, nogil=True)
def cat_g_step(x0, x1, s, roof, a00, a01, a10, a11, lam_u,
               vs0, vs1, vu0, vu1, cq0, cq1, cq2, eps, t,
               xtab, ctab, cnorm):
    """One step of the perturbed suspension in plain scalars.

    Returns the new point together with the crossing count k, the
    center-unstable derivative pair (a, b) meaning slope -> a+b*slope,
    the kick entry along the stable axis and the support flag.
    """
    ax = 0.0
    tau = 0.0
    zeta = 0.0
    in_v = False
    if t != 0.0:
        d = (s - cq2) % roof
        if d > roof / 2.0:
            d -= roof
        if abs(d) < 2.0 * eps:
            dx0 = (x0 - cq0) - round(x0 - cq0)
            dx1 = (x1 - cq1) - round(x1 - cq1)
            w = dx0 * vs0 + dx1 * vs1
            z = dx0 * vu0 + dx1 * vu1
            if abs(w) < 2.0 * eps and abs(z) < 2.0 * eps:
                in_v = True
                uw = w / eps
                uy = d / eps
                uz = z / eps
                pw = _phi_eval(uw, xtab, ctab)
                py = _phi_eval(uy, xtab, ctab)
                pz = _phi_eval(uz, xtab, ctab)
                tau = t * (pw * pz) * (py + uy * _phi_d1(uy, xtab, ctab,
                                                         cnorm))
                zeta = t * d * _phi_d1(uz, xtab, ctab, cnorm) / eps * pw * py
                ax = t * d * _phi_d1(uw, xtab, ctab, cnorm) / eps * py * pz
                zs = z + t * d * (pw * py * pz)
                x0 = _wrap01(cq0 + w * vs0 + zs * vu0)
                x1 = _wrap01(cq1 + w * vs1 + zs * vu1)
                s = (cq2 + d) % roof
    s2 = s + 1.0
    k = 0
    if s2 >= roof:
        k = 1
        s2 -= roof
        t0 = a00 * x0 + a01 * x1
        t1 = a10 * x0 + a11 * x1
        x0 = _wrap01(t0)
        x1 = _wrap01(t1)
    lam = lam_u if k == 1 else 1.0
    return x0, x1, s2, k, lam * tau, lam * (1.0 + zeta), lam * ax, in_v


@njit(cache=True, nogil=True)
def cat_record(x0, x1, s, n, roof, a00, a01, a10, a11, lam_u,
               vs0, vs1, vu0, vu1, cq0, cq1, cq2, eps, t,
               xtab, ctab, cnorm, a_out, b_out, k_out, v_out):
    """Run n steps, filling per-step slope coefficients and flags."""
    for i in range(n):
        x0, x1, s, k, a, b, ax, in_v = cat_g_step(
            x0, x1, s, roof, a00, a01, a10, a11, lam_u,
            vs0, vs1, vu0, vu1, cq0, cq1, cq2, eps, t, xtab, ctab, cnorm)
        a_out[i] = a
        b_out[i] = b
        k_out[i] = k
        v_out[i] = in_v
    return x0, x1, s


@njit(cache=True, nogil=True)
def slope_sweep(a, b, sigma_end, sig_out):
    """Pull the graph slope back along recorded coefficients.

    sig_out[k] is the settled slope before step k; the recursion is
    the exact inverse of slope -> a + b*slope.  Returns 1 if the
    slope escapes to the unstable direction, else 0.
    """
    n = a.shape[0]
    sig_out[n] = sigma_end
    for i in range(n - 1, -1, -1):
        v = (sig_out[i + 1] - a[i]) / b[i]
        if abs(v) > BIG_SLOPE:
            return 1
        sig_out[i] = v
    return 0


@njit(cache=True, nogil=True, inline="always")
def _norm3(u0, u1, u2):
    # two exact zeros: the norm is the remaining entry, no sqrt noise
    if u0 == 0.0 and u1 == 0.0:
        return abs(u2)
    if u0 == 0.0 and u2 == 0.0:
        return abs(u1)
    if u1 == 0.0 and u2 == 0.0:
        return abs(u0)
    return np.sqrt(u0 * u0 + u1 * u1 + u2 * u2)


@njit(cache=True, nogil=True)
def _gs3(bmat, qmat, norms):
    """Gram-Schmidt of the columns of bmat into qmat; norms out."""
    for j in range(3):
        c0 = bmat[0, j]
        c1 = bmat[1, j]
        c2 = bmat[2, j]
        for i in range(j):
            dot = qmat[0, i] * c0 + qmat[1, i] * c1 + qmat[2, i] * c2
            c0 -= dot * qmat[0, i]
            c1 -= dot * qmat[1, i]
            c2 -= dot * qmat[2, i]
        nrm = _norm3(c0, c1, c2)
        norms[j] = nrm
        qmat[0, j] = c0 / nrm
        qmat[1, j] = c1 / nrm
        qmat[2, j] = c2 / nrm


@njit(cache=True, nogil=True)
def cat_qr(x0, x1, s, n, n_batches, roof, a00, a01, a10, a11,
           lam_s, lam_u, vs0, vs1, vu0, vu1, cq0, cq1, cq2, eps, t,
           xtab, ctab, cnorm, totals, batch_sums):
    """QR exponent accumulation along the (possibly sheared) orbit.

    totals gets Kahan-compensated log-stretch sums per column;
    batch_sums is (3, n_batches) for standard errors.  Returns the
    crossing count.
    """
    qmat = np.eye(3)
    bmat = np.empty((3, 3))
    norms = np.empty(3)
    comp = np.zeros(3)
    crossings = 0
    for i in range(n):
        x0, x1, s, k, a, b, ax, in_v = cat_g_step(
            x0, x1, s, roof, a00, a01, a10, a11, lam_u,
            vs0, vs1, vu0, vu1, cq0, cq1, cq2, eps, t, xtab, ctab, cnorm)
        crossings += k
        ls = lam_s if k == 1 else 1.0
        for j in range(3):
            bmat[0, j] = ls * qmat[0, j]
            bmat[1, j] = qmat[1, j]
            bmat[2, j] = ax * qmat[0, j] + a * qmat[1, j] + b * qmat[2, j]
        _gs3(bmat, qmat, norms)
        bi = i * n_batches // n
        for j in range(3):
            val = np.log(norms[j])
            y = val - comp[j]
            tt = totals[j] + y
            comp[j] = (tt - totals[j]) - y
            totals[j] = tt
            batch_sums[j, bi] += val
    return crossings


@njit(cache=True, nogil=True, inline="always")
def _frob2(m):
    return (m[0, 0] * m[0, 0] + m[0, 1] * m[0, 1]
            + m[1, 0] * m[1, 0] + m[1, 1] * m[1, 1])


@njit(cache=True, nogil=True)
def _geo_reduce(q, steps, max_reduce):
    best = _frob2(q)
    for _ in range(max_reduce):
        improved = False
        for j in range(steps.shape[0]):
            cand = steps[j] @ q
            n = _frob2(cand)
            if n < best * (1.0 - 1e-14):
                q = cand
                best = n
                improved = True
                break
        if not improved:
            # canonical sign: largest-magnitude entry positive
            am = np.abs(q)
            r, c = 0, 0
            if am[0, 1] > am[r, c]:
                r, c = 0, 1
            if am[1, 0] > am[r, c]:
                r, c = 1, 0
            if am[1, 1] > am[r, c]:
                r, c = 1, 1
            if q[r, c] < 0.0:
                return -q, 0
            return q, 0
    return q, 1


@njit(cache=True, nogil=True)
def geodesic_qr(qmat0, n, n_batches, a1, steps, max_reduce, lam_s, lam_u,
                totals, batch_sums):
    """QR accumulation along the geodesic frame flow.

    The frame derivative is a constant diagonal, so the value of this
    kernel is running the true orbit (catching reduction failures and
    timing honestly) while the column norms stay exact.  Returns 0,
    or 1 if the fundamental-domain reduction failed to terminate.
    """
    q = qmat0.copy()
    qcols = np.eye(3)
    bmat = np.empty((3, 3))
    norms = np.empty(3)
    comp = np.zeros(3)
    for i in range(n):
        q, bad = _geo_reduce(q @ a1, steps, max_reduce)
        if bad == 1:
            return 1
        for j in range(3):
            bmat[0, j] = lam_s * qcols[0, j]
            bmat[1, j] = qcols[1, j]
            bmat[2, j] = lam_u * qcols[2, j]
        _gs3(bmat, qcols, norms)
        bi = i * n_batches // n
        for j in range(3):
            val = np.log(norms[j])
            y = val - comp[j]
            tt = totals[j] + y
            comp[j] = (tt - totals[j]) - y
            totals[j] = tt
            batch_sums[j, bi] += val
    return 0


@njit(cache=True, nogil=True)
def geodesic_advance(qmat0, n, a1, steps, max_reduce):
    """Advance the geodesic orbit n steps; status 1 on reduce failure."""
    q = qmat0.copy()
    for _ in range(n):
        q, bad = _geo_reduce(q @ a1, steps, max_reduce)
        if bad == 1:
            return q, 1
    return q, 0


@njit(cache=True, nogil=True)
def cat_orbit(x0, x1, s, n, roof, a00, a01, a10, a11, lam_u,
              vs0, vs1, vu0, vu1, cq0, cq1, cq2, eps, t,
              xtab, ctab, cnorm, out):
    """Run n steps, storing the point before each into out (n, 3)."""
    for i in range(n):
        out[i, 0] = x0
        out[i, 1] = x1
        out[i, 2] = s
        x0, x1, s, k, a, b, ax, in_v = cat_g_step(
            x0, x1, s, roof, a00, a01, a10, a11, lam_u,
            vs0, vs1, vu0, vu1, cq0, cq1, cq2, eps, t, xtab, ctab, cnorm)
    return x0, x1, s


@njit(cache=True, nogil=True)
def cat_orbit_back(x0, x1, s, n, roof, b00, b01, b10, b11, out):
    """Backward orbit of the unsheared suspension, point before each
    inverse step stored into out (n, 3); b is the inverse torus map."""
    for i in range(n):
        out[i, 0] = x0
        out[i, 1] = x1
        out[i, 2] = s
        s2 = s - 1.0
        if s2 < 0.0:
            s2 += roof
            t0 = b00 * x0 + b01 * x1
            t1 = b10 * x0 + b11 * x1
            x0 = _wrap01(t0)
            x1 = _wrap01(t1)
        s = s2
    return x0, x1, s

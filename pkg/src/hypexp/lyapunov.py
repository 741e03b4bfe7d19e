"""Central-direction tracking and Lyapunov exponent estimators.

The perturbed map preserves the center-unstable plane, so its center
direction is tracked as a single number: the graph slope sigma of the
direction over the unperturbed center axis.  One forward pass records
the per-step slope action sigma -> a + b*sigma; a backward sweep from
a zero seed then settles the slope at every orbit point at once, which
sidesteps the forward instability of the dominated direction (errors
pushed forward grow like the unstable stretch, errors pulled back
contract by the same factor).

`central_exponent` turns the settled slopes into Birkhoff summands
log ||Dg u|| = (log(1+sigma'^2) - log(1+sigma^2))/2, whose sum
telescopes; `qr_spectrum` estimates all three exponents independently
by re-orthonormalised frame iteration, and `slope_audit` checks the
recorded slope dynamics block by block between visits to the
perturbation support.
"""

__all__ = [
    "CentralTracker",
    "CentralEstimate",
    "SpectrumEstimate",
    "SlopeAuditReport",
    "XiValue",
    "track_central_direction",
    "central_exponent",
    "qr_spectrum",
    "slope_audit",
    "xi_field",
    "tracker_invariance_audit",
]

from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .frames import FrameVector
from .perturbation import g_apply, g_jacobian, in_support
from .systems import CatSuspension, GeodesicSurface

CASE_LABELS = ("A.1", "A.2", "B.1", "B.2a", "B.2b")

XiValue = namedtuple("XiValue", ["xi", "case"])

_DUMMY_X = np.array([0.0, 1.0])
_DUMMY_C = np.zeros((4, 1))


@dataclass(frozen=True)
class SpectrumEstimate:
    """Full exponent spectrum with batch-mean standard errors."""

    exponents: tuple
    stderr: tuple
    n_steps: int
    n_settle: int
    crossings: int = None

    def __post_init__(self):
        if list(self.exponents) != sorted(self.exponents, reverse=True):
            raise ValueError("exponents must be sorted descending")
        if any(e < 0.0 for e in self.stderr):
            raise ValueError("standard errors must be nonnegative")
        if len(self.exponents) != len(self.stderr):
            raise ValueError("exponent and error counts differ")

    @property
    def top(self):
        return self.exponents[0]

    @property
    def central(self):
        return self.exponents[len(self.exponents) // 2]


@dataclass(frozen=True)
class CentralEstimate:
    """Birkhoff estimate of the central exponent along one orbit."""

    estimate: float
    stderr: float
    n_steps: int
    n_settle: int
    min_summand: float
    visits: int
    cases: dict = field(compare=False)
    sigma_start: float = 0.0


class CentralTracker:
    """Settled center direction at a point, advanced step by step.

    Holds the current point and the graph slope of the tracked
    direction inside the center-unstable plane.  `advance` pushes both
    forward one step and returns the Birkhoff summand.  Forward
    advancing amplifies slope error by the unstable stretch, so long
    runs should re-settle periodically or use `central_exponent`,
    which settles every point from one backward sweep.
    """

    def __init__(self, system, params, q, sigma, n_settle):
        self.system = system
        self.params = params
        self.q = np.asarray(q, dtype=float)
        self.sigma = float(sigma)
        self.n_settle = int(n_settle)

    def direction(self):
        nrm = np.hypot(1.0, self.sigma)
        return FrameVector(np.zeros(1), np.array([1.0 / nrm]),
                           np.array([self.sigma / nrm]))

    def advance(self):
        m = _cu_block(self.system, self.params, self.q)
        c = m[0, 0] + m[0, 1] * self.sigma
        u = m[1, 0] + m[1, 1] * self.sigma
        summand = 0.5 * (np.log(c * c + u * u)
                         - np.log1p(self.sigma ** 2))
        self.sigma = u / c
        self.q = _apply(self.system, self.params, self.q)
        return summand


def _apply(system, params, q):
    if params is None:
        return system.apply(q)
    return g_apply(system, params, q)


def _cu_block(system, params, q):
    if params is None:
        mat = system.frame_differential(q).mat
    else:
        mat = g_jacobian(system, params, q).mat
    return mat[1:, 1:]


def _check_params(system, params):
    if params is not None and params.chart.system is not system:
        raise ValueError("params were built on a different system")


def _cat_kernel_args(system, params):
    a = system.A
    base = (system.roof, a[0, 0], a[0, 1], a[1, 0], a[1, 1], system.lam_u)
    if params is None or params.t == 0.0:
        if params is None:
            chartbits = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.0,
                         _DUMMY_X, _DUMMY_C, 1.0)
            return base + chartbits
        # identity shear: real tables are passed but never read
        t = 0.0
    else:
        t = params.t
    ch = params.chart
    xt, ct = params.profile.step_tables()
    return base + (system.v_s[0], system.v_s[1], system.v_u[0],
                   system.v_u[1], ch.q0[0], ch.q0[1], ch.q0[2],
                   params.eps, t, xt, ct, params.profile.c)


def _record(system, params, q, n):
    """Per-step slope coefficients (a, b), crossing counts, V flags.

    Kernel path for the suspension; a generic python loop otherwise.
    The generic path records the full cu block to tolerate charts
    whose conjugation leaves round-off in the center row.
    """
    q = np.asarray(q, dtype=float)
    if isinstance(system, CatSuspension):
        a = np.empty(n)
        b = np.empty(n)
        ks = np.empty(n, dtype=np.int8)
        vs = np.empty(n, dtype=np.uint8)
        args = _cat_kernel_args(system, params)
        qfin = _kernels.cat_record(q[0], q[1], q[2], n, *args, a, b, ks, vs)
        sig = np.empty(n + 1)
        bad = _kernels.slope_sweep(a, b, 0.0, sig)
        if bad:
            raise RuntimeError(
                "tracked direction fell into the unstable bundle")
        return sig, a, b, ks, vs.astype(bool), np.array(qfin)
    ms = np.empty((n, 2, 2))
    vs = np.zeros(n, dtype=bool)
    # ks counts unstable stretch factors per step: every step for the
    # geodesic frame, crossing-gated for suspensions
    if isinstance(system, GeodesicSurface):
        ks = np.ones(n, dtype=np.int8)
    else:
        ks = np.zeros(n, dtype=np.int8)
    for i in range(n):
        ms[i] = _cu_block(system, params, q)
        if params is not None and params.t != 0.0:
            vs[i] = in_support(params, q)
        q = _apply(system, params, q)
    sig = np.empty(n + 1)
    sig[n] = 0.0
    for i in range(n - 1, -1, -1):
        m = ms[i]
        s_next = sig[i + 1]
        sig[i] = (m[0, 0] * s_next - m[1, 0]) / (m[1, 1] - m[0, 1] * s_next)
        if abs(sig[i]) > _kernels.BIG_SLOPE:
            raise RuntimeError(
                "tracked direction fell into the unstable bundle")
    # a, b in the exact-center normal form; the generic center row is
    # 1 + O(eps_machine) and lands inside these coefficients
    a = ms[:, 1, 0] / ms[:, 0, 0]
    b = ms[:, 1, 1] / ms[:, 0, 0]
    return sig, a, b, ks, vs, q


def track_central_direction(system, params, q, n_settle=80):
    """Settle the center direction of the perturbed map at q."""
    _check_params(system, params)
    if n_settle < 1:
        raise ValueError("n_settle must be at least 1")
    sig, _, _, _, _, _ = _record(system, params, q, n_settle)
    return CentralTracker(system, params, q, sig[0], n_settle)


def _batch_means(values, n_batches):
    n = values.shape[0]
    idx = (np.arange(n) * n_batches) // n
    sums = np.bincount(idx, weights=values, minlength=n_batches)
    counts = np.bincount(idx, minlength=n_batches)
    return sums / counts


def _case_histogram(sig, vs, tau_nonzero, n):
    moved = sig[:n] != 0.0
    inside = vs[:n]
    out = ~inside
    still = ~moved
    return {
        "A.1": int(np.sum(moved & out)),
        "A.2": int(np.sum(moved & inside)),
        "B.1": int(np.sum(still & out)),
        "B.2a": int(np.sum(still & inside & ~tau_nonzero[:n])),
        "B.2b": int(np.sum(still & inside & tau_nonzero[:n])),
    }


def central_exponent(system, params, q, n_steps, n_settle=80,
                     n_batches=100):
    """Birkhoff average of log ||Dg restricted to the tracked center||.

    Records n_steps + n_settle steps, settles every slope by one
    backward sweep, and averages the first n_steps summands; the
    standard error comes from n_batches contiguous batch means.
    """
    _check_params(system, params)
    if n_steps < 10 ** 3:
        raise ValueError("need at least 1000 steps")
    if isinstance(system, GeodesicSurface) and (
            params is None or params.t == 0.0):
        # identity shear on the geodesic frame: the slope stays 0 and
        # every summand is exactly 0; the orbit still runs so reduce
        # failures and timing stay honest
        qfin, bad = _kernels.geodesic_advance(
            np.asarray(q, dtype=float), n_steps + n_settle, system.a1,
            np.stack(system._step_mats), system.MAX_REDUCE)
        if bad:
            raise RuntimeError("fundamental-domain reduction failed")
        cases = dict.fromkeys(CASE_LABELS, 0)
        cases["B.1"] = n_steps
        return CentralEstimate(0.0, 0.0, n_steps, n_settle, 0.0, 0,
                               cases, 0.0)
    sig, a, b, ks, vs, _ = _record(system, params, q,
                                   n_steps + n_settle)
    summands = 0.5 * (np.log1p(sig[1:n_steps + 1] ** 2)
                      - np.log1p(sig[:n_steps] ** 2))
    means = _batch_means(summands, n_batches)
    stderr = float(np.std(means, ddof=1) / np.sqrt(n_batches))
    return CentralEstimate(
        estimate=float(np.mean(summands)),
        stderr=stderr,
        n_steps=n_steps,
        n_settle=n_settle,
        min_summand=float(np.min(summands)),
        visits=int(np.sum(vs[:n_steps])),
        cases=_case_histogram(sig, vs, a != 0.0, n_steps),
        sigma_start=float(sig[0]),
    )


def qr_spectrum(system, q, n_steps, params=None, n_settle=0,
                n_batches=100):
    """All frame exponents by re-orthonormalised Jacobian iteration."""
    _check_params(system, params)
    if n_steps < 10 ** 3:
        raise ValueError("need at least 1000 steps")
    q = np.asarray(q, dtype=float)
    totals = np.zeros(3)
    batch_sums = np.zeros((3, n_batches))
    crossings = None
    if isinstance(system, CatSuspension):
        args = _cat_kernel_args(system, params)
        if n_settle:
            junk = (np.empty(n_settle), np.empty(n_settle),
                    np.empty(n_settle, np.int8),
                    np.empty(n_settle, np.uint8))
            q = np.array(_kernels.cat_record(q[0], q[1], q[2], n_settle,
                                             *args, *junk))
        crossings = int(_kernels.cat_qr(
            q[0], q[1], q[2], n_steps, n_batches,
            *args[:5], system.lam_s, *args[5:], totals, batch_sums))
    elif isinstance(system, GeodesicSurface) and (
            params is None or params.t == 0.0):
        steps = np.stack(system._step_mats)
        if n_settle:
            q, bad = _kernels.geodesic_advance(q, n_settle, system.a1,
                                               steps, system.MAX_REDUCE)
            if bad:
                raise RuntimeError("fundamental-domain reduction failed")
        bad = _kernels.geodesic_qr(q, n_steps, n_batches, system.a1,
                                   steps, system.MAX_REDUCE,
                                   system.lam_s, system.lam_u,
                                   totals, batch_sums)
        if bad:
            raise RuntimeError("fundamental-domain reduction failed")
    else:
        for _ in range(n_settle):
            q = _apply(system, params, q)
        frame = np.eye(3)
        idx = (np.arange(n_steps) * n_batches) // n_steps
        for i in range(n_steps):
            if params is None:
                mat = system.frame_differential(q).mat
            else:
                mat = g_jacobian(system, params, q).mat
            frame, r = np.linalg.qr(mat @ frame)
            d = np.abs(np.diag(r))
            if np.min(d) <= 0.0:
                raise RuntimeError("Jacobian singular to working precision")
            logs = np.log(d)
            totals += logs
            batch_sums[:, idx[i]] += logs
            q = _apply(system, params, q)
    counts = np.bincount((np.arange(n_steps) * n_batches) // n_steps,
                         minlength=n_batches)
    exps = totals / n_steps
    errs = np.std(batch_sums / counts, axis=1, ddof=1) / np.sqrt(n_batches)
    order = np.argsort(exps)[::-1]
    return SpectrumEstimate(
        exponents=tuple(exps[order]),
        stderr=tuple(float(e) for e in errs[order]),
        n_steps=n_steps,
        n_settle=n_settle,
        crossings=crossings,
    )


@dataclass(frozen=True)
class SlopeAuditReport:
    """Block-by-block checks of the slope dynamics between visits."""

    n_blocks: int
    max_identity_error: float
    n_identity_violations: int
    n_bound_violations: int
    n_monotone_violations: int
    n_kicked: int
    mean_block_length: float

    @property
    def ok(self):
        return (self.n_identity_violations == 0
                and self.n_bound_violations == 0
                and self.n_monotone_violations == 0)


def slope_audit(system, params, q, n_steps, max_blocks=None,
                identity_tol=1e-10, slack=1e-12):
    """Verify the slope transfer over return blocks to the support.

    A block starts at a visit to the support and ends at the next
    visit.  Seeding the center axis at the entry point, the slope at
    the block end must equal the entry kick times the realized product
    of unstable stretches (an identity, checked to identity_tol), sit
    inside the global-rate envelope [1, lam_u^len], and never shrink
    while outside the support.  The settled slope is checked for the
    same monotonicity.
    """
    _check_params(system, params)
    if params is None or params.t == 0.0:
        raise ValueError("slope audit needs an active perturbation")
    if not hasattr(system, "lam_u"):
        raise ValueError("system does not expose an unstable stretch rate")
    sig, a, b, ks, vs, _ = _record(system, params, q, n_steps)
    entries = np.flatnonzero(vs)
    if len(entries) < 2:
        raise RuntimeError("orbit met the support fewer than 2 times")
    blocks = list(zip(entries[:-1], entries[1:]))
    if max_blocks is not None:
        blocks = blocks[:max_blocks]

    lam_u = system.lam_u
    ln_lam = np.log(lam_u)
    max_err = 0.0
    n_identity = n_bounds = n_monotone = n_kicked = 0
    for i0, i1 in blocks:
        # between visits the kick vanishes, so the block slope is
        # |a[i0]| times the product of the stretch factors b; logs
        # keep thousand-step blocks finite
        growth = b[i0 + 1:i1]
        n_monotone += int(np.sum(growth < 1.0 - slack))
        if a[i0] == 0.0:
            # mollifier below double precision at the entry point:
            # the center axis is carried without a kick
            continue
        n_kicked += 1
        ln_a0 = np.log(abs(a[i0]))
        # entry kick slope = |a| / lam^k, kept in logs so subnormal
        # kicks near the support edge do not lose mantissa bits
        ln_entry = ln_a0 - int(ks[i0]) * ln_lam
        ln_sl = ln_a0 + np.sum(np.log(growth))
        ln_expect = int(np.sum(ks[i0:i1])) * ln_lam + ln_entry
        err = abs(np.expm1(ln_sl - ln_expect))
        max_err = max(max_err, err)
        if err > identity_tol:
            n_identity += 1
        if not (ln_entry - slack <= ln_sl <=
                (i1 - i0) * ln_lam + ln_entry + slack):
            n_bounds += 1
    outside = ~vs[:len(sig) - 1]
    shrunk = np.abs(sig[1:]) < np.abs(sig[:-1]) * (1.0 - slack)
    n_monotone += int(np.sum(outside & shrunk))
    lengths = [i1 - i0 for i0, i1 in blocks]
    return SlopeAuditReport(
        n_blocks=len(blocks),
        max_identity_error=max_err,
        n_identity_violations=n_identity,
        n_bound_violations=n_bounds,
        n_monotone_violations=n_monotone,
        n_kicked=n_kicked,
        mean_block_length=float(np.mean(lengths)),
    )


def xi_field(system, params, q, sigma=None, n_settle=80):
    """One-step stretch of the tracked center direction, minus one.

    Also labels the point: A.* when the settled slope is nonzero, B.*
    when it vanishes; .1 outside the support, .2 inside, with B.2
    split by whether the shear actually kicks the center axis there.
    """
    _check_params(system, params)
    if sigma is None:
        sigma = track_central_direction(system, params, q,
                                        n_settle).sigma
    m = _cu_block(system, params, q)
    c = m[0, 0] + m[0, 1] * sigma
    u = m[1, 0] + m[1, 1] * sigma
    xi = float(np.sqrt((c * c + u * u) / (1.0 + sigma * sigma)) - 1.0)
    inside = params is not None and params.t != 0.0 \
        and in_support(params, q)
    if sigma != 0.0:
        case = "A.2" if inside else "A.1"
    elif not inside:
        case = "B.1"
    else:
        case = "B.2b" if m[1, 0] != 0.0 else "B.2a"
    return XiValue(xi, case)


def tracker_invariance_audit(system, params, q, n_steps, n_settle=80):
    """Max angle between the pushed direction and the settled one.

    Along the orbit, Dg applied to the settled direction at q_k should
    return the settled direction at q_{k+1}; the report is the worst
    angular residual over the first n_steps steps.
    """
    _check_params(system, params)
    sig, a, b, _, _, _ = _record(system, params, q, n_steps + n_settle)
    pushed = a[:n_steps] + b[:n_steps] * sig[:n_steps]
    return float(np.max(np.abs(np.arctan(pushed)
                               - np.arctan(sig[1:n_steps + 1]))))

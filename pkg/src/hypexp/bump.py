"""Smooth compactly supported bump machinery with certified bounds.

The chain starts from the flat-at-zero exponential, builds a smooth
step by normalised integration, and multiplies two opposed steps into
an even plateau function equal to 1 on [-1, 1] and 0 outside (-2, 2).
Scaled copies multiply into the box mollifier that localises the shear
perturbation.  Everything downstream depends on two derivative bounds
(sup of the first and second derivative of the plateau function), on
the interior critical point s0 of s * plateau(s), and on a handful of
product-rule constants; `certificate` computes them all with grid plus
local refinement and checks the defining properties.

Derivative evaluation is exact: only the order-0 value of the smooth
step interpolates (monotone cubic on a dense precomputed table), while
orders 1 and 2 use the closed forms of the integrand.
"""

__all__ = ["BumpProfile", "MollifierField", "eta0", "eta1"]

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq, minimize_scalar

# resolution of the precomputed integral table on [0, 1]; the monotone
# cubic is O(h^3), and downstream difference-quotient audits divide its
# interpolation wiggle by steps as small as 1e-7
_TABLE_INTERVALS = 65536
_GL_NODES = 15


def eta0(t):
    """exp(-1/t^2) for t > 0, identically 0 for t <= 0."""
    t = np.asarray(t, dtype=float)
    tc = np.where(t > 0.0, t, 1.0)
    with np.errstate(over="ignore", under="ignore"):
        val = np.exp(-1.0 / (tc * tc))
    return np.where(t > 0.0, val, 0.0)


def _eta0_d1(t):
    # eta0'(t) = eta0(t) * 2 / t^3; flat tail handled by masking
    t = np.asarray(t, dtype=float)
    tc = np.where(t > 1e-2, t, 1.0)
    with np.errstate(over="ignore", under="ignore"):
        val = np.exp(-1.0 / (tc * tc)) * 2.0 / tc ** 3
    return np.where(t > 1e-2, val, 0.0)


def eta1(s):
    """Bump on [0, 1]: eta0(s) * eta0(1 - s)."""
    return eta0(s) * eta0(1.0 - s)


def _eta1_d1(s):
    return _eta0_d1(s) * eta0(1.0 - s) - eta0(s) * _eta0_d1(1.0 - s)


class BumpProfile:
    """The plateau function and its certified constants.

    Construction integrates `eta1` once with composite Gauss-Legendre
    quadrature on a uniform grid (panel error far below double
    precision for this analytic integrand), normalises to a smooth
    step, and fits a monotone cubic to the cumulative values.  The
    interior critical point s0 of s*phi(s) is located immediately by a
    sign scan plus root bracketing; the scan also counts sign changes,
    which guards against a corrupted table.
    """

    def __init__(self, table_intervals=_TABLE_INTERVALS):
        n = int(table_intervals)
        x = np.linspace(0.0, 1.0, n + 1)
        nodes, weights = np.polynomial.legendre.leggauss(_GL_NODES)
        h = 1.0 / n
        mid = (x[:-1] + x[1:]) / 2.0
        pts = mid[:, None] + (h / 2.0) * nodes[None, :]
        panels = (h / 2.0) * (eta1(pts) @ weights)
        cum = np.concatenate([[0.0], np.cumsum(panels)])
        self.c = float(cum[-1])
        if not self.c > 0.0:
            raise RuntimeError("normalisation integral came out nonpositive")
        y = cum / self.c
        y[0], y[-1] = 0.0, 1.0
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            # the fitter divides by zero slopes on the flat tails
            self._step = PchipInterpolator(x, y, extrapolate=False)
        self.table_intervals = n
        self.s0 = self._locate_s0()

    # -- smooth step ---------------------------------------------------

    def step(self, u):
        """Normalised cumulative of eta1: 0 below 0, 1 above 1."""
        u = np.asarray(u, dtype=float)
        out = np.where(u >= 1.0, 1.0, 0.0)
        mask = (u > 0.0) & (u < 1.0)
        if np.any(mask):
            out = np.array(out, dtype=float)
            out[mask] = self._step(u[mask])
        return out if out.shape else float(out)

    def step_tables(self):
        """Breakpoints and cubic coefficients for external evaluators."""
        return self._step.x.copy(), self._step.c.copy()

    # -- plateau function ----------------------------------------------

    def phi(self, s, order=0):
        """Value or derivative (order 0, 1, 2) of the plateau function."""
        s = np.asarray(s, dtype=float)
        a = s + 2.0
        b = 2.0 - s
        if order == 0:
            out = self.step(a) * self.step(b)
        elif order == 1:
            out = (eta1(a) * self.step(b) - self.step(a) * eta1(b)) / self.c
        elif order == 2:
            out = (_eta1_d1(a) * self.step(b) + self.step(a) * _eta1_d1(b)
                   - 2.0 * eta1(a) * eta1(b) / self.c) / self.c
        else:
            raise ValueError("order must be 0, 1 or 2")
        return out if np.shape(out) else float(out)

    def zeta(self, s, order=0):
        """s * phi(s) and its first derivative."""
        if order == 0:
            return s * self.phi(s, 0)
        if order == 1:
            return self.phi(s, 0) + s * self.phi(s, 1)
        raise ValueError("order must be 0 or 1")

    # -- certified constants -------------------------------------------

    def _locate_s0(self, scan_step=1e-4):
        s = np.arange(1.0, 2.0 + scan_step, scan_step)
        zp = self.zeta(s, order=1)
        # the profile is numerically flat near the support edge; only
        # genuinely signed values count toward the crossing tally
        sgn = np.sign(zp[np.abs(zp) > 1e-300])
        flips = np.nonzero(np.diff(sgn) != 0)[0]
        live = np.nonzero(np.abs(zp) > 1e-300)[0]
        if len(flips) != 1:
            raise RuntimeError(
                "expected exactly one sign change of (s*phi)' in (1,2), "
                "found %d" % len(flips))
        i0 = live[flips[0]]
        i1 = live[flips[0] + 1]
        return float(brentq(lambda t: self.zeta(t, order=1),
                            s[i0], s[i1], xtol=1e-13, rtol=8.9e-16))

    def _refined_max(self, f, lo=0.0, hi=2.0, grid=10001):
        s = np.linspace(lo, hi, grid)
        vals = np.abs(f(s))
        i = int(np.argmax(vals))
        a = s[max(i - 1, 0)]
        b = s[min(i + 1, grid - 1)]
        res = minimize_scalar(lambda t: -abs(f(np.array([t]))[0]),
                              bounds=(a, b), method="bounded",
                              options={"xatol": 1e-12})
        return float(max(vals[i], -res.fun)), float(res.x)

    def certificate(self):
        """Constants and property flags backing the perturbation bounds.

        Returns a dict with the first and second derivative sups (the
        injectivity and closeness constants), the critical point s0,
        the product-rule constants used to bound the mixed second
        partials of the shear displacement, and boolean flags for the
        plateau, support, symmetry and critical-point-count properties.
        """
        d1 = lambda s: self.phi(s, 1)
        d2 = lambda s: self.phi(s, 2)
        C, _ = self._refined_max(d1)
        C2, _ = self._refined_max(d2)
        z0, _ = self._refined_max(lambda s: s * self.phi(s, 0))
        z1, _ = self._refined_max(lambda s: s * self.phi(s, 1))
        z2, _ = self._refined_max(lambda s: s * self.phi(s, 2))
        zyy, _ = self._refined_max(lambda s: 2.0 * self.phi(s, 1)
                                   + s * self.phi(s, 2))
        # sup of any second partial of y*Phi over the support box, in
        # units of 1/eps (see the shear closeness audit)
        shear_hessian = max(z0 * C2, zyy, C * (1.0 + z1), z0 * C * C)

        grid = np.linspace(-2.5, 2.5, 5001)
        vals = self.phi(grid, 0)
        plateau_ok = bool(np.all(vals[np.abs(grid) <= 1.0] == 1.0))
        support_ok = bool(np.all(vals[np.abs(grid) >= 2.0] == 0.0))
        inner = np.linspace(0.0, 2.4, 2001)
        even_ok = bool(np.max(np.abs(self.phi(inner, 0)
                                     - self.phi(-inner, 0))) < 1e-14)
        range_ok = bool(np.all((vals >= 0.0) & (vals <= 1.0)))
        try:
            self._locate_s0()
            count_ok = True
        except RuntimeError:
            count_ok = False
        return {
            "C": C,
            "C2": C2,
            "s0": self.s0,
            "c": self.c,
            "zeta_sup": z0,
            "zeta_d1_term_sup": z1,
            "zeta_d2_term_sup": z2,
            "shear_hessian_constant": shear_hessian,
            "flags": {
                "plateau": plateau_ok,
                "support": support_ok,
                "even": even_ok,
                "range": range_ok,
                "single_interior_critical_point": count_ok,
            },
        }


class MollifierField:
    """Product mollifier on a coordinate box of half-width 2*eps.

    The value at a chart point is the product of scaled plateau factors
    over all coordinates, so the field is identically 1 on the box of
    half-width eps and vanishes outside half-width 2*eps.  Gradients
    pick up one 1/eps factor per differentiation.
    """

    def __init__(self, profile: BumpProfile, eps, dims=(1, 1, 1)):
        if not 0.0 < eps:
            raise ValueError("eps must be positive")
        self.profile = profile
        self.eps = float(eps)
        self.dims = tuple(int(d) for d in dims)
        self.dim = sum(self.dims)

    def value(self, p):
        p = np.asarray(p, dtype=float)
        f = self.profile.phi(p / self.eps, 0)
        return float(np.prod(f)) if p.ndim == 1 else np.prod(f, axis=-1)

    def gradient(self, p):
        p = np.asarray(p, dtype=float)
        u = p / self.eps
        f = self.profile.phi(u, 0)
        df = self.profile.phi(u, 1) / self.eps
        if p.ndim == 1:
            grad = np.empty_like(p)
            for i in range(p.shape[0]):
                others = np.prod(np.delete(f, i))
                grad[i] = df[i] * others
            return grad
        # batched: leave-one-out products per row
        n, d = p.shape
        grad = np.empty_like(p)
        for i in range(d):
            others = np.prod(np.delete(f, i, axis=1), axis=1)
            grad[:, i] = df[:, i] * others
        return grad
